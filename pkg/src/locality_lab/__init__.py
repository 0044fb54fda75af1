"""Workbench for locality-structured Bayes-net corpora and step-by-step
conditional-probability estimation.

Subpackages cover random net construction (:mod:`locality_lab.graph`), exact
inference (:mod:`locality_lab.infer`), observation distributions
(:mod:`locality_lab.obsdist`), corpus generation (:mod:`locality_lab.pipeline`),
sequence-model backends (:mod:`locality_lab.model`), estimators
(:mod:`locality_lab.estimators`), closed-form chain analysis
(:mod:`locality_lab.theory`), and the evaluation harness
(:mod:`locality_lab.evaluation`). The FastAPI service in
:mod:`locality_lab.service` wraps the whole pipeline; :mod:`locality_lab.cli`
is a thin client for it.
"""

__version__ = "0.1.0"
