"""Trainer acceptance: the smoke criterion and protocol conformance.

Everything here consumes the core workbench strictly through its external
interfaces: the ``locality-lab`` CLI (run as a subprocess) produces nets and
corpora as files, the trainer consumes the corpus file, and the trained
checkpoint is evaluated by the workbench's remote backend over the TCP wire
protocol.

``LOCALITY_TRAINER_SMOKE_STEPS`` (default 1500) scales the training run;
measurements up to the full 5000-step budget are recorded in the project
notes and do not change any outcome below.
"""

import json
import os
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

from locality_trainer.server import ModelServer, ServedModel
from locality_trainer.training import TrainerConfig, load_checkpoint, train

SEED = 31_415
SMOKE_STEPS = int(os.environ.get("LOCALITY_TRAINER_SMOKE_STEPS", "1500"))


def _report(criterion: str, passed: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")


def _write_json(path: Path, doc: dict) -> str:
    path.write_text(json.dumps(doc))
    return str(path)


def run_lab(*args: str) -> dict:
    """Invoke the workbench CLI and parse its JSON reply."""
    result = subprocess.run(
        [sys.executable, "-m", "locality_lab.cli", *args],
        capture_output=True,
        text=True,
        timeout=1800,
    )
    assert result.returncode == 0, result.stdout + result.stderr
    return json.loads(result.stdout)


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    gen = run_lab(
        "gen", "--seed", str(SEED), "--out", str(out), "--config",
        _write_json(out / "gen_cfg.json", {
            "net": {"n_nodes": 20, "n_edges": 20},
            "selection": {"candidates": 12, "top_pairs": 10, "holdouts": 3, "selected": 1},
        }),
    )
    net_file = gen["net_files"][0]
    pairs_doc = json.loads(Path(gen["pair_files"][0]).read_text())
    cor = run_lab(
        "corpus", "--net", net_file, "--samples", "50000",
        "--mode", "local", "--seed", str(SEED), "--out", str(out),
    )

    config = TrainerConfig(
        corpus_path=cor["corpus_file"],
        out_dir=str(out / "trainer"),
        steps=SMOKE_STEPS,
        dim=64,
        layers=3,
        heads=4,
        checkpoint_interval=SMOKE_STEPS,
        log_interval=100,
        learning_rate=1e-3,
        lr_min=1e-4,
        seed=SEED,
    )
    t0 = time.monotonic()
    result = train(config)
    train_seconds = time.monotonic() - t0
    model, tokenizer, _ = load_checkpoint(result.checkpoint_dirs[-1])
    server = ModelServer(("127.0.0.1", 0), ServedModel(model, tokenizer))
    server.serve_in_thread()
    yield {
        "out": out,
        "net_file": net_file,
        "pairs_doc": pairs_doc,
        "train_result": result,
        "train_seconds": train_seconds,
        "server": server,
    }
    server.shutdown()
    server.server_close()


def test_criterion_10_validation_loss(smoke_run):
    result = smoke_run["train_result"]
    ok = result.steps <= 5000 and result.final_val_loss < result.initial_val_loss
    _report(
        "10 trainer smoke (validation loss)", ok,
        f"val {result.initial_val_loss:.3f} -> {result.final_val_loss:.3f} within "
        f"{result.steps} steps ({smoke_run['train_seconds']:.0f}s)",
    )
    assert result.steps <= 5000
    assert result.final_val_loss < result.initial_val_loss


def test_criterion_10_held_in_direction(smoke_run):
    # Known-red at desk scale: across every configuration tried (up to the
    # full 5000-step budget, several sizes and corpora), the served model
    # answers the two-line direct prompt with the target's marginal, even for
    # pairs whose exact prompt pattern is abundant in training. The direction
    # below emerges only at orders of magnitude more training.
    doc = smoke_run["pairs_doc"]
    held_out = {tuple(p[:2]) for p in doc["held_out"]}
    held_in = [p for p in doc["top_pairs"]
               if tuple(p[:2]) not in held_out and p[2] >= 0.05][:5]
    assert held_in, "selection produced no strong held-in pairs"
    pairs_file = smoke_run["out"] / "held_in.pairs.json"
    _write_json(pairs_file, {"net_id": doc["net_id"], "held_out": held_in,
                             "top_pairs": doc["top_pairs"], "mean_holdout_mi": 0.0})

    host, port = smoke_run["server"].server_address
    ev = run_lab(
        "eval", "--net", smoke_run["net_file"], "--backend", f"remote:{host}:{port}",
        "--seed", str(SEED), "--out", str(smoke_run["out"]), "--config",
        _write_json(smoke_run["out"] / "eval_cfg.json", {
            "pairs_file": str(pairs_file),
            "estimators": ["direct"],
            "m_samples": 1,
            "name": "served_held_in",
        }),
    )
    direct = next(r for r in ev["summary"] if r["estimator"] == "direct")
    direction = direct["mse_true"] < direct["mse_marginal"]
    _report(
        "10 trainer smoke (held-in direction)", direction,
        f"served direct MSE vs true {direct['mse_true']:.4f} "
        f"{'<' if direction else '>='} vs marginal {direct['mse_marginal']:.4f} "
        f"over {direct['n']} held-in queries",
    )
    assert direction, "served direct estimates should sit closer to the true conditionals"


def test_criterion_11_protocol_conformance(smoke_run):
    host, port = smoke_run["server"].server_address

    def call(raw: bytes) -> dict:
        with socket.create_connection((host, port), timeout=30) as sock:
            f = sock.makefile("rwb")
            f.write(raw + b"\n")
            f.flush()
            return json.loads(f.readline())

    # the primary suite's recorded request corpus
    recorded = [
        {"op": "value_dist", "target": "X4", "context": [["X1", 0], ["X2", 1]], "query": "X4"},
        {"op": "value_dist", "target": "X2", "context": [["X1", 0]], "query": "X2"},
        {"op": "next_var", "target": "X4", "context": [["X1", 0]]},
        {"op": "next_var", "target": "X4", "context": []},
    ]
    schema_ok = 0
    for request in recorded:
        reply = call(json.dumps(request).encode())
        if request["op"] == "value_dist":
            schema_ok += set(reply) == {"p1"} and 0.0 <= reply["p1"] <= 1.0
        else:
            probs = reply.get("var_probs", {})
            schema_ok += (
                set(reply) == {"var_probs"}
                and abs(sum(probs.values()) - 1.0) < 1e-6
                and all(v not in {c[0] for c in request["context"]} for v in probs)
            )

    fuzz = [
        b"\x00\xff\xfe garbage",
        b"{" * 2000,
        b'{"op": null}',
        b'{"op": "explode"}',
        b'{"op": "value_dist", "target": 3, "context": [], "query": "X1"}',
        b'{"op": "value_dist", "target": "X1", "context": [["X2", "one"]], "query": "X1"}',
        b'{"op": "value_dist", "target": "X1", "context": [["X1", 0]], "query": "X2"}',
        b'{"op": "next_var"}',
        b"[1, 2, 3]",
        b'"just a string"',
    ]
    fuzz_errors = sum("error" in call(raw) for raw in fuzz)
    final = call(json.dumps(recorded[0]).encode())
    alive = "p1" in final
    ok = schema_ok == len(recorded) and fuzz_errors == len(fuzz) and alive
    _report(
        "11 protocol conformance", ok,
        f"{schema_ok}/{len(recorded)} recorded requests schema-valid, "
        f"{fuzz_errors}/{len(fuzz)} fuzz cases rejected cleanly, server alive: {alive}",
    )
    assert schema_ok == len(recorded)
    assert fuzz_errors == len(fuzz)
    assert alive
