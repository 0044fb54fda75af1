"""Byte-pair tokenizer fit to the variable-corpus text format.

Text is pre-split into format pieces (the ``###`` marker line, the
``target: `` prefix, variable names, ``=``, value bits, newlines) and merges
are learned within pieces only. Value bits therefore always stay standalone
tokens, and every variable name tokenizes to a fixed short sequence that a
server can marginalize over by chained conditioning.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

PRETOKEN_RE = re.compile(r"###\n|target: |X\d+|[01]|=|\n|.", re.DOTALL)

DEFAULT_MAX_VOCAB = 512


class TokenizerError(Exception):
    pass


def pretokenize(text: str) -> list[str]:
    return PRETOKEN_RE.findall(text)


@dataclass
class BpeTokenizer:
    vocab: list[str] = field(default_factory=list)
    merges: list[tuple[str, str]] = field(default_factory=list)
    _fitted_names: set = field(default_factory=set, repr=False)
    token_to_id: dict[str, int] = field(default_factory=dict, repr=False)
    _ranks: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)
    _piece_cache: dict[str, tuple[int, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.token_to_id = {tok: i for i, tok in enumerate(self.vocab)}
        self._ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self._piece_cache = {}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def variable_names(self) -> list[str]:
        """Variable names seen while fitting, in index order."""
        return sorted(self._fitted_names, key=lambda n: int(n[1:]))

    def _encode_piece(self, piece: str) -> tuple[int, ...]:
        cached = self._piece_cache.get(piece)
        if cached is not None:
            return cached
        symbols = list(piece)
        for ch in symbols:
            if ch not in self.token_to_id:
                raise TokenizerError(f"character {ch!r} is not in the vocabulary")
        while len(symbols) > 1:
            best_rank = None
            best_at = -1
            for i in range(len(symbols) - 1):
                rank = self._ranks.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_at = rank, i
            if best_rank is None:
                break
            symbols[best_at : best_at + 2] = [symbols[best_at] + symbols[best_at + 1]]
        ids = tuple(self.token_to_id[s] for s in symbols)
        self._piece_cache[piece] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for piece in pretokenize(text):
            ids.extend(self._encode_piece(piece))
        return ids

    def decode(self, ids: list[int]) -> str:
        try:
            return "".join(self.vocab[i] for i in ids)
        except IndexError as exc:
            raise TokenizerError(f"token id out of range: {exc}") from exc

    def name_token_ids(self, name: str) -> tuple[int, ...]:
        return self._encode_piece(name)

    def to_json(self) -> str:
        return json.dumps(
            {
                "vocab": self.vocab,
                "merges": [list(m) for m in self.merges],
                "names": sorted(self._fitted_names),
            }
        )

    @staticmethod
    def from_json(text: str) -> "BpeTokenizer":
        doc = json.loads(text)
        tok = BpeTokenizer(
            vocab=list(doc["vocab"]),
            merges=[tuple(m) for m in doc["merges"]],
        )
        tok._fitted_names = set(doc.get("names", []))
        return tok


def fit_tokenizer(
    text: str,
    max_vocab: int = DEFAULT_MAX_VOCAB,
    min_pair_count: int = 2,
) -> BpeTokenizer:
    """Learn merges over the pre-tokenized corpus until the vocabulary cap.

    Merge candidates are counted across distinct pieces weighted by piece
    frequency; ties break lexicographically so fitting is deterministic.
    """
    if not text:
        raise TokenizerError("cannot fit a tokenizer to an empty corpus")
    piece_counts = Counter(pretokenize(text))
    base_chars = sorted({ch for piece in piece_counts for ch in piece})
    vocab = list(base_chars)
    merges: list[tuple[str, str]] = []
    sequences: dict[str, list[str]] = {p: list(p) for p in piece_counts}

    while len(vocab) < max_vocab:
        pair_counts: Counter = Counter()
        for piece, symbols in sequences.items():
            weight = piece_counts[piece]
            for i in range(len(symbols) - 1):
                pair_counts[(symbols[i], symbols[i + 1])] += weight
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < min_pair_count:
            break
        best_pair = min(p for p, c in pair_counts.items() if c == best_count)
        merged = best_pair[0] + best_pair[1]
        merges.append(best_pair)
        if merged not in vocab:
            vocab.append(merged)
        for piece, symbols in sequences.items():
            i = 0
            while i < len(symbols) - 1:
                if (symbols[i], symbols[i + 1]) == best_pair:
                    symbols[i : i + 2] = [merged]
                else:
                    i += 1

    tokenizer = BpeTokenizer(vocab=vocab, merges=merges)
    tokenizer._fitted_names = {
        p for p in piece_counts if re.fullmatch(r"X\d+", p)
    }
    return tokenizer
