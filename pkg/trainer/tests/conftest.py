"""Keeps the tests directory importable (shared corpus helpers live in
test_bpe) and quiets torch's CPU-only chatter."""

import warnings

warnings.filterwarnings("ignore", message="Converting a tensor")
