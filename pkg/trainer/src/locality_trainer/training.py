"""Training loop: corpus -> tokenizer -> chunked autoregressive training.

The corpus text is tokenized, concatenated, and split into fixed 1024-token
chunks; each gradient step draws a few chunks (3072 tokens by default) and
minimizes next-token cross-entropy with Adam. Checkpoints carry the config,
the tokenizer, the weights, and the step index. A divergence detector aborts
when the smoothed loss sits far above the initial loss for too long.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .bpe import BpeTokenizer, fit_tokenizer
from .gpt import Gpt, GptConfig


class DivergenceError(Exception):
    pass


@dataclass
class TrainerConfig:
    corpus_path: str
    out_dir: str
    steps: int = 5000
    dim: int = 256
    layers: int = 5
    heads: int = 4
    context: int = 1024
    batch_chunks: int = 3  # 3 x 1024 = 3072 tokens per gradient step
    learning_rate: float = 1e-3
    lr_min: float | None = None  # cosine-decay floor; None keeps the rate constant
    betas: tuple[float, float] = (0.9, 0.999)
    checkpoint_interval: int = 5000
    log_interval: int = 100
    val_fraction: float = 0.05
    max_vocab: int = 512
    divergence_factor: float = 10.0
    divergence_window: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        for name in ("steps", "batch_chunks", "checkpoint_interval", "log_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainResult:
    checkpoint_dirs: list[str]
    loss_log_path: str
    initial_val_loss: float
    final_val_loss: float
    steps: int
    tokens_seen: int
    loss_trace: list[tuple[int, float]] = field(default_factory=list)


def _chunk_tokens(ids: np.ndarray, context: int) -> np.ndarray:
    n_chunks = len(ids) // (context + 1)
    if n_chunks < 2:
        raise ValueError("corpus is too small for even two training chunks")
    return ids[: n_chunks * (context + 1)].reshape(n_chunks, context + 1)


def _split_chunks(chunks: np.ndarray, val_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    stride = max(int(round(1.0 / val_fraction)), 2) if val_fraction > 0 else len(chunks) + 1
    mask = np.zeros(len(chunks), dtype=bool)
    mask[::stride] = val_fraction > 0
    val = chunks[mask]
    train = chunks[~mask]
    if len(train) == 0:
        raise ValueError("no training chunks left after the validation split")
    return train, val


@torch.no_grad()
def _mean_loss(model: Gpt, chunks: np.ndarray, batch: int = 8) -> float:
    model.eval()
    losses = []
    for start in range(0, len(chunks), batch):
        block = torch.from_numpy(chunks[start : start + batch].astype(np.int64))
        logits = model(block[:, :-1])
        loss = F.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), block[:, 1:].reshape(-1)
        )
        losses.append(float(loss))
    model.train()
    return float(np.mean(losses))


def _save_checkpoint(
    out: Path, step: int, model: Gpt, tokenizer: BpeTokenizer, config: TrainerConfig
) -> str:
    ckpt = out / f"checkpoint_{step:06d}"
    ckpt.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), ckpt / "weights.pt")
    (ckpt / "tokenizer.json").write_text(tokenizer.to_json())
    doc = asdict(config)
    doc["step"] = step
    doc["vocab_size"] = tokenizer.vocab_size
    (ckpt / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return str(ckpt)


def load_checkpoint(path: str) -> tuple[Gpt, BpeTokenizer, dict]:
    ckpt = Path(path)
    doc = json.loads((ckpt / "config.json").read_text())
    tokenizer = BpeTokenizer.from_json((ckpt / "tokenizer.json").read_text())
    model = Gpt(
        GptConfig(
            vocab_size=doc["vocab_size"],
            context=doc["context"],
            dim=doc["dim"],
            layers=doc["layers"],
            heads=doc["heads"],
        )
    )
    model.load_state_dict(torch.load(ckpt / "weights.pt", map_location="cpu"))
    model.eval()
    return model, tokenizer, doc


def train(config: TrainerConfig, tokenizer: BpeTokenizer | None = None) -> TrainResult:
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    text = Path(config.corpus_path).read_text()
    if tokenizer is None:
        tokenizer = fit_tokenizer(text, max_vocab=config.max_vocab)
    ids = np.array(tokenizer.encode(text), dtype=np.int32)
    chunks = _chunk_tokens(ids, config.context)
    train_chunks, val_chunks = _split_chunks(chunks, config.val_fraction)

    model = Gpt(
        GptConfig(
            vocab_size=tokenizer.vocab_size,
            context=config.context,
            dim=config.dim,
            layers=config.layers,
            heads=config.heads,
        )
    )
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.betas
    )

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    initial_val = _mean_loss(model, val_chunks) if len(val_chunks) else math.nan

    log_rows = [("step", "tokens", "loss")]
    loss_trace: list[tuple[int, float]] = []
    checkpoints: list[str] = []
    initial_loss = None
    high_loss_streak = 0
    window_losses: list[float] = []
    tokens_seen = 0

    for step in range(1, config.steps + 1):
        if config.lr_min is not None:
            progress = (step - 1) / max(config.steps - 1, 1)
            rate = config.lr_min + 0.5 * (config.learning_rate - config.lr_min) * (
                1.0 + math.cos(math.pi * progress)
            )
            for group in optimizer.param_groups:
                group["lr"] = rate
        pick = rng.integers(0, len(train_chunks), size=config.batch_chunks)
        block = torch.from_numpy(train_chunks[pick].astype(np.int64))
        logits = model(block[:, :-1])
        loss = F.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), block[:, 1:].reshape(-1)
        )
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        value = float(loss.detach())
        tokens_seen += int(block[:, 1:].numel())
        window_losses.append(value)
        if initial_loss is None:
            initial_loss = value
        if value > config.divergence_factor * initial_loss:
            high_loss_streak += 1
            if high_loss_streak >= config.divergence_window:
                raise DivergenceError(
                    f"loss {value:.3f} stayed above {config.divergence_factor}x the "
                    f"initial loss for {high_loss_streak} steps"
                )
        else:
            high_loss_streak = 0

        if step % config.log_interval == 0 or step == config.steps:
            smoothed = float(np.mean(window_losses))
            window_losses = []
            log_rows.append((str(step), str(tokens_seen), repr(smoothed)))
            loss_trace.append((step, smoothed))
        if step % config.checkpoint_interval == 0 or step == config.steps:
            checkpoints.append(_save_checkpoint(out, step, model, tokenizer, config))

    final_val = _mean_loss(model, val_chunks) if len(val_chunks) else math.nan
    log_path = out / "loss_log.csv"
    log_path.write_text("\n".join(",".join(row) for row in log_rows) + "\n")
    return TrainResult(
        checkpoint_dirs=checkpoints,
        loss_log_path=str(log_path),
        initial_val_loss=initial_val,
        final_val_loss=final_val,
        steps=config.steps,
        tokens_seen=tokens_seen,
        loss_trace=loss_trace,
    )
