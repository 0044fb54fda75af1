"""Command line for the trainer: fit a tokenizer, train, serve a checkpoint."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .bpe import fit_tokenizer
from .training import TrainerConfig, train


@click.group()
def main() -> None:
    """Train and serve small transformers on variable corpora."""


@main.command("fit-tokenizer")
@click.option("--corpus", required=True, type=str)
@click.option("--out", required=True, type=str, help="Path for tokenizer.json")
@click.option("--max-vocab", type=int, default=512)
def fit_tokenizer_cmd(corpus: str, out: str, max_vocab: int) -> None:
    tokenizer = fit_tokenizer(Path(corpus).read_text(), max_vocab=max_vocab)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(tokenizer.to_json())
    click.echo(json.dumps({"vocab_size": tokenizer.vocab_size, "path": out}))


@main.command("train")
@click.option("--corpus", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--steps", type=int, default=5000)
@click.option("--dim", type=int, default=256)
@click.option("--layers", type=int, default=5)
@click.option("--heads", type=int, default=4)
@click.option("--batch-chunks", type=int, default=3)
@click.option("--checkpoint-interval", type=int, default=5000)
@click.option("--seed", type=int, default=0)
def train_cmd(corpus, out, steps, dim, layers, heads, batch_chunks,
              checkpoint_interval, seed) -> None:
    config = TrainerConfig(
        corpus_path=corpus,
        out_dir=out,
        steps=steps,
        dim=dim,
        layers=layers,
        heads=heads,
        batch_chunks=batch_chunks,
        checkpoint_interval=checkpoint_interval,
        seed=seed,
    )
    result = train(config)
    click.echo(
        json.dumps(
            {
                "checkpoints": result.checkpoint_dirs,
                "initial_val_loss": result.initial_val_loss,
                "final_val_loss": result.final_val_loss,
                "tokens_seen": result.tokens_seen,
                "loss_log": result.loss_log_path,
            }
        )
    )


@main.command("serve")
@click.option("--checkpoint", required=True, type=str)
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--port", type=int, default=9000)
def serve_cmd(checkpoint: str, host: str, port: int) -> None:
    from .server import serve

    click.echo(f"serving {checkpoint} on {host}:{port}")
    serve(checkpoint, host, port)


if __name__ == "__main__":
    main()
