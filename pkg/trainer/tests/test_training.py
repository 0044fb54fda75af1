from pathlib import Path

import pytest

from locality_trainer.training import (
    DivergenceError,
    TrainerConfig,
    load_checkpoint,
    train,
)

from test_bpe import make_corpus

TINY = dict(dim=32, layers=2, heads=2, context=128, batch_chunks=2,
            checkpoint_interval=40, log_interval=10, max_vocab=256)


@pytest.fixture(scope="module")
def corpus_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "train.txt"
    path.write_text(make_corpus(12, 4000, seed=2))
    return str(path)


class TestTrain:
    def test_loss_improves_over_untrained(self, corpus_file, tmp_path):
        config = TrainerConfig(corpus_path=corpus_file, out_dir=str(tmp_path),
                               steps=40, seed=3, **TINY)
        result = train(config)
        assert result.final_val_loss < result.initial_val_loss

    def test_checkpoint_layout_and_reload(self, corpus_file, tmp_path):
        config = TrainerConfig(corpus_path=corpus_file, out_dir=str(tmp_path),
                               steps=40, seed=3, **TINY)
        result = train(config)
        assert len(result.checkpoint_dirs) == 1
        ckpt = Path(result.checkpoint_dirs[0])
        assert (ckpt / "weights.pt").exists()
        assert (ckpt / "tokenizer.json").exists()
        assert (ckpt / "config.json").exists()
        model, tokenizer, doc = load_checkpoint(str(ckpt))
        assert doc["step"] == 40
        assert model.config.vocab_size == tokenizer.vocab_size

    def test_loss_log_written(self, corpus_file, tmp_path):
        config = TrainerConfig(corpus_path=corpus_file, out_dir=str(tmp_path),
                               steps=30, seed=3, **TINY)
        result = train(config)
        lines = Path(result.loss_log_path).read_text().splitlines()
        assert lines[0] == "step,tokens,loss"
        assert len(lines) == 1 + len(result.loss_trace)

    def test_fixed_seed_reproduces_loss_trace(self, corpus_file, tmp_path):
        config_a = TrainerConfig(corpus_path=corpus_file, out_dir=str(tmp_path / "a"),
                                 steps=20, seed=11, **TINY)
        config_b = TrainerConfig(corpus_path=corpus_file, out_dir=str(tmp_path / "b"),
                                 steps=20, seed=11, **TINY)
        assert train(config_a).loss_trace == train(config_b).loss_trace

    def test_divergence_detector(self, corpus_file, tmp_path):
        config = TrainerConfig(corpus_path=corpus_file, out_dir=str(tmp_path),
                               steps=400, seed=3, learning_rate=50.0,
                               divergence_factor=1.5, divergence_window=5, **TINY)
        with pytest.raises(DivergenceError):
            train(config)

    def test_config_validation(self, corpus_file, tmp_path):
        with pytest.raises(ValueError):
            TrainerConfig(corpus_path=corpus_file, out_dir=str(tmp_path), dim=50, heads=4)
        with pytest.raises(ValueError):
            TrainerConfig(corpus_path=corpus_file, out_dir=str(tmp_path), steps=0)

    def test_smoothed_training_loss_decreases_early(self, corpus_file, tmp_path):
        config = TrainerConfig(corpus_path=corpus_file, out_dir=str(tmp_path),
                               steps=60, seed=3, **TINY)
        result = train(config)
        losses = [loss for _, loss in result.loss_trace]
        assert losses[-1] < losses[0]
        drops = sum(b < a for a, b in zip(losses, losses[1:]))
        assert drops >= 0.8 * (len(losses) - 1)
