import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from motioncap import trainer as tr
from motioncap.dataset import collate, prepare_examples
from motioncap.metrics import METRIC_COLUMNS
from motioncap.synthetic import generate
from motioncap.trainer import (
    ConfigError,
    NonFiniteLossError,
    TrainConfig,
    clip_gradients,
    dataset_loss,
    initial_loss,
    load_model,
    parse_grid,
    sweep,
    train,
)

TINY = dict(d_emb=8, h_dec=16, h1=8, h2=4, batch_size=4, max_len=12)


@pytest.fixture(scope="module")
def corpus():
    return generate(10, seed=11)


def cfg(**kw):
    return TrainConfig(**dict(TINY, **kw))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"lr": 1e-3, "momentum": 0.9})
    with pytest.raises(ConfigError):
        TrainConfig(lambda_spat=-1)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    c = TrainConfig.from_dict({"lambda_spat": 0, "lambda_adapt": 3})
    assert TrainConfig.from_dict(c.to_dict()) == c


def test_parse_grid():
    assert parse_grid("0,0;0,3;2,3") == [(0, 0), (0, 3), (2, 3)]
    with pytest.raises(ConfigError):
        parse_grid(" ; ")


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-100, 100)), arrays(np.float64, (2, 2), elements=st.floats(-100, 100)),
       st.floats(0.1, 50))
def test_clipping_keeps_direction(a, b, max_norm):
    grads = {"a": a, "b": b}
    out, norm = clip_gradients(grads, max_norm)
    flat_in = np.concatenate([a.ravel(), b.ravel()])
    flat_out = np.concatenate([out["a"].ravel(), out["b"].ravel()])
    assert norm == pytest.approx(np.linalg.norm(flat_in))
    assert np.linalg.norm(flat_out) <= max_norm * (1 + 1e-12) or np.allclose(flat_out, flat_in)
    if norm > 0:
        # same direction: positive multiple of the input
        assert np.allclose(flat_out * norm, flat_in * np.linalg.norm(flat_out), atol=1e-9)


def test_one_epoch_reduces_loss(corpus):
    five = corpus.train[:5]
    c = cfg(epochs=1, lr=1e-2, keep="last")
    before = initial_loss(c, five)
    res = train(c, five, corpus.val)
    after = dataset_loss(res.model, prepare_examples(five, res.vocab), c)
    assert after < before


def test_training_is_deterministic(corpus, tmp_path):
    c = cfg(epochs=2)
    train(c, corpus.train, corpus.val, tmp_path / "a")
    train(c, corpus.train, corpus.val, tmp_path / "b")
    for name in ("params.bin", "manifest.json"):
        assert (tmp_path / "a/checkpoint" / name).read_bytes() == (tmp_path / "b/checkpoint" / name).read_bytes()
    assert (tmp_path / "a/train_log.csv").read_text() == (tmp_path / "b/train_log.csv").read_text()
    assert (tmp_path / "a/train_log.csv").read_text().splitlines()[0] == ",".join(tr.LOG_COLUMNS)


def test_checkpoint_roundtrip(corpus, tmp_path):
    res = train(cfg(epochs=1), corpus.train, corpus.val, tmp_path)
    model, vocab, meta = load_model(tmp_path)
    assert vocab.to_list() == res.vocab.to_list() and meta["best_epoch"] == res.best_epoch
    batch = collate(prepare_examples(corpus.train[:3], vocab))
    outs = [
        m.teacher_forced(m.encode(batch.xs, batch.vs, batch.frame_mask), batch.inputs) for m in (res.model, model)
    ]
    for a, b in zip(*outs):
        assert np.array_equal(a.probs.data, b.probs.data)
        assert np.array_equal(a.attention.Gamma.data, b.attention.Gamma.data)


def test_non_finite_loss_aborts(corpus, monkeypatch):
    real = tr.batch_loss

    def poisoned(model, batch, ls, la):
        total, lang, spat, adapt = real(model, batch, ls, la)
        return total * np.nan, lang, spat, adapt

    monkeypatch.setattr(tr, "batch_loss", poisoned)
    with pytest.raises(NonFiniteLossError, match="batch ids"):
        train(cfg(epochs=1), corpus.train, corpus.val)


def test_empty_sets_rejected(corpus):
    with pytest.raises(ValueError):
        train(cfg(epochs=1), [], corpus.val)


def test_memorisation(corpus):
    small = corpus.train[:5]
    c = cfg(lambda_spat=0, lambda_adapt=3, epochs=200, lr=1e-2, keep="last")
    before = initial_loss(c, small)
    res = train(c, small, small)
    after = dataset_loss(res.model, prepare_examples(small, res.vocab), c)
    assert after < 0.05 * before


def test_sweep_rows_and_failures(corpus, tmp_path):
    c = cfg(epochs=1)
    rows = sweep(parse_grid("0,0;0,3;2,3"), c, corpus.train, corpus.val, corpus.train[:4], out_dir=tmp_path)
    assert len(rows) == 3 and all(r["status"] == "ok" for r in rows)
    header = (tmp_path / "sweep.csv").read_text().splitlines()[0].split(",")
    assert header == list(tr.SWEEP_COLUMNS) and set(METRIC_COLUMNS) <= set(header)
    rows = sweep([(-1.0, 3.0), (0.0, 0.0)], c, corpus.train, corpus.val, corpus.train[:4], seeds=[0])
    assert [r["status"] for r in rows] == ["failed", "ok"]
    assert "ConfigError" in rows[0]["error"]
