"""Teacher-forced training with Adam, early stopping on validation BLEU@4, and λ sweeps."""

from __future__ import annotations

import csv
import logging
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .dataset import Batch, Prepared, make_batches, prepare_examples, unique_by_id
from .decoder import CaptionModel, ModelConfig, greedy_decode_batch
from .losses import adaptive_loss, global_loss, language_loss, spatial_loss
from .metrics import METRIC_COLUMNS, bleu, evaluate
from .numerics import Tensor, load_checkpoint, save_checkpoint
from .supervision import Supervisor
from .text import Vocab, tokenize

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lang", "spat", "adapt", "total", "val_bleu4")


class ConfigError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lambda_spat: float = 2.0
    lambda_adapt: float = 3.0
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    clip_norm: float = 5.0
    patience: int = 10
    d_emb: int = 64
    h_dec: int = 128
    h1: int = 32
    h2: int = 16
    d_att: int | None = None
    sigma_min: float = 0.5
    head: str = "projected"
    spatial_axis: str = "part"
    gaussian: bool = True
    max_len: int = 30
    # "best" keeps the epoch with the highest validation BLEU@4, "last" the final one
    keep: str = "best"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lambda_spat < 0 or self.lambda_adapt < 0:
            raise ConfigError("loss weights must be non-negative")
        for name in ("lr", "batch_size", "epochs", "clip_norm", "patience", "d_emb", "h_dec", "h1", "h2", "max_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.head not in ("projected", "tanh"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.spatial_axis not in ("part", "joint"):
            raise ConfigError(f"unknown spatial axis {self.spatial_axis!r}")
        if self.keep not in ("best", "last"):
            raise ConfigError(f"unknown keep policy {self.keep!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self, part_widths, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            part_widths=tuple(part_widths),
            vocab_size=vocab_size,
            d_emb=self.d_emb,
            h_dec=self.h_dec,
            h1=self.h1,
            h2=self.h2,
            d_att=self.d_att,
            sigma_min=self.sigma_min,
            head=self.head,
            spatial_axis=self.spatial_axis,
            gaussian=self.gaussian,
        )


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, b1, b2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            self.params[k].data = self.params[k].data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def batch_loss(model: CaptionModel, batch: Batch, lambda_spat: float, lambda_adapt: float):
    """Sequence-summed losses divided by the batch size: (total, lang, spat, adapt) tensors."""
    mem = model.encode(batch.xs, batch.vs, batch.frame_mask)
    outs = model.teacher_forced(mem, batch.inputs)
    lang = language_loss([o.probs for o in outs], batch.targets, batch.token_mask)
    adapt = adaptive_loss([o.attention.beta for o in outs], batch.beta, batch.token_mask)
    if batch.supervised.any():
        # captions without supervised words have all-zero rows, so a unit count leaves them at 0
        spat = spatial_loss(
            [o.attention.alpha for o in outs], batch.alpha_target, batch.supervised, np.maximum(batch.n_y, 1), batch.frame_mask
        )
    else:
        spat = Tensor(0.0)
    n = float(batch.size)
    total = global_loss(lang, spat, adapt, lambda_spat, lambda_adapt) / n
    return total, lang / n, spat / n, adapt / n


def decode_captions(model: CaptionModel, vocab: Vocab, items: Sequence[Prepared], max_len: int, chunk: int = 64):
    out = {}
    for i in range(0, len(items), chunk):
        part = items[i : i + chunk]
        hyps = greedy_decode_batch(model, [(p.xs, p.vs) for p in part], max_len, vocab.bos_id, vocab.eos_id)
        for p, h in zip(part, hyps):
            out[p.id] = vocab.decode(h.tokens)
    return out


def references_by_id(examples: Sequence) -> dict[str, list[list[str]]]:
    refs: dict[str, list[list[str]]] = {}
    for ex in examples:
        refs.setdefault(ex.id, []).append(tokenize(ex.caption))
    return refs


@dataclass
class TrainResult:
    model: CaptionModel
    vocab: Vocab
    config: TrainConfig
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_bleu4: float = float("-inf")
    initial_loss: float = float("nan")
    checkpoint: Path | None = None


def train(
    config: TrainConfig,
    train_set: Sequence,
    val_set: Sequence,
    out_dir=None,
    supervisor: Supervisor | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Fit a captioning model; examples need ``id``, ``motion`` and ``caption``."""
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    config.validate()
    vocab = Vocab.build(tokenize(ex.caption) for ex in train_set)
    train_items = prepare_examples(train_set, vocab, supervisor)
    val_items = unique_by_id(prepare_examples(val_set, vocab, supervisor))
    val_refs = references_by_id(val_set)

    widths = [x.shape[1] for x in train_items[0].xs]
    model = CaptionModel(config.model_config(widths, len(vocab)), seed=config.seed)
    model.fit_normalization([(p.xs, p.vs) for p in train_items])
    opt = Adam(model.params, config.lr)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])

    result = TrainResult(model, vocab, config)
    best_state = {k: v.copy() for k, v in model.state_arrays().items()}
    stale = 0
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(4)
        for batch in make_batches(train_items, config.batch_size, shuffle_rng):
            with nx.Tape() as tape:
                total, lang, spat, adapt = batch_loss(model, batch, config.lambda_spat, config.lambda_adapt)
            vals = np.array([float(x.data) for x in (total, lang, spat, adapt)])
            if not np.all(np.isfinite(vals)):
                raise NonFiniteLossError(
                    f"non-finite loss at epoch {epoch}: total={vals[0]} lang={vals[1]} spat={vals[2]} "
                    f"adapt={vals[3]}; batch ids {batch.ids}"
                )
            for p in model.params.values():
                p.grad = None
            tape.backward(total)
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in model.params.items()}
            grads, _ = clip_gradients(grads, config.clip_norm)
            opt.step(grads)
            sums += vals * batch.size
        means = sums / len(train_items)
        hyps = decode_captions(model, vocab, val_items, config.max_len)
        keys = sorted(hyps)
        val_bleu = bleu([hyps[k] for k in keys], [val_refs[k] for k in keys], 4)
        row = {"epoch": epoch, "total": means[0], "lang": means[1], "spat": means[2], "adapt": means[3], "val_bleu4": val_bleu}
        result.history.append(row)
        if on_epoch:
            on_epoch(row)
        log.info("epoch %d total %.4f lang %.4f val BLEU@4 %.2f", epoch, means[0], means[1], val_bleu)
        if val_bleu > result.best_bleu4:
            result.best_bleu4, result.best_epoch, stale = val_bleu, epoch, 0
            best_state = {k: v.copy() for k, v in model.state_arrays().items()}
        else:
            stale += 1
            if config.keep == "best" and stale >= config.patience:
                break
    if config.keep == "best":
        model.load_arrays(best_state)
    if out_dir is not None:
        result.checkpoint = save_model(out_dir, result)
        write_log(Path(out_dir) / "train_log.csv", result.history)
    return result


def initial_loss(config: TrainConfig, train_set: Sequence, supervisor: Supervisor | None = None) -> float:
    """Mean per-sample training loss of the freshly initialised model."""
    vocab = Vocab.build(tokenize(ex.caption) for ex in train_set)
    items = prepare_examples(train_set, vocab, supervisor)
    model = CaptionModel(config.model_config([x.shape[1] for x in items[0].xs], len(vocab)), seed=config.seed)
    model.fit_normalization([(p.xs, p.vs) for p in items])
    return dataset_loss(model, items, config)


def dataset_loss(model: CaptionModel, items: Sequence[Prepared], config: TrainConfig) -> float:
    total = 0.0
    for batch in make_batches(items, config.batch_size):
        loss = batch_loss(model, batch, config.lambda_spat, config.lambda_adapt)[0]
        total += float(loss.data) * batch.size
    return total / len(items)


def write_log(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in LOG_COLUMNS})


# ----------------------------------------------------------------- checkpoints


def save_model(out_dir, result: TrainResult) -> Path:
    meta = {
        "model_config": result.model.config.to_dict(),
        "train_config": result.config.to_dict(),
        "vocab": result.vocab.to_list(),
        "best_epoch": result.best_epoch,
        "best_val_bleu4": result.best_bleu4,
    }
    return save_checkpoint(Path(out_dir) / "checkpoint", result.model.state_arrays(), meta)


def load_model(path) -> tuple[CaptionModel, Vocab, dict]:
    """Load from a run directory or its ``checkpoint`` subdirectory."""
    path = Path(path)
    if (path / "checkpoint").is_dir():
        path = path / "checkpoint"
    arrays, meta = load_checkpoint(path)
    model = CaptionModel(ModelConfig(**meta["model_config"]))
    model.load_arrays(arrays)
    return model, Vocab.from_list(meta["vocab"]), meta


# ---------------------------------------------------------------------- sweep


def parse_grid(text: str) -> list[tuple[float, float]]:
    """``"0,0;0,3;2,3"`` -> [(0, 0), (0, 3), (2, 3)]."""
    cells = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        a, b = chunk.split(",")
        cells.append((float(a), float(b)))
    if not cells:
        raise ConfigError("empty sweep grid")
    return cells


SWEEP_COLUMNS = ("lambda_spat", "lambda_adapt", "seed", "status", "best_epoch") + METRIC_COLUMNS + ("error",)


def sweep(
    grid: Sequence[tuple[float, float]],
    config: TrainConfig,
    train_set: Sequence,
    val_set: Sequence,
    test_set: Sequence,
    seeds: Sequence[int] | None = None,
    out_dir=None,
) -> list[dict]:
    """Train and evaluate one model per (λ_spat, λ_adapt, seed) cell; failed cells are recorded, not raised."""
    if not grid:
        raise ConfigError("empty sweep grid")
    seeds = list(seeds) if seeds is not None else [config.seed]
    rows = []
    for lam_s, lam_a in grid:
        for seed in seeds:
            row = {"lambda_spat": lam_s, "lambda_adapt": lam_a, "seed": seed, "status": "ok", "best_epoch": "", "error": ""}
            try:
                cfg = TrainConfig.from_dict(dict(config.to_dict(), lambda_spat=lam_s, lambda_adapt=lam_a, seed=seed))
                cell_dir = None if out_dir is None else Path(out_dir) / f"cell_{lam_s:g}_{lam_a:g}_seed{seed}"
                res = train(cfg, train_set, val_set, cell_dir)
                report = evaluate_model(res.model, res.vocab, test_set, cfg.max_len)
                row.update(report.scores(), best_epoch=res.best_epoch)
            except Exception as exc:  # a failed cell must not stop the sweep
                row.update({k: "" for k in METRIC_COLUMNS}, status="failed", error=f"{type(exc).__name__}: {exc}")
                log.warning("sweep cell (%s, %s, seed %s) failed\n%s", lam_s, lam_a, seed, traceback.format_exc())
            rows.append(row)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(out_dir) / "sweep.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    return rows


def evaluate_model(model: CaptionModel, vocab: Vocab, examples: Sequence, max_len: int = 30):
    items = unique_by_id(prepare_examples(examples, vocab))
    hyps = decode_captions(model, vocab, items, max_len)
    return evaluate(hyps, references_by_id(examples))

