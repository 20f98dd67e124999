"""On-disk caption corpora and padded training batches.

A corpus directory holds ``samples.jsonl`` (one line per sample: id,
caption, split, motion path, optional annotation path), ``motions/`` with
one skeleton JSON per sample, ``annotations/`` with gold sidecars and
``splits.json`` listing ids per split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .skeleton import MotionSequence, load_motion, prepare, save_motion
from .supervision import Supervisor, default_supervisor
from .text import Vocab, tokenize

PAD_ID, BOS_ID, EOS_ID = 0, 1, 2

SPLITS = ("train", "val", "test")


@dataclass
class Example:
    id: str
    motion: MotionSequence
    caption: str
    annotation: dict | None = None

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.caption)


def save_corpus(out_dir, splits: dict[str, Sequence], annotations: dict[str, dict] | None = None) -> Path:
    """Write samples (anything with ``id``, ``motion``, ``caption``) split by split."""
    out = Path(out_dir)
    (out / "motions").mkdir(parents=True, exist_ok=True)
    annotations = annotations or {}
    if annotations:
        (out / "annotations").mkdir(exist_ok=True)
    ids = {}
    with open(out / "samples.jsonl", "w") as fh:
        for split, samples in splits.items():
            ids[split] = []
            for s in samples:
                rec = {"id": s.id, "caption": s.caption, "split": split, "motion": f"motions/{s.id}.json"}
                save_motion(out / rec["motion"], s.motion)
                if s.id in annotations:
                    rec["annotation"] = f"annotations/{s.id}.json"
                    (out / rec["annotation"]).write_text(json.dumps(annotations[s.id], indent=1))
                fh.write(json.dumps(rec) + "\n")
                ids[split].append(s.id)
    (out / "splits.json").write_text(json.dumps(ids, indent=1))
    return out


def load_corpus(data_dir) -> dict[str, list[Example]]:
    root = Path(data_dir)
    index = root / "samples.jsonl"
    if not index.exists():
        raise FileNotFoundError(f"{index} not found")
    out: dict[str, list[Example]] = {s: [] for s in SPLITS}
    for line in index.read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        ann = None
        if rec.get("annotation"):
            ann = json.loads((root / rec["annotation"]).read_text())
        ex = Example(rec["id"], load_motion(root / rec["motion"]), rec["caption"], ann)
        out.setdefault(rec["split"], []).append(ex)
    return out


@dataclass
class Prepared:
    """One example turned into model inputs and guidance targets."""

    id: str
    xs: list[np.ndarray]
    vs: list[np.ndarray]
    ids: list[int]  # caption token ids, no BOS/EOS
    beta: np.ndarray  # len(ids) + 1
    alpha_target: np.ndarray  # (len(ids) + 1) x a
    supervised: np.ndarray
    n_y: int

    @property
    def n_frames(self) -> int:
        return self.xs[0].shape[0]


def prepare_examples(examples: Sequence, vocab: Vocab, supervisor: Supervisor | None = None) -> list[Prepared]:
    sup = supervisor or default_supervisor()
    out = []
    for ex in examples:
        tokens = tokenize(ex.caption)
        xs, vs = prepare(ex.motion)
        tg = sup.build_spatial_targets(tokens)
        out.append(Prepared(ex.id, xs, vs, vocab.encode(tokens), tg.beta, tg.alpha_target, tg.supervised_mask, tg.n_y))
    return out


def unique_by_id(items: Sequence[Prepared]) -> list[Prepared]:
    """First item of each motion id, in order; references share one motion."""
    seen, out = set(), []
    for p in items:
        if p.id not in seen:
            seen.add(p.id)
            out.append(p)
    return out


@dataclass
class Batch:
    ids: list[str]
    xs: list[np.ndarray]  # per part: B x T x width
    vs: list[np.ndarray]
    frame_mask: np.ndarray  # B x T
    inputs: np.ndarray  # B x L, BOS then tokens, PAD after
    targets: np.ndarray  # B x L, tokens then EOS, PAD after
    token_mask: np.ndarray  # B x L
    beta: np.ndarray  # B x L
    alpha_target: np.ndarray  # B x L x a
    supervised: np.ndarray  # B x L
    n_y: np.ndarray  # B

    @property
    def size(self) -> int:
        return len(self.ids)


def collate(items: Sequence[Prepared]) -> Batch:
    from .decoder import pad_motions

    xs, vs, frame_mask = pad_motions([(p.xs, p.vs) for p in items])
    n = len(items)
    length = max(len(p.ids) for p in items) + 1
    a = items[0].alpha_target.shape[1]
    inputs = np.full((n, length), PAD_ID, dtype=np.int64)
    targets = np.full((n, length), PAD_ID, dtype=np.int64)
    token_mask = np.zeros((n, length))
    beta = np.zeros((n, length))
    alpha_target = np.zeros((n, length, a))
    supervised = np.zeros((n, length))
    for b, p in enumerate(items):
        k = len(p.ids) + 1
        inputs[b, :k] = [BOS_ID] + p.ids
        targets[b, :k] = p.ids + [EOS_ID]
        token_mask[b, :k] = 1.0
        beta[b, :k] = p.beta
        alpha_target[b, :k] = p.alpha_target
        supervised[b, :k] = p.supervised
    n_y = np.array([p.n_y for p in items], dtype=np.float64)
    return Batch([p.id for p in items], xs, vs, frame_mask, inputs, targets, token_mask, beta, alpha_target, supervised, n_y)


def make_batches(items: Sequence[Prepared], batch_size: int, rng: np.random.Generator | None = None) -> list[Batch]:
    """Length-sorted buckets of ``batch_size``; the bucket order is shuffled when ``rng`` is given."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = list(range(len(items)))
    if rng is not None:
        # shuffle first so equal-length items do not always share a batch
        rng.shuffle(order)
    order.sort(key=lambda i: items[i].n_frames)
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    return [collate([items[i] for i in c]) for c in chunks]
