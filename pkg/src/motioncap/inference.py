"""Decoding a dataset into captions plus attention records, and the toy gradient check."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .dataset import Prepared, collate, prepare_examples, unique_by_id
from .decoder import CaptionModel, ModelConfig, attention_record, beam_decode, greedy_decode_batch
from .interp import InterpRecord, record_from_steps
from .losses import adaptive_loss, global_loss, language_loss, spatial_loss
from .numerics import GradCheckReport, active_tape, grad_check
from .skeleton import PARTS, MotionSequence, SkeletonLayout, prepare
from .supervision import default_supervisor
from .text import Vocab, tokenize

MODES = ("greedy", "beam", "forced")


def _trim(steps: list[dict], n: int) -> list[dict]:
    out = []
    for s in steps:
        s = dict(s)
        for key in ("gamma", "Gamma", "alpha"):
            s[key] = np.asarray(s[key])[:n]
        out.append(s)
    return out


def forced_records(model: CaptionModel, vocab: Vocab, items: Sequence[Prepared]) -> list[InterpRecord]:
    """Attention along the reference caption (teacher forcing), one record per item.

    Each record ends with the EOS step.
    """
    records = []
    for p in items:
        batch = collate([p])
        mem = model.encode(batch.xs, batch.vs, batch.frame_mask)
        outs = model.teacher_forced(mem, batch.inputs)
        words = [vocab.word(i) for i in p.ids] + [vocab.word(vocab.eos_id)]
        steps = [attention_record(o.attention, 0) for o in outs]
        records.append(record_from_steps(p.id, words, steps, "forced"))
    return records


def decode_dataset(
    model: CaptionModel,
    vocab: Vocab,
    examples: Sequence,
    mode: str = "greedy",
    beam_width: int = 3,
    max_len: int = 30,
    chunk: int = 64,
) -> tuple[dict[str, list[str]], list[InterpRecord]]:
    """Captions by sample id and one attention record per unique motion."""
    if mode not in MODES:
        raise ValueError(f"unknown decode mode {mode!r}")
    items = unique_by_id(prepare_examples(examples, vocab))
    if mode == "forced":
        records = forced_records(model, vocab, items)
        return {r.sample_id: [t.word for t in r.words()] for r in records}, records
    captions, records = {}, []
    for i in range(0, len(items), chunk):
        part = items[i : i + chunk]
        if mode == "greedy":
            hyps = greedy_decode_batch(model, [(p.xs, p.vs) for p in part], max_len, vocab.bos_id, vocab.eos_id)
        else:
            hyps = [beam_decode(model, p.xs, p.vs, beam_width, max_len, vocab.bos_id, vocab.eos_id) for p in part]
        for p, h in zip(part, hyps):
            captions[p.id] = vocab.decode(h.tokens)
            words = [vocab.word(t) for t in h.tokens]
            records.append(record_from_steps(p.id, words, _trim(h.attention, p.n_frames), mode))
    return captions, records


# ------------------------------------------------------------ gradient check


def toy_problem(seed: int = 0, n_frames: int = 4, h: int = 8):
    """A tiny model and one sample: ``n_frames`` frames, a 3-token caption, 6-word vocabulary.

    Every hidden size is ``h``; the part embedding (two streams of ``h // 2``) is too.
    """
    rng = np.random.default_rng(seed)
    # one joint per part keeps the encoder small; the root is joint 0
    order = ("Root",) + tuple(p for p in PARTS if p != "Root")
    layout = SkeletonLayout(tuple(f"j_{p.lower()}" for p in order), order, 0)
    motion = MotionSequence(rng.normal(size=(n_frames, layout.n_joints, 3)), layout)
    # "kick" carries a two-part spatial target; "left" is out of vocabulary and maps to UNK
    caption = "a kick left"
    vocab = Vocab(["a", "kick"])
    tokens = tokenize(caption)
    xs, vs = prepare(motion)
    targets = default_supervisor().build_spatial_targets(tokens)
    config = ModelConfig(
        part_widths=[x.shape[1] for x in xs], vocab_size=len(vocab), d_emb=h, h_dec=h, h1=h // 2, h2=h // 2, d_att=h, d_ctx=h
    )
    model = CaptionModel(config, seed=seed)
    return model, vocab, tokens, (xs, vs), targets


def toy_gradcheck(tol: float = 1e-4, seed: int = 0, lambdas=(2.0, 3.0), step: float = 1e-4) -> GradCheckReport:
    """Finite-difference check of the full global loss on the toy problem, per parameter tensor."""
    model, vocab, tokens, (xs, vs), tg = toy_problem(seed)
    ids = vocab.encode(tokens)
    inputs = np.array([[vocab.bos_id] + ids])
    targets = np.array([ids + [vocab.eos_id]])
    mask = np.ones(targets.shape)
    bx = [x[None] for x in xs]
    bv = [v[None] for v in vs]

    # everything encode() reads: the part encoders and the attention projections of P
    enc = [t for k, t in model.params.items() if k.startswith("enc.") or k.endswith(".wp")]
    cache: dict = {}

    def encode():
        # probes that move a decoder weight reuse the encoder output; under a tape it is always rebuilt
        if active_tape() is not None:
            return model.encode(bx, bv)
        key = b"".join(t.data.tobytes() for t in enc)
        if cache.get("key") != key:
            cache["key"], cache["mem"] = key, model.encode(bx, bv)
        return cache["mem"]

    def loss():
        mem = encode()
        outs = model.teacher_forced(mem, inputs)
        lang = language_loss([o.probs for o in outs], targets, mask)
        adapt = adaptive_loss([o.attention.beta for o in outs], tg.beta[None], mask)
        spat = spatial_loss([o.attention.alpha for o in outs], tg.alpha_target[None], tg.supervised_mask[None], [tg.n_y])
        return global_loss(lang, spat, adapt, *lambdas)

    return grad_check(loss, model.params, step=step, tol=tol)
