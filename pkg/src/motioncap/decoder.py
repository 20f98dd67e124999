"""Two-LSTM captioning decoder over part embeddings, plus greedy and beam decoding.

One decoding step:

1. the Bottom LSTM reads the previous word embedding and gives ``h``;
2. ``h`` drives temporal attention (refit to a Gaussian window), spatial
   attention over parts, and the adaptive gate ``beta``;
3. the attended motion context is embedded as ``e`` and, with the word
   embedding, feeds the Top LSTM whose state is embedded as ``r``;
4. ``cbar = beta * e + (1 - beta) * r`` goes to the output head together
   with the word embedding and ``h``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import numerics as nx
from .attention import (
    AttentionState,
    MotionMemory,
    adaptive_gate,
    blend,
    context_vector,
    gaussian_refit,
    init_attention,
    project_motion,
    spatial_attention,
    temporal_attention,
)
from .encoder import STREAMS, encode, init_encoder
from .layers import linear, lstm_cell, make_linear, make_lstm, uniform_fan_in
from .numerics import Tensor
from .skeleton import PARTS
from .text import VocabularyError


@dataclass
class ModelConfig:
    part_widths: tuple[int, ...]
    vocab_size: int
    d_emb: int = 32
    h_dec: int = 64
    h1: int = 32
    h2: int = 16
    d_att: int | None = None  # defaults to h_dec
    d_ctx: int | None = None  # defaults to h_dec
    sigma_min: float = 0.5
    head: str = "projected"  # or "tanh": softmax(tanh(W_f x)) with no output projection
    spatial_axis: str = "part"
    gaussian: bool = True

    def __post_init__(self):
        self.part_widths = tuple(int(w) for w in self.part_widths)
        if self.d_att is None:
            self.d_att = self.h_dec
        if self.d_ctx is None:
            self.d_ctx = self.h_dec
        if self.head not in ("projected", "tanh"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be positive")

    @property
    def h_enc(self) -> int:
        return 2 * self.h2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["part_widths"] = list(self.part_widths)
        return d


@dataclass
class DecodeState:
    h: Tensor
    c: Tensor
    hbar: Tensor
    cbar_cell: Tensor


@dataclass
class StepOutput:
    probs: Tensor  # B x K
    attention: AttentionState


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float
    attention: list[dict] = field(default_factory=list)

    @property
    def score(self) -> float:
        """Length-normalised log-probability (EOS counts as a token)."""
        return self.logprob / max(len(self.tokens), 1)


class CaptionModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {}
        init_encoder(p, config.part_widths, config.h1, config.h2, rng)
        p["embed"] = Tensor(uniform_fan_in(rng, config.d_emb, (config.vocab_size, config.d_emb)), True, "embed")
        make_lstm(p, "bottom", config.d_emb, config.h_dec, rng)
        init_attention(p, config.h_enc, config.h_dec, config.d_att, config.d_emb, config.d_ctx, rng)
        make_lstm(p, "top", config.d_ctx + config.d_emb, config.h_dec, rng)
        head_in = config.d_ctx + config.d_emb + config.h_dec
        if config.head == "projected":
            make_linear(p, "head.f", head_in, config.h_dec, rng)
            make_linear(p, "head.out", config.h_dec, config.vocab_size, rng)
        else:
            make_linear(p, "head.f", head_in, config.vocab_size, rng)
        self.params = p
        # feature standardisation, fitted on training data; not trained
        self.buffers: dict[str, np.ndarray] = {}
        for part, width in zip(PARTS, config.part_widths):
            for stream in STREAMS:
                self.buffers[f"norm.{part}.{stream}.mean"] = np.zeros(width)
                self.buffers[f"norm.{part}.{stream}.std"] = np.ones(width)

    # ------------------------------------------------------------------ state

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: t.data for name, t in self.params.items()}
        out.update(self.buffers)
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if arrays[name].shape != t.shape:
                raise ValueError(f"{name}: checkpoint shape {arrays[name].shape} != {t.shape}")
            t.data = np.array(arrays[name], dtype=np.float64)
        for name in self.buffers:
            self.buffers[name] = np.array(arrays[name], dtype=np.float64)

    def fit_normalization(self, part_arrays: Sequence[tuple[list[np.ndarray], list[np.ndarray]]]) -> None:
        """Per-feature mean/std over every frame of the given (xs, vs) examples."""
        for i, part in enumerate(PARTS):
            for s, stream in enumerate(STREAMS):
                frames = np.concatenate([ex[s][i] for ex in part_arrays], axis=0)
                std = frames.std(axis=0)
                self.buffers[f"norm.{part}.{stream}.mean"] = frames.mean(axis=0)
                self.buffers[f"norm.{part}.{stream}.std"] = np.where(std > 1e-6, std, 1.0)

    # ---------------------------------------------------------------- forward

    def normalize(self, xs: Sequence[np.ndarray], vs: Sequence[np.ndarray]):
        b = self.buffers
        nxs = [(x - b[f"norm.{p}.pos.mean"]) / b[f"norm.{p}.pos.std"] for p, x in zip(PARTS, xs)]
        nvs = [(v - b[f"norm.{p}.vel.mean"]) / b[f"norm.{p}.vel.std"] for p, v in zip(PARTS, vs)]
        return nxs, nvs

    def encode(self, xs: Sequence[np.ndarray], vs: Sequence[np.ndarray], frame_mask=None) -> MotionMemory:
        """``xs[i]``/``vs[i]``: ``B x T x width_i`` raw features of part ``i``."""
        nxs, nvs = self.normalize(xs, vs)
        P = encode(self.params, nxs, nvs)
        if frame_mask is not None:
            # padded frames must not leak into anything downstream
            P = P * np.asarray(frame_mask, dtype=np.float64)[:, :, None, None]
        return project_motion(self.params, P, frame_mask)

    def initial_state(self, batch: int) -> DecodeState:
        z = np.zeros((batch, self.config.h_dec))
        return DecodeState(Tensor(z), Tensor(z), Tensor(z), Tensor(z))

    def _check_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise VocabularyError(f"token ids {ids} outside vocabulary of size {self.config.vocab_size}")
        return ids

    def step(self, prev_ids, state: DecodeState, mem: MotionMemory) -> tuple[StepOutput, DecodeState]:
        cfg, p = self.config, self.params
        emb = nx.embedding(p["embed"], self._check_ids(prev_ids))
        h, c = lstm_cell(p, "bottom", emb, state.h, state.c)

        gamma = temporal_attention(p, mem, h)
        m, sigma, window = gaussian_refit(gamma, cfg.sigma_min, mem.frame_mask)
        alpha = spatial_attention(p, mem, h, cfg.spatial_axis)
        beta = adaptive_gate(p, h, emb)
        ctx = context_vector(window if cfg.gaussian else gamma, alpha, mem.P)

        e = nx.tanh(linear(p, "ctx.motion", ctx))
        hbar, cbar_cell = lstm_cell(p, "top", nx.concat([e, emb], axis=-1), state.hbar, state.cbar_cell)
        r = nx.tanh(linear(p, "ctx.language", hbar))
        cbar = blend(e, r, beta)

        feats = nx.concat([cbar, emb, h], axis=-1)
        if cfg.head == "projected":
            logits = linear(p, "head.out", nx.tanh(linear(p, "head.f", feats)))
        else:
            logits = nx.tanh(linear(p, "head.f", feats))
        probs = nx.softmax(logits, axis=-1)
        att = AttentionState(gamma, m, sigma, window, alpha, beta, ctx, e, r, cbar)
        return StepOutput(probs, att), DecodeState(h, c, hbar, cbar_cell)

    def teacher_forced(self, mem: MotionMemory, inputs: np.ndarray) -> list[StepOutput]:
        """Run every step on the ground-truth history ``inputs`` (``B x L``, starting with BOS)."""
        state = self.initial_state(inputs.shape[0])
        outputs = []
        for t in range(inputs.shape[1]):
            out, state = self.step(inputs[:, t], state, mem)
            outputs.append(out)
        return outputs


def attention_record(att: AttentionState, row: int = 0) -> dict:
    """Plain-numpy snapshot of one batch row of an attention state."""
    return {
        "beta": float(att.beta.data[row]),
        "gamma": att.gamma.data[row],
        "Gamma": att.Gamma.data[row],
        "m": float(att.m.data[row]),
        "sigma": float(att.sigma.data[row]),
        "alpha": att.alpha.data[row],
    }


def _single(xs, vs):
    return [np.asarray(x)[None] for x in xs], [np.asarray(v)[None] for v in vs]


def sequence_logprob(model: CaptionModel, xs, vs, token_ids: Sequence[int], eos_id: int) -> float:
    """Teacher-forced log-likelihood of ``token_ids`` followed by EOS for one motion."""
    bx, bv = _single(xs, vs)
    mem = model.encode(bx, bv)
    bos = 1
    inputs = np.array([[bos] + list(token_ids)])
    targets = list(token_ids) + [eos_id]
    total = 0.0
    for t, out in enumerate(model.teacher_forced(mem, inputs)):
        total += float(np.log(max(out.probs.data[0, targets[t]], 1e-300)))
    return total


def greedy_decode(
    model: CaptionModel, xs, vs, max_len: int = 30, bos_id: int = 1, eos_id: int = 2
) -> Hypothesis:
    """Argmax decoding for one motion; stops at EOS or after ``max_len`` tokens."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return greedy_decode_batch(model, [(xs, vs)], max_len, bos_id, eos_id)[0]


def pad_motions(motions: Sequence[tuple[list[np.ndarray], list[np.ndarray]]]):
    """Stack ``(xs, vs)`` pairs of different lengths into ``B x T_max`` arrays plus a frame mask."""
    lengths = [m[0][0].shape[0] for m in motions]
    t_max = max(lengths)
    xs, vs = [], []
    for i in range(len(PARTS)):
        for stream, out in ((0, xs), (1, vs)):
            width = motions[0][stream][i].shape[1]
            arr = np.zeros((len(motions), t_max, width))
            for b, m in enumerate(motions):
                arr[b, : lengths[b]] = m[stream][i]
            out.append(arr)
    mask = np.zeros((len(motions), t_max))
    for b, n in enumerate(lengths):
        mask[b, :n] = 1.0
    return xs, vs, mask


def greedy_decode_batch(
    model: CaptionModel, motions, max_len: int = 30, bos_id: int = 1, eos_id: int = 2
) -> list[Hypothesis]:
    xs, vs, mask = pad_motions(motions)
    mem = model.encode(xs, vs, mask)
    n = len(motions)
    state = model.initial_state(n)
    prev = np.full(n, bos_id, dtype=np.int64)
    hyps = [Hypothesis([], 0.0) for _ in range(n)]
    done = np.zeros(n, dtype=bool)
    lengths = mask.sum(axis=1).astype(int)
    for _ in range(max_len):
        out, state = model.step(prev, state, mem)
        probs = out.probs.data
        nxt = probs.argmax(axis=1)
        for b in np.flatnonzero(~done):
            hyps[b].tokens.append(int(nxt[b]))
            hyps[b].logprob += float(np.log(max(probs[b, nxt[b]], 1e-300)))
            for rec in _record(out, b):
                for key in ("gamma", "Gamma", "alpha"):
                    rec[key] = rec[key][: lengths[b]]
                hyps[b].attention.append(rec)
            if nxt[b] == eos_id:
                done[b] = True
        if done.all():
            break
        prev = nxt
    return hyps


def _take_rows(t: Tensor, rows: np.ndarray) -> Tensor:
    return Tensor(t.data[rows])


def _record(out: StepOutput, row: int) -> list[dict]:
    return [] if out.attention is None else [attention_record(out.attention, row)]


def beam_decode(
    model: CaptionModel, xs, vs, beam_width: int = 2, max_len: int = 30, bos_id: int = 1, eos_id: int = 2
) -> Hypothesis:
    """Shrinking-beam search; the result is ranked by length-normalised log-probability.

    All live hypotheses share one length, so candidates within a step are
    ranked by raw log-probability. A hypothesis that emits EOS leaves the
    beam and the width shrinks by one.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    bx, bv = _single(xs, vs)
    base = model.encode(bx, bv)
    width = beam_width
    alive = [Hypothesis([], 0.0)]
    state = model.initial_state(1)
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        rows = np.zeros(len(alive), dtype=np.int64)
        mem = MotionMemory(
            _take_rows(base.P, rows),
            _take_rows(base.proj_temporal, rows),
            _take_rows(base.proj_spatial, rows),
            base.frame_mask[rows],
        )
        prev = np.array([h.tokens[-1] if h.tokens else bos_id for h in alive])
        out, new_state = model.step(prev, state, mem)
        logp = np.log(np.maximum(out.probs.data, 1e-300))
        cands = []
        for b, hyp in enumerate(alive):
            for tok in np.argsort(-logp[b], kind="stable")[:width]:
                cands.append((hyp.logprob + float(logp[b, tok]), b, int(tok)))
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_alive, keep = [], []
        for lp, b, tok in cands[:width]:
            hyp = Hypothesis(alive[b].tokens + [tok], lp, alive[b].attention + _record(out, b))
            if tok == eos_id:
                finished.append(hyp)
                width -= 1
            else:
                next_alive.append(hyp)
                keep.append(b)
        alive = next_alive
        if not alive:
            break
        keep = np.array(keep)
        state = DecodeState(*(_take_rows(s, keep) for s in (new_state.h, new_state.c, new_state.hbar, new_state.cbar_cell)))
    # hypotheses cut off by max_len compete too, as greedy's output would
    return max(finished + alive, key=lambda h: h.score)
