"""Analyses over attention dumps: gate densities, part histograms, localization, fine-grained reports.

Everything here reads dump files (or the equivalent in-memory records) and
never touches a live model.

Dump format, one JSON file per sample::

    {"id": str, "n_frames": T, "mode": "greedy" | "beam" | "forced",
     "steps": [{"word": str, "beta": float, "m": float, "sigma": float,
                "gamma": [T], "Gamma": [T], "alpha": [T][6]}, ...]}
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .skeleton import PARTS
from .supervision import stem
from .text import SPECIALS

KAPPA = 1.5
TAU_BETA = 0.5


class InputError(ValueError):
    pass


@dataclass
class TokenAttention:
    word: str
    beta: float
    m: float
    sigma: float
    Gamma: np.ndarray  # T
    alpha: np.ndarray  # T x a
    gamma: np.ndarray | None = None

    @property
    def stem(self) -> str:
        return stem(self.word)

    @property
    def is_special(self) -> bool:
        return self.word in SPECIALS


@dataclass
class InterpRecord:
    sample_id: str
    n_frames: int
    tokens: list[TokenAttention] = field(default_factory=list)
    mode: str = "greedy"

    def words(self) -> list[TokenAttention]:
        return [t for t in self.tokens if not t.is_special]


# ------------------------------------------------------------------- dump I/O


def record_to_dict(rec: InterpRecord) -> dict:
    steps = []
    for t in rec.tokens:
        d = {"word": t.word, "beta": t.beta, "m": t.m, "sigma": t.sigma, "Gamma": np.asarray(t.Gamma).tolist(), "alpha": np.asarray(t.alpha).tolist()}
        if t.gamma is not None:
            d["gamma"] = np.asarray(t.gamma).tolist()
        steps.append(d)
    return {"id": rec.sample_id, "n_frames": rec.n_frames, "mode": rec.mode, "steps": steps}


def record_from_dict(d: dict) -> InterpRecord:
    n = int(d["n_frames"])
    tokens = []
    for s in d["steps"]:
        gamma = np.asarray(s["gamma"], dtype=np.float64) if "gamma" in s else None
        tok = TokenAttention(
            s["word"], float(s["beta"]), float(s["m"]), float(s["sigma"]),
            np.asarray(s["Gamma"], dtype=np.float64), np.asarray(s["alpha"], dtype=np.float64), gamma,
        )
        if tok.Gamma.shape != (n,) or tok.alpha.shape[0] != n:
            raise InputError(f"{d['id']}: attention arrays do not match {n} frames")
        tokens.append(tok)
    return InterpRecord(d["id"], n, tokens, d.get("mode", "greedy"))


def record_from_steps(sample_id: str, words: Sequence[str], steps: Sequence[dict], mode: str) -> InterpRecord:
    """Build a record from per-step attention snapshots (see ``decoder.attention_record``)."""
    n = len(steps[0]["Gamma"]) if steps else 0
    toks = [
        TokenAttention(w, s["beta"], s["m"], s["sigma"], np.asarray(s["Gamma"])[:n], np.asarray(s["alpha"])[:n], np.asarray(s["gamma"])[:n])
        for w, s in zip(words, steps)
    ]
    return InterpRecord(sample_id, n, toks, mode)


def save_dump(dump_dir, records: Iterable[InterpRecord]) -> None:
    out = Path(dump_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        (out / f"{rec.sample_id}.json").write_text(json.dumps(record_to_dict(rec)))


def load_dump(dump_dir) -> list[InterpRecord]:
    paths = sorted(Path(dump_dir).glob("*.json"))
    return [record_from_dict(json.loads(p.read_text())) for p in paths]


# ---------------------------------------------------------------- β densities


@dataclass
class StemDensity:
    stem: str
    n: int
    mean: float
    median: float
    bandwidth: float
    grid: np.ndarray
    density: np.ndarray
    low_count: bool
    degenerate: bool


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(ddof=1) if len(x) > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * len(x) ** -0.2


def kde(values: Sequence[float], grid: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Gaussian KDE on ``grid``; a zero bandwidth gives a unit-mass spike at the nearest grid point."""
    x = np.asarray(values, dtype=np.float64)
    h = silverman_bandwidth(x)
    if h <= 0:
        dens = np.zeros_like(grid)
        step = grid[1] - grid[0] if len(grid) > 1 else 1.0
        dens[int(np.argmin(np.abs(grid - x[0])))] = 1.0 / step
        return dens, 0.0, True
    z = (grid[:, None] - x[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1) / (len(x) * h * math.sqrt(2 * math.pi)), h, False


def beta_values(records: Sequence[InterpRecord]) -> dict[str, list[float]]:
    out: dict[str, list[float]] = {}
    for rec in records:
        for t in rec.words():
            out.setdefault(t.stem, []).append(t.beta)
    return out


def beta_density(
    records: Sequence[InterpRecord], words: Sequence[str], grid_size: int = 201, min_count: int = 5
) -> dict[str, StemDensity]:
    if not records:
        raise InputError("no attention records")
    values = beta_values(records)
    grid = np.linspace(0.0, 1.0, grid_size)
    out = {}
    for w in words:
        s = stem(w)
        xs = values.get(s, [])
        if not xs:
            out[s] = StemDensity(s, 0, float("nan"), float("nan"), 0.0, grid, np.zeros_like(grid), True, False)
            continue
        dens, h, degenerate = kde(xs, grid)
        out[s] = StemDensity(s, len(xs), float(np.mean(xs)), float(np.median(xs)), h, grid, dens, len(xs) < min_count, degenerate)
    return out


def write_density_csv(path, densities: dict[str, StemDensity]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stem", "beta", "density", "n", "mean", "median", "low_count"])
        for d in densities.values():
            for g, v in zip(d.grid, d.density):
                w.writerow([d.stem, f"{g:.6g}", f"{v:.10g}", d.n, f"{d.mean:.10g}", f"{d.median:.10g}", int(d.low_count)])


# ------------------------------------------------------------ part histograms


def attended_part(tok: TokenAttention) -> int:
    """Index of the most-attended part at the most-attended frame; ties go to the lowest index."""
    k = int(np.argmax(tok.Gamma))
    return int(np.argmax(tok.alpha[k]))


@dataclass
class PartHistogram:
    stem: str
    counts: dict[str, int]
    total: int
    modal_part: str | None
    share: float


def part_histogram(records: Sequence[InterpRecord], word: str) -> PartHistogram:
    s = stem(word)
    counts = np.zeros(len(PARTS), dtype=int)
    for rec in records:
        for t in rec.words():
            if t.stem == s:
                counts[attended_part(t)] += 1
    total = int(counts.sum())
    modal = PARTS[int(np.argmax(counts))] if total else None
    return PartHistogram(s, dict(zip(PARTS, counts.tolist())), total, modal, counts.max() / total if total else 0.0)


def write_histogram_csv(path, hists: Sequence[PartHistogram]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stem", *PARTS, "total", "modal_part", "share"])
        for h in hists:
            w.writerow([h.stem, *[h.counts[p] for p in PARTS], h.total, h.modal_part or "", f"{h.share:.10g}"])


# --------------------------------------------------------------- localization


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def localize_span(m: float, sigma: float, n_frames: int, kappa: float = KAPPA) -> tuple[int, int]:
    start = max(0, _round_half_up(m - kappa * sigma))
    end = min(n_frames - 1, _round_half_up(m + kappa * sigma))
    return start, end


def localize(record: InterpRecord, token: int | str, kappa: float = KAPPA) -> tuple[int, int]:
    """Frame span ``m ± kappa * sigma`` of a token given by position or word (first match)."""
    if isinstance(token, str):
        matches = [t for t in record.tokens if t.word == token]
        if not matches:
            raise KeyError(f"{token!r} not in record {record.sample_id}")
        tok = matches[0]
    else:
        tok = record.tokens[token]
    return localize_span(tok.m, tok.sigma, record.n_frames, kappa)


def localization_table(records: Sequence[InterpRecord], words: Sequence[str] | None = None, kappa: float = KAPPA) -> list[dict]:
    wanted = None if words is None else {stem(w) for w in words}
    rows = []
    for rec in records:
        for i, t in enumerate(rec.tokens):
            if t.is_special or (wanted is not None and t.stem not in wanted):
                continue
            start, end = localize_span(t.m, t.sigma, rec.n_frames, kappa)
            rows.append(
                {"id": rec.sample_id, "index": i, "word": t.word, "stem": t.stem, "beta": t.beta, "m": t.m, "sigma": t.sigma,
                 "start": start, "end": end, "part": PARTS[attended_part(t)]}
            )
    return rows


def write_rows_csv(path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in columns})


# ------------------------------------------------------------- fine-grained


def fine_grained_report(record: InterpRecord, tau_beta: float = TAU_BETA, kappa: float = KAPPA) -> dict:
    """Motion words (gate above ``tau_beta``) with their frame span and top body part, ordered by ``m``."""
    entries = []
    for i, t in enumerate(record.tokens):
        if t.is_special or t.beta <= tau_beta:
            continue
        start, end = localize_span(t.m, t.sigma, record.n_frames, kappa)
        entries.append({"index": i, "word": t.word, "beta": t.beta, "m": t.m, "sigma": t.sigma, "span": [start, end],
                        "part": PARTS[attended_part(t)]})
    entries.sort(key=lambda e: (e["m"], e["index"]))
    return {"id": record.sample_id, "n_frames": record.n_frames, "caption": " ".join(t.word for t in record.words()),
            "motion_words": entries}


def analyze(dump_dir, out_dir, words: Sequence[str], tau_beta: float = TAU_BETA, kappa: float = KAPPA) -> dict:
    """Run every analysis on a dump directory and write CSV/JSON outputs."""
    records = load_dump(dump_dir)
    if not records:
        raise InputError(f"no dump files in {dump_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dens = beta_density(records, words)
    write_density_csv(out / "beta_density.csv", dens)
    hists = [part_histogram(records, w) for w in words]
    write_histogram_csv(out / "part_histogram.csv", hists)
    rows = localization_table(records, words, kappa)
    write_rows_csv(out / "localization.csv", rows, ["id", "index", "word", "stem", "beta", "m", "sigma", "start", "end", "part"])
    report = [fine_grained_report(r, tau_beta, kappa) for r in records]
    (out / "fine_grained.json").write_text(json.dumps(report, indent=1))
    summary = {
        "n_records": len(records),
        "beta": {s: {"n": d.n, "mean": d.mean, "median": d.median, "low_count": d.low_count} for s, d in dens.items()},
        "parts": {h.stem: {"modal_part": h.modal_part, "share": h.share, "total": h.total} for h in hists},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


# ------------------------------------------------------------ gold agreement


@dataclass
class GoldAgreement:
    gate_motion: float  # mean β̂ over gold motion words
    gate_function: float  # mean β̂ over the other caption words
    part_hits: int
    part_total: int
    loc_hits: int
    loc_total: int

    @property
    def gate_gap(self) -> float:
        return self.gate_motion - self.gate_function

    @property
    def part_accuracy(self) -> float:
        return self.part_hits / self.part_total if self.part_total else float("nan")

    @property
    def localization_rate(self) -> float:
        return self.loc_hits / self.loc_total if self.loc_total else float("nan")


def gold_agreement(records: Sequence[InterpRecord], annotations: dict[str, dict], tolerance: float = 0.15) -> GoldAgreement:
    """Compare teacher-forced attention records with gold annotations.

    Tokens are matched by position, so records must follow the annotated
    caption. A part is correct when the attended part is one of the
    dictionary parts of the word; a center is correct when
    ``|m - gold center| <= tolerance * T``.
    """
    motion, function = [], []
    part_hits = part_total = loc_hits = loc_total = 0
    for rec in records:
        ann = annotations[rec.sample_id]
        if [t.word for t in rec.tokens[: len(ann["tokens"])]] != ann["tokens"]:
            raise InputError(f"{rec.sample_id}: record does not follow the annotated caption")
        for i, flag in enumerate(ann["motion_flags"]):
            (motion if flag else function).append(rec.tokens[i].beta)
        for w in ann["motion_words"]:
            tok = rec.tokens[w["index"]]
            loc_total += 1
            loc_hits += abs(tok.m - w["center"]) <= tolerance * rec.n_frames
            if w["dictionary_parts"]:
                part_total += 1
                part_hits += PARTS[attended_part(tok)] in w["dictionary_parts"]
    return GoldAgreement(_mean(motion), _mean(function), part_hits, part_total, loc_hits, loc_total)


def _mean(xs: Sequence[float]) -> float:
    return float(np.mean(xs)) if len(xs) else float("nan")
