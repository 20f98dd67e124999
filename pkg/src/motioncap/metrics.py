"""Corpus caption metrics: BLEU@1..4, ROUGE-L and CIDEr, all on token lists."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

METRIC_COLUMNS = ("bleu1", "bleu2", "bleu3", "bleu4", "rougeL", "cider")
BLEU_EPS = 1e-9
ROUGE_BETA2 = 1.2

Tokens = Sequence[str]


class MetricError(ValueError):
    pass


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check(hypotheses, reference_sets):
    if len(hypotheses) != len(reference_sets) or not hypotheses:
        raise MetricError(f"need matching non-empty inputs, got {len(hypotheses)} vs {len(reference_sets)}")
    for refs in reference_sets:
        if not refs:
            raise MetricError("every hypothesis needs at least one reference")


def bleu(hypotheses: Sequence[Tokens], reference_sets: Sequence[Sequence[Tokens]], max_n: int = 4) -> float:
    """Corpus BLEU with brevity penalty and uniform weights, in percent.

    Zero clipped counts get ``BLEU_EPS`` added to the numerator so the
    geometric mean stays defined.
    """
    _check(hypotheses, reference_sets)
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, reference_sets):
        hyp_len += len(hyp)
        # closest reference length, shorter one on ties
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = ngrams(hyp, n)
            best: Counter = Counter()
            for r in refs:
                best |= ngrams(r, n)
            matched[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matched, total):
        log_p += math.log((m if m > 0 else BLEU_EPS) / max(t, 1))
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_n)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(hypothesis: Tokens, references: Sequence[Tokens], beta2: float = ROUGE_BETA2) -> float:
    """Best LCS F-measure of ``hypothesis`` over ``references``, in [0, 1]."""
    best = 0.0
    for ref in references:
        lcs = lcs_length(hypothesis, ref)
        if lcs == 0:
            continue
        p, r = lcs / len(hypothesis), lcs / len(ref)
        best = max(best, (1 + beta2) * p * r / (r + beta2 * p))
    return best


def rouge_l(hypotheses: Sequence[Tokens], reference_sets: Sequence[Sequence[Tokens]]) -> float:
    _check(hypotheses, reference_sets)
    return 100.0 * sum(rouge_l_sentence(h, refs) for h, refs in zip(hypotheses, reference_sets)) / len(hypotheses)


def _tfidf(tokens: Tokens, n: int, df: Counter, log_n: float) -> tuple[dict, float]:
    vec = {g: c * (log_n - math.log(max(1.0, df[g]))) for g, c in ngrams(tokens, n).items()}
    return vec, math.sqrt(sum(v * v for v in vec.values()))


def cider_scores(hypotheses: Sequence[Tokens], reference_sets: Sequence[Sequence[Tokens]], max_n: int = 4) -> list[float]:
    """Per-sample CIDEr on the 0..10 scale (TF-IDF cosine, no length penalty, no clipping)."""
    _check(hypotheses, reference_sets)
    if len(hypotheses) < 2:
        raise MetricError("CIDEr needs at least 2 samples to define document frequencies")
    log_n = math.log(len(reference_sets))
    dfs = []
    for n in range(1, max_n + 1):
        df: Counter = Counter()
        for refs in reference_sets:
            df.update({g for r in refs for g in ngrams(r, n)})
        dfs.append(df)
    scores = []
    for hyp, refs in zip(hypotheses, reference_sets):
        total = 0.0
        for n, df in enumerate(dfs, start=1):
            hv, hn = _tfidf(hyp, n, df, log_n)
            sim = 0.0
            for r in refs:
                rv, rn = _tfidf(r, n, df, log_n)
                if hn > 0 and rn > 0:
                    sim += sum(v * rv.get(g, 0.0) for g, v in hv.items()) / (hn * rn)
            total += sim / len(refs)
        scores.append(10.0 * total / max_n)
    return scores


def cider(hypotheses: Sequence[Tokens], reference_sets: Sequence[Sequence[Tokens]]) -> float:
    """Corpus CIDEr: mean per-sample score times 100."""
    s = cider_scores(hypotheses, reference_sets)
    return 100.0 * sum(s) / len(s)


@dataclass
class EvalReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rougeL: float
    cider: float
    n_samples: int
    per_sample: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def scores(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_COLUMNS}

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(self.to_dict(), indent=1))
        with open(out / "eval.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(METRIC_COLUMNS) + ["n_samples"])
            w.writeheader()
            w.writerow(dict(self.scores(), n_samples=self.n_samples))


def evaluate(hypotheses: Mapping[str, Tokens], references: Mapping[str, Sequence[Tokens]]) -> EvalReport:
    """Score hypotheses keyed by motion id against every reference of that motion."""
    missing = set(hypotheses) - set(references)
    if missing:
        raise MetricError(f"no references for {sorted(missing)[:5]}")
    keys = sorted(hypotheses)
    hyps = [list(hypotheses[k]) for k in keys]
    refs = [[list(r) for r in references[k]] for k in keys]
    b = [bleu(hyps, refs, n) for n in range(1, 5)]
    rl = [rouge_l_sentence(h, r) for h, r in zip(hyps, refs)]
    cd = cider_scores(hyps, refs) if len(keys) >= 2 else [float("nan")]
    per = [
        {"id": k, "hypothesis": " ".join(h), "rougeL": 100.0 * x, "cider": 100.0 * c}
        for k, h, x, c in zip(keys, hyps, rl, cd if len(cd) == len(keys) else [float("nan")] * len(keys))
    ]
    return EvalReport(
        *b,
        rougeL=100.0 * sum(rl) / len(rl),
        cider=100.0 * sum(cd) / len(cd),
        n_samples=len(keys),
        per_sample=per,
        meta={"bleu_smoothing": f"add-eps {BLEU_EPS} to zero n-gram matches", "rouge_beta2": ROUGE_BETA2},
    )
