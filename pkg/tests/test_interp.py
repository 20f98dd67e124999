import json

import numpy as np
import pytest

from motioncap.interp import (
    InputError,
    InterpRecord,
    TokenAttention,
    analyze,
    attended_part,
    beta_density,
    fine_grained_report,
    load_dump,
    localization_table,
    localize,
    localize_span,
    part_histogram,
    save_dump,
)
from motioncap.skeleton import PARTS


def gauss(m, sigma, n):
    k = np.arange(n)
    return np.exp(-((k - m) ** 2) / (2 * sigma**2))


def token(word, beta=0.5, m=10.0, sigma=3.0, n=30, part=None):
    alpha = np.full((n, 6), 1 / 6)
    if part is not None:
        alpha[:] = 0.02
        alpha[:, PARTS.index(part)] = 0.9
    return TokenAttention(word, beta, m, sigma, gauss(m, sigma, n), alpha, np.full(n, 1 / n))


def record(tokens, n=30, sid="s0"):
    return InterpRecord(sid, n, tokens, "forced")


def test_localize_examples():
    assert localize_span(21, 3, 60) == (17, 26)
    assert localize_span(1.0, 3, 60) == (0, 6)
    assert localize_span(58.0, 3, 60) == (54, 59)
    rec = record([token("a"), token("kicks", m=21, sigma=3, n=60)], n=60)
    assert localize(rec, "kicks") == (17, 26) == localize(rec, 1)
    with pytest.raises(KeyError):
        localize(rec, "waves")


def test_localize_ignores_window_scale():
    t = token("kicks", m=12.3, sigma=2.2)
    scaled = TokenAttention(t.word, t.beta, t.m, t.sigma, 7.0 * t.Gamma, t.alpha)
    assert localize(record([t]), 0) == localize(record([scaled]), 0)


def test_density_spike():
    recs = [record([token("waves", beta=0.9)]) for _ in range(6)]
    d = beta_density(recs, ["waves"])["wave"]
    assert d.mean == pytest.approx(0.9) and d.degenerate and d.n == 6 and not d.low_count
    assert d.grid[np.argmax(d.density)] == pytest.approx(0.9)


def test_density_bimodal():
    vals = [0.1] * 20 + [0.9] * 20
    vals = [v + 0.01 * np.sin(i) for i, v in enumerate(vals)]
    recs = [record([token("the", beta=v)]) for v in vals]
    d = beta_density(recs, ["the"])["the"]
    y = d.density
    peaks = [d.grid[i] for i in range(1, len(y) - 1) if y[i] > y[i - 1] and y[i] >= y[i + 1]]
    assert len(peaks) == 2
    assert abs(peaks[0] - 0.1) < 0.03 and abs(peaks[1] - 0.9) < 0.03


def test_density_low_count_and_empty():
    d = beta_density([record([token("kick", beta=0.7)])], ["kicks", "jump"])
    assert d["kick"].low_count and d["jump"].n == 0
    with pytest.raises(InputError):
        beta_density([], ["kick"])


def test_part_histogram_tie_break_and_counts():
    recs = [record([token("kicks"), token("kick", part="RightLeg"), token("the")]) for _ in range(3)]
    h = part_histogram(recs, "kicking")
    assert sum(h.counts.values()) == h.total == 6
    assert h.counts["LeftArm"] == 3 and h.counts["RightLeg"] == 3
    assert h.modal_part == "LeftArm"  # tie goes to the lowest index
    assert attended_part(token("x")) == 0


def test_attended_part_uses_peak_frame():
    t = token("waves", m=5, sigma=1)
    t.alpha[:] = 0.02
    t.alpha[:, 0] = 0.9
    t.alpha[5] = 0.02
    t.alpha[5, 3] = 0.9
    assert PARTS[attended_part(t)] == "LeftLeg"


def test_fine_grained_report_orders_by_m():
    rec = record(
        [token("a", 0.1), token("person", 0.2), token("waves", 0.9, m=22, part="LeftArm"), token("then", 0.3),
         token("kicks", 0.8, m=8, part="RightLeg"), token("<eos>", 0.9)]
    )
    rep = fine_grained_report(rec)
    assert [e["word"] for e in rep["motion_words"]] == ["kicks", "waves"]
    assert [e["part"] for e in rep["motion_words"]] == ["RightLeg", "LeftArm"]
    for e in rep["motion_words"]:
        assert 0 <= e["span"][0] <= e["span"][1] <= 29
    empty = fine_grained_report(record([token("a", 0.1), token("the", 0.2)]))
    assert empty["motion_words"] == []


def test_dump_roundtrip_and_validation(tmp_path):
    recs = [record([token("kicks", part="LeftLeg"), token("<eos>")], sid=f"s{i}") for i in range(3)]
    save_dump(tmp_path, recs)
    back = load_dump(tmp_path)
    assert [r.sample_id for r in back] == ["s0", "s1", "s2"]
    assert np.array_equal(back[0].tokens[0].alpha, recs[0].tokens[0].alpha)
    d = json.loads((tmp_path / "s0.json").read_text())
    d["steps"][0]["Gamma"] = d["steps"][0]["Gamma"][:-1]
    (tmp_path / "s0.json").write_text(json.dumps(d))
    with pytest.raises(InputError):
        load_dump(tmp_path)


def test_analyze_is_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    recs = [
        record([token("a", rng.uniform(0, 0.3)), token("kicks", rng.uniform(0.6, 1), m=rng.uniform(5, 25), part="LeftLeg")], sid=f"s{i}")
        for i in range(8)
    ]
    save_dump(tmp_path / "dump", recs)
    outs = []
    for run in ("a", "b"):
        summary = analyze(tmp_path / "dump", tmp_path / run, ["kick", "a"])
        outs.append({p.name: p.read_bytes() for p in (tmp_path / run).iterdir()})
    assert outs[0] == outs[1]
    assert summary["parts"]["kick"]["modal_part"] == "LeftLeg"
    assert set(outs[0]) == {"beta_density.csv", "part_histogram.csv", "localization.csv", "fine_grained.json", "summary.json"}
    rows = localization_table(recs, ["kick"])
    assert len(rows) == 8 and all(r["part"] == "LeftLeg" for r in rows)
    with pytest.raises(InputError):
        analyze(tmp_path / "nothing", tmp_path / "c", ["kick"])


def test_gold_agreement():
    from motioncap.interp import gold_agreement

    ann = {
        "tokens": ["a", "person", "kicks"],
        "motion_flags": [0, 0, 1],
        "motion_words": [{"index": 2, "word": "kicks", "dictionary_parts": ["LeftLeg", "RightLeg"], "center": 12.0}],
    }
    good = record([token("a", 0.1), token("person", 0.3), token("kicks", 0.9, m=14, part="RightLeg"), token("<eos>")], sid="g")
    bad = record([token("a", 0.1), token("person", 0.3), token("kicks", 0.9, m=25, part="LeftArm"), token("<eos>")], sid="b")
    g = gold_agreement([good, bad], {"g": ann, "b": ann})
    assert g.gate_gap == pytest.approx(0.9 - 0.2)
    assert (g.part_hits, g.part_total, g.loc_hits, g.loc_total) == (1, 2, 1, 2)
    wrong = record([token("the"), token("person"), token("kicks")], sid="g")
    with pytest.raises(InputError):
        gold_agreement([wrong], {"g": ann})
