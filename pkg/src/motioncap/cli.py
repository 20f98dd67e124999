"""Command line entry point: synth | train | sweep | eval | decode | analyze | gradcheck.

Exit codes: 0 success, 1 runtime failure (one JSON line on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import interp
from .dataset import load_corpus, save_corpus
from .inference import MODES, decode_dataset, toy_gradcheck
from .metrics import evaluate
from .synthetic import annotate, generate
from .text import tokenize
from .trainer import ConfigError, TrainConfig, load_model, parse_grid, references_by_id, sweep, train

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("motioncap")


# ------------------------------------------------------------------ helpers


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    paths = sorted(p for p in path.rglob("*") if p.is_file()) if path.is_dir() else [path]
    for p in paths:
        if path.is_dir():
            h.update(str(p.relative_to(path)).encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out_dir, command: str, argv: list[str], config: dict, seed, inputs: dict[str, str]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "seed": seed,
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "motioncap": _version()},
        "inputs": {name: {"path": str(p), "sha256": _sha256(Path(p))} for name, p in inputs.items() if Path(p).exists()},
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | None, overrides: list[str], seed: int | None) -> TrainConfig:
    """TOML (or JSON) file, then ``key=value`` overrides, then ``--seed``."""
    d: dict = {}
    if path:
        text = Path(path).read_text()
        if path.endswith(".json"):
            d = json.loads(text)
        else:
            try:
                d = tomllib.loads(text)
            except tomllib.TOMLDecodeError:
                d = json.loads(text)
        d = d.get("train", d)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        d[key.strip()] = _parse_value(value.strip())
    if seed is not None:
        d["seed"] = seed
    return TrainConfig.from_dict(d)


def _captions_jsonl(path: Path, captions: dict[str, list[str]], refs: dict[str, list[list[str]]]) -> None:
    with open(path, "w") as fh:
        for k in sorted(captions):
            rec = {"id": k, "caption": " ".join(captions[k]), "references": [" ".join(r) for r in refs.get(k, [])]}
            fh.write(json.dumps(rec) + "\n")


def _read_captions(path: Path) -> dict[str, list[str]]:
    out = {}
    for line in path.read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            out[rec["id"]] = tokenize(rec["caption"])
    return out


# -------------------------------------------------------------- subcommands


def cmd_synth(args) -> None:
    corpus = generate(args.n, args.seed, (args.t_min, args.t_max), args.noise)
    anns = {s.id: annotate(s) for s in corpus.all()}
    save_corpus(args.out, corpus.splits, anns)
    cfg = {"n": args.n, "seed": args.seed, "t_range": [args.t_min, args.t_max], "noise": args.noise}
    write_manifest(args.out, "synth", args.argv, cfg, args.seed, {})
    print(json.dumps({"out": str(args.out), **{k: len(v) for k, v in corpus.splits.items()}}))


def cmd_train(args) -> None:
    cfg = load_config(args.config, args.set, args.seed)
    data = load_corpus(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    res = train(cfg, data["train"], data["val"], out)
    write_manifest(out, "train", args.argv, cfg.to_dict(), cfg.seed, {"data": Path(args.data) / "samples.jsonl"})
    print(json.dumps({"checkpoint": str(res.checkpoint), "best_epoch": res.best_epoch, "best_val_bleu4": res.best_bleu4}))


def cmd_sweep(args) -> None:
    cfg = load_config(args.config, args.set, args.seed)
    grid = parse_grid(args.grid)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    data = load_corpus(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    rows = sweep(grid, cfg, data["train"], data["val"], data[args.split], seeds, out)
    write_manifest(out, "sweep", args.argv, dict(cfg.to_dict(), grid=grid, seeds=seeds), cfg.seed,
                   {"data": Path(args.data) / "samples.jsonl"})
    failed = sum(r["status"] != "ok" for r in rows)
    print(json.dumps({"cells": len(rows), "failed": failed, "table": str(out / "sweep.csv")}))


def cmd_decode(args) -> None:
    model, vocab, meta = load_model(args.checkpoint)
    data = load_corpus(args.data)
    examples = data[args.split]
    captions, records = decode_dataset(model, vocab, examples, args.mode, args.beam_width, args.max_len)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _captions_jsonl(out / "captions.jsonl", captions, references_by_id(examples))
    interp.save_dump(out / "dumps", records)
    cfg = {"mode": args.mode, "beam_width": args.beam_width, "max_len": args.max_len, "split": args.split}
    write_manifest(out, "decode", args.argv, cfg, meta.get("train_config", {}).get("seed"),
                   {"checkpoint": Path(args.checkpoint), "data": Path(args.data) / "samples.jsonl"})
    print(json.dumps({"captions": str(out / "captions.jsonl"), "dumps": len(records)}))


def cmd_eval(args) -> None:
    data = load_corpus(args.data)
    examples = data[args.split]
    refs = references_by_id(examples)
    inputs = {"data": Path(args.data) / "samples.jsonl"}
    if args.captions:
        hyps = _read_captions(Path(args.captions))
        inputs["captions"] = Path(args.captions)
    elif args.checkpoint:
        model, vocab, _ = load_model(args.checkpoint)
        hyps, _ = decode_dataset(model, vocab, examples, "greedy", max_len=args.max_len)
        inputs["checkpoint"] = Path(args.checkpoint)
    else:
        raise ConfigError("eval needs --captions or --checkpoint")
    report = evaluate(hyps, refs)
    report.write(args.out)
    write_manifest(args.out, "eval", args.argv, {"split": args.split}, None, inputs)
    print(json.dumps(report.scores()))


def cmd_analyze(args) -> None:
    words = [w.strip() for w in args.words.split(",") if w.strip()]
    summary = interp.analyze(args.dump, args.out, words, args.tau, args.kappa)
    write_manifest(args.out, "analyze", args.argv, {"words": words, "tau": args.tau, "kappa": args.kappa}, None,
                   {"dump": Path(args.dump)})
    print(json.dumps({"records": summary["n_records"], "out": str(args.out)}))


def cmd_gradcheck(args) -> int:
    report = toy_gradcheck(args.tol, args.seed)
    for line in report.lines():
        print(line)
    name, err = report.worst
    print(json.dumps({"passed": report.passed, "worst": name, "max_rel_err": err, "tol": args.tol}))
    if args.out:
        write_manifest(args.out, "gradcheck", args.argv, {"tol": args.tol}, args.seed, {})
    return 0 if report.passed else 1


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motioncap", description="Interpretable motion captioning toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus with gold annotations")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--t-min", type=int, default=40)
    s.add_argument("--t-max", type=int, default=80)
    s.add_argument("--noise", type=float, default=0.01)
    s.set_defaults(func=cmd_synth)

    def train_args(s):
        s.add_argument("--config", help="TOML or JSON file with training options")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        s.add_argument("--seed", type=int)
        s.add_argument("--data", required=True)
        s.add_argument("--out", required=True)

    s = sub.add_parser("train", help="train one model")
    train_args(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="train and evaluate over a grid of loss weights")
    train_args(s)
    s.add_argument("--grid", required=True, help='e.g. "0,0;0,3;2,3"')
    s.add_argument("--seeds", help="comma separated seeds, default: the config seed")
    s.add_argument("--split", default="test")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("decode", help="caption a split and dump attention")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=MODES, default="greedy")
    s.add_argument("--beam-width", type=int, default=3)
    s.add_argument("--max-len", type=int, default=30)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("eval", help="score captions against references")
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--captions", help="captions.jsonl from decode")
    s.add_argument("--checkpoint", help="decode greedily from this checkpoint instead")
    s.add_argument("--max-len", type=int, default=30)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze", help="interpretability analyses over attention dumps")
    s.add_argument("--dump", required=True)
    s.add_argument("--words", required=True, help='e.g. "kick,wave,turn"')
    s.add_argument("--out", required=True)
    s.add_argument("--tau", type=float, default=interp.TAU_BETA)
    s.add_argument("--kappa", type=float, default=interp.KAPPA)
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("gradcheck", help="finite-difference check of the full loss on a toy model")
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        code = args.func(args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
