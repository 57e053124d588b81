from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from .. import textproto as tp
from ..synthworld import DATA_MIX_KEYS, generate_split

DEFAULT_MIX = "od=0.3,rec=0.4,rd=0.2,vqa=0.1"


def _pairs(text: str, cast) -> dict:
    out = {}
    for part in text.split(","):
        key, sep, val = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected key=value, got {part!r}")
        out[key.strip()] = cast(val)
    return out


def parse_mix(text: str) -> dict[str, float]:
    mix = _pairs(text, float)
    bad = set(mix) - set(DATA_MIX_KEYS)
    if bad:
        raise argparse.ArgumentTypeError(f"unknown mix keys {sorted(bad)}")
    return {k: mix.get(k, 0.0) for k in DATA_MIX_KEYS}


def parse_counts(text: str) -> dict[str, int]:
    return _pairs(text, int)


def gen_data(out_dir, seed: int, counts: dict[str, int], mix: dict[str, float], val_per_scene: int = 1,
             val_scenes: bool = True) -> dict:
    """Train splits are sized in samples, ``val``/``test`` splits in scenes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = {}
    per_type = {t: 0 for t in tp.DATA_TYPES}
    for split, n in counts.items():
        if split != "train" and val_scenes:
            info = generate_split(out, split, seed, mix, n_scenes=n, per_scene=val_per_scene)
        else:
            info = generate_split(out, split, seed, mix, n_samples=n)
        splits[split] = {"samples": info["samples"], "scenes": info["scenes"], "counts": info["counts"]}
        for t, c in info["counts"].items():
            per_type[t] += c
    manifest = {"seed": seed, "mix": mix, "splits": splits, "counts": per_type,
                "files": _file_hashes(out)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _file_hashes(root: Path) -> dict[str, str]:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dettoken", description="Detection-token MLLM toolkit")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--counts", type=parse_counts, default=parse_counts("train=2000,val=200"),
                   help="split=N pairs; train counts samples, other splits count scenes")
    g.add_argument("--mix", type=parse_mix, default=parse_mix(DEFAULT_MIX))
    g.add_argument("--val-per-scene", type=int, default=1)

    t = sub.add_parser("train", help="train from a RunConfig JSON")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=None, help="override total_steps")

    e = sub.add_parser("eval", help="accuracy@IoU-0.5 on a dataset split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True, help="output JSON path; a .txt table is written alongside")

    i = sub.add_parser("infer", help="run one prompt on one image")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--prompt", required=True)
    i.add_argument("--out", required=True)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--module", choices=("all", "diffcore", "geometry", "detector", "loss"), default="all")
    c.add_argument("--seeds", type=int, default=1)
    return ap


def _run(args) -> int:
    if args.cmd == "gen-data":
        m = gen_data(args.out, args.seed, args.counts, args.mix, args.val_per_scene)
        print(json.dumps({"seed": m["seed"], "counts": m["counts"], "splits": m["splits"]}, sort_keys=True))
        return 0
    if args.cmd == "train":
        from .config import RunConfig
        from .train import train

        cfg = RunConfig.load(args.config)
        res = train(cfg, args.out, steps=args.steps)
        print(json.dumps({"steps": len(res.history), "final_L": res.history[-1].L if res.history else None}))
        return 0
    if args.cmd == "eval":
        from .evaluate import evaluate_accuracy

        report = evaluate_accuracy(args.ckpt, args.data)
        path = Path(args.report)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(report.to_json() + "\n")
        path.with_suffix(".txt").write_text(report.table() + "\n")
        print(report.table())
        return 0
    if args.cmd == "infer":
        from .infer import infer_to_files

        print(json.dumps(infer_to_files(args.ckpt, args.image, args.prompt, args.out), sort_keys=True))
        return 0
    if args.cmd == "gradcheck":
        from .gradsuite import run

        results = run(args.module, seeds=tuple(range(args.seeds)))
        for r in results:
            print(r.line())
        failed = [r for r in results if not r.ok]
        print(f"{len(results) - len(failed)}/{len(results)} checks passed")
        return 1 if failed else 0
    raise AssertionError(args.cmd)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)    # exits 2 on bad usage
    try:
        return _run(args)
    except Exception as e:      # runtime failures map to exit code 1
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
