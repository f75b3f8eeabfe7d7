"""Command line entry point: ``gpt4vad {divide,run,eval,visualize,trials,synth}``.

Options may also come from a TOML or JSON file passed with ``--config``;
flags given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import SynthConfig, generate_synthetic
from .pipeline import RunConfig, cmd_divide, cmd_run, cmd_trials, cmd_visualize, evaluate_run
from .regionize import DivisionConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DIVISION_KEYS = {
    "method", "grid_rows", "grid_cols", "slic_segments", "slic_compactness",
    "slic_iterations", "min_area", "max_area", "glyph_scale",
}


# flag spellings accepted in config files
ALIASES = {
    "segments": "slic_segments",
    "compactness": "slic_compactness",
    "model": "model_id",
    "rpm": "requests_per_minute",
}


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8"))
    with open(path, "rb") as f:
        return tomllib.load(f)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpt4vad", description="Zero-shot anomaly detection via region prompting.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser, dataset: bool = True) -> None:
        sp.add_argument("--config", help="TOML or JSON file with the same keys as the flags")
        if dataset:
            sp.add_argument("--dataset", help="dataset root or manifest CSV")
            sp.add_argument("--kind", choices=["mvtec", "manifest", "synthetic"])
            sp.add_argument("--categories", help="comma separated category filter")
            sp.add_argument("--method", choices=["grid", "superpixel", "imported"])
            sp.add_argument("--masks", help="region mask directory for --method imported, or 'gt'")
            sp.add_argument("--grid", help="grid size as ROWSxCOLS, e.g. 8x8")
            sp.add_argument("--segments", type=int, dest="slic_segments")
            sp.add_argument("--compactness", type=float, dest="slic_compactness")
            sp.add_argument("--workers", type=int)
        sp.add_argument("--out", help="output directory")

    def backend_opts(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--backend", choices=["live", "replay", "oracle", "constant"])
        sp.add_argument("--model", dest="model_id")
        sp.add_argument("--cache", help="response cache (NDJSON) for the replay backend")
        sp.add_argument("--constant-score", type=float, dest="constant_score")
        sp.add_argument("--base-url", dest="base_url")
        sp.add_argument("--rpm", type=float, dest="requests_per_minute")

    common(sub.add_parser("divide", help="write region overlays and region maps"))
    run = sub.add_parser("run", help="full pipeline over a dataset")
    common(run)
    backend_opts(run)
    run.add_argument("--no-eval", action="store_true", help="skip writing the report")

    ev = sub.add_parser("eval", help="compute the metric report of a run directory")
    ev.add_argument("run_dir")
    vis = sub.add_parser("visualize", help="side-by-side panels for a run directory")
    vis.add_argument("run_dir")

    tr = sub.add_parser("trials", help="repeat a run and measure answer stability")
    common(tr)
    backend_opts(tr)
    tr.add_argument("--trials", type=int)

    sy = sub.add_parser("synth", help="generate a synthetic defect dataset")
    common(sy, dataset=False)
    sy.add_argument("--seed", type=int, default=7)
    sy.add_argument("--count", type=int, default=20)
    sy.add_argument("--size", type=int, default=256)
    sy.add_argument("--background", choices=["flat", "noise"], default="noise")
    return p


def run_config(args: argparse.Namespace) -> RunConfig:
    opts = load_config(args.config) if getattr(args, "config", None) else {}
    opts = {k.replace("-", "_"): v for k, v in opts.items()}
    opts = {ALIASES.get(k, k): v for k, v in opts.items()}
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command", "verbose", "no_eval", "grid"):
            opts[k] = v
    grid = getattr(args, "grid", None) or opts.pop("grid", None)
    if grid:
        rows, cols = str(grid).lower().split("x")
        opts["grid_rows"], opts["grid_cols"] = int(rows), int(cols)
    if isinstance(opts.get("categories"), str):
        opts["categories"] = tuple(c.strip() for c in opts["categories"].split(",") if c.strip())
    division = {k: opts.pop(k) for k in list(opts) if k in DIVISION_KEYS}
    if isinstance(opts.get("division"), dict):
        division = {**opts.pop("division"), **division}
    opts["division"] = DivisionConfig(**division)
    for key in ("dataset", "out"):
        if key not in opts:
            raise SystemExit(f"--{key} is required")
    return RunConfig(**opts)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    if args.command == "synth":
        if not args.out:
            raise SystemExit("--out is required")
        cfg = SynthConfig(seed=args.seed, image_count=args.count, image_size=args.size, background=args.background)
        print(generate_synthetic(cfg, args.out))
    elif args.command == "divide":
        paths = cmd_divide(run_config(args))
        print(f"wrote {len(paths)} overlays")
    elif args.command == "run":
        cfg = run_config(args)
        records = cmd_run(cfg)
        ok = sum(r["status"] == "ok" for r in records)
        print(f"{ok}/{len(records)} samples processed into {cfg.out}")
        if not args.no_eval:
            print(evaluate_run(cfg.out).to_text())
    elif args.command == "eval":
        print(evaluate_run(args.run_dir).to_text())
    elif args.command == "visualize":
        print(f"wrote {len(cmd_visualize(args.run_dir))} panels")
    elif args.command == "trials":
        print(cmd_trials(run_config(args)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
