"""Command-line front end: single attacks, campaigns, CDF aggregation, plots."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import ContractError, EvaluationError
from .harness import (
    ATTACKS,
    AttackRecord,
    ExperimentConfig,
    cdfs_from_records,
    emit_outputs,
    load_image_set,
    parse_cdf_csv,
    render_cdf_svg,
    run_experiment,
    run_single_attack,
)
from .targets import ModelFormatError, load_model


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfoattack",
        description="Query-budgeted black-box attacks on classifier oracles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    atk = sub.add_parser("attack", help="attack a single image")
    _attack_flags(atk)
    atk.add_argument("--image-set", required=True, help="npz archive with an images array")
    atk.add_argument("--image-index", type=int, default=0)
    atk.add_argument("--target", type=int, required=True, help="target class index")
    atk.add_argument("--out", help="directory for the record and final perturbation")

    bench = sub.add_parser("bench", help="run an attack campaign")
    bench.add_argument("--config", help="JSON config file; flags override its fields")
    _attack_flags(bench)
    bench.add_argument("--image-set", help="npz archive with an images array")
    bench.add_argument("--parallelism", type=int, default=None)
    bench.add_argument(
        "--target-protocol", choices=("all-other-classes", "random-class"), default=None
    )
    bench.add_argument("--grid-points", type=int, default=50, help="CDF grid resolution")
    bench.add_argument("--out", help="output directory (falls back to the config's output_dir)")

    cdf = sub.add_parser("cdf", help="aggregate records into CDF curves")
    cdf.add_argument("--records", required=True, help="JSON-lines records file")
    cdf.add_argument("--grid", help="comma-separated query grid, e.g. 10,100,1000")
    cdf.add_argument("--grid-points", type=int, default=50)
    cdf.add_argument("--out", required=True, help="CSV output path")

    plot = sub.add_parser("plot", help="render CDF curves to SVG")
    plot.add_argument("--cdf", required=True, help="CSV produced by the cdf subcommand")
    plot.add_argument("--out", required=True, help="output directory")
    return parser


def _attack_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--attack", choices=sorted(ATTACKS), default=None)
    parser.add_argument("--model", help="model file", default=None)
    parser.add_argument("--eps", help="epsilon, or comma-separated list for bench", default=None)
    parser.add_argument("--max-queries", type=int, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--kappa", type=int, default=None)
    parser.add_argument("--strategy", choices=("random", "ordered", "variance"), default=None)
    parser.add_argument("--mask-top-k", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)


def _attack_params(args) -> dict:
    params = {}
    if args.attack in (None, "bobyqa"):
        if args.batch_size is not None:
            params["batch_size"] = args.batch_size
        if args.kappa is not None:
            params["kappa"] = args.kappa
        if args.strategy is not None:
            params["strategy"] = args.strategy
    return params


def _parse_eps_list(text):
    return tuple(float(p) for p in text.split(",")) if text else None


def cmd_attack(args) -> int:
    model = load_model(args.model)
    images = load_image_set(args.image_set)
    if not 0 <= args.image_index < len(images):
        raise ContractError(f"image index {args.image_index} outside the set")
    record = run_single_attack(
        model,
        images[args.image_index],
        args.attack or "bobyqa",
        args.target,
        float(args.eps) if args.eps else 0.1,
        args.max_queries if args.max_queries is not None else 3000,
        args.seed if args.seed is not None else 0,
        mask_top_k=args.mask_top_k,
        attack_params=_attack_params(args),
        image_id=args.image_index,
    )
    print(json.dumps(asdict(record)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "record.json").write_text(record.to_json() + "\n")
    return 0


def cmd_bench(args) -> int:
    overrides = dict(
        attack=args.attack,
        model_path=args.model,
        image_set=args.image_set,
        epsilons=_parse_eps_list(args.eps),
        max_queries=args.max_queries,
        target_protocol=args.target_protocol,
        seed=args.seed,
        parallelism=args.parallelism,
        mask_top_k=args.mask_top_k,
    )
    params = _attack_params(args)
    if params:
        overrides["attack_params"] = params
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.config:
        config = ExperimentConfig.from_file(args.config, **overrides)
    else:
        present = {k: v for k, v in overrides.items() if v is not None}
        config = ExperimentConfig(**present)
    if config.output_dir is None:
        raise ContractError("no output directory: pass --out or set output_dir in the config")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = run_experiment(config, records_path=out / "records.jsonl")
    grid = _default_grid(config.max_queries, args.grid_points)
    cdfs = cdfs_from_records(records, grid)
    emit_outputs(records, cdfs, out)
    succeeded = sum(r.success for r in records)
    print(f"campaign complete: {succeeded}/{len(records)} attacks succeeded; outputs in {out}")
    return 0


def _default_grid(max_queries: int, points: int):
    top = max(max_queries, 1)
    return np.unique(np.linspace(1, top, min(points, top)).astype(int)).tolist()


def _load_records(path) -> list[AttackRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(AttackRecord.from_json(line))
    return records


def cmd_cdf(args) -> int:
    records = _load_records(args.records)
    if args.grid:
        grid = [int(v) for v in args.grid.split(",")]
    else:
        top = max((r.queries for r in records), default=1)
        grid = _default_grid(top, args.grid_points)
    cdfs = cdfs_from_records(records, grid)
    with open(args.out, "w") as fh:
        fh.write("queries,fraction,attack,epsilon\n")
        for cdf in cdfs:
            for q, f in zip(cdf.query_grid, cdf.fraction):
                fh.write(f"{q},{f!r},{cdf.attack},{cdf.epsilon!r}\n")
    print(f"wrote {len(cdfs)} curves to {args.out}")
    return 0


def cmd_plot(args) -> int:
    cdfs = parse_cdf_csv(args.cdf)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for epsilon in sorted({c.epsilon for c in cdfs}):
        group = [c for c in cdfs if c.epsilon == epsilon]
        path = out / f"cdf_eps_{epsilon:g}.svg"
        path.write_text(render_cdf_svg(group, f"success rate, eps={epsilon:g}"))
        print(f"wrote {path}")
    return 0


_COMMANDS = {"attack": cmd_attack, "bench": cmd_bench, "cdf": cmd_cdf, "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ContractError, EvaluationError, ModelFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
