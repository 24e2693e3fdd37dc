"""Command-line surface: verify, fit, simulate-grid.

Every command derives its output directory from --out (overridable through
the DSDPMM_OUT_DIR environment variable), runs fully seeded, and writes a
manifest listing the artifacts next to them before exiting 0.  Exit codes:
0 success, 1 a verification check failed, 2 usage/config/data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULT_CONFIG, RunConfig, config_from_dict, config_sha256, load_run_config
from .errors import ConfigError, DataFormatError, ResourceLimitError, ValidationError
from .experiments import (
    collect_topic_samples,
    load_galaxy_csv,
    posterior_k_histogram,
    run_consistency_grid,
    topic_density_report,
    write_assignments_csv,
    write_density_csv,
)
from .samplers import SamplerConfig, run_chain
from .svg import grouped_bar_svg
from .verification import checks_to_dict, run_verification_battery

_ENV_OUT = "DSDPMM_OUT_DIR"


def _out_dir(args) -> Path:
    out = os.environ.get(_ENV_OUT) or args.out
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, command: str, cfg: RunConfig, seed: int, artifacts):
    manifest = {
        "command": command,
        "config_sha256": config_sha256(cfg),
        "seed": int(seed),
        "artifacts": sorted(str(a) for a in artifacts),
        "package": {"name": "dsdpmm", "version": __version__},
    }
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_run_config(args.config)
    else:
        cfg = config_from_dict(dict(DEFAULT_CONFIG))
    if getattr(args, "seed", None) is not None:
        raw = dict(cfg.raw)
        raw["seed"] = int(args.seed)
        cfg = config_from_dict(raw)
    return cfg


def _read_numeric_csv(path) -> np.ndarray:
    """Generic fit input: numeric columns, optional header, comma or blanks."""
    rows = []
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    start = 0
    first = lines[0].replace(",", " ").split()
    try:
        [float(t) for t in first]
    except ValueError:
        start = 1
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        toks = line.replace(",", " ").split()
        try:
            rows.append([float(t) for t in toks])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataFormatError(f"{path}: inconsistent column counts")
    return np.asarray(rows)


def _write_histogram_csv(hist: dict, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["num_blocks", "frequency"])
        for k in sorted(hist):
            writer.writerow([k, repr(hist[k])])


def cmd_verify(args) -> int:
    out = _out_dir(args)
    try:
        cfg = _load_config(args)
        checks = run_verification_battery(cfg.hyper, max_n=args.max_n, seed=cfg.seed)
    except (ConfigError, ResourceLimitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = checks_to_dict(checks)
    report["max_n"] = args.max_n
    path = out / "verify_report.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "verify", cfg, cfg.seed, [path.name])
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"[{status}] {c.name}: value={c.value!r} bound={c.bound!r}")
    return 0 if report["all_passed"] else 1


def cmd_fit(args) -> int:
    out = _out_dir(args)
    try:
        cfg = _load_config(args)
        if cfg.io_format == "galaxy":
            records, _, data = load_galaxy_csv(args.data)
            if cfg.spec.dimension != 3:
                raise ConfigError("galaxy mode requires expfam.dimension == 3")
        else:
            records = None
            data = _read_numeric_csv(args.data)
            if data.shape[1] != cfg.spec.dimension:
                raise ConfigError(
                    f"data has {data.shape[1]} columns but expfam.dimension is "
                    f"{cfg.spec.dimension}"
                )
    except (ConfigError, DataFormatError, OSError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sampler = cfg.sampler
    if cfg.io_format == "galaxy" and not sampler.collect_topics:
        sampler = SamplerConfig(
            model=sampler.model, aux_m=sampler.aux_m, iters=sampler.iters,
            burn_in=sampler.burn_in, split_merge_every=sampler.split_merge_every,
            restricted_scans=sampler.restricted_scans, collect_topics=True,
            domain_expand=sampler.domain_expand,
        )
    trace = run_chain(data, sampler, cfg.hyper, cfg.spec, cfg.kernel, seed=cfg.seed)
    artifacts = []
    trace_path = out / "trace.jsonl"
    trace.to_jsonl(trace_path)
    artifacts.append(trace_path.name)
    summary_path = out / "summary.csv"
    trace.summary_csv(summary_path)
    artifacts.append(summary_path.name)
    window = min(cfg.score_last, len(trace))
    hist = posterior_k_histogram(trace, window)
    hist_path = out / "histogram.csv"
    _write_histogram_csv(hist, hist_path)
    artifacts.append(hist_path.name)
    if cfg.io_format == "galaxy":
        samples = collect_topic_samples(trace, start=sampler.burn_in)
        density = topic_density_report(samples, dimension=2, bin_width=0.1)
        density_path = out / "galaxy_density.csv"
        write_density_csv(density, density_path)
        artifacts.append(density_path.name)
        assign_path = out / "galaxy_assignments.csv"
        write_assignments_csv(records, trace.final_assignments, assign_path)
        artifacts.append(assign_path.name)
    _write_manifest(out, "fit", cfg, cfg.seed, artifacts)
    print(f"fit complete: {len(trace)} iterations, modal num_blocks = "
          f"{max(hist, key=hist.get)}")
    return 0


def cmd_simulate_grid(args) -> int:
    out = _out_dir(args)
    try:
        cfg = _load_config(args)
        if cfg.grid is None:
            raise ConfigError("simulate-grid requires a 'grid' section in the config")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = run_consistency_grid(
        cfg.grid, cfg.sampler, cfg.hyper, cfg.spec, cfg.kernel,
        seed=cfg.seed, score_last=cfg.score_last, workers=args.workers,
    )
    artifacts = []
    grid_path = out / "grid_report.csv"
    report.write_csv(grid_path)
    artifacts.append(grid_path.name)
    if args.svg:
        for n in cfg.grid.data_sizes:
            for model in cfg.grid.models:
                ks = sorted({
                    k
                    for (nn, _, mm, _), hist in report.histograms.items()
                    if nn == n and mm == model
                    for k in hist
                })
                series = []
                for frac in cfg.grid.alpha_fractions:
                    vals = [0.0] * len(ks)
                    for (nn, ff, mm, rep), hist in report.histograms.items():
                        if nn == n and mm == model and ff == frac:
                            for idx, k in enumerate(ks):
                                vals[idx] += hist.get(k, 0.0)
                    reps = max(1, cfg.grid.replicates)
                    series.append((f"alpha*=n/{frac:g}", [v / reps for v in vals]))
                svg_doc = grouped_bar_svg(
                    f"{model} posterior of the block count, n={n}", ks, series
                )
                svg_path = out / f"grid_{model}_n{n}.svg"
                svg_path.write_text(svg_doc)
                artifacts.append(svg_path.name)
    _write_manifest(out, "simulate-grid", cfg, cfg.seed, artifacts)
    print(f"grid complete: {len(report.rows)} rows")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsdpmm",
        description="Marked doubly stochastic DP mixture: verification, fitting and experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="run the enumeration-oracle check battery")
    p_verify.add_argument("--config", help="JSON config path (defaults are embedded)")
    p_verify.add_argument("--max-n", type=int, default=6, dest="max_n",
                          help="largest partition size to enumerate (<= 12)")
    p_verify.add_argument("--out", default=".", help="output directory")
    p_verify.add_argument("--seed", type=int, default=None)
    p_verify.set_defaults(func=cmd_verify)

    p_fit = sub.add_parser("fit", help="fit a model to a data CSV")
    p_fit.add_argument("--data", required=True, help="observation CSV (one row per observation)")
    p_fit.add_argument("--config", help="JSON config path")
    p_fit.add_argument("--out", default=".", help="output directory")
    p_fit.add_argument("--seed", type=int, default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_grid = sub.add_parser("simulate-grid", help="run the consistency experiment grid")
    p_grid.add_argument("--config", help="JSON config path with a 'grid' section")
    p_grid.add_argument("--out", default=".", help="output directory")
    p_grid.add_argument("--seed", type=int, default=None)
    p_grid.add_argument("--svg", action="store_true", help="emit one SVG per (n, model) panel")
    p_grid.add_argument("--workers", type=int, default=1, help="parallel grid cells")
    p_grid.set_defaults(func=cmd_simulate_grid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, ResourceLimitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
