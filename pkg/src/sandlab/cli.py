"""Command-line front end.

Subcommands: simulate, sweep, fit, collapse, pi-groups, figure1, figure2.
Every run writes a manifest (config echo + provenance) into its output
directory; summaries and histograms are byte-stable for a given config and
seed.  Exit codes: 0 success, 2 usage, 3 config error, 4 output-directory
conflict, 5 input-data error, 6 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .configfile import load_config, write_config
from .dimensional import compute_pi_groups, read_variable_table
from .errors import (ConfigError, DataError, OutputConflict, RunError,
                     SandlabError)
from .experiments import (ExperimentConfig, ExperimentResult,
                          bandwidth_sweep, figure1_experiment,
                          figure2_experiment, run_experiment)
from .plotio import render_svg, write_plot_data
from .sandpile import read_avalanche_sizes, write_avalanche_csv
from .stats import LogHistogram, fit_power_law, rescale_and_compare

OUT_ROOT_ENV = "SANDLAB_OUT_ROOT"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_OUTPUT = 4
EXIT_DATA = 5
EXIT_RUN = 6

_EPILOG = """\
exit codes:
  0  success
  2  usage error (unknown flags / bad arguments)
  3  malformed or invalid config
  4  output directory exists (pass --force to overwrite)
  5  input data cannot be analyzed
  6  simulation/experiment failure at runtime

environment:
  SANDLAB_OUT_ROOT   default parent directory when --out is omitted
"""


def _resolve_out(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ROOT_ENV)
    if not root:
        raise ConfigError(
            f"no --out given and {OUT_ROOT_ENV} is not set")
    return Path(root) / name


def _prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise OutputConflict(
            f"output directory {path} exists and is not empty "
            "(use --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _dump_json(obj, path=None) -> str:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _provenance(seconds: float, seed=None) -> dict:
    prov = {
        "sandlab_version": __version__,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "kernel_backend": kernels.ACTIVE_BACKEND,
        "wall_time_s": f"{seconds:.3f}",
    }
    if seed is not None:
        prov["seed"] = seed
    return prov


def _load_base_config(args) -> tuple[ExperimentConfig, dict]:
    if getattr(args, "config", None):
        return load_config(args.config)
    return ExperimentConfig(), {}


def _write_run_outputs(out: Path, res: ExperimentResult, stem: str = ""):
    sfx = f"_{stem}" if stem else ""
    _dump_json(res.summary.to_dict(), out / f"summary{sfx}.json")
    res.histogram.to_csv(out / f"histogram{sfx}.csv")
    x, y = res.histogram.log10_curve()
    write_plot_data(out / f"density{sfx}.dat", x, y)


def cmd_simulate(args) -> int:
    cfg, _ = _load_base_config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg = replace(cfg, keep_records=True)
    out = _prepare_out(_resolve_out(args, "simulate"), args.force)
    t0 = time.perf_counter()
    res = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    _write_run_outputs(out, res)
    write_avalanche_csv(out / "avalanches.csv", res.records)
    x, y = res.histogram.log10_curve()
    render_svg(out / "density.svg", [(f"h dt = {cfg.grains_per_event}", x, y)],
               title=f"avalanche size density (side={cfg.side})")
    write_config(out / "manifest.cfg", cfg,
                 provenance=_provenance(elapsed, cfg.seed))
    print(f"simulate: {res.summary.n_avalanches} avalanches -> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, extras = _load_base_config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.target is not None:
        cfg = replace(cfg, target_avalanches=args.target)
    h_values = args.h_values or extras.get("h_values")
    if h_values is None:
        raise ConfigError("sweep needs --h-values (e.g. 4,16,64,256)")
    if isinstance(h_values, str):
        h_values = [int(v) for v in h_values.split(",") if v.strip()]
    out = _prepare_out(_resolve_out(args, "sweep"), args.force)
    t0 = time.perf_counter()
    sweep = bandwidth_sweep(h_values, base=cfg, parallel=args.parallel)
    elapsed = time.perf_counter() - t0
    rows = []
    for row, res in zip(sweep.rows, sweep.results):
        d = asdict(row)
        d["regime"] = row.regime.value
        rows.append(d)
        if res is not None:
            _write_run_outputs(out, res, stem=f"h{row.grains_per_event}")
    _dump_json({"rows": rows,
                "bandwidth_monotone": sweep.bandwidth_monotone,
                "slack_decades": sweep.slack_decades},
               out / "sweep.json")
    curves = []
    for row, res in zip(sweep.rows, sweep.results):
        if res is not None:
            x, y = res.histogram.log10_curve()
            curves.append((f"h dt = {row.grains_per_event}", x, y))
    if curves:
        render_svg(out / "sweep.svg", curves,
                   title=f"drive sweep (side={cfg.side})")
    write_config(out / "manifest.cfg", cfg,
                 provenance=_provenance(elapsed, cfg.seed),
                 experiment={"h_values": ",".join(map(str, h_values)),
                             "parallel": args.parallel})
    verdict = sweep.bandwidth_monotone
    print(f"sweep: bandwidth monotone non-increasing: {verdict} -> {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    path = Path(args.sizes)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("timestep"):
        sizes = read_avalanche_sizes(path)
    else:
        sizes = np.loadtxt(path, dtype=np.int64, ndmin=1)
    fit = fit_power_law(sizes, s_min=args.s_min, s_max=args.s_max)
    doc = asdict(fit)
    doc["stderr"] = fit.stderr
    doc["n_samples"] = int(sizes.size)
    doc["source"] = str(path)
    text = _dump_json(doc, args.out_file)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_collapse(args) -> int:
    ref = LogHistogram.from_csv(args.ref)
    test = LogHistogram.from_csv(args.test)
    window = None
    if args.window:
        lo, hi = (float(v) for v in args.window.split(","))
        window = (lo, hi)
    rep = rescale_and_compare(ref, test, args.factor, window=window)
    doc = asdict(rep)
    doc["ref"] = str(args.ref)
    doc["test"] = str(args.test)
    text = _dump_json(doc, args.out_file)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_pi_groups(args) -> int:
    table = read_variable_table(args.table)
    for group in compute_pi_groups(table):
        print(group.as_product())
    return EXIT_OK


def _figure_common(args, result, out: Path, labels: tuple[str, str],
                   elapsed: float, experiment: dict,
                   base_cfg: ExperimentConfig):
    ref, test = result.run_ref, result.run_test
    _write_run_outputs(out, ref, stem=labels[0])
    _write_run_outputs(out, test, stem=labels[1])
    xr, yr = ref.histogram.log10_curve()
    xt, yt = test.histogram.log10_curve()
    shift = math.log10(result.scale_factor)
    write_plot_data(out / f"panel_raw_{labels[0]}.dat", xr, yr)
    write_plot_data(out / f"panel_raw_{labels[1]}.dat", xt, yt)
    write_plot_data(out / f"panel_rescaled_{labels[0]}.dat", xr, yr)
    write_plot_data(out / f"panel_rescaled_{labels[1]}.dat",
                    xt - shift, yt + shift)
    render_svg(out / "panel_raw.svg",
               [(labels[0], xr, yr), (labels[1], xt, yt)],
               title="avalanche size densities")
    render_svg(out / "panel_rescaled.svg",
               [(labels[0], xr, yr),
                (f"{labels[1]} / {result.scale_factor:g}",
                 xt - shift, yt + shift)],
               title=f"rescaled by {result.scale_factor:g}")
    write_config(out / "manifest.cfg", base_cfg,
                 provenance=_provenance(elapsed, experiment.get("seed")),
                 experiment=experiment)


def cmd_figure1(args) -> int:
    cfg, extras = _load_base_config(args)
    seed = args.seed if args.seed is not None else int(extras.get("seed", 1))
    target = (args.target if args.target is not None
              else int(extras.get("target", 1_000_000)))
    side = args.side if args.side is not None else int(extras.get("side", 100))
    out = _prepare_out(_resolve_out(args, "figure1"), args.force)
    t0 = time.perf_counter()
    result = figure1_experiment(seed=seed, side=side,
                                target_avalanches=target,
                                parallel=args.parallel, base=cfg)
    elapsed = time.perf_counter() - t0
    labels = (f"h{result.run_ref.summary.config['grains_per_event']}",
              f"h{result.run_test.summary.config['grains_per_event']}")
    _figure_common(args, result, out, labels, elapsed,
                   {"figure": "figure1", "seed": seed, "side": side,
                    "target": target, "parallel": args.parallel}, cfg)
    _dump_json({
        "scale_factor": result.scale_factor,
        "joint_window": list(result.joint_window),
        "collapse": asdict(result.collapse),
        "collapse_unscaled": asdict(result.collapse_unscaled),
        "gamma_ref": result.run_ref.summary.fit.gamma,
        "gamma_test": result.run_test.summary.fit.gamma,
        "gamma_sigmas": result.gamma_sigmas,
    }, out / "collapse.json")
    print(f"figure1: collapse distance {result.collapse.distance:.4f} "
          f"(unscaled {result.collapse_unscaled.distance:.4f}) -> {out}")
    return EXIT_OK


def cmd_figure2(args) -> int:
    cfg, extras = _load_base_config(args)
    seed = args.seed if args.seed is not None else int(extras.get("seed", 2))
    out = _prepare_out(_resolve_out(args, "figure2"), args.force)
    targets = (args.target if args.target is not None
               else int(extras.get("target", 1_000_000)),
               args.target_large if args.target_large is not None
               else int(extras.get("target_large", 300_000)))
    t0 = time.perf_counter()
    result = figure2_experiment(seed=seed, targets=targets,
                                parallel=args.parallel, base=cfg)
    elapsed = time.perf_counter() - t0
    sides = (result.run_ref.summary.config["side"],
             result.run_test.summary.config["side"])
    labels = (f"h{result.run_ref.summary.config['grains_per_event']}"
              f"_L{sides[0]}",
              f"h{result.run_test.summary.config['grains_per_event']}"
              f"_L{sides[1]}")
    _figure_common(args, result, out, labels, elapsed,
                   {"figure": "figure2", "seed": seed,
                    "target": targets[0], "target_large": targets[1],
                    "parallel": args.parallel}, cfg)
    _dump_json({
        "scale_factor": result.scale_factor,
        "joint_window": list(result.joint_window),
        "collapse_excluding_top": asdict(result.collapse_excluding_top),
        "collapse_including_top": asdict(result.collapse_including_top),
        "gamma_ref": result.run_ref.summary.fit.gamma,
        "gamma_test": result.run_test.summary.fit.gamma,
        "gamma_sigmas": result.gamma_sigmas,
    }, out / "collapse.json")
    print(f"figure2: collapse distance "
          f"{result.collapse_excluding_top.distance:.4f} excluding top "
          f"decade -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sandlab",
        description="Desk-scale laboratory for avalanching transport.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version",
                        version=f"sandlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p, with_config=True):
        if with_config:
            p.add_argument("--config", help="config file (key=value INI)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--force", action="store_true",
                       help="overwrite an existing output directory")
        p.add_argument("--seed", type=int, help="seed override")

    p = sub.add_parser("simulate", help="run one experiment")
    add_run_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="drive-rate sweep")
    add_run_flags(p)
    p.add_argument("--h-values", help="comma list, e.g. 4,16,64,256")
    p.add_argument("--target", type=int, help="avalanches per run")
    p.add_argument("--parallel", type=int, default=2)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="power-law fit of an avalanche stream")
    p.add_argument("--sizes", required=True,
                   help="avalanches.csv or one-size-per-line file")
    p.add_argument("--s-min", type=int, default=None)
    p.add_argument("--s-max", type=int, default=None)
    p.add_argument("--out", dest="out_file", default=None,
                   help="also write the fit JSON here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("collapse", help="rescale-and-compare two histograms")
    p.add_argument("--ref", required=True, help="reference histogram CSV")
    p.add_argument("--test", required=True, help="test histogram CSV")
    p.add_argument("--factor", type=float, required=True)
    p.add_argument("--window", help="log10 window lo,hi")
    p.add_argument("--out", dest="out_file", default=None)
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("pi-groups",
                       help="dimensionless groups of a variable table")
    p.add_argument("--table", required=True)
    p.set_defaults(func=cmd_pi_groups)

    p = sub.add_parser("figure1", help="drive comparison on one lattice")
    add_run_flags(p)
    p.add_argument("--side", type=int, default=None)
    p.add_argument("--target", type=int, default=None,
                   help="avalanches per run")
    p.add_argument("--parallel", type=int, default=2)
    p.set_defaults(func=cmd_figure1)

    p = sub.add_parser("figure2", help="joint drive/size rescaling")
    add_run_flags(p)
    p.add_argument("--target", type=int, default=None,
                   help="avalanches, small lattice")
    p.add_argument("--target-large", type=int, default=None,
                   help="avalanches, large lattice")
    p.add_argument("--parallel", type=int, default=2)
    p.set_defaults(func=cmd_figure2)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except OutputConflict as e:
        _err("output-conflict", e)
        return EXIT_OUTPUT
    except ConfigError as e:
        _err("config", e)
        return EXIT_CONFIG
    except DataError as e:
        _err("data", e)
        return EXIT_DATA
    except (RunError, SandlabError) as e:
        _err("runtime", e)
        return EXIT_RUN


def _err(kind: str, e: Exception):
    msg = " ".join(str(e).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
