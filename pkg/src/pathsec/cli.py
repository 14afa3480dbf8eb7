"""Command-line entry point: ``gen``, ``assess``, ``run`` and ``plots``.

Each subcommand accepts ``--config`` pointing at an experiment JSON file;
explicit flags override its values. Failures print a one-line JSON object
with ``error`` and ``message`` keys to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import assurance, experiment, traffic
from .errors import ConfigError, PathsecError

EXIT_CONFIG = 2
EXIT_FAILURE = 1


def _load_cfg(args) -> experiment.ExperimentConfig:
    cfg = experiment.ExperimentConfig.from_json(args.config) if args.config else experiment.ExperimentConfig()
    overrides = {
        "n_windows": getattr(args, "n_windows", None),
        "N": getattr(args, "N", None),
        "seed": getattr(args, "seed", None),
        "ratio": getattr(args, "ratio", None),
        "beta": getattr(args, "beta", None),
        "power_fraction": getattr(args, "power_fraction", None),
        "delta": getattr(args, "delta", None),
        "gating": getattr(args, "gating", None),
        "workers": getattr(args, "workers", None),
        "intensity": getattr(args, "intensity", None),
        "injected_fraction": getattr(args, "injected_fraction", None),
        "epsilon": getattr(args, "epsilon", None),
        "sensing_seed": getattr(args, "cs_seed", None),
    }
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg


def cmd_gen(args) -> dict:
    cfg = _load_cfg(args)
    cfg.validate()
    catalog, signatures, graph = experiment.load_inputs(cfg)
    reference, windows = experiment.generate_dataset(cfg, catalog, signatures, tuple(graph.paths))
    out = experiment.store_dataset(reference, windows, args.out, args.format)
    return {"out": str(out), "windows": len(windows), "injected": sum(bool(w.labels) for w in windows),
            "instances": sum(len(w.labels) for w in windows)}


def cmd_assess(args) -> dict:
    cfg = _load_cfg(args)
    cfg.validate()
    catalog, signatures, graph = experiment.load_inputs(cfg)
    windows = [traffic.load_window(p, catalog=catalog) for p in args.windows]
    N = windows[0].N
    if any(w.N != N for w in windows):
        raise ConfigError("all windows passed to assess must have the same number of samples")
    if args.baseline:
        reference = traffic.load_window(args.baseline, catalog=catalog)
    else:
        reference = traffic.generate_baseline(catalog, N, seed=cfg.seed, window_id="reference")
    if reference.N != N:
        raise ConfigError(f"baseline has {reference.N} samples, windows have {N}")
    pcfg = experiment.pipeline_config(cfg, reference, gating=cfg.gating != "off")
    results = experiment.assess_windows(windows, signatures, pcfg, cfg.workers)
    for i, a in enumerate(results):
        if a.path_id in graph.paths:
            graph.record(a, timestamp=i)
    return {
        "sensing": {"M": pcfg.sensing.M, "N": pcfg.sensing.N, "id": pcfg.sensing.id},
        "assessments": [a.to_dict() for a in results],
        "throughput": assurance.path_throughput(graph, L=args.message_length),
    }


def cmd_run(args) -> dict:
    cfg = _load_cfg(args)
    if args.out:
        cfg.output_dir = args.out
    if args.no_plots:
        cfg.emit_plots = False
    report = experiment.run_experiment(cfg)
    d = report.to_dict()
    return {"out": cfg.output_dir, "detection": d["detection"], "classification": d["classification"],
            "per_suite": d["per_suite"]}


def cmd_plots(args) -> dict:
    manifest = experiment.emit_plots(args.run_dir, args.out)
    return {"figures": manifest}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathsec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int)
        return sp

    def detection_flags(sp):
        sp.add_argument("--ratio", type=float, help="measurement ratio M/N (default: chosen from sparsity)")
        sp.add_argument("--epsilon", type=float, help="measurement-count scale per active feature")
        sp.add_argument("--cs-seed", dest="cs_seed", type=int, help="sensing matrix seed")
        sp.add_argument("--beta", type=float, help="Q-statistic significance level")
        sp.add_argument("--power-fraction", dest="power_fraction", type=float)
        sp.add_argument("--delta", type=float, help="clustering distance threshold")
        sp.add_argument("--workers", type=int)

    g = common(sub.add_parser("gen", help="generate a labeled dataset"))
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n-windows", dest="n_windows", type=int)
    g.add_argument("--N", type=int, help="samples per window")
    g.add_argument("--intensity", type=float)
    g.add_argument("--injected-fraction", dest="injected_fraction", type=float)
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.set_defaults(func=cmd_gen)

    a = common(sub.add_parser("assess", help="assess one or more window files"))
    a.add_argument("windows", nargs="+", help="window files (.csv or .json)")
    a.add_argument("--baseline", help="attack-free reference window file")
    a.add_argument("--gating", choices=("on", "off"))
    a.add_argument("--message-length", dest="message_length", type=float, default=1.0)
    detection_flags(a)
    a.set_defaults(func=cmd_assess)

    r = common(sub.add_parser("run", help="run a full experiment"))
    r.add_argument("--out", help="run directory")
    r.add_argument("--n-windows", dest="n_windows", type=int)
    r.add_argument("--N", type=int)
    r.add_argument("--gating", choices=experiment.GATING_MODES)
    r.add_argument("--no-plots", dest="no_plots", action="store_true")
    detection_flags(r)
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plots", help="emit plot CSVs for a finished run")
    pl.add_argument("run_dir")
    pl.add_argument("--out", help="plot directory (default: <run_dir>/plots)")
    pl.set_defaults(func=cmd_plots)
    return p


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except (PathsecError, OSError, ValueError, KeyError) as exc:
        return _fail(exc, EXIT_FAILURE)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
