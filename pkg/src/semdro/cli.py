"""Command-line entry point: ``semdro <subcommand> [options]``.

Exit codes: 0 on success, 2 when some method failed in some trial, 1 on a
configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .experiments import (ConfigError, ExperimentConfig, emit_outputs, run_evaluation, run_learning,
                          trial_data, write_csv)
from .semfit import fit_spec
from .shiftdetect import ShiftConfig, ShiftTestError, detect_shifts

log = logging.getLogger("semdro")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value experiment config")
    p.add_argument("--data", dest="dataset", help="'synthetic' or a voting-schema CSV path")
    p.add_argument("--graph", help="graph fixture name or graph file")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--rows", dest="rows_per_env", type=int, help="rows per training environment")
    p.add_argument("--methods", help="comma-separated subset of semcp,dro,fdro,nonrobust")
    p.add_argument("--policy", help="'uniform' or a policy JSON file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--plot", action="store_true", default=None, help="also write an SVG plot")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semdro", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("detect-shifts", "test every variable for cross-environment shifts"),
                        ("fit-sem", "fit the interval uncertainty set and write it as JSON"),
                        ("evaluate", "worst-case evaluation of a policy by every method"),
                        ("learn", "robust policy learning by every method"),
                        ("experiment", "evaluation and learning from one config")):
        _common(sub.add_parser(name, help=help_))
    return parser


def make_config(args: argparse.Namespace) -> ExperimentConfig:
    keys = ("dataset", "graph", "seed", "trials", "rows_per_env", "methods", "policy", "out", "plot")
    overrides = {k: getattr(args, k) for k in keys}
    if args.config:
        if not Path(args.config).exists():
            raise ConfigError(f"config file not found: {args.config}")
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def _detect(cfg: ExperimentConfig) -> int:
    cfg.check_paths()
    g = cfg.load_graph()
    data = trial_data(cfg, 0)
    summary = detect_shifts(data.train, g, ShiftConfig(permutations=cfg.permutations,
                                                       max_rows=cfg.shift_rows, seed=cfg.seed))
    rows = [{"pair": f"{r.pair[0]}|{r.pair[1]}", "variable": v, "p_value": p,
             "shifted": p < summary.threshold()}
            for r in summary.reports for v, p in r.p_values.items()]
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "shifts.csv", ("pair", "variable", "p_value", "shifted"), rows)
    print("shifted:", ", ".join(sorted(summary.shifted_set)) or "(none)")
    return 0


def _fit(cfg: ExperimentConfig) -> int:
    cfg.check_paths()
    g = cfg.load_graph()
    data = trial_data(cfg, 0)
    shifted = detect_shifts(data.train, g, ShiftConfig(permutations=cfg.permutations,
                                                       max_rows=cfg.shift_rows, seed=cfg.seed)).shifted_set
    spec = fit_spec(data.train, g, shifted)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "uncertainty.json").write_text(spec.to_json())
    (out / "nominal.json").write_text(spec.nominal.to_json())
    (out / "normalization.json").write_text(json.dumps(data.norm.to_dict(), indent=2, sort_keys=True))
    print(f"wrote {out / 'uncertainty.json'}")
    return 0


def _run(cfg: ExperimentConfig, task: str) -> int:
    failed = 0
    if task in ("evaluate", "experiment"):
        table = run_evaluation(cfg)
        for p in emit_outputs(table, cfg.out, "evaluation", cfg.plot):
            print(f"wrote {p}")
        failed += table.failures()
    if task in ("learn", "experiment"):
        table = run_learning(cfg)
        for p in emit_outputs(table, cfg.out, "learning", cfg.plot):
            print(f"wrote {p}")
        failed += table.failures()
    return 2 if failed else 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args)
        if args.command == "detect-shifts":
            return _detect(cfg)
        if args.command == "fit-sem":
            return _fit(cfg)
        return _run(cfg, args.command)
    except (ConfigError, ShiftTestError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
