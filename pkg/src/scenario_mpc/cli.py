"""Command-line front end.

Subcommands ``bounds``, ``gen-data``, ``open-loop`` and ``closed-loop``.
Every subcommand validates its whole configuration before doing any work
and writes its CSV files only once everything has been computed.  Exit
status is 0 on success, 2 on usage or validation errors and 1 on runtime
failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import os
import sys
import tempfile
from pathlib import Path

from .config import ConfigError, ExperimentConfig, bound_row
from .datasets import TrajectoryDataset, format_number
from .errors import DatasetFormatError, ScenarioMpcError
from .policy import Structure, count_decision_variables
from .sim import HISTORY, IDENTIFICATION, closed_loop_study, open_loop_study, stream

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- output ----------------------------------------------------------------


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _check_out_dir(out: str) -> Path:
    path = Path(out)
    if path.exists() and not path.is_dir():
        raise UsageError(f"--out {out} exists and is not a directory")
    return path


def _write_files(out: Path, files: dict[str, str]) -> None:
    """Write each file through a temporary name so a failure never leaves a truncated CSV."""
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.replace(tmp, out / name)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        print(f"wrote {out / name}", file=sys.stderr)


# -- argument handling -----------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    values = _floats(text)
    if any(not v.is_integer() for v in values):
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    return [int(v) for v in values]


_FLAG_HELP = {
    "a": "plant state matrix, rows separated by ';'",
    "b": "plant input matrix",
    "noise_bound": "true disturbances are uniform on [-bound, bound)",
    "input_bound": "excitation input bound for synthetic data",
    "init_bound": "initial state bound for synthetic data",
    "x0": "initial state of the controlled run",
    "horizon": "prediction horizon T",
    "steps": "closed-loop steps",
    "q_stage": "per-step state weight",
    "r_stage": "per-step input weight",
    "constraint_x": "per-step rows Fx in Fx x + Fu u <= bound",
    "constraint_u": "per-step rows Fu",
    "constraint_b": "per-step bounds",
    "structure": "feedback structure: full or subdiagonal",
    "slack_weight": "linear slack penalty; 0 means hard constraints",
    "eps1": "disturbance violation level",
    "eps2": "model violation level (ud_smpc only)",
    "beta": "confidence parameter",
    "n_scenarios": "scenario count for every variant (default: from the bounds)",
    "n_grid": "comma-separated scenario counts for closed-loop",
    "variants": "comma-separated subset of ud_smpc,ls_smpc,gt_smpc",
    "mc_realizations": "Monte Carlo realizations (default 50 open-loop, 20 closed-loop)",
    "eval_rollouts": "disturbance rollouts per open-loop evaluation",
    "id_length": "length of the identification rollout",
    "hist_count": "historical trajectories written by gen-data",
    "id_data": "identification CSV used instead of a fresh draw per realization",
    "workers": "worker processes for Monte Carlo realizations",
}


def _add_config_flags(parser: argparse.ArgumentParser, skip=()) -> None:
    parser.add_argument("--config", metavar="PATH", help="key = value configuration file")
    parser.add_argument("--seed", metavar="U64", help="experiment seed (default 0)")
    parser.add_argument("--out", metavar="DIR", help="output directory (default .)")
    group = parser.add_argument_group("configuration overrides")
    for key in ExperimentConfig.keys():
        if key in ("seed", "out") or key in skip:
            continue
        group.add_argument("--" + key.replace("_", "-"), dest=key, metavar="VALUE", help=_FLAG_HELP.get(key))


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for key in ExperimentConfig.keys():
        text = getattr(args, key, None)
        if text is not None:
            overrides[key] = ExperimentConfig.parse_value(key, text)
    cfg = cfg.with_values(overrides)
    cfg.validate()
    return cfg


def _identification(cfg: ExperimentConfig) -> TrajectoryDataset | None:
    try:
        data = cfg.identification()
    except (DatasetFormatError, OSError) as exc:
        raise ConfigError(f"id_data: {exc}") from None
    if data is not None and (data.n, data.m) != (cfg.model().n, cfg.model().m):
        raise ConfigError(f"id_data has n={data.n}, m={data.m}; the plant has n={cfg.model().n}, m={cfg.model().m}")
    return data


# -- subcommands -----------------------------------------------------------


def cmd_bounds(args) -> int:
    if args.eps is not None and (args.eps1 is not None or args.eps2 is not None):
        raise UsageError("give either --eps or --eps1/--eps2")
    if args.eps is not None:
        eps1, eps2 = args.eps, [1.0]
    else:
        eps1, eps2 = args.eps1 or [0.1], args.eps2 or [0.3]
    beta = args.beta or [1e-5]
    if args.d is not None:
        if any(v is not None for v in (args.n, args.m, args.horizon, args.structure)) or args.no_slack:
            raise UsageError("give either --d or --n/--m/--horizon/--structure/--no-slack")
        ds = args.d
    else:
        try:
            ds = [count_decision_variables(args.n or 2, args.m or 1, args.horizon or 5,
                                           Structure(args.structure or "full"), slack=not args.no_slack)]
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    grid = list(itertools.product(eps1, eps2, beta, ds))
    for e1, e2, b, d in grid:
        if not (0.0 < e1 <= 1.0 and 0.0 < e2 <= 1.0):
            raise UsageError(f"violation levels must lie in (0, 1], got {e1}, {e2}")
        if not 0.0 < b <= 1.0:
            raise UsageError(f"beta must lie in (0, 1], got {b}")
        if d < 1:
            raise UsageError(f"d must be a positive integer, got {d}")
    out = _check_out_dir(args.out) if args.out else None

    rows = [(float(e1), float(e2), float(b), d, *bound_row(e1, e2, b, d)) for e1, e2, b, d in grid]
    text = _csv_text(["eps1", "eps2", "beta", "d", "min_scenarios", "explicit_upper_bound"], rows)
    sys.stdout.write(text)
    if out is not None:
        _write_files(out, {"bounds.csv": text})
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = _check_out_dir(cfg.out)
    plant = cfg.plant()
    d_id = plant.identification_data(stream(cfg.seed, 0, IDENTIFICATION), cfg.id_length)
    d_hist = plant.historical_data(stream(cfg.seed, 0, HISTORY), cfg.hist_count, cfg.horizon)
    _write_files(out, {"d_id.csv": d_id.to_csv_string(), "d_hist.csv": d_hist.to_csv_string()})
    return EXIT_OK


def cmd_open_loop(args) -> int:
    cfg = _config(args)
    identification = _identification(cfg)
    out = _check_out_dir(cfg.out)
    variants = cfg.controller_variants()
    records = open_loop_study(variants, cfg.setup(), cfg.mc_realizations or 50, cfg.eval_rollouts, cfg.seed,
                              workers=cfg.workers, identification=identification)
    rows = [(r.variant, r.realization, float(r.violation_fraction)) for r in records]
    _write_files(out, {"open_loop.csv": _csv_text(["variant", "realization", "violation_fraction"], rows)})
    return EXIT_OK


def cmd_closed_loop(args) -> int:
    cfg = _config(args)
    identification = _identification(cfg)
    out = _check_out_dir(cfg.out)
    records = closed_loop_study(cfg.variants, cfg.n_grid, cfg.setup(), cfg.mc_realizations or 20, cfg.steps,
                                cfg.seed, workers=cfg.workers, identification=identification)
    rows = [(r.variant, r.N, r.realization, float(r.cost), r.violations, float(r.sigma_max)) for r in records]
    header = ["variant", "N", "realization", "cost", "violations", "sigma_max"]
    _write_files(out, {"closed_loop.csv": _csv_text(header, rows)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenario-mpc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bounds", help="scenario counts from the sample-complexity bounds")
    p.add_argument("--eps", type=_floats, help="single violation level (known dynamics)")
    p.add_argument("--eps1", type=_floats, help="disturbance violation level")
    p.add_argument("--eps2", type=_floats, help="model violation level")
    p.add_argument("--beta", type=_floats, help="confidence parameter (default 1e-5)")
    p.add_argument("--d", type=_ints, help="number of decision variables")
    p.add_argument("--n", type=int, help="state dimension, to count d")
    p.add_argument("--m", type=int, help="input dimension, to count d")
    p.add_argument("--horizon", type=int, help="horizon, to count d")
    p.add_argument("--structure", choices=[s.value for s in Structure])
    p.add_argument("--no-slack", action="store_true", help="count d without the slack variable")
    p.add_argument("--out", metavar="DIR", help="also write bounds.csv here")
    p.set_defaults(func=cmd_bounds)

    for name, func, text in (
        ("gen-data", cmd_gen_data, "synthesize identification and historical datasets"),
        ("open-loop", cmd_open_loop, "violation probability of the first policy per realization"),
        ("closed-loop", cmd_closed_loop, "receding-horizon cost and violations over a grid of N"),
    ):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"scenario-mpc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioMpcError, OSError, ValueError, ArithmeticError) as exc:
        print(f"scenario-mpc {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
