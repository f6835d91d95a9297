"""Command-line harness: seeded simulation runs, sweeps, and solver output.

Subcommands: simulate, solve, sweep, stable-partners, compare.  Every
command is a pure function of its flags and the root seed, so identical
invocations produce identical output files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

from .analytics import (
    ExperimentRecord,
    compare_matchings,
    format_number,
    make_record,
    write_records_csv,
)
from .fixed_point import ConvergenceError, solve_general, solve_iid
from .market import (
    ConfigurationError,
    MarketConfig,
    SignalSpec,
    child_seed,
    sample_market,
)
from .matching import school_proposing_da, student_proposing_da
from .stable_partners import extra_stable_partner_reports

__all__ = ["main", "SweepSpec"]


class UsageError(ValueError):
    """Bad flag combination or out-of-contract parameter."""


@dataclass(frozen=True)
class SweepSpec:
    """Grid of (k, delta) cells replicated from one root seed."""

    base: MarketConfig
    k_values: tuple[int, ...]
    deltas: tuple[float, ...]
    replications: int
    seed: int
    out: Path

    def __post_init__(self) -> None:
        if not self.k_values or not self.deltas:
            raise UsageError("sweep grid must be nonempty")
        if self.replications < 1:
            raise UsageError("replications must be at least 1")
        for k in self.k_values:
            if not 1 <= k <= self.base.m:
                raise UsageError(f"k={k} exceeds the number of universities")


def _load_config_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc


def _pick(args: argparse.Namespace, file_cfg: dict[str, Any], name: str, default: Any) -> Any:
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in file_cfg:
        return file_cfg[name]
    return default


def _build_signal(args: argparse.Namespace, file_cfg: dict[str, Any]) -> SignalSpec:
    flag_kind = getattr(args, "signal", None)
    flag_delta = getattr(args, "delta", None)
    file_signal = file_cfg.get("signal")
    if flag_kind is None and flag_delta is None and isinstance(file_signal, dict):
        return SignalSpec.from_json_dict(file_signal)
    kind = flag_kind if flag_kind is not None else (
        file_signal if isinstance(file_signal, str) else None
    )
    delta = flag_delta if flag_delta is not None else file_cfg.get("delta")
    if delta is None and isinstance(file_signal, dict):
        delta = file_signal.get("delta")
    if kind in (None, "gaussian"):
        d = float(delta) if delta is not None else 0.0
        return SignalSpec.gaussian(d) if d != 0.0 or kind == "gaussian" else SignalSpec.iid()
    if kind == "iid":
        if delta not in (None, 0, 0.0):
            raise UsageError("--signal iid does not take a shift")
        return SignalSpec.iid()
    raise UsageError(f"unknown signal kind {kind!r}")


def _build_market_config(args: argparse.Namespace) -> MarketConfig:
    file_cfg = _load_config_file(getattr(args, "config", None))
    n = _pick(args, file_cfg, "n", None)
    if n is None:
        raise UsageError("--n is required (flag or config file)")
    try:
        return MarketConfig(
            n=int(n),
            m_ratio=float(_pick(args, file_cfg, "m_ratio", 1.0)),
            capacity=int(_pick(args, file_cfg, "capacity", 1)),
            k=int(_pick(args, file_cfg, "k", 1)),
            signal=_build_signal(args, file_cfg),
            seed=int(_pick(args, file_cfg, "seed", 0)),
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc


def _write_text(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write output file {path}: {exc}") from exc


def _mean_se(values: list[float]) -> tuple[float, float]:
    mean = sum(values) / len(values)
    if len(values) < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var / len(values))


def _records_json(records: list[ExperimentRecord]) -> str:
    payload = [
        {
            "k": r.k,
            "delta": r.delta,
            "seed": r.seed,
            "n": r.n,
            "m": r.m,
            "l": r.capacity,
            "matched": r.matched,
            "rank_counts": list(r.rank_counts),
            "unmatched": r.unmatched,
            "synergy": r.synergy,
            "u_student": r.student_utility,
            "u_university": r.university_utility,
        }
        for r in records
    ]
    return json.dumps(payload, indent=2) + "\n"


def _simulate_records(config: MarketConfig, replications: int) -> list[ExperimentRecord]:
    records = []
    for rep in range(replications):
        seed = child_seed(config.seed, rep)
        instance = sample_market(replace(config, seed=seed))
        matching = school_proposing_da(instance)
        records.append(make_record(instance, matching, seed=seed))
    return records


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = _build_market_config(args)
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    records = _simulate_records(config, args.reps)
    out = Path(args.out) if args.out else None
    if args.format == "json":
        _write_text(out, _records_json(records))
    else:
        if out is None:
            write_records_csv(records, sys.stdout, k_max=config.k)
        else:
            try:
                write_records_csv(records, out, k_max=config.k)
            except OSError as exc:
                raise OSError(f"cannot write output file {out}: {exc}") from exc
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    config = _build_market_config(args)
    if args.method == "iid":
        if not config.signal.is_iid_equivalent:
            raise UsageError("method 'iid' requires identical signal distributions (delta 0)")
        result = solve_iid(config, tol=args.tol if args.tol is not None else 1e-10)
    else:
        result = solve_general(
            config,
            tol=args.tol if args.tol is not None else 0.01,
            max_iter=args.max_iter,
            n_sim=args.n_sim,
            trials=args.trials,
            damping=args.damping,
        )
    text = json.dumps(result.to_json_dict(), indent=2) + "\n"
    _write_text(Path(args.out) if args.out else None, text)
    return 0


def _build_sweep_spec(args: argparse.Namespace) -> SweepSpec:
    file_cfg = _load_config_file(getattr(args, "config", None))
    base_cfg = file_cfg.get("base", file_cfg)
    n = args.n if args.n is not None else base_cfg.get("n")
    if n is None:
        raise UsageError("--n is required (flag or config file)")
    try:
        base = MarketConfig(
            n=int(n),
            m_ratio=float(_pick(args, base_cfg, "m_ratio", 1.0)),
            capacity=int(_pick(args, base_cfg, "capacity", 1)),
            k=1,
            signal=SignalSpec.iid(),
            seed=0,
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc

    if args.k_list:
        k_values = tuple(int(v) for v in args.k_list.split(","))
    elif "k_values" in file_cfg:
        k_values = tuple(int(v) for v in file_cfg["k_values"])
    else:
        k_min = args.k_min if args.k_min is not None else 1
        k_max = args.k_max if args.k_max is not None else min(10, base.m)
        k_values = tuple(range(k_min, k_max + 1))
    if args.deltas:
        deltas = tuple(float(v) for v in args.deltas.split(","))
    else:
        deltas = tuple(float(v) for v in file_cfg.get("deltas", [0.0]))
    out = args.out or file_cfg.get("out")
    if out is None:
        raise UsageError("--out is required for sweeps")
    return SweepSpec(
        base=base,
        k_values=k_values,
        deltas=deltas,
        replications=int(_pick(args, file_cfg, "reps", file_cfg.get("replications", 1))),
        seed=int(_pick(args, file_cfg, "seed", 0)),
        out=Path(out),
    )


def _cmd_sweep(args: argparse.Namespace) -> int:
    spec = _build_sweep_spec(args)
    records: list[ExperimentRecord] = []
    summary_lines = [
        "k,delta,reps,mean_matched,se_matched,mean_rank1,se_rank1,"
        "mean_synergy,se_synergy,mean_u_student,se_u_student,"
        "mean_u_university,se_u_university"
    ]
    cell = 0
    for delta in spec.deltas:
        signal = SignalSpec.gaussian(delta) if delta != 0.0 else SignalSpec.iid()
        for k in spec.k_values:
            cell_records = []
            for rep in range(spec.replications):
                seed = child_seed(spec.seed, cell * spec.replications + rep)
                config = replace(spec.base, k=k, signal=signal, seed=seed)
                instance = sample_market(config)
                matching = school_proposing_da(instance)
                cell_records.append(make_record(instance, matching, seed=seed))
            cell += 1
            records.extend(cell_records)
            stats = [
                _mean_se([float(r.matched) for r in cell_records]),
                _mean_se([float(r.rank_counts[0]) for r in cell_records]),
                _mean_se([float(r.synergy) for r in cell_records]),
                _mean_se([r.student_utility for r in cell_records]),
                _mean_se([r.university_utility for r in cell_records]),
            ]
            flat = [v for pair in stats for v in pair]
            summary_lines.append(
                ",".join([str(k), format_number(delta)] + [str(spec.replications)]
                         + [format_number(v) for v in flat])
            )
    k_max = max(spec.k_values)
    try:
        write_records_csv(records, spec.out, k_max=k_max)
        summary_path = spec.out.with_suffix(spec.out.suffix + ".summary.csv")
        summary_path.write_text("\n".join(summary_lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write output file {spec.out}: {exc}") from exc
    return 0


def _cmd_stable_partners(args: argparse.Namespace) -> int:
    config = _build_market_config(args)
    if config.n > 2000:
        raise UsageError("stable-partners is limited to n <= 2000")
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    lines = ["rep,seed,university,verdict,witness"]
    summary = ["rep,seed,yes_fraction"]
    for rep in range(args.reps):
        seed = child_seed(config.seed, rep)
        instance = sample_market(replace(config, seed=seed))
        reports = extra_stable_partner_reports(instance)
        yes = 0
        for r in reports:
            witness = "NULL" if r.witness is None else str(r.witness)
            lines.append(f"{rep},{seed},{r.university},{'YES' if r.verdict else 'NO'},{witness}")
            yes += int(r.verdict)
        summary.append(f"{rep},{seed},{format_number(yes / config.m)}")
    out = Path(args.out) if args.out else None
    if out is None:
        sys.stdout.write("\n".join(lines) + "\n")
        sys.stdout.write("\n".join(summary) + "\n")
    else:
        _write_text(out, "\n".join(lines) + "\n")
        _write_text(out.with_suffix(out.suffix + ".summary.csv"), "\n".join(summary) + "\n")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    config = _build_market_config(args)
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    lines = ["rep,seed,diff_fraction"]
    diffs = []
    for rep in range(args.reps):
        seed = child_seed(config.seed, rep)
        instance = sample_market(replace(config, seed=seed))
        diff = compare_matchings(student_proposing_da(instance), school_proposing_da(instance))
        diffs.append(diff)
        lines.append(f"{rep},{seed},{format_number(diff)}")
    if args.out:
        _write_text(Path(args.out), "\n".join(lines) + "\n")
    summary = {"replications": args.reps, "mean_difference": sum(diffs) / len(diffs)}
    sys.stdout.write(json.dumps(summary) + "\n")
    return 0


def _add_market_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n", type=int, help="number of students")
    parser.add_argument("--m-ratio", dest="m_ratio", type=float, help="universities per student")
    parser.add_argument("--capacity", type=int, help="seats per university")
    parser.add_argument("--k", type=int, help="applications per student")
    parser.add_argument("--delta", type=float, help="signal shift for favorite-school applications")
    parser.add_argument("--signal", choices=["iid", "gaussian"], help="signal model")
    parser.add_argument("--seed", type=int, help="root RNG seed")
    parser.add_argument("--config", help="JSON file mirroring the configuration fields")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="admitsim",
        description="Simulate admission markets with noisy application signals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="replicate one configuration and emit records")
    _add_market_flags(p_sim)
    p_sim.add_argument("--reps", type=int, default=1)
    p_sim.add_argument("--out", help="output path (stdout when omitted)")
    p_sim.add_argument("--format", choices=["csv", "json"], default="csv")
    p_sim.set_defaults(func=_cmd_simulate)

    p_solve = sub.add_parser("solve", help="solve the rank-fraction system")
    _add_market_flags(p_solve)
    p_solve.add_argument("--method", choices=["iid", "general"], default="iid")
    p_solve.add_argument("--tol", type=float)
    p_solve.add_argument("--max-iter", dest="max_iter", type=int, default=80)
    p_solve.add_argument("--n-sim", dest="n_sim", type=int, default=20_000)
    p_solve.add_argument("--trials", type=int, default=4)
    p_solve.add_argument("--damping", type=float, default=0.5)
    p_solve.add_argument("--out", help="output path (stdout when omitted)")
    p_solve.set_defaults(func=_cmd_solve)

    p_sweep = sub.add_parser("sweep", help="grid of (k, delta) cells with per-cell means")
    _add_market_flags(p_sweep)
    p_sweep.add_argument("--k-min", dest="k_min", type=int)
    p_sweep.add_argument("--k-max", dest="k_max", type=int)
    p_sweep.add_argument("--k-list", dest="k_list", help="comma-separated k values")
    p_sweep.add_argument("--deltas", help="comma-separated signal shifts")
    p_sweep.add_argument("--reps", type=int)
    p_sweep.add_argument("--out", help="records CSV path; means go to <out>.summary.csv")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_sp = sub.add_parser("stable-partners", help="per-university extra-stable-partner verdicts")
    _add_market_flags(p_sp)
    p_sp.add_argument("--reps", type=int, default=1)
    p_sp.add_argument("--out", help="verdict CSV path; fractions go to <out>.summary.csv")
    p_sp.set_defaults(func=_cmd_stable_partners)

    p_cmp = sub.add_parser("compare", help="student- vs school-proposing match differences")
    _add_market_flags(p_cmp)
    p_cmp.add_argument("--reps", type=int, default=1)
    p_cmp.add_argument("--out", help="per-replication CSV path")
    p_cmp.set_defaults(func=_cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        diag = {"error": str(exc), "rank_fractions": list(exc.fractions),
                "residuals": list(exc.residuals)}
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(diag), file=sys.stderr)
        return 1
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
