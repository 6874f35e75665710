"""Command-line interface.

Three subcommands operate on a network JSON file:

* ``outage``: outage probability of the network at given per-link rates.
* ``solve``: rate allocation minimizing the outage surrogate, either by the
  centralized conic solver or by the simulated distributed dynamics.
* ``curve``: sweep the multicast rate or the per-link SNR, re-solve the
  allocation at each point, and tabulate outage bounds along the curve.

Exit status: 0 on success, 1 for any input problem, 2 when a solve does not
converge (or its optimality certificate fails). The Monte-Carlo / distributed
seed comes from ``--seed`` when given, else the ``FADEMAC_SEED`` environment
variable, else 0.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import allocation, distributed, monte_carlo, network
from .errors import FademacError, InputError, SchemaError

SEED_ENV = "FADEMAC_SEED"

_RATE_FIELDS = {"tail", "head", "rate"}


def load_rates(path, net: network.NetworkSpec) -> np.ndarray:
    """Read a per-link rates file: {"rates": [{"tail", "head", "rate"}, ...]}.

    Every link of the network must appear exactly once.
    """
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict) or set(data) != {"rates"}:
        raise SchemaError("rates file must be an object with the single field 'rates'")
    if not isinstance(data["rates"], list):
        raise SchemaError("rates: expected a list")
    rates = np.full(len(net.links), np.nan)
    for i, entry in enumerate(data["rates"]):
        if not isinstance(entry, dict) or set(entry) != _RATE_FIELDS:
            raise SchemaError(f"rates[{i}]: expected fields tail, head, rate")
        tail, head, rate = entry["tail"], entry["head"], entry["rate"]
        if isinstance(rate, bool) or not isinstance(rate, (int, float)):
            raise SchemaError(f"rates[{i}].rate: expected a number, got {rate!r}")
        k = net.link_index((tail, head))
        if not math.isnan(rates[k]):
            raise InputError(f"rates[{i}]: duplicate entry for link {tail}->{head}")
        rates[k] = float(rate)
    missing = [net.links[k] for k in range(len(net.links)) if math.isnan(rates[k])]
    if missing:
        l = missing[0]
        raise InputError(f"rates file is missing link {l.tail}->{l.head}")
    return rates


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _rates_table(net: network.NetworkSpec, r: np.ndarray) -> list[dict]:
    return [
        {"tail": l.tail, "head": l.head, "rate": float(r[k])}
        for k, l in enumerate(net.links)
    ]


# -- outage ------------------------------------------------------------------


def cmd_outage(args) -> int:
    net = network.load_network(args.network)
    rates = load_rates(args.rates, net)
    seed = _resolve_seed(args.seed)
    mc = monte_carlo.McConfig(trials=args.trials, seed=seed, workers=args.workers)
    estimate = network.network_outage(net, rates, method=args.method, mc=mc)
    per_receiver = None
    if args.method != "mc":
        per_receiver = {
            j: e.value
            for j, e in network.receiver_outages(net, rates, args.method).items()
        }
    if args.json:
        out = {
            "method": args.method,
            "outage": estimate.value,
            "halfwidth": estimate.halfwidth,
            "low_confidence": estimate.low_confidence,
        }
        if per_receiver is not None:
            out["receivers"] = {str(j): v for j, v in per_receiver.items()}
        print(json.dumps(out))
        return 0
    line = f"network outage ({args.method}): {estimate.value:.12g}"
    if estimate.halfwidth is not None:
        line += f" +- {estimate.halfwidth:.3g} (95% CI)"
    if estimate.low_confidence:
        line += "  [low confidence: rare outcome observed fewer than 10 times]"
    print(line)
    if per_receiver is not None:
        for j, v in per_receiver.items():
            print(f"  receiver {j}: {v:.12g}")
    return 0


# -- solve -------------------------------------------------------------------


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["round", "objective", "max_flow_violation", "max_dual", "clamp_events"]
        )
        for row in trace:
            writer.writerow(
                [row.round, row.objective, row.max_flow_violation, row.max_dual,
                 row.clamp_events]
            )


def cmd_solve(args) -> int:
    net = network.load_network(args.network)
    prob = allocation.AllocationProblem(net)
    if args.mode == "centralized":
        if args.out:
            raise InputError("--out records the per-round trace; it requires --mode distributed")
        report = allocation.solve_centralized(prob)
        kkt = report.kkt
        if args.json:
            print(json.dumps({
                "mode": "centralized",
                "objective": report.objective,
                "certified": report.certified,
                "status": report.status,
                "solver": report.solver,
                "kkt": {
                    "primal": kkt.primal,
                    "dual": kkt.dual,
                    "stationarity": kkt.stationarity,
                    "complementarity": kkt.complementarity,
                },
                "rates": _rates_table(net, report.state.r),
            }))
        else:
            print(f"objective: {report.objective:.12g}")
            print(f"solver: {report.solver} ({report.status}); "
                  f"KKT certificate: {'pass' if report.certified else 'FAIL'}")
            print(f"kkt residuals: primal={kkt.primal:.3g} dual={kkt.dual:.3g} "
                  f"stationarity={kkt.stationarity:.3g} "
                  f"complementarity={kkt.complementarity:.3g}")
            print("rates:")
            for entry in _rates_table(net, report.state.r):
                print(f"  {entry['tail']}->{entry['head']}: {entry['rate']:.9g}")
        return 0 if report.certified else 2

    seed = _resolve_seed(args.seed)
    result = distributed.run(net, seed=seed, round_cap=args.rounds)
    if args.out:
        write_trace_csv(args.out, result.trace)
    if args.json:
        print(json.dumps({
            "mode": "distributed",
            "objective": result.objective,
            "converged": result.converged,
            "diverged": result.diverged,
            "rounds": result.rounds,
            "max_flow_violation": result.trace[-1].max_flow_violation,
            "rates": _rates_table(net, result.state.r),
        }))
    else:
        if result.converged:
            print(f"converged in {result.rounds} rounds")
        elif result.diverged:
            print(f"DIVERGED after {result.rounds} rounds", file=sys.stderr)
        else:
            print(f"did not converge within {result.rounds} rounds", file=sys.stderr)
        print(f"objective: {result.objective:.12g}")
        print(f"max flow violation: {result.trace[-1].max_flow_violation:.3g} bits")
        print("rates:")
        for entry in _rates_table(net, result.state.r):
            print(f"  {entry['tail']}->{entry['head']}: {entry['rate']:.9g}")
    return 0 if result.converged else 2


# -- curve -------------------------------------------------------------------

CURVE_COLUMNS = (
    "sweep_value",
    "R_s",
    "outage_lower",
    "outage_upper",
    "outage_mc",
    "mc_halfwidth",
    "objective",
)


def _sweep_values(lo: float, hi: float, step: float) -> list[float]:
    if step <= 0:
        raise InputError(f"--step must be positive, got {step}")
    if hi < lo:
        raise InputError(f"--hi {hi} is below --lo {lo}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + i * step for i in range(count)]


def cmd_curve(args) -> int:
    net = network.load_network(args.network)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = set(methods) - {"lower", "upper", "mc"}
    if unknown:
        raise InputError(f"unknown curve methods: {sorted(unknown)} "
                         "(choose from lower, upper, mc)")
    seed = _resolve_seed(args.seed)
    rows = []
    for value in _sweep_values(args.lo, args.hi, args.step):
        if args.sweep == "multicast_rate":
            point = network.with_multicast_rate(net, value)
        else:  # snr sweep, value in dB
            point = network.with_snr(net, 10.0 ** (value / 10.0))
        report = allocation.solve_centralized(allocation.AllocationProblem(point))
        r_opt = np.maximum(report.state.r, 0.0)
        row = {
            "sweep_value": value,
            "R_s": point.multicast_rate,
            "outage_lower": "",
            "outage_upper": "",
            "outage_mc": "",
            "mc_halfwidth": "",
            "objective": report.objective,
        }
        if "lower" in methods:
            row["outage_lower"] = network.network_outage(point, r_opt, "lower").value
        if "upper" in methods:
            row["outage_upper"] = network.network_outage(point, r_opt, "upper").value
        if "mc" in methods:
            est = network.network_outage(
                point, r_opt, "mc",
                mc=monte_carlo.McConfig(trials=args.trials, seed=seed),
            )
            row["outage_mc"] = est.value
            row["mc_halfwidth"] = est.halfwidth
        rows.append(row)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# -- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; keep 2 reserved for non-convergence."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fademac",
        description="Outage probabilities and rate allocation for slow-fading "
                    "multicast networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_out = sub.add_parser("outage", parents=[], help="outage at given per-link rates")
    p_out.add_argument("network", help="network JSON file")
    p_out.add_argument("--rates", required=True, help="per-link rates JSON file")
    p_out.add_argument("--method", default="lower",
                       choices=["exact", "lower", "upper", "weak", "mc"])
    p_out.add_argument("--trials", type=int, default=100_000,
                       help="Monte-Carlo trials (method mc)")
    p_out.add_argument("--seed", type=int, default=None,
                       help=f"RNG seed (default: ${SEED_ENV} or 0)")
    p_out.add_argument("--workers", type=int, default=1,
                       help="Monte-Carlo worker threads")
    p_out.add_argument("--json", action="store_true", help="machine-readable output")
    p_out.set_defaults(func=cmd_outage)

    p_sol = sub.add_parser("solve", help="find the outage-minimizing rate allocation")
    p_sol.add_argument("network", help="network JSON file")
    p_sol.add_argument("--mode", default="centralized",
                       choices=["centralized", "distributed"])
    p_sol.add_argument("--out", default=None,
                       help="write the per-round trace CSV (distributed mode)")
    p_sol.add_argument("--seed", type=int, default=None,
                       help=f"step-size jitter seed (default: ${SEED_ENV} or 0)")
    p_sol.add_argument("--rounds", type=int, default=100_000,
                       help="round cap for the distributed dynamics")
    p_sol.add_argument("--json", action="store_true", help="machine-readable output")
    p_sol.set_defaults(func=cmd_solve)

    p_cur = sub.add_parser("curve", help="outage along a parameter sweep")
    p_cur.add_argument("network", help="network JSON file")
    p_cur.add_argument("--sweep", required=True, choices=["multicast_rate", "snr"],
                       help="snr sweeps are in dB and rescale every link's power")
    p_cur.add_argument("--lo", type=float, required=True)
    p_cur.add_argument("--hi", type=float, required=True)
    p_cur.add_argument("--step", type=float, required=True)
    p_cur.add_argument("--out", required=True, help="output CSV path")
    p_cur.add_argument("--trials", type=int, default=100_000,
                       help="Monte-Carlo trials per sweep point")
    p_cur.add_argument("--seed", type=int, default=None,
                       help=f"RNG seed (default: ${SEED_ENV} or 0)")
    p_cur.add_argument("--methods", default="lower,upper,mc",
                       help="comma-separated subset of lower, upper, mc")
    p_cur.set_defaults(func=cmd_curve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FademacError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
