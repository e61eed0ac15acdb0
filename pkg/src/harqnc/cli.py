"""Command-line front end.

Exit codes: 0 success, 2 invalid input (scenario, flags, unsupported
dimension), 3 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, dp_oracle
from .channel import DECISION_NAMES
from .encoder import REASON_NAMES
from .estimator import EstimationError
from .lqr import RiccatiError
from .model import PolicySpec, ScenarioError, load_scenario
from .sim import InvariantViolation, Prepared, monte_carlo, simulate_batch

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _header(path: Path, seed) -> dict:
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    return {"tool": "harqnc", "version": __version__, "scenario_sha256": digest, "seed": seed}


def _csv_text(meta: dict, header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _emit(text: str, output: str | None):
    if output is None or output == "-":
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _fmt(x) -> str:
    return repr(float(x))


def _policies(args, cfg) -> list[PolicySpec]:
    names = args.policy.split(",") if args.policy else [str(cfg.policy)]
    out = []
    for name in names:
        spec = PolicySpec.parse(name)
        if args.delta_mode == "exact" and spec.name == "harq_optimal":
            spec = PolicySpec("harq_optimal_exact_delta")
        out.append(spec)
    return out


def _load(args):
    path = Path(args.scenario_path or args.scenario or "")
    if not (args.scenario_path or args.scenario):
        raise UsageError("missing scenario path")
    if not path.exists():
        raise UsageError(f"scenario file not found: {path}")
    cfg = load_scenario(path)
    overrides = {"seed": getattr(args, "seed", None), "runs": getattr(args, "runs", None)}
    return path, cfg.with_overrides(**overrides)


def cmd_validate(args) -> int:
    path = Path(args.scenario_path or args.scenario or "")
    try:
        load_scenario(path)
        violations = []
    except ScenarioError as exc:
        violations = exc.violations or [str(exc)]
    for v in violations:
        print(v)
    print(f"{len(violations)} violations")
    return EXIT_OK if not violations else EXIT_INVALID


def cmd_simulate(args) -> int:
    path, cfg = _load(args)
    policy = _policies(args, cfg)[0]
    if policy.name == "harq_optimal_exact_delta" and not cfg.is_scalar:
        raise dp_oracle.UnsupportedDimension("exact delta mode needs a scalar scenario (n = p = 1)")
    prep = Prepared(cfg)
    trace = simulate_batch(prep, [args.run_index], policy, record=True, check=True).trace(0)
    meta = _header(path, cfg.seed) | {"policy": str(policy), "run_index": args.run_index}
    n, m = cfg.system.n, cfg.system.m
    if args.format == "json":
        doc = {"meta": meta, "loss": trace.loss, "tx": trace.tx_count, "rtx": trace.rtx_count,
               "pl": trace.pl_count, "x": trace.x.tolist(), "a": trace.a.tolist(),
               "u": [DECISION_NAMES[int(v)] for v in trace.u], "gamma": trace.gamma.tolist(),
               "tau": trace.tau.tolist(), "stage_cost": trace.stage_cost.tolist()}
        _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.output)
        return EXIT_OK
    header = (["k"] + [f"x{i}" for i in range(n)] + [f"xhat{i}" for i in range(n)] + [f"a{i}" for i in range(m)]
              + ["u", "gamma", "tau", "omega_count", "fading_state", "lambda_used", "delivered_origin_time",
                 "z_status", "stage_cost", "Omega", "Delta", "e_tilde_norm", "eps_norm", "e_hat_norm", "reason"])
    rows = []
    for k in range(trace.N + 1):
        rows.append([k] + [_fmt(v) for v in trace.x[k]] + [_fmt(v) for v in trace.x_hat[k]]
                    + [_fmt(v) for v in trace.a[k]]
                    + [DECISION_NAMES[int(trace.u[k])], int(trace.gamma[k]), int(trace.tau[k]), int(trace.tau[k]),
                       int(trace.fading[k]), _fmt(trace.lam[k]), int(trace.delivered_origin[k]),
                       "delivered" if trace.gamma[k] else "erased", _fmt(trace.stage_cost[k]),
                       _fmt(trace.omega[k]), _fmt(trace.delta[k]), _fmt(trace.e_tilde_norm[k]),
                       _fmt(trace.eps_norm[k]), _fmt(trace.e_hat_norm[k]), REASON_NAMES[int(trace.reason[k])]])
    k = trace.N + 1
    # terminal state row: only x and the terminal cost
    rows.append([k] + [_fmt(v) for v in trace.x[k]] + [""] * (n + m + 8) + [_fmt(trace.stage_cost[k])] + [""] * 6)
    _emit(_csv_text(meta, header, rows), args.output)
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    path, cfg = _load(args)
    policies = _policies(args, cfg)
    if any(p.name == "harq_optimal_exact_delta" for p in policies) and not cfg.is_scalar:
        raise dp_oracle.UnsupportedDimension("exact delta mode needs a scalar scenario (n = p = 1)")
    summary, runs = monte_carlo(cfg, policies, workers=args.workers, return_runs=True)
    meta = _header(path, cfg.seed) | {"runs": cfg.runs}
    if args.format == "json":
        _emit(json.dumps({"meta": meta, **summary}, indent=2, sort_keys=True) + "\n", args.output)
    else:
        rows = []
        for pol in summary["policies"]:
            for group in ("loss", "counts", "forced", "erasure"):
                for key, value in pol[group].items():
                    if isinstance(value, dict):
                        rows.extend([pol["policy"], f"{group}.{key}.{q}", _fmt(v)] for q, v in value.items())
                    else:
                        rows.append([pol["policy"], f"{group}.{key}", _fmt(value)])
        for pair in summary.get("paired", []):
            tag = f"{pair['a']}-{pair['b']}"
            rows.append([tag, "paired.mean_diff", _fmt(pair["mean_diff"])])
            rows.append([tag, "paired.se_diff", _fmt(pair["se_diff"])])
        _emit(_csv_text(meta, ["policy", "statistic", "value"], rows), args.output)
    if args.per_run:
        header = ["run"] + [f"loss[{r.policy}]" for r in runs]
        rows = [[i] + [_fmt(r.loss[i]) for r in runs] for i in range(cfg.runs)]
        Path(args.per_run).write_text(_csv_text(meta, header, rows))
    return EXIT_OK


def cmd_dp_oracle(args) -> int:
    path, cfg = _load(args)
    model = dp_oracle.ScalarModel.from_config(cfg)
    grids = dp_oracle.backward_pass(model, args.c1, args.c2, args.c4)
    meta = _header(path, cfg.seed) | {"c1": args.c1, "c2": args.c2, "c4": args.c4}
    header = ["k", "tau", "fading_state", "e_tilde", "eps", "value", "decision"]
    rows = [row for g in grids for row in dp_oracle.grid_rows(g)]
    _emit(_csv_text(meta, header, rows), args.output)
    return EXIT_OK


def cmd_dump_gains(args) -> int:
    path, cfg = _load(args)
    prep = Prepared(cfg)
    g = prep.gains
    n, m = cfg.system.n, cfg.system.m
    header = (["t"] + [f"S{i}{j}" for i in range(n) for j in range(n)]
              + [f"L{i}{j}" for i in range(m) for j in range(n)])
    rows = []
    for t in range(cfg.N + 2):
        L = [_fmt(v) for v in g.L[t].ravel()] if t <= cfg.N else [""] * (m * n)
        rows.append([t] + [_fmt(v) for v in g.S[t].ravel()] + L)
    _emit(_csv_text(_header(path, cfg.seed), header, rows), args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="harqnc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"harqnc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, runs=False, policy=True, fmt=("csv", "json"), workers=False):
        p.add_argument("scenario_path", nargs="?", help="scenario JSON file")
        p.add_argument("--scenario", help="scenario JSON file (alternative to the positional)")
        p.add_argument("--seed", type=int)
        p.add_argument("--output", "-o", help="output file (default stdout)")
        if fmt:
            p.add_argument("--format", choices=fmt, default=fmt[0])
        if policy:
            p.add_argument("--policy", help="policy name, or comma-separated list for montecarlo")
            p.add_argument("--delta-mode", choices=("zero", "exact"), default="zero")
        if runs:
            p.add_argument("--runs", type=int)
        if workers:
            p.add_argument("--workers", type=int, help="worker processes (env HARQ_NC_WORKERS)")

    p = sub.add_parser("validate", help="check a scenario and list violations")
    p.add_argument("scenario_path", nargs="?")
    p.add_argument("--scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="one run, per-step trace")
    common(p)
    p.add_argument("--run-index", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="loss statistics over many runs")
    common(p, runs=True, fmt=("json", "csv"), workers=True)
    p.add_argument("--per-run", help="also write per-run losses to this CSV file")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("dp-oracle", help="grid value and decision maps (scalar scenarios only)")
    common(p, policy=False, fmt=None)
    p.add_argument("--c1", type=int, default=201)
    p.add_argument("--c2", type=int, default=201)
    p.add_argument("--c4", type=int, default=33)
    p.set_defaults(func=cmd_dp_oracle)

    p = sub.add_parser("dump-gains", help="Riccati S and gain L schedules as CSV")
    common(p, policy=False, fmt=None)
    p.set_defaults(func=cmd_dump_gains)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, UsageError, dp_oracle.UnsupportedDimension) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (RiccatiError, EstimationError, InvariantViolation, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
