"""Command-line front end: certify instances, sweep radii, run oracles.

Subcommands
    certify  predicates plus SDP / BM2 solves on one instance file
    sweep    tightness curve over a radius grid, CSV or JSON rows
    project  axial cap projection (JSON)
    oracle   brute-force ball oracle on a tiny instance (JSON)
    attack   projected-gradient upper bound for a halfspace goal (JSON)

Exit codes: 0 solved/ok, 1 usage or I/O error, 2 infeasible. An attack that
finds nothing exits 0 with ``status: no_attack_found`` in the report; absence
of an attack is not an infeasibility proof.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from typing import List, Optional

import numpy as np

from .bm2 import BM2Config, bm2_solve
from .errors import ExtractionError, InfeasibleTargetError, ParseError
from .geometry import project_cap_axial
from .network import (Ball, CertInstance, Halfspace, Network,
                      ball_from_halfspace, forward, load_instance,
                      load_network, truncate)
from .oracle import brute_force_ball, pgd_attack
from .sdp import build_relaxation, eigen_verdict, extract_candidate, solve_sdp
from .tightness import (layer_tight_sufficient, multilayer_trivial_tight,
                        neuron_tight)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

CSV_FIELDS = ["rho", "instance", "L_lb", "L_oracle", "eigen_ratio", "tight",
              "bm2_status", "wall_ms"]


class CliError(Exception):
    """Fatal CLI failure carrying its exit code."""

    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # usage errors must exit 1; argparse's default is 2, which is reserved
    # for infeasible reports
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _read_file(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}") from e


def _write_out(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as e:
        raise CliError(f"cannot write {out}: {e.strerror}") from e


def _load_pair(network_path: str, instance_path: str) -> CertInstance:
    try:
        net = load_network(_read_file(network_path))
        return load_instance(_read_file(instance_path), net)
    except ParseError as e:
        raise CliError(str(e)) from e


def _num(x) -> str:
    """CSV cell for a float; inf survives, None becomes an empty cell."""
    if x is None:
        return ""
    x = float(x)
    if math.isinf(x):
        return "inf"
    if math.isnan(x):
        return "nan"
    return repr(x)


def _rows_to_csv(rows: List[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


# ---------------------------------------------------------------------------
# certify


def _bm2_config(args) -> Optional[BM2Config]:
    overrides = {}
    if args.bm2_tol is not None:
        overrides["rel_tol"] = args.bm2_tol
    if args.bm2_max_iter is not None:
        overrides["inner_max_iter"] = args.bm2_max_iter
    if args.bm2_restarts is not None:
        overrides["restarts"] = args.bm2_restarts
    return BM2Config(**overrides) if overrides else None


def _run_predicates(instance: CertInstance) -> dict:
    out = {}
    goal = instance.goal
    if not isinstance(goal, Ball):
        return out
    net, x_hat = instance.net, instance.x_hat
    out["trivial_radius"] = multilayer_trivial_tight(
        net, x_hat, goal.z_hat, goal.rho).to_dict()
    if net.depth == 1:
        W, b = net.layers[0]
        try:
            out["layer_sufficient"] = layer_tight_sufficient(
                W, x_hat, goal.z_hat, goal.rho, bias=b).to_dict()
        except ValueError:
            pass  # rank-deficient layer: the sufficient test does not apply
        canonical = (net.input_dim == 1 and W.shape == (1, 1)
                     and W[0, 0] == 1.0 and b[0] == 0.0)
        if canonical:
            out["neuron"] = neuron_tight(
                float(x_hat[0]), float(goal.z_hat[0]), goal.rho).to_dict()
    return out


def cmd_certify(args) -> int:
    instance = _load_pair(args.network, args.instance)
    t_start = time.perf_counter()
    report = {"method": args.method, "predicates": _run_predicates(instance)}
    preds = report["predicates"]

    verdict = None
    witness = None
    witness_source = None
    l_lb = None

    neuron = preds.get("neuron")
    if neuron is not None and neuron["reason"] == "infeasible":
        verdict = "infeasible"
    for name in ("neuron", "layer_sufficient", "trivial_radius"):
        p = preds.get(name)
        if verdict is None and p is not None and p["status"] == "tight":
            verdict = "tight"
            if p["witness"] is not None:
                witness = p["witness"]
                witness_source = name
            break
    if verdict is None and neuron is not None and neuron["status"] == "loose":
        verdict = "loose"

    sol = None
    if args.method in ("sdp", "both"):
        sol = solve_sdp(build_relaxation(instance), tol=args.tol)
        report["sdp"] = sol.to_dict()
        l_lb = None if not math.isfinite(sol.l_lb) else sol.l_lb
        if sol.status == "infeasible":
            verdict = "infeasible"
        elif verdict is None:
            verdict = eigen_verdict(sol)
        if witness is None and sol.status != "infeasible":
            try:
                ext = extract_candidate(sol)
                if ext.feasible:
                    witness = [float(v) for v in ext.x]
                    witness_source = "sdp_extraction"
            except ExtractionError:
                pass

    if args.method in ("bm2", "both"):
        ball_instance = instance
        if not isinstance(instance.goal, Ball):
            try:
                ball_instance = ball_from_halfspace(instance)
            except ValueError as e:
                if args.method == "bm2":
                    raise CliError(f"bm2 needs a ball goal: {e}") from e
                ball_instance = None
        if ball_instance is None:
            report["bm2"] = {"status": "skipped",
                             "reason": "halfspace goal without a conversion radius"}
        else:
            res = bm2_solve(ball_instance, seed=args.seed, config=_bm2_config(args))
            report["bm2"] = res.to_dict()
            if verdict is None:
                verdict = "tight" if res.status == "global_certified" else "indeterminate"
            if witness is None and res.status == "global_certified":
                witness = [float(v) for v in res.state.u[0]]
                witness_source = "bm2"

    report["verdict"] = verdict
    report["l_lb"] = l_lb
    report["witness"] = witness
    report["witness_source"] = witness_source
    wall_ms = int(round((time.perf_counter() - t_start) * 1000.0))
    report["wall_ms"] = wall_ms

    if args.format == "csv":
        goal = instance.goal
        rho = goal.rho if goal.rho is not None else None
        row = {"rho": _num(rho), "instance": "0", "L_lb": _num(l_lb),
               "L_oracle": "",
               "eigen_ratio": _num(sol.min_eigen_ratio) if sol is not None else "",
               "tight": "true" if verdict == "tight" else "false",
               "bm2_status": report.get("bm2", {}).get("status", ""),
               "wall_ms": str(wall_ms)}
        _write_out(_rows_to_csv([row]), args.out)
    else:
        _write_out(_json_text(report), args.out)
    return EXIT_INFEASIBLE if verdict == "infeasible" else EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(args) -> int:
    try:
        net = load_network(_read_file(args.network))
    except ParseError as e:
        raise CliError(str(e)) from e
    k = net.depth if args.layers is None else args.layers
    if not 1 <= k <= net.depth:
        raise CliError(f"--layers {k} out of range for a depth-{net.depth} network")
    if not args.rho_min < args.rho_max:
        raise CliError("--rho-min must be strictly below --rho-max")
    if args.rho_min <= 0:
        raise CliError("radii must be positive")
    if args.steps < 2:
        raise CliError("--steps must be at least 2")
    if args.instances < 1:
        raise CliError("--instances must be at least 1")

    sub = truncate(net, k)
    rng = np.random.default_rng(args.seed)
    anchors = rng.uniform(0.0, 1.0, (args.instances + 1, sub.input_dim))
    # chained protocol: instance i's target is the image of the previous anchor
    targets = [forward(sub, anchors[i])[0][-1] for i in range(args.instances)]

    if args.log:
        rhos = np.logspace(math.log10(args.rho_min), math.log10(args.rho_max), args.steps)
    else:
        rhos = np.linspace(args.rho_min, args.rho_max, args.steps)

    brute_ok = sub.input_dim <= 3 and max(sub.dims[:-1]) <= 4
    if args.with_oracle and not brute_ok:
        raise CliError("--with-oracle needs input dim <= 3 and widths <= 4")

    rows: List[dict] = []
    for rho in rhos:
        tight_count = 0
        for i in range(args.instances):
            inst = CertInstance(net=sub, x_hat=anchors[i + 1],
                                goal=Ball(z_hat=targets[i], rho=float(rho)))
            t0 = time.perf_counter()
            sol = solve_sdp(build_relaxation(inst), tol=args.tol)
            verdict = eigen_verdict(sol)
            bm2_status = ""
            if args.bm2:
                bm2_status = bm2_solve(inst, seed=args.seed,
                                       config=_bm2_config(args)).status
            wall = 0 if args.no_timing else int(round((time.perf_counter() - t0) * 1000.0))
            l_oracle = None
            if args.with_oracle:
                orc = brute_force_ball(inst)
                l_oracle = orc.value if orc.status == "ok" else math.inf
            tight = verdict == "tight"
            tight_count += tight
            rows.append({"rho": _num(rho), "instance": str(i),
                         "L_lb": _num(sol.l_lb), "L_oracle": _num(l_oracle),
                         "eigen_ratio": _num(sol.min_eigen_ratio),
                         "tight": "true" if tight else "false",
                         "bm2_status": bm2_status, "wall_ms": str(wall)})
        rows.append({"rho": _num(rho), "instance": "summary", "L_lb": "",
                     "L_oracle": "", "eigen_ratio": "",
                     "tight": _num(tight_count / args.instances),
                     "bm2_status": "", "wall_ms": ""})

    if args.format == "json":
        _write_out(_json_text(rows), args.out)
    else:
        _write_out(_rows_to_csv(rows), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# project / oracle / attack


def cmd_project(args) -> int:
    if args.format == "csv":
        raise CliError("project emits JSON only")
    try:
        proj = project_cap_axial(args.z_hat, args.rho, args.x_hat)
    except InfeasibleTargetError as e:
        _write_out(_json_text({"status": "infeasible", "message": str(e)}), args.out)
        return EXIT_INFEASIBLE
    _write_out(_json_text({"distance": proj.distance, "collinear": proj.collinear,
                           "x_star": proj.x_star_axis}), args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.format == "csv":
        raise CliError("oracle emits JSON only")
    instance = _load_pair(args.network, args.instance)
    if not isinstance(instance.goal, Ball):
        raise CliError("the brute-force oracle needs a ball goal")
    try:
        res = brute_force_ball(instance, grid_points_per_dim=args.grid_points,
                               refine_tol=args.refine_tol)
    except ValueError as e:
        raise CliError(str(e)) from e
    doc = {"value": None if not math.isfinite(res.value) else res.value,
           "argmin": None if res.argmin is None else [float(v) for v in res.argmin],
           "method": res.method, "status": res.status}
    _write_out(_json_text(doc), args.out)
    return EXIT_INFEASIBLE if res.status == "infeasible" else EXIT_OK


def cmd_attack(args) -> int:
    if args.format == "csv":
        raise CliError("attack emits JSON only")
    instance = _load_pair(args.network, args.instance)
    if not isinstance(instance.goal, Halfspace):
        raise CliError("the projected-gradient attack needs a halfspace goal")
    res = pgd_attack(instance, steps=args.steps, step_size=args.step_size,
                     seed=args.seed)
    doc = {"d_ub": None if not math.isfinite(res.value) else res.value,
           "argmin": None if res.argmin is None else [float(v) for v in res.argmin],
           "status": res.status}
    _write_out(_json_text(doc), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--tol", type=float, default=1e-8,
                   help="SDP solve tolerance (default 1e-8)")
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("--format", choices=["json", "csv"], default=None,
                   help="output format (certify/sweep; others emit JSON)")


def _add_bm2_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bm2-tol", type=float, default=None,
                   help="BM2 relative stopping tolerance")
    p.add_argument("--bm2-max-iter", type=int, default=None,
                   help="BM2 iteration cap per inner minimization")
    p.add_argument("--bm2-restarts", type=int, default=None,
                   help="BM2 restart budget")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relucert",
                     description="SDP tightness certification for small ReLU networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", parents=[], help="certify one instance")
    p.add_argument("--network", required=True, help="network JSON file")
    p.add_argument("--instance", required=True, help="instance JSON file")
    p.add_argument("--method", choices=["sdp", "bm2", "both"], default="sdp")
    _add_common(p)
    _add_bm2_flags(p)
    p.set_defaults(func=cmd_certify, default_format="json")

    p = sub.add_parser("sweep", help="radius sweep to CSV")
    p.add_argument("--network", required=True, help="network JSON file")
    p.add_argument("--layers", type=int, default=None,
                   help="certify the first K layers (default: all)")
    p.add_argument("--rho-min", type=float, required=True)
    p.add_argument("--rho-max", type=float, required=True)
    p.add_argument("--steps", type=int, default=8, help="grid size (default 8)")
    p.add_argument("--log", action="store_true", help="log-spaced radius grid")
    p.add_argument("--instances", type=int, default=3,
                   help="instances per radius (default 3)")
    p.add_argument("--bm2", action="store_true",
                   help="also run BM2 and fill bm2_status")
    p.add_argument("--with-oracle", action="store_true",
                   help="fill L_oracle by brute force (tiny nets only)")
    p.add_argument("--no-timing", action="store_true",
                   help="write wall_ms=0 for byte-reproducible output")
    _add_common(p)
    _add_bm2_flags(p)
    p.set_defaults(func=cmd_sweep, default_format="csv")

    p = sub.add_parser("project", help="axial cap projection")
    p.add_argument("--z-hat", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--x-hat", type=float, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_project, default_format="json")

    p = sub.add_parser("oracle", help="brute-force ball oracle")
    p.add_argument("--network", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--grid-points", type=int, default=41,
                   help="grid points per input dimension (default 41)")
    p.add_argument("--refine-tol", type=float, default=1e-9)
    _add_common(p)
    p.set_defaults(func=cmd_oracle, default_format="json")

    p = sub.add_parser("attack", help="projected-gradient distance upper bound")
    p.add_argument("--network", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--step-size", type=float, default=0.05)
    _add_common(p)
    p.set_defaults(func=cmd_attack, default_format="json")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = args.default_format
    try:
        return args.func(args)
    except CliError as e:
        print(f"relucert: error: {e}", file=sys.stderr)
        return e.code
    except ParseError as e:
        print(f"relucert: error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
