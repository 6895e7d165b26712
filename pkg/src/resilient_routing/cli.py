"""Command-line front end.

Exit codes: 0 fully transferring (or success), 1 malformed input, 2 validation
failure, 3 not fully transferring, 4 not converged.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import equilibrium as eq
from .dynamics import (NonFiniteState, Perturbation, SimConfig, random_initial_flow, simulate,
                       simulate_cascade)
from .network import (FlowNetwork, MalformedInput, NetworkError,
                      is_admissible_equilibrium, min_cut_capacity, network_from_dict,
                      node_residual_capacity)
from .resilience import price_of_anarchy, strong_resilience_probe
from .routing import DensityCappedExp, LocallyResponsiveExp, LogitPolicy, policy_from_dict

EXIT_OK = 0
EXIT_MALFORMED = 1
EXIT_INVALID = 2
EXIT_NOT_TRANSFERRING = 3
EXIT_NOT_CONVERGED = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class Scenario:
    net: FlowNetwork
    policy: Optional[LogitPolicy]
    pert: Perturbation
    initial_flow: Optional[np.ndarray]
    f_star: Optional[list]
    cfg: SimConfig
    cascade: bool
    raw: dict


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise CliError(f"no such file: {path}", EXIT_MALFORMED) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})", EXIT_MALFORMED) from exc


def _network_doc(doc: dict, base: Path) -> dict:
    """A scenario either embeds its network, points to a file, or is a network itself."""
    if "links" in doc:
        return doc
    ref = doc.get("network")
    if isinstance(ref, dict):
        return ref
    if isinstance(ref, str):
        return _read_json(str(base / ref))
    raise CliError("scenario has no network", EXIT_MALFORMED)


def _initial_flow(source, net: FlowNetwork, f_star, seed: int) -> Optional[np.ndarray]:
    if source is None or source == "equilibrium":
        if f_star is None:
            if source is None:
                return None
            raise CliError("initial flow 'equilibrium' needs an f_star entry", EXIT_INVALID)
        return np.asarray(f_star, dtype=float)
    if isinstance(source, str) and source.startswith("random"):
        _, _, tail = source.partition(":")
        rng = np.random.default_rng(int(tail) if tail else seed)
        return random_initial_flow(net, rng)
    if isinstance(source, list):
        f = np.asarray(source, dtype=float)
        if f.shape != (net.topology.link_count,):
            raise CliError("initial flow has the wrong length", EXIT_INVALID)
        return f
    raise CliError(f"unrecognized initial flow {source!r}", EXIT_MALFORMED)


def _config(doc: dict, args) -> SimConfig:
    fields = dict(doc.get("config", {}))
    if args.step is not None:
        fields["step"] = args.step
    if args.horizon is not None:
        fields["horizon"] = args.horizon
    allowed = set(SimConfig.__dataclass_fields__)
    unknown = set(fields) - allowed
    if unknown:
        raise CliError(f"unknown config keys {sorted(unknown)}", EXIT_MALFORMED)
    return SimConfig(**fields)


def load_scenario(path: str, args, exact: bool = False) -> Scenario:
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise CliError("scenario must be a JSON object", EXIT_MALFORMED)
    base = Path(path).parent
    net = network_from_dict(_network_doc(doc, base), exact)
    f_star = doc.get("f_star")
    if f_star is None and isinstance(doc.get("policy"), dict):
        f_star = doc["policy"].get("f_star")
    if f_star is not None:
        if not isinstance(f_star, list) or len(f_star) != net.topology.link_count:
            raise CliError("f_star must list one flow per link", EXIT_INVALID)
    policy = policy_from_dict(doc["policy"], net) if "policy" in doc else None
    pert = Perturbation.from_dict(doc.get("perturbation"))
    pert.check(net)
    init = _initial_flow(doc.get("initial_flow"), net, f_star, args.seed)
    cascade = bool(doc.get("cascade", isinstance(policy, DensityCappedExp)))
    return Scenario(net, policy, pert, init, f_star, _config(doc, args), cascade, doc)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _run_sim(sc: Scenario, cascade: bool):
    if sc.policy is None:
        raise CliError("scenario has no policy", EXIT_MALFORMED)
    if sc.initial_flow is None:
        raise CliError("scenario has no initial flow", EXIT_MALFORMED)
    try:
        if cascade:
            return simulate_cascade(sc.net, sc.policy, sc.pert, sc.initial_flow, sc.cfg)
        return simulate(sc.net, sc.policy, sc.pert, sc.initial_flow, sc.cfg)
    except NonFiniteState as exc:
        raise CliError(str(exc), EXIT_NOT_CONVERGED) from exc


def _sim_exit(result) -> int:
    if not result.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK if result.fully_transferring else EXIT_NOT_TRANSFERRING


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args, force_cascade: bool = False) -> int:
    sc = load_scenario(args.scenario, args)
    result = _run_sim(sc, force_cascade or sc.cascade)
    out = _out_dir(args)
    result.write_trace_csv(out / "trace.csv")
    result.write_summary_json(out / "summary.json")
    print(f"{result.verdict} lim_lambda_n={result.lim_lambda_n:.6f} "
          f"converged={result.converged} t={result.t_final:g}")
    return _sim_exit(result)


def cmd_cascade(args) -> int:
    return cmd_simulate(args, force_cascade=True)


def cmd_analyze(args) -> int:
    sc = load_scenario(args.scenario, args, exact=True)
    f_star = sc.f_star
    if args.f_star is not None:
        f_star = json.loads(args.f_star) if args.f_star.lstrip().startswith("[") \
            else _read_json(args.f_star)
        if isinstance(f_star, dict):
            f_star = f_star.get("f")
    if f_star is None:
        raise CliError("analyze needs an f_star", EXIT_MALFORMED)
    try:
        exact_f = [Fraction(str(x)) for x in f_star]
    except (TypeError, ValueError) as exc:
        raise CliError(f"f_star entries must be numbers: {exc}", EXIT_MALFORMED) from exc
    if len(exact_f) != sc.net.topology.link_count:
        raise CliError("f_star must list one flow per link", EXIT_INVALID)
    report = is_admissible_equilibrium(sc.net, [float(x) for x in exact_f])
    if not report.admissible:
        raise CliError("f_star is not admissible: " + "; ".join(report.violations), EXIT_INVALID)
    cut = min_cut_capacity(sc.net)
    resid = node_residual_capacity(sc.net, exact_f)
    gap = cut.capacity - sc.net.inflow - resid.value
    data = {
        "inflow": float(sc.net.inflow),
        "C": float(cut.capacity), "C_exact": str(cut.capacity),
        "R": float(resid.value), "R_exact": str(resid.value),
        "gap": float(gap), "gap_exact": str(gap),
        "argmin_node": resid.argmin_node,
        "cut_nodes": sorted(cut.cut_node_set), "cut_links": list(cut.crossing_links),
    }
    try:
        float_net = network_from_dict(_network_doc(sc.raw, Path(args.scenario).parent))
        data["price_of_anarchy"] = price_of_anarchy(float_net, [float(x) for x in exact_f])
    except eq.Infeasible:
        data["price_of_anarchy"] = None
    _write_json(_out_dir(args) / "analysis.json", data)
    print(f"C={data['C_exact']} R={data['R_exact']} gap={data['gap_exact']} "
          f"argmin_node={resid.argmin_node}")
    return EXIT_OK


def cmd_probe(args) -> int:
    sc = load_scenario(args.scenario, args)
    if sc.policy is None or sc.f_star is None:
        raise CliError("probe needs a policy and an f_star", EXIT_MALFORMED)
    report = strong_resilience_probe(sc.net, sc.policy, sc.f_star, sc.cfg, args.bracket_tol)
    out = _out_dir(args)
    report.write_json(out / "probe.json")
    report.write_probe_csv(out / "probe.csv")
    lo, hi = report.bracket
    print(f"R={report.analytic_R:g} threshold in [{lo:.6g}, {hi:.6g}] at node {report.argmin_node}")
    return EXIT_OK


def _float_net(args) -> FlowNetwork:
    doc = _read_json(args.scenario)
    return network_from_dict(_network_doc(doc, Path(args.scenario).parent))


def cmd_optimize_r(args) -> int:
    res = eq.maximize_resilience(_float_net(args))
    _write_json(_out_dir(args) / "optimize_r.json", res.to_dict())
    print(f"R*={res.objective:.10g} f={np.round(res.f_opt, 10).tolist()}")
    return EXIT_OK


def cmd_optimize_d(args) -> int:
    res = eq.min_delay_with_resilience(_float_net(args), args.b)
    _write_json(_out_dir(args) / "optimize_d.json", res.to_dict())
    print(f"D={res.objective:.10g} f={np.round(res.f_opt, 6).tolist()} "
          f"b_effective={res.extra['b_effective']:.10g}")
    return EXIT_OK


def cmd_wardrop(args) -> int:
    res = eq.wardrop_equilibrium(_float_net(args))
    _write_json(_out_dir(args) / "wardrop.json", res.to_dict())
    print(f"f_W={np.round(res.f, 8).tolist()} kkt_residual={res.kkt_residual:.3g}")
    return EXIT_OK


def cmd_tolls(args) -> int:
    net = _float_net(args)
    target = _read_json(args.target)
    if isinstance(target, dict):
        target = target.get("f")
    if not isinstance(target, list):
        raise CliError("toll target must be a list of flows or {\"f\": [...]}", EXIT_MALFORMED)
    res = eq.synthesize_tolls(net, target, args.factor)
    _write_json(_out_dir(args) / "tolls.json", res.to_dict())
    print(f"tolls={np.round(res.tolls, 8).tolist()} residual={res.residual:.3g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    if args.kind in ("delay", "fig3"):
        net = _float_net(args)
        rows = eq.resilience_delay_sweep(net, args.points)
        path = out / "sweep_delay.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["b", "b_effective", "D_star", "R_of_f"]
                       + [f"f_{e}" for e in range(net.topology.link_count)])
            for r in rows:
                w.writerow([repr(r.extra["b"]), repr(r.extra["b_effective"]), repr(r.objective),
                            repr(r.extra["R_of_f"])] + [repr(float(x)) for x in r.f_opt])
        print(f"wrote {len(rows)} rows to {path}")
        return EXIT_OK

    sc = load_scenario(args.scenario, args)
    if not isinstance(sc.policy, LocallyResponsiveExp) or sc.f_star is None:
        raise CliError("eta sweep needs an lr_exp or lr_exp_capped policy with f_star", EXIT_MALFORMED)
    try:
        values = [float(x) for x in args.values.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(f"bad --values: {exc}", EXIT_MALFORMED) from exc
    path = out / "sweep_eta.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta", "verdict", "lim_lambda_n", "converged", "shut_links"])
        for eta in values:
            policy = type(sc.policy).from_equilibrium(sc.net, sc.f_star, eta)
            res = _run_sim(replace(sc, policy=policy), sc.cascade)
            verdict = "pass" if res.fully_transferring else "fail"
            w.writerow([repr(eta), verdict, repr(res.lim_lambda_n), res.converged,
                        " ".join(str(e) for e in res.shut_links)])
            print(f"eta={eta:g} {verdict} lim_lambda_n={res.lim_lambda_n:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(42), help="seed for all randomness")
    parser.add_argument("--out", default=d("out"), help="output directory")
    parser.add_argument("--step", type=float, default=d(None), help="RK4 step size")
    parser.add_argument("--horizon", type=float, default=d(None), help="simulation horizon")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resilient-routing",
                                     description="Dynamical flow network analysis and simulation.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, source="scenario"):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        p.add_argument("scenario", help=f"{source} JSON file")
        p.set_defaults(func=fn)
        return p

    add("simulate", cmd_simulate, "integrate a scenario and write trace.csv / summary.json")
    add("cascade", cmd_cascade, "simulate with finite-density shutdowns")
    p = add("analyze", cmd_analyze, "min cut, node residual capacity and their gap",
            "scenario or network")
    p.add_argument("--f-star", help="JSON list or file with the equilibrium flow")
    p = add("probe", cmd_probe, "bracket the strong resilience empirically")
    p.add_argument("--bracket-tol", type=float, default=None)
    add("optimize-r", cmd_optimize_r, "most resilient equilibrium", "network")
    p = add("optimize-d", cmd_optimize_d, "least-delay equilibrium with R(f) >= b", "network")
    p.add_argument("--b", type=float, required=True)
    add("wardrop", cmd_wardrop, "Wardrop equilibrium", "network")
    p = add("tolls", cmd_tolls, "tolls inducing a target equilibrium", "network")
    p.add_argument("--target", required=True, help="JSON file with the desired flow")
    p.add_argument("--factor", type=float, default=None, help="toll scale (>= minimum ratio)")
    p = add("sweep", cmd_sweep, "resilience/delay trade-off sweep or eta sweep", "network or scenario")
    # "fig3" is kept as an alias of "delay" for older scripts
    p.add_argument("--kind", choices=["delay", "fig3", "eta"], required=True)
    p.add_argument("--points", type=int, default=16)
    p.add_argument("--values", default="0.1,0.2,0.3,0.5")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_MALFORMED if exc.code else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except MalformedInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except (NetworkError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
