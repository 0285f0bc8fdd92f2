"""``mppctl`` command line: solve, simulate, evaluate, oracle and verify.

Exit status is 0 on success, 1 when a verification check fails and 2 on usage
or configuration errors.  Reports are JSON with sorted keys, so equal inputs
give byte-identical output.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import bsde, control, girsanov
from .errors import MppControlError, NoConvergence
from .hamiltonian import policy_from_value
from .hjb import hjb_march, hjb_picard
from .model import ModelSpec, beta_thresholds, load_model, validate_model
from .sim import dump_trajectories, simulate_controlled_batch, simulate_reference_batch

BUILTIN_PREFIX = "builtin:"


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    n = int(text)
    if n <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return n


def _positive_float(text: str) -> float:
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return x


def _resolve_model(ref: str) -> ModelSpec:
    if ref.startswith(BUILTIN_PREFIX):
        name = ref[len(BUILTIN_PREFIX):]
        res = resources.files("mppctl") / "data" / f"{name}.json"
        if not res.is_file():
            raise UsageError(f"--model: no built-in model named {name!r}")
        return validate_model(ModelSpec.from_dict(json.loads(res.read_text(encoding="utf-8"))))
    path = Path(ref)
    if not path.is_file():
        raise UsageError(f"--model: file not found: {ref}")
    try:
        return load_model(path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"--model: cannot parse {ref}: {exc}") from exc


def _seed(args) -> int:
    env = os.environ.get("MPPCTL_SEED")
    if env is not None and env != "":
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"MPPCTL_SEED must be an integer, got {env!r}") from exc
    return args.seed


def _emit(args, payload) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _verdict(command: str, reports: list[dict], extra: dict | None = None) -> tuple[dict, int]:
    ok = all(r["pass"] for r in reports)
    body = {"command": command, "pass": ok, "reports": reports}
    if extra:
        body.update(extra)
    return body, 0 if ok else 1


def _optimal(model: ModelSpec, substeps: int):
    v = hjb_march(model, substeps)
    return v, policy_from_value(model, v)


def _start_states(model: ModelSpec, x0):
    return range(model.n_states) if x0 is None else [model.state_index(x0)]


# ---------------------------------------------------------------- subcommands

def cmd_solve(args) -> int:
    model = _resolve_model(args.model)
    info: dict = {"substeps": args.substeps, "method": args.method}
    if args.method == "picard":
        beta = args.beta if args.beta is not None else beta_thresholds(model).beta_hjb
        v, rep = hjb_picard(model, beta, tol=args.tol, substeps=args.substeps)
        info["convergence"] = json.loads(rep.to_json())
    else:
        v = hjb_march(model, args.substeps)
    policy = policy_from_value(model, v)
    info["v0"] = {s: float(v.values[0, x]) for x, s in enumerate(model.states)}
    info["policy_switches"] = int((np.diff(policy.table, axis=0) != 0).sum())
    if args.out:
        Path(args.out).write_text(v.to_csv(model.states), encoding="utf-8")
        sys.stdout.write(json.dumps(info, sort_keys=True, indent=2) + "\n")
    else:
        sys.stdout.write(v.to_csv(model.states))
    return 0


def cmd_simulate(args) -> int:
    model = _resolve_model(args.model)
    x0 = model.state_index(args.x0 if args.x0 is not None else 0)
    streams = np.arange(args.paths)
    if args.controlled:
        _, policy = _optimal(model, args.substeps)
        batch = simulate_controlled_batch(model, policy, 0.0, x0, streams, _seed(args), args.threads)
    else:
        batch = simulate_reference_batch(model, 0.0, x0, streams, _seed(args), args.threads)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            dump_trajectories(model, batch.trajectories(), fh)
    else:
        dump_trajectories(model, batch.trajectories(), sys.stdout)
    return 0


def cmd_evaluate(args) -> int:
    model = _resolve_model(args.model)
    v, policy = _optimal(model, args.substeps)
    seed = _seed(args)
    rows = []
    reports = []
    for x in _start_states(model, args.x0):
        d = control.mc_cost_direct(model, policy, 0.0, x, args.paths, seed, args.threads)
        r = control.mc_cost_reweighted(model, policy, 0.0, x, args.paths, seed, args.threads)
        target = float(v.values[0, x])
        rows.append({"start_state": model.states[x], "v0": target,
                     "direct": d.to_dict(), "reweighted": r.to_dict()})
        tol = 3 * d.std_error + 1e-3
        reports.append({"check": f"identification[{model.states[x]}]", "lhs": d.estimate, "rhs": target,
                        "tolerance": tol, "pass": abs(d.estimate - target) <= tol})
    body, code = _verdict("evaluate", reports, {"costs": rows, "seed": seed})
    _emit(args, body)
    return code


def cmd_oracle(args) -> int:
    model = _resolve_model(args.model)
    result = control.brute_force_value(model, args.coarse_cells)
    summary = result.summary(model)
    text = json.dumps(summary, sort_keys=True, indent=2) + "\n"
    if args.out:
        # CSV to the file, summary to stdout
        Path(args.out).write_text(result.to_csv(model.states), encoding="utf-8")
        sys.stdout.write(text)
    else:
        sys.stdout.write(result.to_csv(model.states))
        sys.stderr.write(text)
    return 0


def verify_girsanov(args, model) -> tuple[dict, int]:
    _, policy = _optimal(model, args.substeps)
    seed, x0 = _seed(args), model.state_index(args.x0 or 0)
    norm = girsanov.verify_normalization(model, policy, args.paths, seed, x0, threads=args.threads)
    mom = girsanov.verify_moment_bound(model, policy, args.paths, seed, x0, threads=args.threads)
    comp = girsanov.empirical_compensator_check(model, policy, args.paths, seed, x0, threads=args.threads)
    reports = [
        {"check": "normalization", "lhs": norm.estimate, "rhs": 1.0, "tolerance": 3 * norm.std_error,
         "pass": abs(norm.estimate - 1.0) <= 3 * norm.std_error},
        {"check": "second_moment", "lhs": mom.estimate, "rhs": mom.bound, "tolerance": 3 * mom.std_error,
         "pass": mom.estimate <= mom.bound + 3 * mom.std_error},
        {"check": "compensator", "lhs": comp.z_max, "rhs": 3.0, "tolerance": 0.0,
         "pass": comp.z_max <= 3.0, "direct": comp.direct, "reweighted": comp.reweighted},
    ]
    return _verdict("verify girsanov", reports, {"seed": seed, "n_paths": args.paths})


def verify_ito(args, model) -> tuple[dict, int]:
    seed = _seed(args)
    rng = np.random.default_rng(seed)
    batch = simulate_reference_batch(model, 0.0, model.state_index(args.x0 or 0),
                                     np.arange(args.paths), seed, args.threads)
    worst_p = worst_s = worst_ratio = 0.0
    failures = 0
    for traj in batch.trajectories():
        res = bsde.ito_identity_check(model, bsde.DriftField.random(model, rng),
                                      bsde.KernelField.random(model, rng),
                                      rng.uniform(-1.0, 1.0, model.n_states), traj)
        worst_p = max(worst_p, res.residual_prima)
        worst_s = max(worst_s, res.residual_seconda)
        worst_ratio = max(worst_ratio, max(res.residual_prima, res.residual_seconda) / res.tolerance)
        failures += not res.ok
    reports = [{"check": "ito_identity", "lhs": worst_ratio, "rhs": 1.0, "tolerance": 0.0,
                "pass": failures == 0, "max_residual_prima": worst_p, "max_residual_seconda": worst_s,
                "failures": failures}]
    return _verdict("verify ito", reports, {"seed": seed, "n_paths": args.paths})


def verify_bsde(args, model) -> tuple[dict, int]:
    s = args.substeps
    study = bsde.residual_convergence(model, (s, 3 * s, 10 * s), args.paths, _seed(args),
                                      model.state_index(args.x0 or 0), args.threads)
    # a scheme that is exact on this model leaves only round-off, which has no order
    exact = max(study.residual) <= 1e-10
    reports = [{"check": "bsde_residual_order", "lhs": study.slope, "rhs": 1.0, "tolerance": 0.5,
                "pass": exact or 0.8 <= study.slope <= 1.5, "exact": exact, **study.to_dict()}]
    return _verdict("verify bsde", reports, {"seed": _seed(args), "n_paths": args.paths})


def verify_energy(args, model) -> tuple[dict, int]:
    beta = args.beta if args.beta is not None else beta_thresholds(model).beta_bsde
    fhat = bsde.DriftField(model.running_cost[:, :, 0])
    rep = bsde.energy_identity_check(model, fhat, beta, args.paths, _seed(args),
                                     model.state_index(args.x0 or 0), args.threads)
    return _verdict("verify energy", [r.to_dict() for r in rep.reports()], {"seed": _seed(args)})


def verify_apriori(args, model) -> tuple[dict, int]:
    if args.model2:
        other = _resolve_model(args.model2)
    else:
        other = model.with_updates(running_cost=model.running_cost + args.perturb)
    beta = args.beta if args.beta is not None else beta_thresholds(model).beta_bsde
    rep = bsde.apriori_check(model, other, beta, args.paths, _seed(args),
                             model.state_index(args.x0 or 0), max(args.substeps, 1), args.threads)
    return _verdict("verify apriori", [r.to_dict() for r in rep.reports()],
                    {"seed": _seed(args), "perturb": None if args.model2 else args.perturb})


def verify_contraction(args, model) -> tuple[dict, int]:
    beta = args.beta if args.beta is not None else beta_thresholds(model).beta_hjb
    try:
        v, rep = hjb_picard(model, beta, tol=args.tol, substeps=args.substeps)
    except NoConvergence as exc:
        reports = [{"check": "contraction_converged", "lhs": 0.0, "rhs": 1.0, "tolerance": 0.0,
                    "pass": False, "message": str(exc)}]
        return _verdict("verify contraction", reports, {"beta": beta})
    gap = float(np.max(np.abs(v.values - hjb_march(model, args.substeps).values)))
    reports = [
        {"check": "contraction_ratio", "lhs": rep.ratio, "rhs": rep.c_beta, "tolerance": 0.1 * rep.c_beta,
         "pass": rep.ratio <= 1.1 * rep.c_beta, "iterations": rep.iterations},
        {"check": "picard_vs_march", "lhs": gap, "rhs": 0.0, "tolerance": 1e-3, "pass": gap <= 1e-3},
    ]
    return _verdict("verify contraction", reports, {"beta": beta})


VERIFIERS = {
    "girsanov": verify_girsanov,
    "ito": verify_ito,
    "bsde": verify_bsde,
    "energy": verify_energy,
    "apriori": verify_apriori,
    "contraction": verify_contraction,
}


def cmd_verify(args) -> int:
    model = _resolve_model(args.model)
    body, code = VERIFIERS[args.check](args, model)
    _emit(args, body)
    return code


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True,
                        help=f"model JSON file, or {BUILTIN_PREFIX}d1 / {BUILTIN_PREFIX}d2")
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--seed", type=int, default=0, help="master seed (MPPCTL_SEED overrides)")
    common.add_argument("--paths", type=_positive_int, default=10_000)
    common.add_argument("--beta", type=_positive_float)
    common.add_argument("--tol", type=_positive_float, default=1e-10)
    common.add_argument("--substeps", type=_positive_int, default=50)
    common.add_argument("--coarse-cells", type=_positive_int, default=2)
    common.add_argument("--threads", type=_positive_int, default=1)
    common.add_argument("--x0", help="start state (name or index)")

    parser = argparse.ArgumentParser(prog="mppctl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve the HJB system")
    p.add_argument("--method", choices=["march", "picard"], default="march")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", parents=[common], help="simulate trajectories as JSON lines")
    p.add_argument("--controlled", action="store_true", help="simulate under the HJB-optimal policy")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common], help="Monte Carlo cost of the optimal policy")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("oracle", parents=[common], help="enumerate coarse piecewise-constant policies")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", parents=[common], help="run a verification suite")
    p.add_argument("check", choices=sorted(VERIFIERS))
    p.add_argument("--model2", help="second model for the a priori check")
    p.add_argument("--perturb", type=float, default=0.1,
                   help="running-cost shift for the a priori check when --model2 is absent")
    p.set_defaults(func=cmd_verify)
    return parser


def _coerce_x0(args):
    if args.x0 is not None and args.x0.isdigit():
        args.x0 = int(args.x0)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _coerce_x0(args)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"mppctl: error: {exc}\n")
        return 2
    except (MppControlError, KeyError) as exc:
        sys.stderr.write(f"mppctl: error: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
