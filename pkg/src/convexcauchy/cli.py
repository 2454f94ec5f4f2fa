"""Command-line entry points: solve, certify, gradcheck, sweep.

Exit codes: 0 success, 1 usage/config error, 2 numerical failure,
3 I/O error. THREADS (optional) caps the worker pool used for sweeps.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ConfigError, ConvexCauchyError, GeometryError
from .functional import FunctionalParams, evaluate, gradient
from .harness import (
    ProblemSetup,
    emit_report,
    error_norms,
    field_table,
    history_rows,
    load_problem,
    starting_field,
)
from .operators import Field
from .optimizer import convexity_certificate, direct_solve, run
from .sampling import random_smooth_values
from .weights import WeightSpec, weight_extrema

logger = logging.getLogger(__name__)


def _base_report(setup: ProblemSetup, command: str) -> dict:
    w_min, w_max, w_argmin = weight_extrema(setup.weight, setup.mask)
    return {
        "command": command,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": setup.config,
        "mask_counts": setup.mask.counts,
        "log_weight": {"min": w_min, "max": w_max, "argmin_label": w_argmin.name.lower()},
    }


def cmd_solve(setup: ProblemSetup, args) -> int:
    report = _base_report(setup, "solve")
    if setup.solver == "direct":
        final = direct_solve(setup.params)
        g = gradient(setup.params, final, mode="euclidean")
        report["run"] = {
            "converged": True,
            "reason": "direct normal-equations solve",
            "iterations": 0,
            "q_hat": None,
            "wall_time": None,
            "final_j": evaluate(setup.params, final),
            "final_grad_norm": float(np.linalg.norm(g.values)),
        }
        history = []
        converged = True
    else:
        start = starting_field(setup)
        run_report = run(setup.params, start, setup.opt_config)
        final = run_report.final
        report["run"] = run_report.to_dict()
        report["run"]["final_j"] = run_report.j_history[-1] if run_report.j_history else None
        report["run"]["last_riesz_residuals"] = setup.space.last_riesz_history
        history = history_rows(run_report)
        converged = run_report.converged

    report["errors"] = error_norms(setup, final)
    report["history"] = history
    report["field"] = field_table(setup, final)
    emit_report(report, setup.output_dir)
    if not converged:
        logger.error("solver did not converge: %s", report["run"]["reason"])
        return 2
    return 0


def _certificates(setup: ProblemSetup, lambdas) -> list[dict]:
    cert = setup.certificate

    def one(lam: float) -> dict:
        params = FunctionalParams(
            op=setup.op,
            weight=WeightSpec(level=setup.mask.level, lam=float(lam)),
            mask=setup.mask,
            space=setup.space,
            beta=setup.params.beta,
            data=setup.params.data,
            beta_policy="keep",  # sweeps need the same beta at every lambda
        )
        return convexity_certificate(
            params, radius=cert["radius"], samples=cert["samples"], seed=cert["seed"]
        ).to_dict()

    workers = int(os.environ.get("THREADS", "1"))
    if workers > 1 and len(lambdas) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, lambdas))
    return [one(lam) for lam in lambdas]


def cmd_certify(setup: ProblemSetup, args) -> int:
    report = _base_report(setup, "certify")
    results = _certificates(setup, [setup.weight.lam])
    report["certificates"] = results
    emit_report(report, setup.output_dir)
    passed = results[0]["passed"]
    print(f"certificate lambda={setup.weight.lam:g}: "
          f"{'PASS' if passed else 'FAIL'} ({results[0]['failures']} failures, "
          f"min margin {results[0]['min_margin']:.4g})")
    if args.require_certificate and not passed:
        return 2
    return 0


def cmd_sweep(setup: ProblemSetup, args) -> int:
    lambdas = args.lambdas or setup.certificate["lambdas"]
    report = _base_report(setup, "sweep")
    results = _certificates(setup, lambdas)
    report["certificates"] = results
    lambda1 = next((r["lambda"] for r in results if r["passed"]), None)
    report["lambda1"] = lambda1
    emit_report(report, setup.output_dir)
    for r in results:
        print(f"lambda={r['lambda']:g}: failures={r['failures']}/{r['samples']} "
              f"min_margin={r['min_margin']:.4g}")
    if lambda1 is None:
        print("no certificate-passing lambda in the sweep")
        if args.require_certificate:
            return 2
    else:
        print(f"smallest passing lambda: {lambda1:g}")
    return 0


def cmd_gradcheck(setup: ProblemSetup, args) -> int:
    params = setup.params
    rng = np.random.default_rng(setup.gradcheck["seed"])
    base = starting_field(setup)
    u = params.impose(base)
    g = gradient(params, u, mode="euclidean")
    worst = 0.0
    for _ in range(setup.gradcheck["directions"]):
        h = random_smooth_values(setup.mask, rng)
        delta = 1e-5 * max(1.0, float(np.max(np.abs(u.values))))
        up = Field(setup.grid, u.values + delta * h)
        dn = Field(setup.grid, u.values - delta * h)
        fd = (evaluate(params, up) - evaluate(params, dn)) / (2 * delta)
        an = float(np.sum(g.values * h))
        rel = abs(fd - an) / max(1.0, abs(an))
        worst = max(worst, rel)
    report = _base_report(setup, "gradcheck")
    report["gradcheck"] = {
        "directions": setup.gradcheck["directions"],
        "max_rel_error": worst,
        "tolerance": setup.gradcheck["rel_tol"],
    }
    emit_report(report, setup.output_dir)
    print(f"gradcheck max relative error {worst:.3e} (tol {setup.gradcheck['rel_tol']:g})")
    return 0 if worst < setup.gradcheck["rel_tol"] else 2


def _parse_lambdas(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --lambda list {text!r}: {exc}") from exc


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convexcauchy",
        description="Carleman-weighted convexification solver for ill-posed Cauchy problems",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("solve", "reconstruct the field from Cauchy data"),
        ("certify", "run the convexity certificate at the configured lambda"),
        ("gradcheck", "compare the assembled gradient against finite differences"),
        ("sweep", "run the certificate across a lambda list"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="problem definition JSON file")
        p.add_argument("--out", help="override the output directory")
        if name in ("certify", "sweep"):
            p.add_argument("--require-certificate", action="store_true",
                           help="exit 2 when the certificate fails")
        if name == "sweep":
            p.add_argument("--lambda", dest="lambdas", type=_parse_lambdas, default=None,
                           help="comma-separated lambda values, e.g. 1,2,4,8")
    return parser


_COMMANDS = {
    "solve": cmd_solve,
    "certify": cmd_certify,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        setup = load_problem(args.config)
        if args.out:
            setup.output_dir = type(setup.output_dir)(args.out)
        return _COMMANDS[args.command](setup, args)
    except (ConfigError, GeometryError) as exc:
        logger.error("config error: %s", exc)
        return 1
    except ConvexCauchyError as exc:
        logger.error("numerical failure: %s", exc)
        return 2
    except OSError as exc:
        logger.error("i/o failure: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
