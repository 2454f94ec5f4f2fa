"""Gradient iteration with line search, convexity certificates, and rate fits.

The iteration u_{n+1} = u_n - gamma * grad J(u_n) runs in either the
Euclidean or the H^k (Sobolev) geometry; descent directions are zero-trace,
so every iterate carries the Cauchy data exactly. Backtracking enforces the
Armijo decrease J_new <= J - c * t * ||g||^2 in the norm matching the
geometry.

The convexity certificate samples field pairs inside an H^k ball and checks
the Bregman gap against (beta/2) times the squared H^k distance; it is the
runtime arbiter for whether the weight strength lambda is large enough.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, SolverError
from .functional import FunctionalParams, bregman_gap, data_extension, evaluate, gradient
from .operators import Field, apply_operator, linearize
from .sampling import draw_in_ball

logger = logging.getLogger(__name__)

STEP_MODES = ("fixed", "backtracking")
RADIUS_POLICIES = ("monitor", "reject_step")


@dataclass
class OptimizerConfig:
    max_iters: int = 2000
    grad_tol: float = 1e-6
    step_mode: str = "backtracking"
    gamma: float = 0.5
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_halvings: int = 60
    mode: str = "sobolev"
    radius: float = 0.0  # 0 disables the ball check
    radius_policy: str = "monitor"
    store_iterates: bool = True

    def __post_init__(self):
        if self.step_mode not in STEP_MODES:
            raise ConfigError(f"unknown step mode {self.step_mode!r}")
        if self.radius_policy not in RADIUS_POLICIES:
            raise ConfigError(f"unknown radius policy {self.radius_policy!r}")
        if self.step_mode == "fixed" and not (0.0 < self.gamma < 1.0):
            raise ConfigError(f"fixed step size must lie in (0, 1), got {self.gamma}")
        if self.grad_tol <= 0 or self.max_iters < 1:
            raise ConfigError("tolerances and iteration caps must be positive")
        if self.mode not in ("euclidean", "sobolev"):
            raise ConfigError(f"unknown gradient mode {self.mode!r}")


@dataclass
class RunReport:
    j_history: list[float] = dc_field(default_factory=list)
    grad_norm_history: list[float] = dc_field(default_factory=list)
    step_history: list[float] = dc_field(default_factory=list)
    radius_history: list[float] = dc_field(default_factory=list)
    final: Field | None = None
    converged: bool = False
    reason: str = ""
    iterations: int = 0
    q_hat: float | None = None
    wall_time: float = 0.0
    iterates: list[Field] | None = None
    space = None  # SobolevSpace used to measure iterate distances

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "reason": self.reason,
            "iterations": self.iterations,
            "q_hat": self.q_hat,
            "wall_time": self.wall_time,
            "j_history": self.j_history,
            "grad_norm_history": self.grad_norm_history,
            "step_history": self.step_history,
            "radius_history": self.radius_history,
        }


def _grad_norm_sq(params: FunctionalParams, g: Field, mode: str) -> float:
    """Squared gradient norm matching the descent geometry.

    In sobolev mode the Riesz identity makes [g, g]_{H^k} equal the Euclidean
    pairing of g with the raw gradient, i.e. the true squared dual norm.
    """
    if mode == "euclidean":
        return float(np.sum(g.values * g.values))
    return params.space.norm_sq(g)


def run(params: FunctionalParams, start: Field, config: OptimizerConfig) -> RunReport:
    """Minimize J from `start` by (projected) gradient descent.

    The start must carry the Cauchy data; every step direction is zero-trace,
    so the constraint is preserved exactly. Terminates on grad_tol, max_iters,
    or a ball exit under the reject_step policy. Line-search failure and
    divergence in fixed mode raise SolverError.
    """
    t0 = time.perf_counter()
    params.check_constraints(start, "starting field")
    u = params.impose(start)
    report = RunReport(iterates=[] if config.store_iterates else None)
    report.space = params.space

    j = evaluate(params, u)
    step = config.gamma if config.step_mode == "fixed" else 1.0
    warned_radius = False

    for it in range(config.max_iters):
        g = gradient(params, u, mode=config.mode)
        gsq = _grad_norm_sq(params, g, config.mode)
        gnorm = float(np.sqrt(max(gsq, 0.0)))
        unorm = params.space.norm(u)

        report.j_history.append(j)
        report.grad_norm_history.append(gnorm)
        report.radius_history.append(unorm)
        if report.iterates is not None:
            report.iterates.append(u.copy())

        if config.radius > 0 and unorm >= config.radius:
            if config.radius_policy == "reject_step":
                report.reason = f"iterate left the ball of radius {config.radius}"
                report.final = u
                report.iterations = it
                report.wall_time = time.perf_counter() - t0
                return report
            if not warned_radius:
                logger.warning(
                    "iterate norm %.4g exceeds the monitored ball radius %.4g", unorm, config.radius
                )
                warned_radius = True

        if gnorm < config.grad_tol:
            report.converged = True
            report.reason = "gradient tolerance reached"
            break

        if config.step_mode == "fixed":
            u_new = params.impose(Field(u.grid, u.values - config.gamma * g.values))
            j_new = evaluate(params, u_new)
            if j_new > j + 1e-12 * (1.0 + abs(j)):
                raise SolverError(
                    f"fixed-step iteration diverged at iteration {it}: "
                    f"J rose from {j:.6g} to {j_new:.6g}"
                )
            report.step_history.append(config.gamma)
            u, j = u_new, j_new
        else:
            t = min(1.0, step * 2.0)  # warm start from the last accepted step
            accepted = False
            for _ in range(config.max_halvings):
                u_try = params.impose(Field(u.grid, u.values - t * g.values))
                j_try = evaluate(params, u_try)
                if j_try <= j - config.armijo_c * t * gsq:
                    accepted = True
                    break
                t *= config.shrink
            if not accepted:
                raise SolverError(
                    f"line search found no Armijo decrease after {config.max_halvings} "
                    f"halvings at iteration {it} (J={j:.6g}, |g|={gnorm:.3g})"
                )
            report.step_history.append(t)
            step = t
            u, j = u_try, j_try
    else:
        report.reason = "iteration cap reached"
        report.j_history.append(j)  # J of the last accepted step

    report.final = u
    report.iterations = len(report.j_history)
    report.wall_time = time.perf_counter() - t0
    if report.converged and report.iterates is not None and len(report.iterates) >= 7:
        try:
            report.q_hat = convergence_ratio(report, u)
        except (SolverError, ConfigError):
            report.q_hat = None
    return report


def convergence_ratio(report: RunReport, reference: Field) -> float:
    """Fitted per-iteration contraction of ||u_n - reference||_{H^k}.

    Least-squares slope of the log-error over the linear-decay tail; the
    returned q_hat is exp(slope). Needs at least 5 usable tail iterates.
    """
    if report.iterates is None:
        raise ConfigError("run stored no iterates; enable store_iterates")
    if report.space is None:
        raise ConfigError("report has no space attached")
    errs = []
    for it_field in report.iterates:
        diff = Field(it_field.grid, it_field.values - reference.values)
        errs.append(report.space.norm(diff))
    errs = np.asarray(errs)
    floor = max(errs.max() * 1e-14, 1e-300)
    usable = np.flatnonzero(errs > floor)
    if usable.size < 5:
        raise SolverError(f"only {usable.size} tail iterates with measurable error; need >= 5")
    tail = usable[-max(5, usable.size // 2):]
    n = tail.astype(float)
    y = np.log(errs[tail])
    slope = float(np.polyfit(n, y, 1)[0])
    return float(np.exp(slope))


def direct_solve(params: FunctionalParams) -> Field:
    """Exact minimizer of J for an affine residual map (no genuine nonlinearity).

    Solves the normal equations (L^T W L + beta G) v = -grad J(u_c)/2 on the
    free degrees of freedom, where u_c carries the Cauchy data and L is the
    residual's (constant) linearization. Raises ConfigError for operators
    whose lower-order term actually depends on the field.
    """
    lower = params.op.lower
    if lower is not None and lower.name not in ("zero", "source"):
        raise ConfigError(
            f"direct solve needs an affine residual; lower-order term is {lower.name!r}"
        )
    mask = params.mask
    u_c = params.impose(Field(mask.grid, np.zeros(mask.grid.shape)))
    lin = linearize(params.op, u_c, mask)
    lmat = lin.to_matrix()
    wdiag = sp.diags(params.data_weight.ravel())
    hess = (lmat.T @ wdiag @ lmat + params.beta * params.space.gram_matrix()).tocsr()

    r_c = apply_operator(params.op, u_c, mask).values
    grad_c = lin.apply(params.data_weight * r_c, adjoint=True)
    grad_c += params.beta * params.space.apply_gram(u_c.values)

    free = params.space.free_index
    rhs = -grad_c.ravel()[free]
    h_ff = hess[free][:, free].tocsc()
    v = spla.spsolve(h_ff, rhs)
    out = u_c.values.copy()
    out.ravel()[free] = out.ravel()[free] + v
    return params.impose(Field(mask.grid, out))


@dataclass
class CertificateReport:
    lam: float
    beta: float
    radius: float
    samples: int
    seed: int
    failures: int
    min_margin: float
    margins: list[float]
    gaps: list[float]
    h1_inner_terms: list[float]
    hk_terms: list[float]

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "beta": self.beta,
            "radius": self.radius,
            "samples": self.samples,
            "seed": self.seed,
            "failures": self.failures,
            "passed": self.passed,
            "min_margin": self.min_margin,
            "margins": self.margins,
            "gaps": self.gaps,
            "h1_inner_terms": self.h1_inner_terms,
            "hk_terms": self.hk_terms,
        }


def convexity_certificate(params: FunctionalParams, radius: float, samples: int,
                          seed: int) -> CertificateReport:
    """Sample the Bregman gap on random admissible pairs inside the H^k ball.

    A pair fails when gap < (beta/2) * ||u2 - u1||^2_{H^k}. The H^1 term over
    the inner subdomain is recorded but not asserted against (its constant is
    not constructive). Deterministic under the seed.
    """
    if samples < 1:
        raise ConfigError(f"certificate needs at least one sample, got {samples}")
    rng = np.random.default_rng(seed)
    base = data_extension(params.space, params.data)
    margins, gaps, h1s, hks = [], [], [], []
    failures = 0
    for _ in range(samples):
        u1 = draw_in_ball(params, radius, rng, base=base)
        u2 = draw_in_ball(params, radius, rng, base=base)
        gap, h1_inner, hk_full = bregman_gap(params, u1, u2)
        margin = gap - 0.5 * params.beta * hk_full
        margins.append(margin)
        gaps.append(gap)
        h1s.append(h1_inner)
        hks.append(hk_full)
        if margin < 0.0:
            failures += 1
    report = CertificateReport(
        lam=params.weight.lam, beta=params.beta, radius=radius, samples=samples,
        seed=seed, failures=failures, min_margin=float(np.min(margins)),
        margins=margins, gaps=gaps, h1_inner_terms=h1s, hk_terms=hks,
    )
    logger.info(
        "certificate lambda=%.4g beta=%.4g: %d/%d failures, min margin %.4g",
        params.weight.lam, params.beta, failures, samples, report.min_margin,
    )
    return report
