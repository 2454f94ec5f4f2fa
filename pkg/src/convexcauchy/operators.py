"""Discrete quasilinear operators: residual, principal part, linearization, adjoint.

Residual conventions per family (core nodes only, centered second-order
differences everywhere):

    elliptic    A(u) = sum_ij a_ij(x) u_{xi xj} + N(x, grad u, u)
    parabolic   A(u) = u_t - sum_ij a_ij(x,t) u_{xi xj} - N(x,t, grad u, u)
    hyperbolic  A(u) = a(x) u_tt - laplace(u) - N(x,t, grad u, u)

Here N is the lower-order term (first and zeroth order in u), supplied with
analytic partial derivatives. `grad u` always means the spatial gradient.

The linearization freezes N's partials at a base field and is an exact
derivative of the discrete residual map, so its transpose (apply with
adjoint=True) satisfies the discrete duality identity to rounding.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, ConvexCauchyError
from .grid import DomainMask, Grid, shift

logger = logging.getLogger(__name__)

OPERATOR_FAMILIES = ("elliptic", "parabolic", "hyperbolic")


@dataclass(eq=False)
class Field:
    """Real values on every grid node."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ConfigError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConvexCauchyError("field contains non-finite values")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())


def zero_field(grid: Grid) -> Field:
    return Field(grid, np.zeros(grid.shape))


@dataclass(eq=False)
class LowerOrderTerm:
    """Lower-order nonlinearity N(p, g, u) with analytic first partials.

    value, d_u: map (points (...,d), grad (...,n), u (...)) -> (...)
    d_grad:     same arguments -> (..., n), the partials in each gradient slot.
    """

    value: Callable
    d_u: Callable
    d_grad: Callable
    name: str = "custom"


def lower_zero() -> LowerOrderTerm:
    def _zero(points, grad, u):
        return np.zeros_like(u)

    def _zero_grad(points, grad, u):
        return np.zeros_like(grad)

    return LowerOrderTerm(_zero, _zero, _zero_grad, name="zero")


def lower_source(source: Callable) -> LowerOrderTerm:
    """N = q(p): a pure source, keeping the residual affine."""

    def _val(points, grad, u):
        return source(points) + np.zeros_like(u)

    def _du(points, grad, u):
        return np.zeros_like(u)

    def _dg(points, grad, u):
        return np.zeros_like(grad)

    return LowerOrderTerm(_val, _du, _dg, name="source")


def lower_cubic(source: Callable) -> LowerOrderTerm:
    """N = -u^3 + q(p)."""

    def _val(points, grad, u):
        return -u**3 + source(points)

    def _du(points, grad, u):
        return -3.0 * u**2

    def _dg(points, grad, u):
        return np.zeros_like(grad)

    return LowerOrderTerm(_val, _du, _dg, name="cubic")


def lower_sine(source: Callable) -> LowerOrderTerm:
    """N = sin(u) + q(p)."""

    def _val(points, grad, u):
        return np.sin(u) + source(points)

    def _du(points, grad, u):
        return np.cos(u)

    def _dg(points, grad, u):
        return np.zeros_like(grad)

    return LowerOrderTerm(_val, _du, _dg, name="sine")


def lower_grad_sq(scale: Callable, source: Callable) -> LowerOrderTerm:
    """N = b(p) |grad u|^2 + q(p); partials stay bounded on C^1-bounded sets."""

    def _val(points, grad, u):
        return scale(points) * np.sum(grad * grad, axis=-1) + source(points)

    def _du(points, grad, u):
        return np.zeros_like(u)

    def _dg(points, grad, u):
        return 2.0 * scale(points)[..., None] * grad

    return LowerOrderTerm(_val, _du, _dg, name="grad_sq")


def validate_lower_term(term: LowerOrderTerm, points: np.ndarray, n_spatial: int,
                        rng: np.random.Generator, rel_tol: float = 1e-5) -> None:
    """Check the analytic partials of N against central finite differences.

    Samples a handful of (grad, u) states at the given points; raises
    ConfigError when a partial disagrees with the FD probe.
    """
    pts = points.reshape(-1, points.shape[-1])[:16]
    u = rng.uniform(-2.0, 2.0, size=pts.shape[:-1])
    grad = rng.uniform(-2.0, 2.0, size=pts.shape[:-1] + (n_spatial,))
    delta = 1e-6

    fd_u = (term.value(pts, grad, u + delta) - term.value(pts, grad, u - delta)) / (2 * delta)
    an_u = term.d_u(pts, grad, u)
    scale = np.max(np.abs(fd_u)) + 1.0
    if np.max(np.abs(fd_u - an_u)) > rel_tol * scale:
        raise ConfigError(f"lower-order term {term.name!r}: d/du partial disagrees with FD probe")

    an_g = term.d_grad(pts, grad, u)
    for i in range(n_spatial):
        bump = np.zeros_like(grad)
        bump[..., i] = delta
        fd_g = (term.value(pts, grad + bump, u) - term.value(pts, grad - bump, u)) / (2 * delta)
        scale = np.max(np.abs(fd_g)) + 1.0
        if np.max(np.abs(fd_g - an_g[..., i])) > rel_tol * scale:
            raise ConfigError(
                f"lower-order term {term.name!r}: gradient partial {i} disagrees with FD probe"
            )


@dataclass(frozen=True, eq=False)
class QuasilinearOperator:
    """Family, principal coefficients, and lower-order term of the PDE.

    principal: for elliptic/parabolic a callable points -> (..., n, n) symmetric
    matrix of second-order coefficients (None means the identity, i.e. the
    Laplacian); for hyperbolic a callable points -> (...) giving the wave
    coefficient a(x) in a(x) u_tt - laplace(u) (None means 1).

    mu1/mu2 are the ellipticity bounds; a_lo/a_hi bound the hyperbolic
    coefficient.
    """

    family: str
    dim: int  # total grid dimension (spatial, or spatial + time)
    principal: Callable | None = None
    lower: LowerOrderTerm | None = None
    mu1: float = 1.0
    mu2: float = 1.0
    a_lo: float = 1.0
    a_hi: float = 1.0

    def __post_init__(self):
        if self.family not in OPERATOR_FAMILIES:
            raise ConfigError(f"unknown operator family {self.family!r}")
        if self.dim < 1 + (self.family in ("parabolic", "hyperbolic")):
            raise ConfigError(f"dimension {self.dim} too small for family {self.family!r}")

    @property
    def n_spatial(self) -> int:
        if self.family == "elliptic":
            return self.dim
        return self.dim - 1

    @property
    def lower_sign(self) -> float:
        """Sign with which the lower-order term enters the residual."""
        return 1.0 if self.family == "elliptic" else -1.0


def validate_operator(op: QuasilinearOperator, mask: DomainMask,
                      seed: int = 0, samples: int = 64) -> None:
    """Sample-check symmetry, ellipticity bounds, and hyperbolic conditions."""
    rng = np.random.default_rng(seed)
    pts = mask.grid.coords()[mask.in_mask]
    if pts.shape[0] > samples:
        pts = pts[rng.choice(pts.shape[0], size=samples, replace=False)]
    slack = 1e-9

    if op.family in ("elliptic", "parabolic"):
        coeff = _principal_matrix(op, pts)
        if np.max(np.abs(coeff - np.swapaxes(coeff, -1, -2))) > slack:
            raise ConfigError("principal coefficients are not symmetric")
        for _ in range(8):
            eta = rng.normal(size=op.n_spatial)
            eta /= np.linalg.norm(eta)
            quad = np.einsum("...ij,i,j->...", coeff, eta, eta)
            if np.any(quad < op.mu1 - slack) or np.any(quad > op.mu2 + slack):
                raise ConfigError(
                    f"ellipticity bounds violated: sampled form in "
                    f"[{float(np.min(quad)):.6g}, {float(np.max(quad)):.6g}], "
                    f"declared [{op.mu1}, {op.mu2}]"
                )
    else:
        a = _wave_coefficient(op, pts)
        if np.any(a < op.a_lo - slack) or np.any(a > op.a_hi + slack):
            raise ConfigError(
                f"wave coefficient outside [{op.a_lo}, {op.a_hi}]: "
                f"sampled range [{float(np.min(a)):.6g}, {float(np.max(a)):.6g}]"
            )
        # (grad a, x - x0) >= 0, probed with centered differences of a
        x0 = np.asarray(mask.level.x0, dtype=float)
        h = 1e-6
        sprod = np.zeros(pts.shape[0])
        for j in range(op.n_spatial):
            bump = np.zeros_like(pts)
            bump[:, j] = h
            da = (_wave_coefficient(op, pts + bump) - _wave_coefficient(op, pts - bump)) / (2 * h)
            sprod += da * (pts[:, j] - x0[j])
        if np.any(sprod < -1e-6):
            raise ConfigError(
                "hyperbolic monotonicity (grad a, x - x0) >= 0 fails at sampled nodes"
            )


def _principal_matrix(op: QuasilinearOperator, points: np.ndarray) -> np.ndarray:
    n = op.n_spatial
    if op.principal is None:
        eye = np.eye(n)
        return np.broadcast_to(eye, points.shape[:-1] + (n, n)).copy()
    return np.asarray(op.principal(points), dtype=float)


def _wave_coefficient(op: QuasilinearOperator, points: np.ndarray) -> np.ndarray:
    if op.principal is None:
        return np.ones(points.shape[:-1])
    return np.asarray(op.principal(points), dtype=float)


# ---------------------------------------------------------------------------
# stencil kernels


def _d1(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    off = [0] * values.ndim
    off[axis] = 1
    plus = shift(values, off)
    off[axis] = -1
    minus = shift(values, off)
    return (plus - minus) / (2.0 * h)


def _d2(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    off = [0] * values.ndim
    off[axis] = 1
    plus = shift(values, off)
    off[axis] = -1
    minus = shift(values, off)
    return (plus - 2.0 * values + minus) / (h * h)


def _d2_mixed(values: np.ndarray, ax_i: int, ax_j: int, hi: float, hj: float) -> np.ndarray:
    out = np.zeros_like(values)
    for si in (1, -1):
        for sj in (1, -1):
            off = [0] * values.ndim
            off[ax_i] = si
            off[ax_j] = sj
            out += si * sj * shift(values, off)
    return out / (4.0 * hi * hj)


def spatial_gradient(values: np.ndarray, grid: Grid, n_spatial: int) -> np.ndarray:
    """Centered first differences along the spatial axes, shape (..., n)."""
    comps = [_d1(values, j, grid.spacing[j]) for j in range(n_spatial)]
    return np.stack(comps, axis=-1)


# ---------------------------------------------------------------------------
# per-(operator, mask) discretization cache


class _StencilTerms:
    """Precomputed per-node coefficient arrays of the frozen principal part.

    second_pure: list of (axis, coeff array)
    second_mixed: list of (axis_i, axis_j, coeff array) with the symmetric
        pair already summed
    first: list of (axis, coeff array), used for the parabolic time derivative
    All coefficient arrays vanish off the core nodes.
    """

    def __init__(self, op: QuasilinearOperator, mask: DomainMask):
        grid = mask.grid
        core = mask.is_core
        pts = grid.coords()
        self.second_pure: list[tuple[int, np.ndarray]] = []
        self.second_mixed: list[tuple[int, int, np.ndarray]] = []
        self.first: list[tuple[int, np.ndarray]] = []

        if op.family in ("elliptic", "parabolic"):
            sgn = 1.0 if op.family == "elliptic" else -1.0
            coeff = np.zeros(grid.shape + (op.n_spatial, op.n_spatial))
            coeff[core] = _principal_matrix(op, pts[core])
            for i in range(op.n_spatial):
                arr = sgn * coeff[..., i, i]
                arr[~core] = 0.0
                self.second_pure.append((i, arr))
                for j in range(i + 1, op.n_spatial):
                    arr = 2.0 * sgn * coeff[..., i, j]
                    arr[~core] = 0.0
                    if np.any(arr):
                        self.second_mixed.append((i, j, arr))
            if op.family == "parabolic":
                t_coeff = np.where(core, 1.0, 0.0)
                self.first.append((grid.dim - 1, t_coeff))
        else:
            a = np.zeros(grid.shape)
            a[core] = _wave_coefficient(op, pts[core])
            self.second_pure.append((grid.dim - 1, a))
            for j in range(op.n_spatial):
                arr = np.where(core, -1.0, 0.0)
                self.second_pure.append((j, arr))


@functools.lru_cache(maxsize=64)
def _stencil_terms(op: QuasilinearOperator, mask: DomainMask) -> _StencilTerms:
    return _StencilTerms(op, mask)


def _apply_terms(terms: _StencilTerms, grid: Grid, values: np.ndarray) -> np.ndarray:
    out = np.zeros(grid.shape)
    for axis, c in terms.second_pure:
        out += c * _d2(values, axis, grid.spacing[axis])
    for ai, aj, c in terms.second_mixed:
        out += c * _d2_mixed(values, ai, aj, grid.spacing[ai], grid.spacing[aj])
    for axis, c in terms.first:
        out += c * _d1(values, axis, grid.spacing[axis])
    return out


# ---------------------------------------------------------------------------
# public operations


def apply_principal(op: QuasilinearOperator, u: Field, mask: DomainMask) -> Field:
    """Principal-part residual on core nodes, zero elsewhere.

    Parabolic keeps the time derivative, hyperbolic keeps a(x) u_tt.
    """
    terms = _stencil_terms(op, mask)
    out = _apply_terms(terms, mask.grid, u.values)
    return Field(mask.grid, out)


def apply_operator(op: QuasilinearOperator, u: Field, mask: DomainMask) -> Field:
    """Full residual including the lower-order term, on core nodes."""
    out = apply_principal(op, u, mask).values
    if op.lower is not None:
        core = mask.is_core
        pts = mask.grid.coords()[core]
        grad = spatial_gradient(u.values, mask.grid, op.n_spatial)[core]
        nval = op.lower.value(pts, grad, u.values[core])
        if not np.all(np.isfinite(nval)):
            raise ConvexCauchyError("lower-order term produced non-finite values")
        out[core] += op.lower_sign * nval
    return Field(mask.grid, out)


class LinearizedOperator:
    """Frozen-coefficient linearization of the residual map around a base field.

    The forward action on core nodes is

        L h = A0 h + s * (sum_i dN/d(grad_i) * h_{xi} + dN/du * h)

    with s the family sign of the lower-order term. apply(..., adjoint=True)
    is the exact transpose of the discrete forward map.
    """

    def __init__(self, op: QuasilinearOperator, base: Field, mask: DomainMask):
        self.grid = mask.grid
        self.mask = mask
        terms = _stencil_terms(op, mask)
        self.second_pure = list(terms.second_pure)
        self.second_mixed = list(terms.second_mixed)
        self.first = list(terms.first)
        self.zeroth: np.ndarray | None = None

        if op.lower is not None:
            core = mask.is_core
            pts = self.grid.coords()[core]
            grad = spatial_gradient(base.values, self.grid, op.n_spatial)[core]
            uvals = base.values[core]
            sgn = op.lower_sign
            dg = sgn * np.asarray(op.lower.d_grad(pts, grad, uvals), dtype=float)
            du = sgn * np.asarray(op.lower.d_u(pts, grad, uvals), dtype=float)
            if not (np.all(np.isfinite(dg)) and np.all(np.isfinite(du))):
                raise ConvexCauchyError("lower-order partials are non-finite at the base field")
            for i in range(op.n_spatial):
                c = np.zeros(self.grid.shape)
                c[core] = dg[..., i]
                if np.any(c):
                    self.first.append((i, c))
            z = np.zeros(self.grid.shape)
            z[core] = du
            self.zeroth = z

    def _shift_terms(self):
        """Yield (offset, coeff array, scale) triples of the stencil."""
        d = self.grid.dim
        for axis, c in self.second_pure:
            h2 = self.grid.spacing[axis] ** 2
            for s, w in ((1, 1.0), (0, -2.0), (-1, 1.0)):
                off = [0] * d
                off[axis] = s
                yield tuple(off), c, w / h2
        for ai, aj, c in self.second_mixed:
            denom = 4.0 * self.grid.spacing[ai] * self.grid.spacing[aj]
            for si in (1, -1):
                for sj in (1, -1):
                    off = [0] * d
                    off[ai] = si
                    off[aj] = sj
                    yield tuple(off), c, si * sj / denom
        for axis, c in self.first:
            h2 = 2.0 * self.grid.spacing[axis]
            for s, w in ((1, 1.0), (-1, -1.0)):
                off = [0] * d
                off[axis] = s
                yield tuple(off), c, w / h2
        if self.zeroth is not None:
            yield (0,) * d, self.zeroth, 1.0

    def apply(self, values: np.ndarray, adjoint: bool = False) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        if adjoint:
            for off, c, w in self._shift_terms():
                out += w * shift(c * values, [-o for o in off])
        else:
            for off, c, w in self._shift_terms():
                out += w * c * shift(values, off)
        return out

    def to_matrix(self) -> "scipy.sparse.csr_matrix":
        """Assemble the forward map as a sparse matrix over flat node indices."""
        import scipy.sparse as sp

        n = self.grid.node_count
        idx = np.arange(n).reshape(self.grid.shape)
        rows, cols, vals = [], [], []
        for off, c, w in self._shift_terms():
            sel = c != 0.0
            target = shift(idx, off, fill=-1)
            ok = sel & (target >= 0)
            rows.append(idx[ok])
            cols.append(target[ok])
            vals.append(w * c[ok])
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        return mat.tocsr()


def linearize(op: QuasilinearOperator, u1: Field, mask: DomainMask) -> LinearizedOperator:
    """Exact derivative of the discrete residual map at u1."""
    return LinearizedOperator(op, u1, mask)


def principal_linearized(op: QuasilinearOperator, mask: DomainMask) -> LinearizedOperator:
    """Linear map of the principal part alone (no lower-order coefficients)."""
    stripped = QuasilinearOperator(
        family=op.family, dim=op.dim, principal=op.principal, lower=None,
        mu1=op.mu1, mu2=op.mu2, a_lo=op.a_lo, a_hi=op.a_hi,
    )
    return LinearizedOperator(stripped, zero_field(mask.grid), mask)


def apply_linearized(lin: LinearizedOperator, v: Field, adjoint: bool = False,
                     mask: DomainMask | None = None) -> Field:
    """Forward or transpose action of a linearized operator on a field."""
    return Field(lin.grid, lin.apply(v.values, adjoint=adjoint))
