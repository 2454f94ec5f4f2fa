"""Discrete H^k inner products, the Cauchy-trace constraint, and Riesz solves.

The inner product sums, over all mixed forward-difference monomials of total
order <= k with unit weights,

    [f, g] = sum_beta sum_nodes D^beta f * D^beta g * quad_weight,

where a forward difference contributes only where both stencil endpoints are
masked. The order-zero monomial alone makes the Gram map positive definite on
mask-supported fields, so the constrained Gram (trace layers removed) is SPD
and conjugate gradients apply.

The Cauchy pair (trace value and normal derivative) is encoded by fixing two
node layers: the data face itself and the first layer inward, which pins the
one-sided first difference across the face.
"""

from __future__ import annotations

import logging
from itertools import product

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, GeometryError, IndefiniteGramError, SolverError
from .grid import DomainMask, shift
from .operators import Field

logger = logging.getLogger(__name__)


def sobolev_order(dim: int) -> int:
    """Smallest order embedding into C^1 on a dim-dimensional domain: floor(dim/2) + 2."""
    if dim < 1:
        raise ConfigError(f"dimension must be >= 1, got {dim}")
    return dim // 2 + 2


def difference_monomials(dim: int, order: int) -> list[tuple[int, ...]]:
    """All multi-indices beta with |beta| <= order, in deterministic order."""
    out = [b for b in product(range(order + 1), repeat=dim) if sum(b) <= order]
    out.sort(key=lambda b: (sum(b), b))
    return out


class SobolevSpace:
    """H^order inner product over a node subset of a domain mask.

    By default the subset is every masked node and the order follows
    sobolev_order(grid dim). A restricted subset (e.g. the inner subdomain)
    yields the corresponding local norm.
    """

    def __init__(self, mask: DomainMask, order: int | None = None,
                 node_subset: np.ndarray | None = None):
        self.mask = mask
        self.grid = mask.grid
        self.order = sobolev_order(self.grid.dim) if order is None else int(order)
        if self.order < 1:
            raise ConfigError(f"Sobolev order must be >= 1, got {self.order}")
        self.nodes = mask.in_mask if node_subset is None else np.asarray(node_subset, bool)
        if not np.any(self.nodes):
            raise GeometryError("Sobolev space over an empty node set")
        self.weights = np.where(self.nodes, mask.quad_weight, 0.0)
        self.monomials = difference_monomials(self.grid.dim, self.order)
        # a monomial contributes at p only when its whole forward stencil box
        # sits inside the node set; composed differences are raw otherwise
        self._box_valid: dict[tuple[int, ...], np.ndarray] = {}
        self._gram_matrix = None
        self._free_matrix = None
        self._free_solve = None
        self.last_riesz_history: list[float] = []

    # -- difference machinery -------------------------------------------------

    def monomial_validity(self, beta: tuple[int, ...]) -> np.ndarray:
        cached = self._box_valid.get(beta)
        if cached is None:
            cached = self.nodes.copy()
            for off in product(*[range(b + 1) for b in beta]):
                if any(off):
                    cached &= shift(self.nodes, off, fill=False)
            self._box_valid[beta] = cached
        return cached

    def _raw_diff(self, values: np.ndarray, axis: int) -> np.ndarray:
        off = [0] * self.grid.dim
        off[axis] = 1
        return (shift(values, off) - values) / self.grid.spacing[axis]

    def _raw_diff_t(self, values: np.ndarray, axis: int) -> np.ndarray:
        off = [0] * self.grid.dim
        off[axis] = -1
        return (shift(values, off) - values) / self.grid.spacing[axis]

    def apply_monomial(self, values: np.ndarray, beta: tuple[int, ...]) -> np.ndarray:
        """Forward-difference monomial, zeroed where its stencil exits the node set."""
        out = values
        for axis, times in enumerate(beta):
            for _ in range(times):
                out = self._raw_diff(out, axis)
        return np.where(self.monomial_validity(beta), out, 0.0)

    def _apply_monomial_t(self, values: np.ndarray, beta: tuple[int, ...]) -> np.ndarray:
        """Exact transpose of apply_monomial (mask first, raw transposes reversed)."""
        out = np.where(self.monomial_validity(beta), values, 0.0)
        for axis in reversed(range(len(beta))):
            for _ in range(beta[axis]):
                out = self._raw_diff_t(out, axis)
        return out

    # -- inner product and Gram map -------------------------------------------

    def inner_product(self, f: Field, g: Field) -> float:
        if f.grid != self.grid or g.grid != self.grid:
            raise ConfigError("fields live on a different grid than the space")
        total = 0.0
        for beta in self.monomials:
            df = self.apply_monomial(f.values, beta)
            dg = df if g is f else self.apply_monomial(g.values, beta)
            total += float(np.sum(df * dg * self.weights))
        return total

    def norm_sq(self, f: Field) -> float:
        return self.inner_product(f, f)

    def norm(self, f: Field) -> float:
        return float(np.sqrt(max(self.norm_sq(f), 0.0)))

    def apply_gram(self, values: np.ndarray) -> np.ndarray:
        """Matrix-free Gram action sum_beta (D^beta)^T (w . D^beta v)."""
        out = np.zeros(self.grid.shape)
        for beta in self.monomials:
            out += self._apply_monomial_t(self.weights * self.apply_monomial(values, beta), beta)
        return out

    def gram_matrix(self) -> sp.csr_matrix:
        """Sparse Gram matrix over flat node indices (assembled once)."""
        if self._gram_matrix is None:
            n = self.grid.node_count
            idx = np.arange(n).reshape(self.grid.shape)
            atoms = []
            for axis in range(self.grid.dim):
                off = [0] * self.grid.dim
                off[axis] = 1
                target = shift(idx, off, fill=-1)
                ok = target >= 0
                rows = idx.ravel()
                h = self.grid.spacing[axis]
                mat = sp.coo_matrix(
                    (
                        np.concatenate([np.full(n, -1.0 / h), np.full(ok.sum(), 1.0 / h)]),
                        (
                            np.concatenate([rows, idx[ok]]),
                            np.concatenate([rows, target[ok]]),
                        ),
                    ),
                    shape=(n, n),
                ).tocsr()
                atoms.append(mat)
            gram = sp.csr_matrix((n, n))
            for beta in self.monomials:
                bmat = sp.identity(n, format="csr")
                for axis, times in enumerate(beta):
                    for _ in range(times):
                        bmat = atoms[axis] @ bmat
                qmat = sp.diags((self.weights * self.monomial_validity(beta)).ravel())
                gram = gram + bmat.T @ qmat @ bmat
            self._gram_matrix = gram.tocsr()
        return self._gram_matrix

    # -- constrained (zero-trace) system ---------------------------------------

    @property
    def free_index(self) -> np.ndarray:
        return np.flatnonzero(self.mask.free.ravel())

    def constrained_gram(self) -> sp.csc_matrix:
        if self._free_matrix is None:
            free = self.free_index
            self._free_matrix = self.gram_matrix()[free][:, free].tocsc()
        return self._free_matrix

    def constrained_solver(self):
        if self._free_solve is None:
            self._free_solve = spla.factorized(self.constrained_gram())
        return self._free_solve


def zero_trace_project(space: SobolevSpace, f: Field) -> Field:
    """Zero the Cauchy-constrained degrees of freedom (both trace layers)."""
    out = f.values.copy()
    out[space.mask.constrained] = 0.0
    return Field(space.grid, out)


def riesz_solve(space: SobolevSpace, rhs: Field, tol: float = 1e-10,
                max_iters: int = 500, precondition: bool = True) -> Field:
    """Solve gram(g) = rhs on the zero-trace subspace by preconditioned CG.

    The returned g satisfies [g, h] = <rhs, h> (Euclidean pairing) for every
    zero-trace field h, up to the relative residual tolerance. The rhs must
    already be trace-projected. Non-convergence raises SolverError with the
    residual history attached; negative curvature raises IndefiniteGramError.
    """
    if tol <= 0:
        raise ConfigError(f"riesz tolerance must be positive, got {tol}")
    if np.any(rhs.values[space.mask.constrained] != 0.0):
        raise ConfigError("riesz_solve rhs is not zero-trace projected")

    free = space.free_index
    b = rhs.values.ravel()[free]
    bnorm = float(np.linalg.norm(b))
    out = np.zeros(space.grid.shape)
    if bnorm == 0.0:
        return Field(space.grid, out)

    amat = space.constrained_gram()
    msolve = space.constrained_solver() if precondition else (lambda r: r)

    x = np.zeros_like(b)
    r = b.copy()
    z = msolve(r)
    p = z.copy()
    rz = float(r @ z)
    history = [1.0]
    for _ in range(max_iters):
        ap = amat @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            raise IndefiniteGramError(
                f"negative curvature in Gram solve (p^T A p = {pap:.3g}); "
                "the discrete inner product is not positive definite"
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rel = float(np.linalg.norm(r)) / bnorm
        history.append(rel)
        if rel <= tol:
            out.ravel()[free] = x
            space.last_riesz_history = history
            logger.debug("riesz solve converged in %d iterations (rel %.3g)", len(history) - 1, rel)
            return Field(space.grid, out)
        z = msolve(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    err = SolverError(
        f"Gram CG did not reach tol={tol:.3g} within {max_iters} iterations "
        f"(last relative residual {history[-1]:.3g})"
    )
    err.residual_history = history
    raise err
