"""Fractional Poisson and elliptic problems on boxes with exterior data.

The discrete problem is

    sum_i c_i (A_i u)_k + reaction * u_k = f(x_k)       for x_k in the box,
    u_j = g(x_j)                                         outside the box,

where ``A_i`` is the discrete fractional Laplacian of order ``alpha_i``.
Exterior data moves to the right-hand side, leaving a symmetric multilevel
Toeplitz system for the interior values. It is solved by preconditioned
conjugate gradients with FFT matrix-vector products.

In one dimension the system is positive definite. In two and three
dimensions the stencil symbol vanishes outside the frequency ball, so
without a reaction term the matrix has eigenvalues at round-off level and
CG stalls at the size of the right-hand side's component in those modes.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .grid import GridFunction, GridSpec, norm_l2, sample
from .operator import DEFAULT_DFT, build_operator, circulant_apply, dense_matrix
from .weights import weight

log = logging.getLogger(__name__)

Field = Callable[..., np.ndarray]

DEFAULT_TOL = 1e-12
DEFAULT_TAU_EXT = 1e-16
DENSE_MAX_N = 4096


class ConvergenceError(RuntimeError):
    """CG stopped without reaching the requested tolerance.

    Attributes
    ----------
    history : list of float
        Relative residual after every iteration.
    report : SolveReport
        Report for the last iterate.
    """

    def __init__(self, message: str, history: list[float], report: "SolveReport") -> None:
        super().__init__(message)
        self.history = history
        self.report = report


@dataclass(frozen=True)
class EllipticProblem:
    """Operator mixture, reaction, data and exterior truncation settings.

    Parameters
    ----------
    terms : sequence of (coefficient, alpha)
        The operator is ``sum coefficient * (-Laplacian)^(alpha/2)``.
    domain : GridSpec
        Interior grid of the box.
    rhs : callable
        Source ``f(x0, x1, ...)`` evaluated on the interior grid.
    reaction : float
        Coefficient of the zeroth-order term.
    exterior : callable, optional
        Exterior data ``g``; ``None`` means homogeneous.
    exterior_extent : float, optional
        Width of the exterior band kept around the box. ``None`` grows the
        band until ``|g| < tau_ext`` on its outer layer.
    tau_ext : float
        Truncation threshold for exterior data.
    ball : str
        Frequency ball of the stencil, see :func:`fraclap.weights.radius_factor`.
    """

    terms: tuple[tuple[float, float], ...]
    domain: GridSpec
    rhs: Field
    reaction: float = 0.0
    exterior: Field | None = None
    exterior_extent: float | None = None
    tau_ext: float = DEFAULT_TAU_EXT
    ball: str = "volume"

    def __post_init__(self) -> None:
        terms = tuple((float(c), float(a)) for c, a in self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ValueError("at least one operator term is required")
        for c, a in terms:
            if c < 0:
                raise ValueError(f"coefficients must be >= 0, got {c}")
            if not 0 < a <= 2:
                raise ValueError(f"alpha must lie in (0, 2], got {a}")
        if self.reaction < 0:
            raise ValueError("reaction must be >= 0")
        if sum(c for c, _ in terms) <= 0 and self.reaction <= 0:
            raise ValueError("operator is zero: all coefficients and the reaction vanish")
        if self.exterior_extent is not None and self.exterior_extent < 0:
            raise ValueError("exterior_extent must be >= 0")

    @property
    def diagonal(self) -> float:
        """Diagonal entry of the system matrix (constant along the grid)."""
        d, h = self.domain.dim, self.domain.h
        return self.reaction + sum(c * weight(a, h, d, 0, self.ball) for c, a in self.terms)


@dataclass
class SolveReport:
    """Outcome of :func:`solve`."""

    solution: GridFunction
    iterations: int
    relative_residual: float
    matvec_count: int
    wall_time: float
    tol: float
    residual_history: list[float] = field(default_factory=list)
    truncation: dict = field(default_factory=dict)
    problem: EllipticProblem | None = None

    def to_dict(self) -> dict:
        """JSON-ready summary; wall time is kept in a separate ``timing`` block."""
        p = self.problem
        spec = self.solution.spec
        out = {
            "alphas": [a for _, a in p.terms] if p else None,
            "coefficients": [c for c, _ in p.terms] if p else None,
            "reaction": p.reaction if p else None,
            "ball": p.ball if p else None,
            "h": spec.h,
            "extents": list(spec.extents),
            "origin": list(spec.origin),
            "tol": self.tol,
            "iterations": self.iterations,
            "relative_residual": self.relative_residual,
            "matvec_count": self.matvec_count,
            "truncation": self.truncation,
            "timing": {"wall_time_ms": 1e3 * self.wall_time},
        }
        return out


# ---------------------------------------------------------------------------
# system assembly
# ---------------------------------------------------------------------------

def _combined_spectrum(p: EllipticProblem, spec: GridSpec):
    spectrum, embed = None, None
    for c, a in p.terms:
        if c == 0:
            continue
        op = build_operator(a, spec, DEFAULT_DFT, p.ball)
        embed = op.embed_extents
        spectrum = c * op.circ_spectrum if spectrum is None else spectrum + c * op.circ_spectrum
    if spectrum is None:
        embed = tuple(2 * n - 1 for n in spec.extents)
        spectrum = np.zeros(tuple(embed[:-1]) + (embed[-1] // 2 + 1,))
    return spectrum, embed


def _extended_spec(spec: GridSpec, layers: int) -> GridSpec:
    # the box boundary itself plus `layers` further grid layers on each side
    return GridSpec(
        spec.h,
        tuple(n + 2 + 2 * layers for n in spec.extents),
        tuple(o - (1 + layers) * spec.h for o in spec.origin),
    )


def _outer_shell(values: np.ndarray) -> np.ndarray:
    mask = np.zeros(values.shape, dtype=bool)
    for axis in range(values.ndim):
        lo = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[axis], hi[axis] = 0, -1
        mask[tuple(lo)] = True
        mask[tuple(hi)] = True
    return values[mask]


def _exterior_layers(p: EllipticProblem) -> int:
    spec = p.domain
    if p.exterior_extent is not None:
        return int(math.floor(p.exterior_extent / spec.h + 1e-9))
    width = max(n + 1 for n in spec.extents) * spec.h
    layers = 0
    while True:
        ext = _extended_spec(spec, layers)
        with np.errstate(all="ignore"):
            g = np.broadcast_to(np.asarray(p.exterior(*ext.coordinates()), dtype=float), ext.extents)
        shell = _outer_shell(g)
        if not np.all(np.isfinite(shell)):
            raise ValueError("exterior data is not finite")
        if np.max(np.abs(shell)) < p.tau_ext:
            return layers
        if layers * spec.h > 20 * width:
            raise ValueError(
                "exterior data does not decay below tau_ext within 20 domain widths; "
                "set exterior_extent explicitly"
            )
        layers = max(1, 2 * layers)


def assemble_rhs(p: EllipticProblem) -> tuple[GridFunction, dict]:
    """Right-hand side with the exterior contribution moved over.

    Returns the interior right-hand side and a dictionary describing the
    exterior truncation.
    """
    spec = p.domain
    b = sample(p.rhs, spec).data.astype(float)
    info = {"tau_ext": p.tau_ext, "band": 0.0, "L": _half_width(spec, 0), "dropped_points": 0,
            "exterior": p.exterior is not None}
    if p.exterior is None:
        return GridFunction(spec, b), info
    layers = _exterior_layers(p)
    ext = _extended_spec(spec, layers)
    g = sample(p.exterior, ext).data.astype(float)
    inner = tuple(slice(1 + layers, 1 + layers + n) for n in spec.extents)
    g[inner] = 0.0
    # |w(n)| <= w(0) for every lag, so this bounds any single contribution
    bound = sum(c * weight(a, spec.h, spec.dim, 0, p.ball) for c, a in p.terms)
    small = (np.abs(g) * bound < p.tau_ext) & (g != 0)
    dropped = int(np.count_nonzero(small))
    g[small] = 0.0
    if np.any(g != 0):
        spectrum, embed = _combined_spectrum(p, ext)
        b -= circulant_apply(spectrum, g, embed)[inner]
    info.update(band=(1 + layers) * spec.h, L=_half_width(spec, 1 + layers), dropped_points=dropped)
    return GridFunction(spec, b), info


def _half_width(spec: GridSpec, layers: int) -> float:
    lo = [o - layers * spec.h for o in spec.origin]
    hi = [o + (n - 1 + layers) * spec.h for o, n in zip(spec.origin, spec.extents)]
    return float(max(max(abs(a), abs(b)) for a, b in zip(lo, hi)))


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def default_max_iter(spec: GridSpec, p: EllipticProblem | None = None,
                     tol: float = DEFAULT_TOL) -> int:
    """Iteration cap: ``10 sqrt(N)``, raised for long thin or ill-conditioned systems.

    With a problem given, the cap also covers the CG bound
    ``sqrt(kappa) ln(2 / tol) / 2`` for a condition estimate ``kappa``: the
    largest symbol value over the smallest, the latter taken as half of
    ``sum c (pi / W)^alpha`` for the widest side ``W`` of the box.
    """
    cap = max(math.ceil(10.0 * math.sqrt(spec.size)), 4 * max(spec.extents), 50)
    if p is not None:
        width = max(n + 1 for n in spec.extents) * spec.h
        top = p.reaction + sum(c * (math.pi * math.sqrt(spec.dim) / spec.h) ** a for c, a in p.terms)
        low = p.reaction + 0.5 * sum(c * (math.pi / width) ** a for c, a in p.terms)
        kappa = top / low
        cap = max(cap, math.ceil(0.5 * math.sqrt(kappa) * math.log(2.0 / tol)))
    return int(cap)


def pcg(matvec: Callable[[np.ndarray], np.ndarray], b: np.ndarray, diag: float, tol: float,
        max_iter: int, x0: np.ndarray | None = None,
        bnorm: float | None = None) -> tuple[np.ndarray, list[float], int]:
    """Jacobi-preconditioned conjugate gradients.

    Returns the iterate, the relative residual history (relative to
    ``bnorm``, default ``||b||``) and the number of matrix-vector products.
    """
    if bnorm is None:
        bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b) if x0 is None else x0.copy()
    if bnorm == 0.0:
        return x, [0.0], 0
    matvecs = 0
    if x0 is None:
        r = b.copy()
    else:
        r = b - matvec(x)
        matvecs += 1
    history = [float(np.linalg.norm(r)) / bnorm]
    if history[0] <= tol:
        return x, history, matvecs
    z = r / diag
    p = z.copy()
    rz = float(np.vdot(r, z))
    for _ in range(max_iter):
        q = matvec(p)
        matvecs += 1
        step = rz / float(np.vdot(p, q))
        x += step * p
        r -= step * q
        res = float(np.linalg.norm(r)) / bnorm
        history.append(res)
        if res <= tol:
            break
        z = r / diag
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, history, matvecs


#: restarts from the true residual when the recursive one drifts below it
MAX_RESTARTS = 5


def solve(p: EllipticProblem, tol: float = DEFAULT_TOL, max_iter: int | None = None) -> SolveReport:
    """Solve the discrete problem by matrix-free preconditioned CG.

    Raises
    ------
    ConvergenceError
        If the relative residual does not reach ``tol`` within ``max_iter``
        iterations. The exception carries the residual history and a report
        for the final iterate.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    start = time.perf_counter()
    spec = p.domain
    if max_iter is None:
        max_iter = default_max_iter(spec, p, tol)
    b, info = assemble_rhs(p)
    spectrum, embed = _combined_spectrum(p, spec)
    shift = p.reaction

    def matvec(v: np.ndarray) -> np.ndarray:
        out = circulant_apply(spectrum, v, embed)
        return out + shift * v if shift else out

    bnorm = float(np.linalg.norm(b.data))
    x, history, matvecs = pcg(matvec, b.data, p.diagonal, tol, max_iter)
    iterations = len(history) - 1
    true_res = 0.0
    if bnorm > 0:
        # residual of the returned iterate, not the recursively updated one
        true_res = float(np.linalg.norm(b.data - matvec(x))) / bnorm
        matvecs += 1
        restarts = 0
        while history[-1] <= tol < true_res and restarts < MAX_RESTARTS and iterations < max_iter:
            restarts += 1
            x_new, more, mv = pcg(matvec, b.data, p.diagonal, tol, max_iter - iterations,
                                  x0=x, bnorm=bnorm)
            new_res = float(np.linalg.norm(b.data - matvec(x_new))) / bnorm
            matvecs += mv + 1
            iterations += len(more) - 1
            history.extend(more[1:])
            if new_res >= true_res:
                break
            x, true_res = x_new, new_res
    report = SolveReport(GridFunction(spec, x), iterations, true_res, matvecs,
                         time.perf_counter() - start, tol, history, info, p)
    log.info("solve: N=%d iterations=%d residual=%.3e", spec.size, iterations, true_res)
    if max(history[-1], true_res) > tol:
        why = (f"within {max_iter} iterations" if iterations >= max_iter
               else f"residual stagnated after {iterations} iterations")
        raise ConvergenceError(
            f"CG did not reach tol={tol:g}: {why} (residual {true_res:.3e})", history, report)
    return report


def system_matrix(p: EllipticProblem) -> np.ndarray:
    """Dense system matrix on the interior grid (row-major point order)."""
    spec = p.domain
    if spec.size > DENSE_MAX_N:
        raise ValueError(f"dense assembly limited to N <= {DENSE_MAX_N}, got {spec.size}")
    mat = p.reaction * np.eye(spec.size)
    for c, a in p.terms:
        if c:
            mat += c * dense_matrix(build_operator(a, spec, DEFAULT_DFT, p.ball))
    return mat


def solve_dense(p: EllipticProblem) -> GridFunction:
    """Solve by Cholesky factorization of the dense system (validation path)."""
    b, _ = assemble_rhs(p)
    mat = system_matrix(p)
    factor = scipy.linalg.cho_factor(mat, lower=True)
    x = scipy.linalg.cho_solve(factor, b.data.reshape(-1))
    return GridFunction(p.domain, x.reshape(p.domain.extents))


def relative_l2_difference(u: GridFunction, v: GridFunction) -> float:
    """``||u - v|| / ||v||`` in the discrete l2 norm."""
    denom = norm_l2(v)
    return norm_l2(u - v) / denom if denom else norm_l2(u - v)


__all__: Sequence[str] = (
    "ConvergenceError", "EllipticProblem", "SolveReport", "assemble_rhs", "default_max_iter",
    "pcg", "relative_l2_difference", "solve", "solve_dense", "system_matrix",
)
