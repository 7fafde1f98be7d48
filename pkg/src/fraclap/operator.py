"""The discrete fractional Laplacian as a multilevel Toeplitz operator.

On a tensor grid the stencil weights depend only on the index lag, so the
operator restricted to the grid is a d-level symmetric Toeplitz matrix. It
is applied in O(M log M) by embedding its generating sequence in a d-level
circulant of per-axis size ``M_i >= 2 N_i - 1`` and diagonalizing that with
real-input FFTs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft

from .grid import GridFunction, GridSpec, semi_discrete_ft
from .weights import WeightTable, build_table, lag_grid


def smooth_size(n: int) -> int:
    """Smallest integer ``>= n`` whose prime factors are all ``<= 7``."""
    if n < 1:
        raise ValueError("n must be positive")
    m = n
    while True:
        k = m
        for p in (2, 3, 5, 7):
            while k % p == 0:
                k //= p
        if k == 1:
            return m
        m += 1


class DftProvider:
    """Real-input multidimensional DFT backed by ``scipy.fft``.

    The pocketfft backend of scipy allocates its work arrays per call and is
    safe to call from several threads at once. ``workers`` is forwarded to
    scipy.
    """

    def __init__(self, workers: int | None = None) -> None:
        self.workers = workers

    def forward(self, x: np.ndarray, shape: Sequence[int]) -> np.ndarray:
        """Zero-padded real-to-complex transform over all axes."""
        return scipy.fft.rfftn(x, s=tuple(shape), workers=self.workers)

    def inverse(self, y: np.ndarray, shape: Sequence[int]) -> np.ndarray:
        return scipy.fft.irfftn(y, s=tuple(shape), workers=self.workers)

    def forward_complex(self, x: np.ndarray) -> np.ndarray:
        return scipy.fft.fftn(x, workers=self.workers)

    def inverse_complex(self, y: np.ndarray) -> np.ndarray:
        return scipy.fft.ifftn(y, workers=self.workers)


DEFAULT_DFT = DftProvider()


def generating_array(table: WeightTable, extents: Sequence[int], embed: Sequence[int]) -> np.ndarray:
    """First column of the circulant embedding, shape ``embed``.

    Entry ``l`` holds the weight at lag ``l`` for ``0 <= l_i < N_i`` and at
    lag ``l - M`` for ``M_i - N_i < l_i < M_i``; the rest is zero.
    """
    d = len(extents)
    quadrant = table.lookup(lag_grid(extents))
    gen = np.zeros(tuple(embed), dtype=float)
    # mirror the nonnegative-lag block into every sign pattern
    for signs in np.ndindex(*(2,) * d):
        src, dst = [], []
        for axis, neg in enumerate(signs):
            n, m = extents[axis], embed[axis]
            if neg:
                if n == 1:
                    break
                src.append(slice(1, n))
                dst.append(np.arange(m - 1, m - n, -1))
            else:
                src.append(slice(0, n))
                dst.append(np.arange(n))
        else:
            gen[np.ix_(*dst)] = quadrant[tuple(src)]
    return gen


@dataclass(frozen=True, eq=False)
class FracLapOperator:
    """Immutable discrete fractional Laplacian on a grid with zero exterior.

    Attributes
    ----------
    alpha : float
        Order of the operator.
    spec : GridSpec
    table : WeightTable
    embed_extents : tuple of int
        Per-axis circulant sizes.
    circ_spectrum : ndarray
        Half-spectrum (``rfftn`` layout) of the circulant; real because the
        generating sequence is real and even.
    """

    alpha: float
    spec: GridSpec
    table: WeightTable
    embed_extents: tuple[int, ...]
    circ_spectrum: np.ndarray
    dft: DftProvider = DEFAULT_DFT

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def diagonal(self) -> float:
        """Weight at zero lag."""
        return float(self.table.values[0])

    def matvec(self, data: np.ndarray) -> np.ndarray:
        """Apply to a raw array of shape ``spec.extents`` via the circulant."""
        if self.alpha == 0:
            # the stencil is the identity; skip the transform round-off
            return np.array(data, dtype=np.result_type(data, float))
        return circulant_apply(self.circ_spectrum, data, self.embed_extents, self.dft)

    def dump_spectrum(self, path: str | Path) -> None:
        """Write the circulant eigenvalues as CSV ``k0..,eigenvalue`` (inspection aid)."""
        gen = generating_array(self.table, self.spec.extents, self.embed_extents)
        full = self.dft.forward_complex(gen).real
        idx = np.indices(full.shape).reshape(full.ndim, -1).T
        lines = [",".join([f"k{i}" for i in range(full.ndim)] + ["eigenvalue"])]
        for k, v in zip(idx, full.reshape(-1)):
            lines.append(",".join([str(int(i)) for i in k] + [f"{v:.17g}"]))
        Path(path).write_text("\n".join(lines) + "\n")


def circulant_apply(spectrum: np.ndarray, data: np.ndarray, embed: Sequence[int],
                    dft: DftProvider = DEFAULT_DFT) -> np.ndarray:
    """Zero-pad ``data`` to ``embed``, multiply by ``spectrum``, crop back."""
    out_shape = data.shape
    if np.iscomplexobj(data):
        return (circulant_apply(spectrum, data.real, embed, dft)
                + 1j * circulant_apply(spectrum, data.imag, embed, dft))
    full = dft.inverse(dft.forward(data, embed) * spectrum, embed)
    return full[tuple(slice(0, n) for n in out_shape)]


def build_operator(alpha: float, spec: GridSpec, dft: DftProvider = DEFAULT_DFT,
                   ball: str = "volume") -> FracLapOperator:
    """Assemble the weight table and circulant spectrum for ``spec``.

    ``ball`` selects the frequency ball of the stencil in two and three
    dimensions (see :func:`fraclap.weights.radius_factor`).

    Examples
    --------
    >>> op = build_operator(1.0, GridSpec(1.0, (4,), (0.0,)))
    >>> op.embed_extents
    (7,)
    """
    table = build_table(alpha, spec.h, spec.dim, spec.extents, ball)
    embed = tuple(smooth_size(2 * n - 1) for n in spec.extents)
    gen = generating_array(table, spec.extents, embed)
    spectrum = dft.forward(gen, embed)
    # the generating sequence is real and even; the imaginary part is round-off
    spectrum = np.ascontiguousarray(spectrum.real)
    spectrum.setflags(write=False)
    return FracLapOperator(float(alpha), spec, table, embed, spectrum, dft)


def _check_input(op: FracLapOperator, u: GridFunction) -> None:
    if u.spec != op.spec:
        raise ValueError("grid function and operator live on different grids")


def apply_fft(op: FracLapOperator, u: GridFunction) -> GridFunction:
    """Apply the operator through the circulant embedding."""
    _check_input(op, u)
    return GridFunction(op.spec, op.matvec(u.data))


def dense_matrix(op: FracLapOperator) -> np.ndarray:
    """Explicit ``N x N`` matrix in row-major point order."""
    spec = op.spec
    idx = np.indices(spec.extents).reshape(spec.dim, -1)
    sq = np.zeros((idx.shape[1], idx.shape[1]), dtype=np.int64)
    for axis in range(spec.dim):
        diff = idx[axis][:, None] - idx[axis][None, :]
        sq += diff * diff
    return op.table.lookup(sq)


def apply_dense(op: FracLapOperator, u: GridFunction) -> GridFunction:
    """Apply the operator by direct summation over the stored grid (O(N^2))."""
    _check_input(op, u)
    spec = op.spec
    if spec.size <= 4096:
        out = dense_matrix(op) @ u.data.reshape(-1)
        return GridFunction(spec, out.reshape(spec.extents))
    # row by row to bound memory
    idx = np.indices(spec.extents).reshape(spec.dim, -1)
    flat = u.data.reshape(-1)
    out = np.empty(flat.shape, dtype=np.result_type(flat, float))
    for k in range(idx.shape[1]):
        sq = np.zeros(idx.shape[1], dtype=np.int64)
        for axis in range(spec.dim):
            diff = idx[axis] - idx[axis][k]
            sq += diff * diff
        out[k] = op.table.lookup(sq) @ flat
    return GridFunction(spec, out.reshape(spec.extents))


def symbol_probe(op: FracLapOperator, xi, halfwidth: int) -> float:
    """Truncated discrete symbol of the operator at frequency ``xi``.

    The operator is applied to a unit spike at the centre of a grid of
    ``2 K + 1`` points per axis and the semi-discrete Fourier transform of
    the response is divided by ``h^d``. This equals
    ``sum_{|k|_inf <= K} w(|k|) exp(-i xi . k h)``, which tends to
    ``|xi|^alpha`` as ``K`` grows.
    """
    spec = op.spec
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.size != spec.dim:
        raise ValueError(f"xi must have {spec.dim} components")
    if np.any(np.abs(xi) > math.pi / spec.h * (1 + 1e-12)):
        raise ValueError("frequency outside the fundamental cell")
    K = int(halfwidth)
    aux = GridSpec(spec.h, (2 * K + 1,) * spec.dim, (-K * spec.h,) * spec.dim)
    probe = build_operator(op.alpha, aux, op.dft, op.table.ball)
    spike = np.zeros(aux.extents)
    spike[(K,) * spec.dim] = 1.0
    response = GridFunction(aux, probe.matvec(spike))
    return float(semi_discrete_ft(response, xi).real / spec.h**spec.dim)
