"""Uniform grids, grid functions and discrete norms.

Grid values are stored as numpy arrays of shape ``extents`` in row-major
(C) order: the last axis varies fastest. Coordinates along axis ``i`` are
``origin[i] + j * h`` for ``j = 0 .. extents[i] - 1``.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

Field = Callable[..., np.ndarray]


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a uniform tensor grid.

    Parameters
    ----------
    h : float
        Spacing, shared by all axes.
    extents : tuple of int
        Number of points per axis.
    origin : tuple of float
        Coordinate of index 0 along each axis.
    """

    h: float
    extents: tuple[int, ...]
    origin: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "extents", tuple(int(n) for n in self.extents))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"h must be positive and finite, got {self.h}")
        if len(self.extents) != len(self.origin):
            raise ValueError("extents and origin must have the same length")
        if not self.extents or any(n < 1 for n in self.extents):
            raise ValueError(f"extents must be >= 1, got {self.extents}")

    @classmethod
    def box(cls, h: float, bounds: Sequence[tuple[float, float]]) -> "GridSpec":
        """Grid of the points ``lo + j h`` lying strictly inside each ``(lo, hi)``.

        ``hi - lo`` must be a multiple of ``h`` up to rounding.
        """
        extents, origin = [], []
        for lo, hi in bounds:
            cells = (hi - lo) / h
            k = round(cells)
            if abs(cells - k) > 1e-9 * max(1.0, abs(cells)):
                raise ValueError(f"interval ({lo}, {hi}) is not a multiple of h={h}")
            extents.append(k - 1)
            origin.append(lo + h)
        return cls(float(h), tuple(extents), tuple(origin))

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def size(self) -> int:
        return int(np.prod(self.extents))

    def axis(self, i: int) -> np.ndarray:
        """Coordinates along axis ``i``."""
        return self.origin[i] + np.arange(self.extents[i]) * self.h

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis (``np.ix_`` layout)."""
        return np.ix_(*[self.axis(i) for i in range(self.dim)])

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Full coordinate arrays of shape ``extents``."""
        return tuple(np.broadcast_to(c, self.extents) for c in self.coordinates())

    def to_dict(self) -> dict:
        return {"h": self.h, "extents": list(self.extents), "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(float(d["h"]), tuple(d["extents"]), tuple(d["origin"]))


@dataclass(frozen=True)
class GridFunction:
    """Values on a :class:`GridSpec`; ``data`` has shape ``spec.extents``."""

    spec: GridSpec
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.dtype.kind not in "fc":
            data = data.astype(float)
        if data.shape != self.spec.extents:
            if data.size != self.spec.size:
                raise ValueError(f"data has {data.size} values, grid has {self.spec.size}")
            data = data.reshape(self.spec.extents)
        if not np.all(np.isfinite(data)):
            raise ValueError("grid function values must be finite")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _same(self, other)
        return GridFunction(self.spec, self.data + other.data)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _same(self, other)
        return GridFunction(self.spec, self.data - other.data)

    def __mul__(self, c: float) -> "GridFunction":
        return GridFunction(self.spec, c * self.data)

    __rmul__ = __mul__


def _same(u: GridFunction, v: GridFunction) -> None:
    if u.spec != v.spec:
        raise ValueError("grid functions live on different grids")


def sample(f: Field, spec: GridSpec) -> GridFunction:
    """Evaluate ``f(x0, x1, ...)`` at every grid point.

    ``f`` receives one broadcastable coordinate array per axis.
    """
    with np.errstate(all="ignore"):
        values = np.broadcast_to(np.asarray(f(*spec.coordinates())), spec.extents)
    bad = ~np.isfinite(values)
    if bad.any():
        idx = tuple(int(i[0]) for i in np.nonzero(bad))
        x = tuple(spec.origin[i] + idx[i] * spec.h for i in range(spec.dim))
        raise ValueError(f"non-finite sample {values[idx]} at index {idx}, x = {x}")
    return GridFunction(spec, values)


def norm_linf(u: GridFunction) -> float:
    return float(np.max(np.abs(u.data)))


def norm_l2(u: GridFunction) -> float:
    """Discrete l2 norm ``(h^d sum |u_j|^2)^(1/2)``."""
    return float(math.sqrt(u.spec.h**u.spec.dim * float(np.sum(np.abs(u.data) ** 2))))


def inner(u: GridFunction, v: GridFunction) -> complex:
    """Discrete inner product ``h^d sum u_j conj(v_j)``."""
    _same(u, v)
    return complex(u.spec.h**u.spec.dim * np.vdot(v.data, u.data))


def semi_discrete_ft(u: GridFunction, xi) -> complex | np.ndarray:
    """Semi-discrete Fourier transform ``h^d sum_j u_j exp(-i xi . x_j)``.

    ``xi`` is one frequency vector of length ``d`` or an array of shape
    ``(..., d)``; every component must lie in ``[-pi/h, pi/h]``. In one
    dimension a scalar or 1D array of frequencies is also accepted.
    """
    spec = u.spec
    xi = np.asarray(xi, dtype=float)
    if spec.dim == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
        xi = xi[..., None]
    if xi.shape[-1] != spec.dim:
        raise ValueError(f"frequency must have {spec.dim} components")
    limit = math.pi / spec.h * (1.0 + 1e-12)
    if np.any(np.abs(xi) > limit):
        raise ValueError("frequency outside the fundamental cell [-pi/h, pi/h]^d")
    flat = xi.reshape(-1, spec.dim)
    out = np.empty(flat.shape[0], dtype=complex)
    axes = [spec.axis(i) for i in range(spec.dim)]
    for q, w in enumerate(flat):
        # separable phase factors contracted axis by axis
        acc = u.data.astype(complex)
        for i in reversed(range(spec.dim)):
            acc = acc @ np.exp(-1j * w[i] * axes[i])
        out[q] = acc
    out *= spec.h**spec.dim
    return complex(out[0]) if xi.ndim == 1 else out.reshape(xi.shape[:-1])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_csv(u: GridFunction, path: str | Path) -> None:
    """Write ``u`` as CSV (``i0..,x0..,value``) plus a ``.json`` sidecar with the grid."""
    path = Path(path)
    spec = u.spec
    d = spec.dim
    complex_data = np.iscomplexobj(u.data)
    header = [f"i{k}" for k in range(d)] + [f"x{k}" for k in range(d)]
    header += ["value_re", "value_im"] if complex_data else ["value"]
    index = np.indices(spec.extents).reshape(d, -1).T
    coords = np.array(spec.origin) + index * spec.h
    flat = u.data.reshape(-1)
    lines = [",".join(header)]
    for idx, x, v in zip(index, coords, flat):
        row = [str(int(i)) for i in idx] + [f"{c:.17g}" for c in x]
        row += [f"{v.real:.17g}", f"{v.imag:.17g}"] if complex_data else [f"{v:.17g}"]
        lines.append(",".join(row))
    _atomic_write_text(path, "\n".join(lines) + "\n")
    _atomic_write_text(path.with_suffix(".json"), json.dumps(spec.to_dict(), indent=2) + "\n")


def read_csv(path: str | Path) -> GridFunction:
    """Inverse of :func:`write_csv`."""
    path = Path(path)
    spec = GridSpec.from_dict(json.loads(path.with_suffix(".json").read_text()))
    data = np.zeros(spec.extents, dtype=float)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        is_complex = "value_im" in (reader.fieldnames or [])
        if is_complex:
            data = data.astype(complex)
        for row in reader:
            idx = tuple(int(row[f"i{k}"]) for k in range(spec.dim))
            if is_complex:
                data[idx] = complex(float(row["value_re"]), float(row["value_im"]))
            else:
                data[idx] = float(row["value"])
    return GridFunction(spec, data)
