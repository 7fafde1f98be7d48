"""Weights of the spectral fractional-Laplacian stencil.

The weight coupling two grid points depends only on the squared Euclidean
index distance ``m = |k - j|^2``. At unit spacing, for ``n = sqrt(m) > 0``,

    w(n) = (2 pi)^(-d/2) n^-(alpha+d) * int_0^{n c pi} t^(alpha+d/2) J_{d/2-1}(t) dt

and ``w(0) = (c pi)^(alpha+d) / ((2 pi)^(d/2) 2^(d/2-1) (alpha+d) Gamma(d/2))``,
where ``c pi / h`` is the radius of the frequency ball (``c = zeta_d`` by
default, see :func:`radius_factor`). Values at spacing ``h`` follow from the
scaling law ``w_h = h^-alpha w_1``.

Evaluation strategy for ``n > 0`` with ``r = n c pi``:

* ``alpha == 0``: Kronecker delta (the identity operator);
* ``d == 1`` and ``alpha`` in {1, 2}: closed forms;
* ``r < MOMENT_ASYMPTOTIC_MIN_R``: the 1F2 series, re-summed in extended
  precision when the double sum cancels;
* otherwise: the large-argument expansion of the Bessel moment.

:func:`weight_oracle` evaluates the same quantity by panel quadrature and
shares no code with the fast paths beyond the Bessel function itself.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .specfun import (
    MOMENT_ASYMPTOTIC_MIN_R,
    DomainError,
    gamma,
    moment_asymptotic,
    moment_quadrature,
    moment_series,
)

log = logging.getLogger(__name__)

SUPPORTED_DIMS = (1, 2, 3)
CACHE_ENV = "FRACLAP_CACHE_DIR"

#: frequency-ball choices: equal volume with the cube, or inscribed in it
BALLS = ("volume", "inscribed")


def zeta(d: int) -> float:
    """Radius factor of the d-ball with the volume of the frequency cube.

    The ball of radius ``zeta(d) * pi / h`` has the volume of
    ``[-pi/h, pi/h]^d``. Returns ``(2/sqrt(pi)) * Gamma(d/2 + 1)^(1/d)``; ``zeta(1) == 1``.
    """
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    if d == 1:
        return 1.0
    return 2.0 / math.sqrt(math.pi) * gamma(0.5 * d + 1.0) ** (1.0 / d)


def radius_factor(d: int, ball: str = "volume") -> float:
    """Cutoff radius of the frequency ball in units of ``pi / h``.

    ``"volume"`` gives :func:`zeta`; ``"inscribed"`` gives 1, the ball
    inscribed in ``[-pi/h, pi/h]^d``. Both coincide in one dimension.
    """
    if ball == "volume":
        return zeta(d)
    if ball == "inscribed":
        return 1.0
    raise DomainError(f"ball must be one of {BALLS}, got {ball!r}")


def _check(alpha: float, h: float, d: int) -> None:
    if d not in SUPPORTED_DIMS:
        raise DomainError(f"dimension {d} not supported (use one of {SUPPORTED_DIMS})")
    if not alpha >= 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    if not h > 0:
        raise DomainError(f"h must be positive, got {h}")


def center_weight(alpha: float, d: int, ball: str = "volume") -> float:
    """Weight at zero lag and unit spacing."""
    if alpha == 0:
        return 1.0
    radius = radius_factor(d, ball) * math.pi
    return radius ** (alpha + d) / (
        (2.0 * math.pi) ** (0.5 * d) * 2.0 ** (0.5 * d - 1.0) * (alpha + d) * gamma(0.5 * d)
    )


def _closed_form_1d(alpha: float, n: np.ndarray) -> np.ndarray:
    # valid at integer lags only
    sign = np.where(n.astype(np.int64) % 2 == 0, 1.0, -1.0)
    if alpha == 1.0:
        return (sign - 1.0) / (math.pi * n * n)
    return 2.0 * sign / (n * n)


def _unit_weights(alpha: float, d: int, sq_lags: np.ndarray, ball: str) -> np.ndarray:
    """Weights at unit spacing for an array of distinct positive squared lags."""
    m = np.asarray(sq_lags, dtype=np.int64)
    out = np.empty(m.shape, dtype=float)
    if m.size == 0:
        return out
    if alpha == 0:
        out[:] = 0.0
        return out
    n = np.sqrt(m.astype(float))
    if d == 1 and alpha in (1.0, 2.0) and np.all(np.rint(n) ** 2 == m):
        return _closed_form_1d(alpha, np.rint(n))
    z = radius_factor(d, ball)
    lam, nu = alpha + 0.5 * d, 0.5 * d - 1.0
    scale = (2.0 * math.pi) ** (-0.5 * d) * n ** (-(alpha + d))
    r_over_pi = n * z if z != 1.0 else n
    far = r_over_pi * math.pi >= MOMENT_ASYMPTOTIC_MIN_R
    if far.any():
        out[far] = moment_asymptotic(lam, nu, r_over_pi[far])
    for i in np.flatnonzero(~far):
        out[i] = moment_series(lam, nu, math.pi * r_over_pi[i])
    return scale * out


# ---------------------------------------------------------------------------
# unit-spacing cache (memory, optionally mirrored to CSV)
# ---------------------------------------------------------------------------

class _UnitCache:
    """Sorted (sq_lag, value) arrays for one (alpha, d)."""

    def __init__(self, keys: np.ndarray, vals: np.ndarray) -> None:
        self.keys, self.vals = keys, vals

    def missing(self, uniq: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.keys, uniq)
        hit = pos < self.keys.size
        hit[hit] = self.keys[pos[hit]] == uniq[hit]
        return uniq[~hit]

    def merge(self, keys: np.ndarray, vals: np.ndarray) -> None:
        allk = np.concatenate([self.keys, keys])
        allv = np.concatenate([self.vals, vals])
        order = np.argsort(allk, kind="stable")
        self.keys, self.vals = allk[order], allv[order]

    def get(self, uniq: np.ndarray) -> np.ndarray:
        return self.vals[np.searchsorted(self.keys, uniq)]


_cache: dict[tuple[float, int, str], _UnitCache] = {}
_cache_lock = threading.Lock()


def _cache_file(alpha: float, d: int, ball: str) -> Path | None:
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    suffix = "" if ball == "volume" else f"_{ball}"
    return Path(root) / f"weights_alpha{alpha!r}_d{d}{suffix}.csv"


def _load_disk(alpha: float, d: int, ball: str) -> _UnitCache:
    path = _cache_file(alpha, d, ball)
    keys: list[int] = []
    vals: list[float] = []
    if path is not None and path.exists():
        with path.open(newline="") as fh:
            for row in csv.DictReader(fh):
                if float(row["alpha"]) == alpha and int(row["d"]) == d:
                    keys.append(int(row["sq_lag"]))
                    vals.append(float(row["omega_at_h1"]))
        log.debug("loaded %d cached weights from %s", len(keys), path)
    k = np.array(keys, dtype=np.int64)
    v = np.array(vals, dtype=float)
    order = np.argsort(k)
    return _UnitCache(k[order], v[order])


def _store_disk(alpha: float, d: int, ball: str, cache: _UnitCache) -> None:
    path = _cache_file(alpha, d, ball)
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    a = repr(float(alpha))
    with tmp.open("w", newline="") as fh:
        fh.write("alpha,d,sq_lag,omega_at_h1\n")
        fh.writelines(f"{a},{d},{m},{v:.17g}\n" for m, v in zip(cache.keys.tolist(), cache.vals.tolist()))
    os.replace(tmp, path)


def unit_weights(alpha: float, d: int, sq_lags: Sequence[int] | np.ndarray,
                 ball: str = "volume") -> np.ndarray:
    """Weights at unit spacing for arbitrary squared lags, memoized per (alpha, d, ball)."""
    alpha = float(alpha)
    _check(alpha, 1.0, d)
    radius_factor(d, ball)
    m = np.asarray(sq_lags, dtype=np.int64)
    if np.any(m < 0):
        raise DomainError("squared lags must be nonnegative")
    uniq, inverse = np.unique(m, return_inverse=True)
    key = (alpha, d, ball)
    with _cache_lock:
        cache = _cache.get(key)
        if cache is None:
            cache = _cache[key] = _load_disk(alpha, d, ball)
        missing = cache.missing(uniq)
        if missing.size:
            vals = np.empty(missing.shape)
            pos = missing > 0
            vals[pos] = _unit_weights(alpha, d, missing[pos], ball)
            vals[~pos] = center_weight(alpha, d, ball)
            cache.merge(missing, vals)
            _store_disk(alpha, d, ball, cache)
        found = cache.get(uniq)
    return found[inverse].reshape(m.shape)


def clear_cache() -> None:
    """Drop the in-memory weight cache."""
    with _cache_lock:
        _cache.clear()


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def weight(alpha: float, h: float, d: int, sq_lag: int, ball: str = "volume") -> float:
    """Stencil weight at spacing ``h`` for squared index lag ``sq_lag``.

    Examples
    --------
    >>> round(weight(2.0, 1.0, 1, 9), 15) == round(-2.0 / 9.0, 15)
    True
    """
    alpha, h = float(alpha), float(h)
    _check(alpha, h, d)
    if sq_lag < 0:
        raise DomainError("sq_lag must be nonnegative")
    if alpha == 0:
        return 1.0 if sq_lag == 0 else 0.0
    return h ** (-alpha) * float(unit_weights(alpha, d, [int(sq_lag)], ball)[0])


def weight_oracle(alpha: float, h: float, d: int, sq_lag: int, ball: str = "volume") -> float:
    """Independent quadrature evaluation of :func:`weight`.

    Zero lag uses the monomial integral over the frequency ball. Nonzero
    lags integrate ``t^(alpha+d/2) J_{d/2-1}(t)`` over ``[0, n zeta_d pi]``
    panel by panel; in one dimension the integrand is ``t^alpha cos t``.
    """
    alpha, h = float(alpha), float(h)
    _check(alpha, h, d)
    if sq_lag < 0:
        raise DomainError("sq_lag must be nonnegative")
    radius_factor(d, ball)
    if alpha == 0:
        return 1.0 if sq_lag == 0 else 0.0
    if sq_lag == 0:
        # (h/2pi)^d * |S^{d-1}| * R^(alpha+d) / (alpha+d), R = zeta pi / h
        sphere = 2.0 * math.pi ** (0.5 * d) / math.gamma(0.5 * d)
        radius = radius_factor(d, ball) * math.pi / h
        return (h / (2.0 * math.pi)) ** d * sphere * radius ** (alpha + d) / (alpha + d)
    n = math.sqrt(sq_lag)
    integral = moment_quadrature(alpha + 0.5 * d, 0.5 * d - 1.0, n * radius_factor(d, ball) * math.pi)
    return (2.0 * math.pi) ** (0.5 * d) / (n * h) ** (alpha + d) * (h / (2.0 * math.pi)) ** d * integral


@dataclass(frozen=True)
class WeightTable:
    """Weights for every squared lag realized on a grid.

    ``sq_lags`` is sorted and ``values[i]`` is the weight at ``sq_lags[i]``
    for spacing ``h``.
    """

    alpha: float
    dim: int
    h: float
    sq_lags: np.ndarray
    values: np.ndarray
    ball: str = "volume"

    @property
    def max_sq_lag(self) -> int:
        return int(self.sq_lags[-1])

    def __len__(self) -> int:
        return int(self.sq_lags.size)

    def __getitem__(self, sq_lag: int) -> float:
        i = np.searchsorted(self.sq_lags, sq_lag)
        if i >= self.sq_lags.size or self.sq_lags[i] != sq_lag:
            raise KeyError(sq_lag)
        return float(self.values[i])

    def lookup(self, sq_lag: np.ndarray) -> np.ndarray:
        """Vectorized lookup; every entry of ``sq_lag`` must be in the table."""
        sq_lag = np.asarray(sq_lag, dtype=np.int64)
        i = np.searchsorted(self.sq_lags, sq_lag)
        i = np.minimum(i, self.sq_lags.size - 1)
        if not np.array_equal(self.sq_lags[i], sq_lag):
            raise KeyError("squared lag outside table")
        return self.values[i]

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.sq_lags.tolist(), self.values.tolist()))


def lag_grid(extents: Sequence[int]) -> np.ndarray:
    """Squared lengths of the nonnegative lag vectors, shape ``extents``."""
    sq = np.zeros(tuple(int(n) for n in extents), dtype=np.int64)
    for axis, n in enumerate(extents):
        shape = [1] * len(extents)
        shape[axis] = int(n)
        sq = sq + (np.arange(int(n), dtype=np.int64) ** 2).reshape(shape)
    return sq


def build_table(alpha: float, h: float, d: int, extents: Sequence[int],
                ball: str = "volume") -> WeightTable:
    """Weights for all squared lags realizable on a grid with the given extents.

    Examples
    --------
    >>> build_table(1.0, 0.5, 1, [4]).sq_lags.tolist()
    [0, 1, 4, 9]
    """
    alpha, h = float(alpha), float(h)
    _check(alpha, h, d)
    if len(extents) != d:
        raise DomainError(f"expected {d} extents, got {len(extents)}")
    if any(int(n) < 1 for n in extents):
        raise DomainError("extents must be >= 1")
    sq = np.unique(lag_grid(extents))
    if alpha == 0:
        vals = (sq == 0).astype(float)
    else:
        vals = h ** (-alpha) * unit_weights(alpha, d, sq, ball)
    sq.setflags(write=False)
    vals.setflags(write=False)
    return WeightTable(alpha, d, h, sq, vals, ball)
