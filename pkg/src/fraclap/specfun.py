"""Special-function kernels.

Gamma, generalized hypergeometric series, Bessel functions of the orders
needed for d <= 3, and moment integrals ``int_0^r t**lam * J_nu(t) dt``.

Scalar routines return Python floats; the ``hyp*_safe`` and ``bessel_j``
routines also accept numpy arrays and evaluate elementwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import mpmath
import numpy as np
from scipy.special import roots_jacobi, roots_legendre

EPS = np.finfo(float).eps

#: cancellation sentinel for :class:`SeriesResult`
CANCELLATION_RATIO = 1e8

#: largest argument evaluated by the power series in :func:`bessel_j`
BESSEL_SERIES_MAX_X = 12.0

#: smallest argument evaluated by the Hankel expansion in :func:`bessel_j`
BESSEL_ASYMPTOTIC_MIN_X = 25.0

#: largest ``r`` for which :func:`bessel_moment` uses the hypergeometric form
MOMENT_SERIES_MAX_R = 12.0

#: largest z summed directly by :func:`hyp2f1_safe` (about 4000 terms at 1e-16)
HYP2F1_SERIES_MAX_Z = 0.99

#: smallest ``r`` for which the large-argument moment expansion is accurate
MOMENT_ASYMPTOTIC_MIN_R = 40.0

PANEL_ORDER = 20


class DomainError(ValueError):
    """Raised when an argument lies outside a function's supported domain."""


@dataclass(frozen=True)
class SeriesResult:
    value: float
    terms_used: int
    est_abs_error: float
    cancellation_flag: bool


# ---------------------------------------------------------------------------
# Gamma
# ---------------------------------------------------------------------------

_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def sinpi(x: float) -> float:
    """sin(pi*x), exactly zero at integers."""
    r = math.fmod(x, 2.0)
    q = round(2.0 * r)
    y = r - 0.5 * q
    s, c = math.sin(math.pi * y), math.cos(math.pi * y)
    return (s, c, -s, -c)[int(q) % 4]


def sincospi(t):
    """Return ``(sin(pi*t), cos(pi*t))`` for an array, exact at multiples of 1/2."""
    t = np.asarray(t, dtype=float)
    r = np.mod(t, 2.0)
    q = np.rint(2.0 * r)
    y = r - 0.5 * q
    s = np.sin(np.pi * y)
    c = np.cos(np.pi * y)
    q = q.astype(np.int64) % 4
    sin = np.choose(q, [s, c, -s, -c])
    cos = np.choose(q, [c, -s, -c, s])
    return sin, cos


def _lanczos(x: float) -> float:
    # valid for x >= 0.5
    x -= 1.0
    acc = _LANCZOS_COEF[0]
    for i in range(1, len(_LANCZOS_COEF)):
        acc += _LANCZOS_COEF[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    if x < 140.0:
        half = t ** (0.5 * (x + 0.5))
        return math.sqrt(2.0 * math.pi) * half * (half * math.exp(-t)) * acc
    return math.exp(0.5 * math.log(2.0 * math.pi) + (x + 0.5) * math.log(t) - t + math.log(acc))


def gamma(x: float) -> float:
    """Gamma function for real ``x`` (Lanczos, reflection below 1/2)."""
    x = float(x)
    if x <= 0.0 and x == math.floor(x):
        raise DomainError(f"gamma has a pole at {x}")
    if x == math.floor(x) and x <= 171:
        # exact factorials at positive integers
        return float(math.factorial(int(x) - 1))
    if x < 0.5:
        return math.pi / (sinpi(x) * _lanczos(1.0 - x))
    return _lanczos(x)


def rgamma(x: float) -> float:
    """1/Gamma(x), zero at the poles."""
    x = float(x)
    if x <= 0.0 and x == math.floor(x):
        return 0.0
    return 1.0 / gamma(x)


# ---------------------------------------------------------------------------
# Generalized hypergeometric series
# ---------------------------------------------------------------------------

def _check_pfq(a: Sequence[float], b: Sequence[float], z: float, tol: float) -> None:
    if tol <= 0:
        raise DomainError("tol must be positive")
    for bm in b:
        if bm <= 0 and bm == math.floor(bm):
            raise DomainError(f"lower parameter {bm} is a nonpositive integer")
    terminating = any(al <= 0 and al == math.floor(al) for al in a)
    if terminating or z == 0:
        return
    if len(a) > len(b) + 1:
        raise DomainError(f"{len(a)}F{len(b)} series diverges for z != 0")
    if len(a) == len(b) + 1 and abs(z) >= 1:
        raise DomainError(f"{len(a)}F{len(b)} series requires |z| < 1, got {z}")


def pfq(
    a: Sequence[float],
    b: Sequence[float],
    z: float,
    tol: float = 1e-16,
    *,
    max_terms: int = 100_000,
    dps: int | None = None,
) -> SeriesResult:
    """Sum the generalized hypergeometric series pFq(a; b; z).

    Terms are generated by their Pochhammer ratio and accumulated with
    Neumaier compensation. Summation stops once three consecutive terms fall
    below ``tol * |partial sum|``.

    Parameters
    ----------
    a, b : sequences of float
        Upper and lower parameters.
    z : float
        Argument.
    tol : float
        Relative stopping threshold.
    dps : int, optional
        If given, the terms are summed in ``dps``-digit arithmetic and the
        result rounded to double. Use this when the double-precision sum
        reports cancellation.

    Returns
    -------
    SeriesResult
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    z = float(z)
    _check_pfq(a, b, z, tol)
    if z == 0.0:
        return SeriesResult(1.0, 1, 0.0, False)
    if dps is not None:
        return _pfq_mp(a, b, z, tol, max_terms, dps)

    p, q = len(a), len(b)
    term = 1.0
    total, comp = 1.0, 0.0
    sum_abs = 1.0
    max_partial = 1.0
    small = 0
    k = 0
    while True:
        num = z / (k + 1)
        for al in a:
            num *= al + k
        for bm in b:
            num /= bm + k
        term *= num
        k += 1
        if not math.isfinite(term):
            raise DomainError("series term overflowed")
        # Neumaier
        t = total + term
        if abs(total) >= abs(term):
            comp += (total - t) + term
        else:
            comp += (term - t) + total
        total = t
        sum_abs += abs(term) * (1.0 + math.sqrt(k) * (p + q + 2))
        max_partial = max(max_partial, abs(total + comp))
        value = total + comp
        if abs(term) < tol * abs(value) or term == 0.0:
            small += 1
            if small >= 3:
                break
        else:
            small = 0
        if k >= max_terms:
            raise DomainError(f"pfq did not converge in {max_terms} terms")

    value = total + comp
    tail = abs(term)
    if p == q + 1 and term != 0.0:
        tail = abs(term) * abs(z) / (1.0 - abs(z))
    est = EPS * sum_abs + tail
    flag = max_partial > CANCELLATION_RATIO * abs(value)
    return SeriesResult(value, k + 1, est, flag)


def _pfq_mp(a, b, z, tol, max_terms, dps) -> SeriesResult:
    with mpmath.workdps(dps):
        am = [mpmath.mpf(v) for v in a]
        bm = [mpmath.mpf(v) for v in b]
        zm = mpmath.mpf(z)
        term = mpmath.mpf(1)
        total = mpmath.mpf(1)
        max_partial = mpmath.mpf(1)
        small = 0
        k = 0
        while True:
            num = zm / (k + 1)
            for al in am:
                num *= al + k
            for bq in bm:
                num /= bq + k
            term *= num
            total += term
            k += 1
            max_partial = max(max_partial, abs(total))
            if abs(term) < tol * abs(total) or term == 0:
                small += 1
                if small >= 3:
                    break
            else:
                small = 0
            if k >= max_terms:
                raise DomainError(f"pfq did not converge in {max_terms} terms")
        value = float(total)
        rounding = float(max_partial) * 10.0 ** (-dps + 1)
        tail = float(abs(term))
        if len(a) == len(b) + 1 and term != 0:
            tail = tail * abs(z) / (1.0 - abs(z))
        # the double rounding of the final value is not an estimated error
        flag = bool(max_partial > CANCELLATION_RATIO * abs(total))
    return SeriesResult(value, k + 1, rounding + tail, flag)


def _series_array(a, b, z, tol=1e-16, max_terms=200_000):
    """Vectorized pFq series sum over an array of arguments."""
    z = np.asarray(z, dtype=float)
    term = np.ones_like(z)
    total = np.ones_like(z)
    comp = np.zeros_like(z)
    small = np.zeros(z.shape, dtype=np.int64)
    active = z != 0
    k = 0
    while active.any():
        num = z / (k + 1)
        for al in a:
            num = num * (al + k)
        for bm in b:
            num = num / (bm + k)
        term = np.where(active, term * num, 0.0)
        k += 1
        t = total + term
        comp += np.where(np.abs(total) >= np.abs(term), (total - t) + term, (term - t) + total)
        total = t
        value = total + comp
        tiny = (np.abs(term) < tol * np.abs(value)) | (term == 0.0)
        small = np.where(tiny, small + 1, 0)
        active &= small < 3
        if k >= max_terms:
            raise DomainError(f"series did not converge in {max_terms} terms")
    return total + comp


def _as_output(x, like):
    return float(x) if np.ndim(like) == 0 else x


def hyp2f1_safe(a: float, b: float, c: float, z):
    """Gauss hypergeometric function 2F1(a, b; c; z) for real z < 1.

    Negative arguments are mapped into [0, 1) by the Pfaff transformation
    2F1(a,b;c;z) = (1-z)^(-a) 2F1(a, c-b; c; z/(z-1)); arguments in [0, 1)
    are summed directly. Non-terminating series with z above
    ``HYP2F1_SERIES_MAX_Z`` converge too slowly and are delegated to
    ``mpmath.hyp2f1``, which applies the 1 - z connection formulas including
    their logarithmic cases.
    """
    if c <= 0 and c == math.floor(c):
        raise DomainError(f"c={c} is a nonpositive integer")
    zz = np.asarray(z, dtype=float)
    if np.any(zz >= 1.0):
        raise DomainError("hyp2f1_safe requires z < 1")
    out = np.empty_like(zz)
    neg = zz < 0
    near = ~neg & (zz > HYP2F1_SERIES_MAX_Z) & (not _terminates(a, b))
    direct = ~neg & ~near
    if np.any(direct):
        out[direct] = _series_array((a, b), (c,), zz[direct], max_terms=2_000_000)
    if np.any(near):
        out[near] = [_hyp2f1_near_one(a, b, c, v) for v in zz[near]]
    if np.any(neg):
        zn = zz[neg]
        w = zn / (zn - 1.0)
        out[neg] = (1.0 - zn) ** (-a) * _series_array((a, c - b), (c,), w, max_terms=2_000_000)
    return _as_output(out, z)


def _hyp2f1_near_one(a: float, b: float, c: float, z: float) -> float:
    with mpmath.workdps(30):
        val = mpmath.hyp2f1(a, b, c, z)
    if not mpmath.isfinite(val) or mpmath.im(val) != 0:
        raise DomainError(f"2F1({a}, {b}; {c}; {z}) is not finite")
    return float(val)


def _terminates(*params) -> bool:
    return any(p <= 0 and p == math.floor(p) for p in params)


def hyp1f1_safe(a: float, b: float, z):
    """Confluent hypergeometric function 1F1(a; b; z).

    Negative arguments use Kummer's transformation
    1F1(a;b;z) = e^z 1F1(b-a; b; -z) so that the summed series does not
    alternate.
    """
    if b <= 0 and b == math.floor(b):
        raise DomainError(f"b={b} is a nonpositive integer")
    zz = np.asarray(z, dtype=float)
    out = np.empty_like(zz)
    neg = zz < 0
    if np.any(~neg):
        out[~neg] = _series_array((a,), (b,), zz[~neg])
    if np.any(neg):
        zn = zz[neg]
        out[neg] = np.exp(zn) * _series_array((b - a,), (b,), -zn)
    return _as_output(out, z)


# ---------------------------------------------------------------------------
# Bessel functions of the first kind
# ---------------------------------------------------------------------------

_SUPPORTED_ORDERS = (-0.5, 0.0, 0.5, 1.0)


def _bessel_series(nu: float, x: np.ndarray) -> np.ndarray:
    term = (0.5 * x) ** nu / gamma(nu + 1.0)
    q = -0.25 * x * x
    total = term.copy()
    comp = np.zeros_like(x)
    for k in range(60):
        term = term * q / ((k + 1) * (k + 1 + nu))
        t = total + term
        comp += np.where(np.abs(total) >= np.abs(term), (total - t) + term, (term - t) + total)
        total = t
        if np.all(np.abs(term) <= 1e-17 * np.maximum(np.abs(total), 1e-300)):
            break
    return total + comp


def _bessel_asymptotic(nu: float, x: np.ndarray) -> np.ndarray:
    # Hankel expansion, each argument truncated at its smallest term
    mu = 4.0 * nu * nu
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    ak = np.ones_like(x)
    live = np.ones(x.shape, dtype=bool)
    prev = np.full_like(x, np.inf)
    for k in range(60):
        mag = np.abs(ak)
        live &= mag < prev
        if not live.any():
            break
        contrib = np.where(live, ak, 0.0)
        if k % 2 == 0:
            p += contrib * (-1.0) ** (k // 2)
        else:
            q += contrib * (-1.0) ** ((k - 1) // 2)
        prev = np.where(live, mag, prev)
        ak = ak * (mu - (2 * k + 1) ** 2) / ((k + 1) * 8.0 * x)
        if mu == 1.0:
            break
    s, c = sincospi(x / np.pi - 0.5 * nu - 0.25)
    return np.sqrt(2.0 / (np.pi * x)) * (p * c - q * s)


def _bessel_miller(nu: float, x: np.ndarray) -> np.ndarray:
    # backward recurrence from a high order, normalized by J0 + 2*sum J_2k = 1
    top = int(x.max() + 15 + math.sqrt(40.0 * x.max()))
    top += top % 2
    upper = np.zeros_like(x)
    cur = np.full_like(x, 1e-300)
    norm = np.zeros_like(x)
    order1 = np.zeros_like(x)
    for k in range(top, 0, -1):
        upper, cur = cur, (2.0 * k / x) * cur - upper
        # cur now holds the unnormalized J_{k-1}
        if k - 1 == 1:
            order1 = cur.copy()
        elif k - 1 > 0 and (k - 1) % 2 == 0:
            norm += 2.0 * cur
        big = np.abs(cur) > 1e250
        if big.any():
            scale = np.where(big, 1e-250, 1.0)
            cur, upper, norm, order1 = cur * scale, upper * scale, norm * scale, order1 * scale
    norm += cur
    return (cur if nu == 0.0 else order1) / norm


def bessel_j(nu: float, x):
    """Bessel function J_nu(x) for nu in {-1/2, 0, 1/2, 1} and x >= 0.

    Half-integer orders use their trigonometric closed forms. Orders 0 and 1
    use the power series up to ``BESSEL_SERIES_MAX_X``, Miller's backward
    recurrence up to ``BESSEL_ASYMPTOTIC_MIN_X`` and the Hankel expansion
    beyond.
    """
    if nu not in _SUPPORTED_ORDERS:
        raise DomainError(f"bessel_j supports orders {_SUPPORTED_ORDERS}, got {nu}")
    xx = np.asarray(x, dtype=float)
    if np.any(xx < 0):
        raise DomainError("bessel_j requires x >= 0")
    if nu == 0.5:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(xx > 0, np.sqrt(2.0 / (np.pi * xx)) * np.sin(xx), 0.0)
    elif nu == -0.5:
        if np.any(xx == 0):
            raise DomainError("J_{-1/2} is singular at 0")
        out = np.sqrt(2.0 / (np.pi * xx)) * np.cos(xx)
    else:
        out = np.empty_like(xx)
        low = xx <= BESSEL_SERIES_MAX_X
        high = xx >= BESSEL_ASYMPTOTIC_MIN_X
        mid = ~(low | high)
        if low.any():
            out[low] = _bessel_series(nu, xx[low])
        if mid.any():
            out[mid] = _bessel_miller(nu, xx[mid])
        if high.any():
            out[high] = _bessel_asymptotic(nu, xx[high])
    return _as_output(out, x)


# ---------------------------------------------------------------------------
# Bessel moments  int_0^r t^lam J_nu(t) dt
# ---------------------------------------------------------------------------

def _check_moment(lam: float, nu: float, r: float) -> None:
    if nu not in _SUPPORTED_ORDERS:
        raise DomainError(f"unsupported Bessel order {nu}")
    if r < 0:
        raise DomainError("r must be nonnegative")
    if lam + nu <= -1:
        raise DomainError("moment integral requires lam + nu > -1")


def moment_series(lam: float, nu: float, r: float) -> float:
    """Closed hypergeometric form of the Bessel moment.

    r^(lam+nu+1) / (2^nu (lam+nu+1) Gamma(nu+1))
        * 1F2((lam+nu+1)/2; nu+1, (lam+nu+3)/2; -r^2/4)

    The series is re-summed in extended precision when the double sum loses
    more than a few digits to cancellation.
    """
    _check_moment(lam, nu, r)
    if r == 0:
        return 0.0
    s = lam + nu + 1.0
    a, b, z = [0.5 * s], [nu + 1.0, 0.5 * s + 1.0], -0.25 * r * r
    value = pfq_accurate(a, b, z)
    return r**s / (2.0**nu * s * gamma(nu + 1.0)) * value


def pfq_accurate(a: Sequence[float], b: Sequence[float], z: float, rel: float = 1e-15) -> float:
    """pFq value good to about ``rel``, re-summed in extended precision if needed.

    The double-precision sum is accepted when its error estimate is below
    ``rel``; otherwise the working precision is raised until the rounding
    error of the largest partial sum is negligible against the value.
    """
    res = pfq(a, b, z)
    if not res.cancellation_flag and res.est_abs_error <= rel * abs(res.value):
        return res.value
    dps = 30 + int(math.ceil(math.log10(max(res.est_abs_error / EPS, 1.0))))
    for _ in range(8):
        res = pfq(a, b, z, dps=dps)
        if res.est_abs_error <= 0.01 * rel * abs(res.value):
            return res.value
        lost = math.log10(res.est_abs_error / (0.01 * rel * max(abs(res.value), 1e-300)))
        dps += int(math.ceil(lost)) + 10
    raise DomainError(f"pFq{tuple(a)};{tuple(b)} at z={z} did not reach rel={rel}")


@lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    return roots_legendre(n)


@lru_cache(maxsize=None)
def _gauss_jacobi(n: int, beta: float):
    return roots_jacobi(n, 0.0, beta)


def _smooth_part(nu: float, t: np.ndarray) -> np.ndarray:
    # t^(-nu) J_nu(t); entire in t^2 and evaluated only at t > 0
    if nu == -0.5:
        return math.sqrt(2.0 / math.pi) * np.cos(t)
    if nu == 0.5:
        return math.sqrt(2.0 / math.pi) * np.sin(t) / t
    return bessel_j(nu, t) / t**nu


def moment_quadrature(lam: float, nu: float, r: float, order: int = PANEL_ORDER) -> float:
    """Bessel moment by panel quadrature.

    Panels have length pi, the asymptotic spacing of Bessel zeros. The
    first panel uses Gauss-Jacobi nodes carrying the t^(lam+nu) behaviour at
    the origin; the remaining panels use Gauss-Legendre.
    """
    _check_moment(lam, nu, r)
    if r == 0:
        return 0.0
    beta = lam + nu
    first = min(math.pi, r)
    xj, wj = _gauss_jacobi(order, beta)
    tj = 0.5 * first * (xj + 1.0)
    total = (0.5 * first) ** (beta + 1.0) * float(np.dot(wj, _smooth_part(nu, tj)))
    if r <= math.pi:
        return total
    xg, wg = _gauss_legendre(order)
    edges = np.arange(math.pi, r, math.pi)
    edges = np.append(edges, r)
    lo, hi = edges[:-1], edges[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * xg[None, :]
    vals = nodes**lam * bessel_j(nu, nodes)
    panels = half * (vals @ wg)
    return total + math.fsum(panels)


def _asymptotic_coefficients(lam: float, nu: float, r_min: float) -> np.ndarray:
    """Coefficients c_n of the large-r tail expansion, truncated at the smallest term."""
    a = [1.0]
    for k in range(80):
        a.append(a[-1] * (4.0 * nu * nu - (2 * k + 1) ** 2) / ((k + 1) * 8.0))
    coef = []
    best = math.inf
    for n in range(80):
        c = 0.0
        for k in range(n + 1):
            mu = lam - 0.5 - k
            f = 1.0
            for j in range(n - k):
                f *= mu - j
            c += a[k] * f
        size = abs(c) / r_min**n
        # individual coefficients can nearly vanish, so divergence is only
        # trusted where the terms grow beyond n ~ r
        if n > r_min and size > best:
            break
        coef.append(c)
        if c != 0.0:
            best = min(best, size)
        if size < 1e-18 * abs(coef[0]):
            break
    return np.array(coef)


def moment_asymptotic(lam: float, nu: float, r_over_pi) -> np.ndarray:
    """Bessel moment for large r from its complete integral minus the tail.

    ``r_over_pi`` is r/pi so that the oscillatory phase is reduced exactly;
    for the 1D weights r/pi is an integer and the phase is exact.
    The complete integral is the Abel-regularized value
    2^lam Gamma((nu+lam+1)/2) / Gamma((nu-lam+1)/2), and the tail uses the
    Hankel expansion of J_nu integrated term by term.
    """
    s = np.asarray(r_over_pi, dtype=float)
    r = np.pi * s
    if np.any(r < MOMENT_ASYMPTOTIC_MIN_R):
        raise DomainError(f"asymptotic moment requires r >= {MOMENT_ASYMPTOTIC_MIN_R}")
    coef = _asymptotic_coefficients(lam, nu, float(r.min()))
    x = 1.0 / r
    even = np.zeros_like(r)
    odd = np.zeros_like(r)
    power = np.ones_like(r)
    for n, c in enumerate(coef):
        if n % 2 == 0:
            even += (-1.0) ** (n // 2) * c * power
        else:
            odd += (-1.0) ** ((n - 1) // 2) * c * power
        power = power * x
    complete = 2.0**lam * gamma(0.5 * (nu + lam + 1.0)) * rgamma(0.5 * (nu - lam + 1.0))
    sin, cos = sincospi(s - 0.5 * nu - 0.25)
    tail = math.sqrt(2.0 / math.pi) * r ** (lam - 0.5) * (-odd * cos - even * sin)
    return complete - tail


def bessel_moment(lam: float, nu: float, r: float, method: str = "auto") -> float:
    """Integral of t^lam J_nu(t) over [0, r].

    ``method`` is ``"series"`` (hypergeometric closed form), ``"quadrature"``
    (panel Gauss quadrature), ``"asymptotic"`` (large r only) or ``"auto"``,
    which uses the series up to ``MOMENT_SERIES_MAX_R`` and quadrature beyond.
    """
    _check_moment(lam, nu, r)
    if r == 0:
        return 0.0
    if method == "auto":
        method = "series" if r <= MOMENT_SERIES_MAX_R else "quadrature"
    if method == "series":
        return moment_series(lam, nu, r)
    if method == "quadrature":
        return moment_quadrature(lam, nu, r)
    if method == "asymptotic":
        return float(moment_asymptotic(lam, nu, r / math.pi))
    raise ValueError(f"unknown method {method!r}")
