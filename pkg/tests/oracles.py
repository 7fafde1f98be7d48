"""Independent reference computations used only by the tests.

Nothing here calls into ``fraclap``: series are summed in stdlib
``decimal`` arithmetic and integrals use ``scipy.integrate``.
"""
from __future__ import annotations

import math
from decimal import Decimal, localcontext

import numpy as np
from scipy import integrate, special

PI_50 = Decimal("3.14159265358979323846264338327950288419716939937510")


def decimal_pfq(a, b, z, digits: int = 50, max_terms: int = 20_000) -> float:
    """pFq(a; b; z) summed term by term with ``digits`` significant digits."""
    with localcontext() as ctx:
        ctx.prec = digits
        a = [Decimal(repr(float(x))) for x in a]
        b = [Decimal(repr(float(x))) for x in b]
        z = Decimal(repr(float(z)))
        term, total = Decimal(1), Decimal(1)
        eps = Decimal(10) ** (-digits + 5)
        for k in range(max_terms):
            num = z
            for x in a:
                num *= x + k
            den = Decimal(k + 1)
            for x in b:
                den *= x + k
            term = term * num / den
            total += term
            if term == 0 or (abs(term) < eps * abs(total) and k > 5):
                break
        else:
            raise RuntimeError("decimal series did not converge")
        return float(total)


def decimal_bessel_j(nu: int, x: float, digits: int = 40) -> float:
    """Integer-order J_nu(x) from its power series in decimal arithmetic."""
    with localcontext() as ctx:
        ctx.prec = digits
        xd = Decimal(repr(float(x))) / 2
        term = (xd**nu if nu else Decimal(1)) / math.factorial(nu)
        total = term
        for k in range(1, 200):
            term = -term * xd * xd / (k * (k + nu))
            total += term
        return float(total)


def gamma_half_integer(n_half: int) -> float:
    """Gamma(n_half / 2) for odd n_half >= 1 by the exact product with sqrt(pi)."""
    with localcontext() as ctx:
        ctx.prec = 40
        val = PI_50.sqrt()
        x = Decimal(1) / 2
        target = Decimal(n_half) / 2
        while x < target:
            val *= x
            x += 1
        return float(val)


def euler_2f1(a: float, b: float, c: float, z: float) -> float:
    """2F1 via the Euler integral (requires c > b > 0, z < 1)."""
    if not c > b > 0:
        raise ValueError("Euler integral needs c > b > 0")
    f = lambda t: t ** (b - 1) * (1 - t) ** (c - b - 1) * (1 - z * t) ** (-a)
    val, _ = integrate.quad(f, 0, 1, epsabs=0, epsrel=1e-13, limit=400)
    return val * special.gamma(c) / (special.gamma(b) * special.gamma(c - b))


def frac_lap_inverse_multiquadric(alpha: float, x: float) -> float:
    """(-Lap)^(alpha/2) (1 + x^2)^-7 by quadrature of the Fourier symbol.

    The transform of (1+x^2)^-7 is 2 sqrt(pi)/Gamma(7) (|k|/2)^6.5 K_6.5(|k|).
    """
    pref = 2 * math.sqrt(math.pi) / math.gamma(7.0)
    fhat = lambda k: pref * (0.5 * k) ** 6.5 * special.kv(6.5, k) if k > 0 else pref * special.gamma(6.5) / 2
    g = lambda k: k**alpha * fhat(k)
    if x == 0:
        val, _ = integrate.quad(g, 0, np.inf, epsabs=0, epsrel=1e-12, limit=400)
    else:
        val, _ = integrate.quad(g, 0, 200, weight="cos", wvar=x, epsabs=1e-15, limit=400)
    return val / math.pi


def gauss_legendre_cell(n: int, half_width: float):
    """Nodes and weights of an ``n``-point Gauss-Legendre rule on [-w, w]."""
    t, w = np.polynomial.legendre.leggauss(n)
    return half_width * t, half_width * w
