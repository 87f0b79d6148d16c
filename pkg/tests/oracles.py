"""Independent reference computations used to freeze expected values in tests.

Everything here goes through ``scipy.stats`` and ``scipy.integrate.quad`` and
never imports ``rare_is``, so it stays a separate route from the code it checks.
Run as a script to print the frozen numbers used by the test-suite.
"""

import math

import numpy as np
from scipy import integrate, optimize, stats


def lognorm(m, sigma):
    return stats.lognorm(s=sigma, scale=math.exp(m))


def _quad(f, a, b, **kw):
    kw.setdefault("epsabs", 0.0)
    kw.setdefault("epsrel", 1e-11)
    kw.setdefault("limit", 400)
    val, _ = integrate.quad(f, a, b, **kw)
    return val


def left_tail_2(gamma, dist):
    """P(X1 + X2 <= gamma) via the symmetric split of the triangle."""
    h = 0.5 * gamma
    half = _quad(lambda x: dist.pdf(x) * dist.cdf(gamma - x), 0.0, h)
    return 2.0 * half - dist.cdf(h) ** 2


def left_tail_3(gamma, dist):
    return _quad(lambda x: dist.pdf(x) * left_tail_2(gamma - x, dist),
                 0.0, gamma, epsrel=1e-10)


def sum2_pdf(y, dist):
    if y <= 0.0:
        return 0.0
    h = 0.5 * y
    return 2.0 * _quad(lambda x: dist.pdf(x) * dist.pdf(y - x), 0.0, h)


def left_tail_4(gamma, dist):
    """P(S_4 <= gamma) = int f_{S2}(y) P(S_2 <= gamma - y) dy."""
    return _quad(lambda y: sum2_pdf(y, dist) * left_tail_2(gamma - y, dist),
                 0.0, gamma, epsrel=1e-9)


LEFT_TAIL = {1: lambda g, d: d.cdf(g), 2: left_tail_2, 3: left_tail_3,
             4: left_tail_4}


def left_tail(n, gamma, dist):
    return LEFT_TAIL[n](gamma, dist)


def threshold_for(n, alpha, dist, lo=1e-3, hi=10.0):
    """Threshold gamma with P(S_n <= gamma) = alpha (log-space root)."""
    return optimize.brentq(
        lambda g: math.log(left_tail(n, g, dist)) - math.log(alpha),
        lo, hi, xtol=1e-14, rtol=1e-12)


def twisted_mean(dist, mu):
    """E[X] under (1-mu) f e^{mu Lambda}, via t-space quadrature."""
    def integrand(x):
        return x * (1 - mu) * dist.pdf(x) * dist.sf(x) ** (-mu)
    return _quad(integrand, 0.0, np.inf, epsrel=1e-10)


def interference_mc_free(n, dist, x0, gamma, eta):
    """E[F_X0(gamma (S_n + eta))] for n <= 2 by quadrature."""
    if n == 1:
        return _quad(lambda x: dist.pdf(x) * x0.cdf(gamma * (x + eta)),
                     0.0, np.inf)
    if n == 2:
        return _quad(lambda y: sum2_pdf(y, dist) * x0.cdf(gamma * (y + eta)),
                     0.0, np.inf, epsrel=1e-9)
    raise ValueError(n)


def interference_reference(n, x0_db, x_db, eta_db, gamma_db, m=10**9, seed=2024,
                           chunk=10**6, mus=np.linspace(0.3, 0.9, 13)):
    """E[F_X0(gamma (S_n + eta))] with i.i.d. log-normal interferers, by constant HRT.

    ``x0_db`` and ``x_db`` are (median, scale) pairs in dB. One twist is picked
    by minimising a pilot second moment over ``mus``; returns (mean, std_error, mu).
    """
    xi = math.log(10.0) / 10.0
    m0, s0 = xi * x0_db[0], xi * x0_db[1]
    m1, s1 = xi * x_db[0], xi * x_db[1]
    eta, gamma = 10 ** (eta_db / 10), 10 ** (gamma_db / 10)
    from scipy.special import ndtr, ndtri

    def values(mu, u):
        log_q = np.log1p(-u) / (1.0 - mu)            # log survival of the draw
        x = np.exp(m1 - s1 * ndtri(np.exp(log_q)))
        log_w = (mu * log_q - math.log1p(-mu)).sum(axis=1)
        s = x.sum(axis=1)
        return ndtr((np.log(gamma * (s + eta)) - m0) / s0) * np.exp(log_w)

    rng = np.random.default_rng(seed)
    pilot = rng.random((10**6, n))
    mu = min(mus, key=lambda v: np.mean(values(v, pilot) ** 2))
    total = sq = 0.0
    done = 0
    while done < m:
        k = min(chunk, m - done)
        t = values(mu, rng.random((k, n)))
        total += math.fsum(t)
        sq += math.fsum(t * t)
        done += k
    mean = total / m
    var = (sq / m - mean * mean) * m / (m - 1)
    return mean, math.sqrt(var / m), float(mu)


if __name__ == "__main__":
    import sys

    d = lognorm(0.0, 1.0)
    # thresholds are rounded to 4 significant digits, then the oracle is re-evaluated there
    for n, alpha in [(2, 1e-4), (2, 1e-6), (3, 1e-4), (3, 1e-6)]:
        g = float("%.4g" % threshold_for(n, alpha, d))
        print(n, alpha, repr(g), repr(left_tail(n, g, d)), flush=True)
    for n, g in [(4, 0.5), (4, 1.05), (4, 0.58), (4, 0.37)]:
        print(n, g, repr(left_tail(n, g, d)), flush=True)
    if "--interference" in sys.argv:  # about 20 minutes
        print(repr(interference_reference(4, (10, 4), (0, 4), -10, -20)), flush=True)
