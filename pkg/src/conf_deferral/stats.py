"""Self-contained hypothesis tests for the evaluation protocol.

Provides the Shapiro-Wilk normality test (Royston's AS R94
approximation), a one-tailed paired t-test (Student CDF via the
regularized incomplete beta function), and a one-tailed Wilcoxon
signed-rank test (exact null distribution by dynamic programming up to
25 effective pairs, normal approximation with tie and continuity
corrections beyond).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

EXACT_WILCOXON_LIMIT = 25


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n_effective: int
    method_note: str


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _norm_ppf(p: float) -> float:
    """Inverse standard normal CDF (Wichura's PPND16, AS 241)."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = q * (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
            + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
            + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
            + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
            + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
            + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
            + 4.2313330701600911252e1) * r + 1.0)
        return num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
            + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
            + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
            + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
            + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
            + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
            + 2.05319162663775882187e0) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
            + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
            + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
            + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
            + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
            + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz)."""
    max_iter = 300
    eps = 3e-14
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _student_t_sf(t: float, df: float) -> float:
    """Upper-tail probability P(T > t) for Student's t."""
    x = df / (df + t * t)
    tail = 0.5 * _betainc(df / 2.0, 0.5, x)
    return tail if t > 0 else 1.0 - tail


# Royston AS R94 polynomial coefficients (lowest order first).
_SW_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_SW_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_SW_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_SW_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_SW_C6 = (-0.4803, -0.082676, 0.0030302)
_SW_G = (-2.273, 0.459)
_PI6 = 1.90985931710274
_STQR = 1.04719755119660


def _poly(coeffs: Sequence[float], x: float) -> float:
    out = 0.0
    for c in reversed(coeffs):
        out = out * x + c
    return out


def shapiro_wilk(x: Sequence[float]) -> TestResult:
    """Shapiro-Wilk W test of normality (Royston AS R94).

    Valid for 3 <= n <= 5000 with non-constant input; the p-value is the
    upper tail of the transformed W statistic.
    """
    data = np.sort(np.asarray(x, dtype=np.float64))
    n = data.size
    if n < 3 or n > 5000:
        raise ValueError(f"shapiro_wilk requires 3 <= n <= 5000, got {n}")
    if data[0] == data[-1]:
        raise ValueError("shapiro_wilk requires non-constant input")

    m = np.array([_norm_ppf((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)])
    ssumm2 = float(m @ m)
    rsn = 1.0 / math.sqrt(n)
    a = np.empty(n, dtype=np.float64)
    a_n = _poly(_SW_C1, rsn) + m[-1] / math.sqrt(ssumm2)
    if n == 3:
        a_n = math.sqrt(0.5)
        a[:] = (-a_n, 0.0, a_n)
    elif n <= 5:
        phi = (ssumm2 - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n**2)
        a[1:-1] = m[1:-1] / math.sqrt(phi)
        a[-1] = a_n
        a[0] = -a_n
    else:
        a_n1 = _poly(_SW_C2, rsn) + m[-2] / math.sqrt(ssumm2)
        phi = (ssumm2 - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / (
            1.0 - 2.0 * a_n**2 - 2.0 * a_n1**2
        )
        a[2:-2] = m[2:-2] / math.sqrt(phi)
        a[-1], a[-2] = a_n, a_n1
        a[0], a[1] = -a_n, -a_n1

    centered = data - data.mean()
    denom = float(centered @ centered)
    if denom <= 0.0:
        raise ValueError("shapiro_wilk requires non-constant input")
    w = float(a @ data) ** 2 / denom
    w = min(w, 1.0)

    if n == 3:
        p = _PI6 * (math.asin(math.sqrt(w)) - _STQR)
        p = min(max(p, 0.0), 1.0)
        return TestResult(w, p, n, "AS R94 exact (n=3)")
    if n <= 11:
        gamma = _poly(_SW_G, float(n))
        inner = gamma - math.log1p(-w)
        if inner <= 0.0:
            return TestResult(w, 1.0, n, "AS R94 small-sample")
        w1 = -math.log(inner)
        mean = _poly(_SW_C3, float(n))
        sd = math.exp(_poly(_SW_C4, float(n)))
    else:
        w1 = math.log1p(-w)
        mean = _poly(_SW_C5, math.log(n))
        sd = math.exp(_poly(_SW_C6, math.log(n)))
    z = (w1 - mean) / sd
    p = 1.0 - _norm_cdf(z)
    note = "AS R94 small-sample" if n <= 11 else "AS R94 large-sample"
    return TestResult(w, p, n, note)


def paired_t_one_tailed(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """One-tailed paired t-test of H1: mean(a - b) > 0."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError("inputs must be 1-D and equal length")
    n = av.size
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = av - bv
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise ValueError("differences have zero variance")
    t = float(d.mean()) / (sd / math.sqrt(n))
    p = _student_t_sf(t, n - 1)
    return TestResult(t, p, n, f"paired t, df={n - 1}")


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sv = values[order]
    i = 0
    while i < sv.size:
        j = i
        while j + 1 < sv.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


@lru_cache(maxsize=256)
def _signed_rank_counts(doubled_ranks: tuple[int, ...]) -> np.ndarray:
    """Null counts of each achievable doubled negative-rank sum.

    Entry s counts the sign assignments whose negative ranks sum to s/2;
    all 2^n assignments are equally likely under the null. Treat the
    returned array as read-only (it is cached).
    """
    total = sum(doubled_ranks)
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[: total + 1 - r]
    return counts


def wilcoxon_one_tailed(a: Sequence[float], b: Sequence[float]) -> TestResult:
    """One-tailed Wilcoxon signed-rank test of H1: a tends to exceed b.

    Zero differences are dropped; tied magnitudes receive mid-ranks. The
    statistic is the negative-rank sum W-, small under H1, and the
    p-value is P(W- <= observed) under the sign-flip null: exact up to
    25 effective pairs, else a normal approximation with tie correction
    and a 0.5 continuity correction.
    """
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError("inputs must be 1-D and equal length")
    d = av - bv
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        raise ValueError("all differences are zero")
    ranks = _midranks(np.abs(d))
    w_minus = float(ranks[d < 0].sum())

    if n <= EXACT_WILCOXON_LIMIT:
        doubled = tuple(int(round(2.0 * r)) for r in sorted(ranks))
        counts = _signed_rank_counts(doubled)
        w2 = int(round(2.0 * w_minus))
        p = float(counts[: w2 + 1].sum()) / 2.0**n
        return TestResult(w_minus, min(p, 1.0), n, f"exact (n={n})")

    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    z = (w_minus - mu + 0.5) / math.sqrt(var)
    p = _norm_cdf(z)
    return TestResult(w_minus, p, n, "normal approximation with tie correction")
