"""Nonparametric battery: Wilcoxon signed-rank (exact and approximate),
Kruskal-Wallis, Friedman, Dunn post hoc with Sidak adjustment, Shapiro-Wilk
normality, and Cohen's d effect sizes."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .special import chi2_sf, normal_ppf, normal_sf

EXACT_WILCOXON_MAX_N = 20


class AllZeroDifferences(ValueError):
    pass


class DegenerateGroups(ValueError):
    pass


class TooFewRows(ValueError):
    pass


class NOutOfRange(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    method: str
    df: float | None = None
    effect_size: float | None = None
    z_value: float | None = None
    note: str | None = None


@dataclass(frozen=True)
class PairwiseComparison:
    group_a: int
    group_b: int
    z_value: float
    p_raw: float
    p_adjusted: float
    effect_size: float | None = None


def ranks_with_ties(values) -> list[float]:
    """Ranks starting at 1, average rank over tied runs."""
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def _tie_term(values) -> float:
    """Sum of t^3 - t over tied runs."""
    counts: dict = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    return float(sum(t**3 - t for t in counts.values() if t > 1))


def _mean(values) -> float:
    return sum(values) / len(values)


def _sd(values, ddof: int = 1) -> float:
    m = _mean(values)
    n = len(values)
    if n - ddof <= 0:
        raise ZeroVariance("not enough values for a standard deviation")
    return math.sqrt(sum((v - m) ** 2 for v in values) / (n - ddof))


def cohens_d_paired(differences) -> float:
    """mean(diff) / sd(diff) with the n-1 denominator."""
    diffs = [float(v) for v in differences]
    if len(diffs) < 2:
        raise ZeroVariance("need at least 2 paired differences")
    sd = _sd(diffs)
    if sd == 0.0:
        raise ZeroVariance("paired differences have zero variance")
    return _mean(diffs) / sd


def cohens_d_groups(a, b) -> float:
    """Mean difference over the pooled standard deviation."""
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    if len(a) < 2 or len(b) < 2:
        raise ZeroVariance("need at least 2 values per group")
    va = _sd(a) ** 2
    vb = _sd(b) ** 2
    pooled = math.sqrt(((len(a) - 1) * va + (len(b) - 1) * vb) / (len(a) + len(b) - 2))
    if pooled == 0.0:
        raise ZeroVariance("pooled standard deviation is zero")
    return (_mean(a) - _mean(b)) / pooled


def _exact_signed_rank_p(scaled_ranks: list[int], w2_obs: float) -> float:
    """Two-sided exact p over all sign assignments.

    Works on doubled ranks (always integers, even with tie-averaged halves)
    via a counting convolution; by the symmetry of the null distribution the
    two-sided tail is twice the lower tail of W+ at the observed min.
    """
    total = sum(scaled_ranks)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in scaled_ranks:
        for s in range(total - r, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
    lower = sum(counts[: int(w2_obs) + 1])
    return min(1.0, 2.0 * lower / (2 ** len(scaled_ranks)))


def wilcoxon_signed_rank(pairs) -> TestResult:
    """Two-sided signed-rank test on paired samples.

    Zero differences are dropped. Exact enumeration up to 20 nonzero
    differences, normal approximation with continuity and tie corrections
    above. The reported statistic is W = min(W+, W-); z is reported
    alongside, and the effect size is Cohen's d on the raw differences.
    """
    diffs = [float(a) - float(b) for a, b in pairs]
    nonzero = [d for d in diffs if d != 0.0]
    m = len(nonzero)
    if m == 0:
        raise AllZeroDifferences("every paired difference is zero")
    ranks = ranks_with_ties([abs(d) for d in nonzero])
    w_plus = sum(r for r, d in zip(ranks, nonzero) if d > 0)
    w_minus = sum(r for r, d in zip(ranks, nonzero) if d < 0)
    w = min(w_plus, w_minus)

    mu = m * (m + 1) / 4.0
    tie_term = _tie_term([abs(d) for d in nonzero])
    sigma_sq = m * (m + 1) * (2 * m + 1) / 24.0 - tie_term / 48.0
    sigma = math.sqrt(sigma_sq) if sigma_sq > 0 else 0.0
    z = (w - mu + 0.5) / sigma if sigma > 0 else 0.0

    if m <= EXACT_WILCOXON_MAX_N:
        scaled = [int(round(2 * r)) for r in ranks]
        p = _exact_signed_rank_p(scaled, round(2 * w))
        method = "wilcoxon_signed_rank_exact"
    else:
        p = min(1.0, 2.0 * normal_sf(-z)) if sigma > 0 else 1.0
        method = "wilcoxon_signed_rank_normal"

    try:
        effect = cohens_d_paired(diffs)
    except ZeroVariance:
        effect = None
    return TestResult(w, p, method, df=None, effect_size=effect, z_value=z)


def kruskal_wallis(groups) -> TestResult:
    """Tie-corrected Kruskal-Wallis H across k independent groups.

    All-identical data yields the degenerate convention H = 0, p = 1 with a
    note instead of an error. Effect size is eta-squared based on H.
    """
    groups = [[float(v) for v in g] for g in groups]
    k = len(groups)
    if k < 2 or any(len(g) == 0 for g in groups):
        raise ValueError("need k >= 2 non-empty groups")
    n = sum(len(g) for g in groups)
    if n < k + 1:
        raise ValueError(f"need at least k+1 total observations, got {n}")
    pooled = [v for g in groups for v in g]
    ranks = ranks_with_ties(pooled)
    idx = 0
    h = 0.0
    for g in groups:
        r_sum = sum(ranks[idx : idx + len(g)])
        idx += len(g)
        h += r_sum * r_sum / len(g)
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    correction = 1.0 - _tie_term(pooled) / (n**3 - n)
    df = k - 1
    if correction <= 0.0:
        return TestResult(0.0, 1.0, "kruskal_wallis", df=df, effect_size=None,
                          note="degenerate: all values identical")
    h /= correction
    eta_sq = (h - k + 1) / (n - k)
    return TestResult(h, chi2_sf(h, df), "kruskal_wallis", df=df, effect_size=eta_sq)


def friedman(matrix) -> TestResult:
    """Tie-corrected Friedman chi-squared over an n-subjects x k-conditions block."""
    rows = [[float(v) for v in row] for row in matrix]
    n = len(rows)
    if n < 2:
        raise TooFewRows(f"need at least 2 subjects, got {n}")
    k = len(rows[0])
    if k < 3:
        raise ValueError(f"need at least 3 conditions, got {k}")
    if any(len(row) != k for row in rows):
        raise ValueError("all rows must have the same number of conditions")

    col_rank_sums = [0.0] * k
    ties = 0.0
    for row in rows:
        row_ranks = ranks_with_ties(row)
        ties += _tie_term(row)
        for j, r in enumerate(row_ranks):
            col_rank_sums[j] += r
    chi2 = 12.0 / (n * k * (k + 1)) * sum(r * r for r in col_rank_sums) - 3.0 * n * (k + 1)
    correction = 1.0 - ties / (n * k * (k * k - 1))
    df = k - 1
    if correction <= 0.0:
        return TestResult(0.0, 1.0, "friedman", df=df,
                          note="degenerate: constant within every row")
    chi2 /= correction
    return TestResult(chi2, chi2_sf(chi2, df), "friedman", df=df)


def sidak_adjust(p_raw: float, m: int) -> float:
    """Family-wise adjustment 1 - (1 - p)^m, clamped to [0, 1]."""
    return max(0.0, min(1.0, 1.0 - (1.0 - p_raw) ** m))


def dunn_sidak_grouped(groups) -> list[PairwiseComparison]:
    """Dunn's pairwise z on pooled mean ranks after a Kruskal-Wallis omnibus."""
    groups = [[float(v) for v in g] for g in groups]
    k = len(groups)
    n = sum(len(g) for g in groups)
    pooled = [v for g in groups for v in g]
    ranks = ranks_with_ties(pooled)
    mean_ranks = []
    idx = 0
    for g in groups:
        mean_ranks.append(sum(ranks[idx : idx + len(g)]) / len(g))
        idx += len(g)
    tie_term = _tie_term(pooled)
    base_var = n * (n + 1) / 12.0 - tie_term / (12.0 * (n - 1))
    m = k * (k - 1) // 2
    out = []
    for i in range(k):
        for j in range(i + 1, k):
            se = math.sqrt(base_var * (1.0 / len(groups[i]) + 1.0 / len(groups[j])))
            z = (mean_ranks[i] - mean_ranks[j]) / se if se > 0 else 0.0
            p_raw = min(1.0, 2.0 * normal_sf(abs(z)))
            try:
                d = cohens_d_groups(groups[i], groups[j])
            except ZeroVariance:
                d = None
            out.append(PairwiseComparison(i, j, z, p_raw, sidak_adjust(p_raw, m), d))
    return out


def dunn_sidak_blocked(matrix) -> list[PairwiseComparison]:
    """Dunn's pairwise z on within-row mean ranks after a Friedman omnibus."""
    rows = [[float(v) for v in row] for row in matrix]
    n = len(rows)
    k = len(rows[0])
    mean_ranks = [0.0] * k
    for row in rows:
        for j, r in enumerate(ranks_with_ties(row)):
            mean_ranks[j] += r / n
    se = math.sqrt(k * (k + 1) / (6.0 * n))
    m = k * (k - 1) // 2
    out = []
    for i in range(k):
        for j in range(i + 1, k):
            z = (mean_ranks[i] - mean_ranks[j]) / se
            p_raw = min(1.0, 2.0 * normal_sf(abs(z)))
            diffs = [row[i] - row[j] for row in rows]
            try:
                d = cohens_d_paired(diffs)
            except ZeroVariance:
                d = None
            out.append(PairwiseComparison(i, j, z, p_raw, sidak_adjust(p_raw, m), d))
    return out


def shapiro_wilk(values) -> TestResult:
    """Shapiro-Wilk W and p via Royston's approximation (3 <= n <= 5000)."""
    x = sorted(float(v) for v in values)
    n = len(x)
    if not (3 <= n <= 5000):
        raise NOutOfRange(f"need 3 <= n <= 5000, got {n}")
    mean = _mean(x)
    ss = sum((v - mean) ** 2 for v in x)
    if ss == 0.0:
        raise ZeroVariance("sample has zero range")

    m = [normal_ppf((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)]
    mm = sum(v * v for v in m)
    rsn = 1.0 / math.sqrt(n)
    a = [0.0] * n
    cn = m[n - 1] / math.sqrt(mm)
    an = (
        -2.706056 * rsn**5 + 4.434685 * rsn**4 - 2.071190 * rsn**3
        - 0.147981 * rsn**2 + 0.221157 * rsn + cn
    )
    if n > 5:
        cn1 = m[n - 2] / math.sqrt(mm)
        an1 = (
            -3.582633 * rsn**5 + 5.682633 * rsn**4 - 1.752461 * rsn**3
            - 0.293762 * rsn**2 + 0.042981 * rsn + cn1
        )
        phi = (mm - 2.0 * m[n - 1] ** 2 - 2.0 * m[n - 2] ** 2) / (
            1.0 - 2.0 * an**2 - 2.0 * an1**2
        )
        a[n - 1], a[n - 2] = an, an1
        a[0], a[1] = -an, -an1
        for i in range(2, n - 2):
            a[i] = m[i] / math.sqrt(phi)
    elif n == 3:
        a[0], a[2] = -math.sqrt(0.5), math.sqrt(0.5)
    else:
        phi = (mm - 2.0 * m[n - 1] ** 2) / (1.0 - 2.0 * an**2)
        a[n - 1], a[0] = an, -an
        for i in range(1, n - 1):
            a[i] = m[i] / math.sqrt(phi)

    w_num = sum(ai * xi for ai, xi in zip(a, x)) ** 2
    w = min(1.0, w_num / ss)

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        p = max(0.0, min(1.0, p))
        return TestResult(w, p, "shapiro_wilk")
    one_minus_w = max(1e-300, 1.0 - w)
    if n <= 11:
        gamma = -2.273 + 0.459 * n
        if gamma - math.log(one_minus_w) <= 0.0:
            return TestResult(w, 0.0, "shapiro_wilk")
        g = -math.log(gamma - math.log(one_minus_w))
        mu = 0.5440 - 0.39978 * n + 0.025054 * n**2 - 0.0006714 * n**3
        sigma = math.exp(1.3822 - 0.77857 * n + 0.062767 * n**2 - 0.0020322 * n**3)
        z = (g - mu) / sigma
    else:
        ln_n = math.log(n)
        g = math.log(one_minus_w)
        mu = -1.5861 - 0.31082 * ln_n - 0.083751 * ln_n**2 + 0.0038915 * ln_n**3
        sigma = math.exp(-0.4803 - 0.082676 * ln_n + 0.0030302 * ln_n**2)
        z = (g - mu) / sigma
    return TestResult(w, normal_sf(z), "shapiro_wilk", z_value=z)
