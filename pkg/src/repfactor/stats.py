"""Statistical tests over signature tables.

Pearson correlation, the Mann-Kendall trend test (normal approximation with
tie correction and continuity correction), Benjamini-Hochberg step-up FDR
control and a one-sample chi-square test for a variance, plus the analyses
that run them over a :class:`~repfactor.signatures.SignatureTable`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Mapping, Sequence

import numpy as np
from scipy import stats as _st

from .errors import (
    ConstantInput,
    InvalidP,
    InvalidQ,
    LengthMismatch,
    MissingProfile,
    NonPositiveReference,
    TooFewPoints,
    ZeroVariance,
)
from .model_io import LanguageProfile
from .signatures import SignatureTable

logger = logging.getLogger(__name__)

Direction = Literal["increasing", "decreasing", "none"]
PROPERTIES = ("unique_chars", "ttr", "data_size")


# --------------------------------------------------------------------------
# distributions


def normal_sf(z: float) -> float:
    """Upper tail of the standard normal."""
    return float(_st.norm.sf(z))


def normal_two_sided_p(z: float) -> float:
    return min(1.0, 2.0 * normal_sf(abs(z)))


def chi2_cdf(x: float, df: int) -> float:
    return float(_st.chi2.cdf(x, df))


def chi2_sf(x: float, df: int) -> float:
    return float(_st.chi2.sf(x, df))


# --------------------------------------------------------------------------
# elementary tests


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"lengths differ: {x.shape} vs {y.shape}")
    if x.size < 3:
        raise TooFewPoints(f"need at least 3 points, got {x.size}")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if np.ptp(x) == 0 or np.ptp(y) == 0 or sxx == 0 or syy == 0:
        raise ConstantInput("pearson correlation is undefined for a constant input")
    r = float(xc @ yc) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


@dataclass(frozen=True)
class TrendResult:
    group_id: str
    s_statistic: int
    z_score: float
    p_value: float
    direction: Direction
    variance: float
    p_adjusted: float | None = None


def mk_score(x: Sequence[float]) -> int:
    """``S = sum_{i<j} sign(x_j - x_i)``."""
    x = np.asarray(x, dtype=np.float64)
    diff = np.sign(x[None, :] - x[:, None])
    return int(np.triu(diff, k=1).sum())


def mk_variance(x: Sequence[float]) -> float:
    """Tie-corrected variance of ``S`` under the null."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    _, t = np.unique(x, return_counts=True)
    ties = int(np.sum(t * (t - 1) * (2 * t + 5)))
    return (n * (n - 1) * (2 * n + 5) - ties) / 18.0


def mann_kendall(series: Sequence[float], alpha: float = 0.05, group_id: str = "") -> TrendResult:
    """Two-sided Mann-Kendall trend test.

    Uses the normal approximation with continuity correction and a
    tie-corrected variance for every ``n``. ``direction`` is set when
    ``p < alpha``.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < 4:
        raise TooFewPoints(f"Mann-Kendall needs at least 4 points, got {x.size}")
    s = mk_score(x)
    var = mk_variance(x)
    if var <= 0:
        raise ZeroVariance("all values tied; the trend test is undefined")
    if s > 0:
        z = (s - 1) / math.sqrt(var)
    elif s < 0:
        z = (s + 1) / math.sqrt(var)
    else:
        z = 0.0
    p = normal_two_sided_p(z)
    direction: Direction = "none"
    if p < alpha:
        direction = "increasing" if s > 0 else "decreasing"
    return TrendResult(group_id, s, z, p, direction, var)


def bh_fdr(p_values: Sequence[float], q: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Benjamini-Hochberg step-up procedure.

    Returns
    -------
    rejected : bool ndarray
        True where the null is rejected at FDR level ``q``.
    adjusted : ndarray
        BH-adjusted p-values, in input order.
    """
    p = np.asarray(p_values, dtype=np.float64).reshape(-1)
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise InvalidP("p-values must lie in [0, 1]")
    if not 0 < q < 1:
        raise InvalidQ(f"q must be in (0, 1), got {q}")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    ranks = np.arange(1, m + 1)
    below = np.nonzero(ranked <= ranks * q / m)[0]
    rejected = np.zeros(m, dtype=bool)
    if below.size:
        rejected[order[: below[-1] + 1]] = True
    adj_sorted = np.minimum.accumulate((m * ranked / ranks)[::-1])[::-1]
    adjusted = np.empty(m)
    adjusted[order] = np.minimum(adj_sorted, 1.0)
    return rejected, adjusted


@dataclass(frozen=True)
class VarianceTestResult:
    chi2: float
    df: int
    p_value: float
    sample_variance: float
    reference_variance: float


def chi_square_variance(
    sample: Sequence[float],
    reference_variance: float,
    alternative: Literal["two-sided", "greater", "less"] = "two-sided",
) -> VarianceTestResult:
    """One-sample chi-square test of ``var(sample) == reference_variance``."""
    x = np.asarray(sample, dtype=np.float64)
    if x.size < 2:
        raise TooFewPoints(f"variance test needs at least 2 points, got {x.size}")
    if not reference_variance > 0:
        raise NonPositiveReference(f"reference variance must be > 0, got {reference_variance}")
    df = x.size - 1
    s2 = float(np.var(x, ddof=1))
    chi2 = df * s2 / reference_variance
    lower, upper = chi2_cdf(chi2, df), chi2_sf(chi2, df)
    if alternative == "two-sided":
        p = min(1.0, 2.0 * min(lower, upper))
    elif alternative == "greater":
        p = upper
    elif alternative == "less":
        p = lower
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    return VarianceTestResult(chi2, df, p, s2, float(reference_variance))


# --------------------------------------------------------------------------
# analyses over signature tables


def layer_trend_analysis(
    table: SignatureTable,
    category: str,
    alpha: float = 0.05,
    q: float = 0.05,
    min_layers: int = 4,
) -> list[TrendResult]:
    """Per-group Mann-Kendall over layers with BH correction across groups.

    A group is skipped (and logged) when it lacks any of the layers present
    for ``category`` or has fewer than ``min_layers`` of them. Directions
    come from the BH decision at level ``q``; ``alpha`` only governs the
    raw per-group results before correction.
    """
    sigs = table.select(category=category)
    all_layers = sorted({s.layer for s in sigs})
    raw = []
    for group in dict.fromkeys(s.group_id for s in sigs):
        layers, values = table.series(group, category)
        if layers != all_layers or len(layers) < max(min_layers, 4):
            logger.warning("skipping %s/%s: layers %s of %s", group, category, layers, all_layers)
            continue
        raw.append(mann_kendall(values, alpha=alpha, group_id=group))
    if not raw:
        return []
    rejected, adjusted = bh_fdr([r.p_value for r in raw], q)
    out = []
    for r, rej, adj in zip(raw, rejected, adjusted):
        direction: Direction = "none"
        if rej and r.s_statistic != 0:
            direction = "increasing" if r.s_statistic > 0 else "decreasing"
        out.append(TrendResult(r.group_id, r.s_statistic, r.z_score, r.p_value,
                               direction, r.variance, float(adj)))
    return out


def paired_values(
    table: SignatureTable, values: Mapping[str, float], layer: int, category: str
) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Groups with both a signature cell and a value: ``(groups, condensed, value)``."""
    cond = table.condensed(layer, category)
    groups = [g for g in cond if g in values]
    return (
        groups,
        np.array([cond[g] for g in groups], dtype=np.float64),
        np.array([values[g] for g in groups], dtype=np.float64),
    )


def property_values(profiles: Mapping[str, LanguageProfile], prop: str) -> dict[str, float]:
    if prop not in PROPERTIES:
        raise ValueError(f"unknown property {prop!r}; expected one of {PROPERTIES}")
    return {g: float(getattr(p, prop)) for g, p in profiles.items()}


def property_correlation(
    table: SignatureTable,
    profiles: Mapping[str, LanguageProfile],
    prop: str,
    layer: int,
    category: str,
) -> float:
    """Pearson r between condensed signatures and a corpus property across groups."""
    missing = [g for g in table.condensed(layer, category) if g not in profiles]
    if missing:
        raise MissingProfile(f"no language profile for {missing}")
    _, x, y = paired_values(table, property_values(profiles, prop), layer, category)
    return pearson(x, y)


def external_score_correlation(
    table: SignatureTable, scores: Mapping[str, float], layer: int, category: str = "ALL"
) -> float:
    """Pearson r between condensed signatures and external per-group scores.

    Only groups present in both the table cell set and ``scores`` take part.
    """
    _, x, y = paired_values(table, scores, layer, category)
    return pearson(x, y)


def variance_test(
    table: SignatureTable,
    diverse: Sequence[str],
    related: Sequence[str],
    layer: int,
    category: str,
    alternative: Literal["two-sided", "greater", "less"] = "two-sided",
) -> VarianceTestResult:
    """Test the diverse set's condensed-signature variance against the related set's.

    The related set's unbiased sample variance is the reference value.
    """
    cond = table.condensed(layer, category)
    d = [cond[g] for g in diverse if g in cond]
    r = [cond[g] for g in related if g in cond]
    if len(r) < 2:
        raise TooFewPoints(f"related set has {len(r)} groups with signatures; need 2")
    return chi_square_variance(d, float(np.var(r, ddof=1)), alternative)
