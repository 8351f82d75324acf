"""Agreement statistics between paired measurement series.

Bland-Altman bias and spread use the sample (n-1) standard deviation with
limits at exactly +/-2 SD. Correlation is the standard product-moment
coefficient; R squared comes from an ordinary least-squares fit of the
second series on the first, which for simple regression equals the squared
correlation (the test suite holds the two routes against each other).
"""

from dataclasses import dataclass

import numpy as np

from .errors import StatsError

FIELD_COLUMNS = {
    "E": "e_mps",
    "A": "a_mps",
    "EA": "ea_ratio",
    "DT": "dt_ms",
}

AGREEMENT_CSV_HEADER = "field,n,bias,sd,loa_low,loa_high,pearson_r,r_squared"


@dataclass(frozen=True)
class AgreementStats:
    n: int
    bias: float
    sd: float
    loa_low: float
    loa_high: float
    pearson_r: float
    r_squared: float


def _paired(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise StatsError("series must be one-dimensional")
    if len(a) != len(b):
        raise StatsError(f"series lengths differ: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise StatsError(f"need at least 2 pairs, got {len(a)}")
    return a, b


def bland_altman(a, b):
    """(bias, sd, loa_low, loa_high) of the paired differences a - b."""
    a, b = _paired(a, b)
    diffs = a - b
    bias = float(np.mean(diffs))
    sd = float(np.std(diffs, ddof=1))
    return bias, sd, bias - 2.0 * sd, bias + 2.0 * sd


def pearson(a, b) -> float:
    """Product-moment correlation; errors on a zero-variance series."""
    a, b = _paired(a, b)
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if denom == 0:
        raise StatsError("correlation undefined: a series has zero variance")
    return float(np.sum(da * db) / denom)


def r_squared(a, b) -> float:
    """Coefficient of determination of the OLS fit of b on a."""
    a, b = _paired(a, b)
    da = a - a.mean()
    sxx = float(np.sum(da * da))
    if sxx == 0:
        raise StatsError("regression undefined: predictor has zero variance")
    beta = float(np.sum(da * (b - b.mean()))) / sxx
    alpha = float(b.mean()) - beta * float(a.mean())
    residuals = b - (alpha + beta * a)
    ss_res = float(np.sum(residuals * residuals))
    ss_tot = float(np.sum((b - b.mean()) ** 2))
    if ss_tot == 0:
        raise StatsError("regression undefined: response has zero variance")
    return 1.0 - ss_res / ss_tot


def compare(a_by_key, b_by_key):
    """Pair two {key: value} series and compute all agreement statistics.

    Keys missing on either side are dropped; the count of dropped keys is
    returned alongside the stats.
    """
    common = sorted(set(a_by_key) & set(b_by_key))
    dropped = (len(a_by_key) - len(common)) + (len(b_by_key) - len(common))
    if not common:
        raise StatsError("no overlapping keys between the two series")
    a = np.array([a_by_key[k] for k in common], dtype=np.float64)
    b = np.array([b_by_key[k] for k in common], dtype=np.float64)
    if len(common) < 2:
        raise StatsError(f"need at least 2 overlapping keys, got {len(common)}")
    bias, sd, lo, hi = bland_altman(a, b)
    stats = AgreementStats(
        n=len(common),
        bias=bias,
        sd=sd,
        loa_low=lo,
        loa_high=hi,
        pearson_r=pearson(a, b),
        r_squared=r_squared(a, b),
    )
    return stats, dropped


def agreement_csv_text(rows) -> str:
    """rows: iterable of (field_name, AgreementStats)."""
    lines = [AGREEMENT_CSV_HEADER]
    for name, s in rows:
        lines.append(
            f"{name},{s.n},{s.bias:.6f},{s.sd:.6f},{s.loa_low:.6f},{s.loa_high:.6f},"
            f"{s.pearson_r:.6f},{s.r_squared:.6f}"
        )
    return "\n".join(lines) + "\n"
