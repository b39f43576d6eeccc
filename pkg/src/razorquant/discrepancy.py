"""Uniformity analysis of bit-allocation plans over the channel axis.

A plan's 4-bit rows map to points (i + 0.5) / d_out in [0, 1).  The star
discrepancy of that point set bounds, via the classical variation
inequality for quasi-Monte-Carlo sums, how far the mean salience over
the chosen rows can drift from the mean over all rows:

    |mean_chosen(S) - mean_all(S)| <= total_variation(S) * D*

Treating the per-row salience profile as a step function on [0, 1) makes
the left side exact to evaluate, so the bound is directly testable.  The
surrogate objective scores a plan by the salience-weighted per-row error
it implies when 4-bit rows err by err_four_bit and ternary rows by
err_ternary; at a fixed 4-bit budget, minimizing it is the same as
maximizing the alignment between the assignment and the salience.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import AllocationPlan
from .errors import ValidationError
from .quantize import BitMode, GroupQuantConfig, dequantize_matrix, quantize_uniform

__all__ = [
    "allocation_points",
    "star_discrepancy",
    "alignment",
    "total_variation",
    "KhBound",
    "kh_bound",
    "surrogate_loss",
    "AnalysisReport",
    "analyze_plan",
    "roundtrip_error_pair",
    "default_salience",
]


def allocation_points(plan: AllocationPlan) -> np.ndarray:
    """Midpoints (i + 0.5) / rows of the plan's 4-bit row indices."""
    rows = plan.four_bit_rows
    if rows.size == 0:
        raise ValidationError("plan has no 4-bit rows; the point set is empty")
    return (rows.astype(np.float64) + 0.5) / plan.rows


def star_discrepancy(points: np.ndarray) -> float:
    """Exact star discrepancy of a 1-D point set.

    Uses the sorted-order formula
        D* = max_i max(i/N - p_(i), p_(i) - (i-1)/N),
    valid for anchored boxes [0, t) in one dimension.

    Args:
        points: non-empty array of values in [0, 1].
    """
    p = np.sort(np.asarray(points, dtype=np.float64))
    if p.size == 0:
        raise ValidationError("point set is empty")
    if p[0] < 0.0 or p[-1] > 1.0:
        raise ValidationError("points must lie in [0, 1]")
    n = p.size
    i = np.arange(1, n + 1, dtype=np.float64)
    return float(np.maximum(i / n - p, p - (i - 1.0) / n).max())


def _check_salience(plan: AllocationPlan, salience: np.ndarray) -> np.ndarray:
    s = np.asarray(salience, dtype=np.float64)
    if s.shape != (plan.rows,):
        raise ValidationError(f"salience shape {s.shape} != ({plan.rows},)")
    if not np.all(np.isfinite(s)):
        raise ValidationError("salience contains non-finite values")
    return s


def alignment(plan: AllocationPlan, salience: np.ndarray) -> float:
    """Total salience captured by the 4-bit rows: sum_i a_i * S_i."""
    s = _check_salience(plan, salience)
    return float(s[plan.assignment == 1].sum())


def total_variation(salience: np.ndarray) -> float:
    """Discrete total variation sum_i |S_{i+1} - S_i| of a profile."""
    s = np.asarray(salience, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValidationError("salience must be a non-empty 1-D array")
    return float(np.abs(np.diff(s)).sum())


@dataclass(frozen=True)
class KhBound:
    """Variation bound and the realized sampling gap it dominates."""

    bound: float
    empirical_gap: float


def kh_bound(plan: AllocationPlan, salience: np.ndarray) -> KhBound:
    """Variation-times-discrepancy bound on the salience sampling gap.

    The gap is |mean of S over 4-bit rows - mean of S over all rows|;
    the bound is total_variation(S) * star_discrepancy(points(plan)).
    """
    s = _check_salience(plan, salience)
    pts = allocation_points(plan)
    gap = abs(float(s[plan.assignment == 1].mean()) - float(s.mean()))
    return KhBound(bound=total_variation(s) * star_discrepancy(pts), empirical_gap=gap)


def surrogate_loss(
    plan: AllocationPlan,
    salience: np.ndarray,
    err_ternary: float,
    err_four_bit: float,
) -> float:
    """Salience-weighted quantization error implied by an assignment.

    Each row contributes S_i times its mode's error: err_four_bit where
    a_i = 1, err_ternary where a_i = 0.  Requires err_four_bit <=
    err_ternary (equality is the degenerate case where allocation cannot
    matter and the loss collapses to err_ternary * sum(S)).
    """
    s = _check_salience(plan, salience)
    if err_ternary < 0 or err_four_bit < 0:
        raise ValidationError("error levels must be non-negative")
    if err_four_bit > err_ternary:
        raise ValidationError(
            f"err_four_bit ({err_four_bit}) must not exceed err_ternary ({err_ternary})"
        )
    a = plan.assignment.astype(np.float64)
    return float(((err_ternary - a * (err_ternary - err_four_bit)) * s).sum())


@dataclass(frozen=True)
class AnalysisReport:
    """Everything analyze-alloc reports for one plan."""

    rows: int
    rho: float
    scheme: str
    four_bit_count: int
    effective_bits: float
    discrepancy: float
    alignment: float
    variation: float
    bound: float
    empirical_gap: float
    surrogate: float

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "rho": self.rho,
            "scheme": self.scheme,
            "four_bit_count": self.four_bit_count,
            "effective_bits": self.effective_bits,
            "discrepancy": self.discrepancy,
            "alignment": self.alignment,
            "variation": self.variation,
            "bound": self.bound,
            "empirical_gap": self.empirical_gap,
            "surrogate": self.surrogate,
        }


def analyze_plan(
    plan: AllocationPlan,
    salience: np.ndarray,
    err_ternary: float,
    err_four_bit: float,
) -> AnalysisReport:
    """Bundle discrepancy, alignment, bound, and surrogate for one plan."""
    from .allocation import effective_bitwidth

    kh = kh_bound(plan, salience)
    return AnalysisReport(
        rows=plan.rows,
        rho=plan.rho,
        scheme=plan.scheme.value,
        four_bit_count=plan.four_bit_count,
        effective_bits=effective_bitwidth(plan),
        discrepancy=star_discrepancy(allocation_points(plan)),
        alignment=alignment(plan, salience),
        variation=total_variation(salience),
        bound=kh.bound,
        empirical_gap=kh.empirical_gap,
        surrogate=surrogate_loss(plan, salience, err_ternary, err_four_bit),
    )


def roundtrip_error_pair(w: np.ndarray, config: GroupQuantConfig) -> tuple[float, float]:
    """Mean-squared round-trip error of ternary vs int4 on a matrix.

    Used by the CLI as the empirical (err_ternary, err_four_bit) pair
    when an input matrix is available.
    """
    w = np.asarray(w, dtype=np.float32)
    errs = []
    for mode in (BitMode.TERNARY, BitMode.INT4):
        back = dequantize_matrix(quantize_uniform(w, mode, config))
        errs.append(float(np.mean((w.astype(np.float64) - back.astype(np.float64)) ** 2)))
    e_ternary, e_int4 = errs
    # Guard the surrogate precondition in pathological cases (e.g. an
    # exactly ternary-valued matrix where both round trips are lossless).
    return e_ternary, min(e_int4, e_ternary)


def default_salience(rows: int, seed: int) -> np.ndarray:
    """Smooth synthetic salience profile for runs without an input matrix.

    A low-frequency positive bump mixture, deterministic in the seed.
    Bounded variation by construction.
    """
    from .rng import SeededRng

    if rows <= 0:
        raise ValidationError(f"rows must be positive, got {rows}")
    rng = SeededRng(seed)
    t = (np.arange(rows, dtype=np.float64) + 0.5) / rows
    out = np.ones(rows, dtype=np.float64)
    for _ in range(3):
        center = rng.uniform()
        width = 0.08 + 0.3 * rng.uniform()
        height = 0.5 + 2.0 * rng.uniform()
        out += height * np.exp(-0.5 * ((t - center) / width) ** 2)
    return out
