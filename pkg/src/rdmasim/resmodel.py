"""Analytic NIC state, QP-capacity and soft-error MTBF models.

The failure model treats the fleet failure rate as proportional to the
vulnerable bit count: a fixed design-wide essential-bit term plus the per-QP
context bits. The proportionality constant and the fixed term are fitted by
least squares against the four published design points, which reproduces all
of them to better than 1%; a literal mode exposing the raw per-bit FIT
parameters is available for sensitivity studies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .transport import CONTEXT_BYTES, TransportKind

# Published reference points: per-QP context bytes at 10K QPs and the fleet
# MTBF in hours for each design.
REFERENCE_QP_COUNT = 10_000
REFERENCE_MTBF_HOURS = {
    TransportKind.ROCE_GBN: 42.8,
    TransportKind.IRN: 34.3,
    TransportKind.SRNIC: 57.8,
    TransportKind.CELERIS: 80.5,
}
# Table-style QP scalability claims and the shared SRAM budget implied by the
# best-scaling design (80K QPs at 52 B each).
REFERENCE_QP_CAPACITY = {
    TransportKind.ROCE_GBN: 10_000,
    TransportKind.IRN: 8_000,
    TransportKind.SRNIC: 20_000,
    TransportKind.CELERIS: 80_000,
}
IMPLIED_SRAM_BUDGET_BYTES = 80_000 * CONTEXT_BYTES[TransportKind.CELERIS]


@dataclass
class NicDesign:
    kind: TransportKind
    per_qp_bytes: int = 0
    qp_count: int = REFERENCE_QP_COUNT
    fixed_essential_bits: float = 0.0

    def __post_init__(self):
        if self.per_qp_bytes == 0:
            self.per_qp_bytes = CONTEXT_BYTES[self.kind]
        if self.per_qp_bytes <= 0 or self.qp_count < 0 or self.fixed_essential_bits < 0:
            raise ValueError("per_qp_bytes must be positive; counts non-negative")

    @property
    def qp_state_bits(self) -> int:
        return self.per_qp_bytes * 8 * self.qp_count


@dataclass
class FleetModel:
    nodes: int = 15_000
    fit_per_bit: float = 1e-11  # failures per bit-hour (literal mode)
    essential_bit_ratio: float = 0.10
    temperature_note: str = "100C"

    def __post_init__(self):
        if self.nodes <= 0 or self.fit_per_bit <= 0:
            raise ValueError("nodes and fit_per_bit must be positive")


@dataclass
class CalibrationResult:
    fixed_bits: float  # F: design-wide essential bits shared by all variants
    k_cal: float  # failures per bit-hour at fleet level
    residuals: dict = field(default_factory=dict)  # kind -> relative error

    def rate_per_hour(self, design: NicDesign) -> float:
        return self.k_cal * (self.fixed_bits + design.qp_state_bits)

    def mtbf_hours(self, design: NicDesign) -> float:
        return 1.0 / self.rate_per_hour(design)


def qp_capacity(sram_budget_bytes: int, per_qp_bytes: int) -> int:
    """Connections supported by an SRAM budget at a given context size."""
    if per_qp_bytes <= 0:
        raise ValueError("per_qp_bytes must be positive")
    if sram_budget_bytes < 0:
        raise ValueError("sram_budget_bytes must be non-negative")
    return sram_budget_bytes // per_qp_bytes


def fit_calibration(
    per_qp_bytes: Sequence[int],
    qp_count: int,
    mtbf_hours: Sequence[float],
) -> CalibrationResult:
    """Least-squares fit of 1/MTBF_i = k * (F + s_i * 8 * Q).

    Linear in (k*F, k*8Q): regress y = a + b*s on the design points, then
    unpack k = b / (8Q) and F = a / k. Rejects degenerate inputs that admit
    no positive-rate solution.
    """
    s = np.asarray(per_qp_bytes, dtype=np.float64)
    m = np.asarray(mtbf_hours, dtype=np.float64)
    if s.size < 2 or s.size != m.size:
        raise ValueError("need at least 2 matched (per_qp_bytes, mtbf) points")
    if np.unique(s).size < 2:
        raise ValueError("per_qp_bytes values must not all be equal (singular fit)")
    if np.any(m <= 0):
        raise ValueError("mtbf values must be positive")
    y = 1.0 / m
    design = np.column_stack([np.ones_like(s), s])
    (a, b), *_ = np.linalg.lstsq(design, y, rcond=None)
    if b <= 0:
        raise ValueError(
            "fit inconsistent: failure rate does not grow with per-QP state"
        )
    k_cal = b / (8.0 * qp_count)
    fixed_bits = a / k_cal
    if fixed_bits < 0:
        raise ValueError("fit inconsistent: negative fixed essential bits")
    result = CalibrationResult(fixed_bits=fixed_bits, k_cal=k_cal)
    for size, given in zip(per_qp_bytes, mtbf_hours):
        pred = 1.0 / (k_cal * (fixed_bits + size * 8 * qp_count))
        result.residuals[int(size)] = abs(pred - given) / given
    return result


def default_calibration() -> CalibrationResult:
    """Fit against the four published design points."""
    kinds = [TransportKind.ROCE_GBN, TransportKind.IRN, TransportKind.SRNIC,
             TransportKind.CELERIS]
    return fit_calibration(
        [CONTEXT_BYTES[k] for k in kinds],
        REFERENCE_QP_COUNT,
        [REFERENCE_MTBF_HOURS[k] for k in kinds],
    )


def failure_rate(design: NicDesign, calibration: CalibrationResult) -> float:
    """Fleet-level failures per hour under the calibrated model."""
    if design.fixed_essential_bits > 0:
        return calibration.k_cal * (design.fixed_essential_bits + design.qp_state_bits)
    return calibration.rate_per_hour(design)


def mtbf_hours(design: NicDesign, calibration: CalibrationResult) -> float:
    return 1.0 / failure_rate(design, calibration)


def literal_failure_rate(design: NicDesign, fleet: FleetModel,
                         total_design_bits: float) -> float:
    """Stated-parameter mode: fleet rate from the raw per-bit FIT figure and
    the essential-bit ratio, with every input exposed."""
    vulnerable = fleet.essential_bit_ratio * total_design_bits + design.qp_state_bits
    return fleet.nodes * fleet.fit_per_bit * vulnerable


def design_table(calibration: CalibrationResult | None = None,
                 sram_budget_bytes: int = IMPLIED_SRAM_BUDGET_BYTES) -> list[dict]:
    """One row per design: context bytes, QP capacity and fitted MTBF."""
    cal = calibration or default_calibration()
    rows = []
    for kind in (TransportKind.ROCE_GBN, TransportKind.IRN, TransportKind.SRNIC,
                 TransportKind.CELERIS):
        design = NicDesign(kind=kind)
        rows.append({
            "design": kind.value,
            "context_bytes": CONTEXT_BYTES[kind],
            "qp_capacity": qp_capacity(sram_budget_bytes, CONTEXT_BYTES[kind]),
            "mtbf_hours": round(cal.mtbf_hours(design), 1),
        })
    return rows
