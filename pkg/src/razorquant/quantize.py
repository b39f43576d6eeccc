"""Per-group symmetric quantization to ternary, int4, and int8 codes.

Weights are grouped along the input dimension (contiguous runs of
``group_size`` columns; the last group may be short and uses its actual
length wherever a mean is taken).  Each group gets one positive scale:

* ternary: scale = max(beta * mean(|w|), epsilon), codes clipped to
  {-1, 0, +1};
* int4 / int8: scale = max(max(|w|) / qmax, epsilon) with qmax 7 / 127.

Rounding is round-half-away-from-zero.  Codes are computed against the
full-precision scale; what is *stored* is the scale rounded to float16,
which is also what dequantization uses.

Activations reuse the same machinery: an activation matrix (d_in x
n_tokens) is quantized per token column, grouped along d_in, always
int8.  The quantized form stores tokens as rows so both weights and
activations group along their trailing axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .allocation import AllocationPlan
from .errors import ValidationError

__all__ = [
    "BitMode",
    "GroupQuantConfig",
    "QuantizedGroupMatrix",
    "round_half_away",
    "quantize_group",
    "dequantize_group",
    "quantize_matrix",
    "quantize_uniform",
    "dequantize_matrix",
    "fake_quantize",
    "quantize_activations",
    "fake_quantize_activations",
]


class BitMode(IntEnum):
    """Code alphabet for one row.  Values double as storage tags."""

    TERNARY = 0
    INT4 = 1
    INT8 = 2

    @property
    def qmax(self) -> int:
        return _QMAX[self]

    @property
    def label(self) -> str:
        return _LABEL[self]


_QMAX = {BitMode.TERNARY: 1, BitMode.INT4: 7, BitMode.INT8: 127}
_LABEL = {BitMode.TERNARY: "ternary", BitMode.INT4: "int4", BitMode.INT8: "int8"}
_BY_LABEL = {v: k for k, v in _LABEL.items()}


def mode_from_label(label: str) -> BitMode:
    try:
        return _BY_LABEL[label]
    except KeyError:
        raise ValidationError(f"unknown bit mode {label!r}; expected one of {sorted(_BY_LABEL)}") from None


@dataclass(frozen=True)
class GroupQuantConfig:
    """Grouping and scale parameters shared by every quantization call.

    Attributes:
        group_size: columns per scale group, >= 1.
        beta: ternary scale multiplier on the group mean absolute value.
        epsilon: positive floor keeping scales away from zero.
    """

    group_size: int
    beta: float = 2.0
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.group_size < 1:
            raise ValidationError(f"group_size must be >= 1, got {self.group_size}")
        if not self.beta > 0:
            raise ValidationError(f"beta must be positive, got {self.beta}")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")

    def num_groups(self, cols: int) -> int:
        return -(-cols // self.group_size)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero (not banker's)."""
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass
class QuantizedGroupMatrix:
    """Integer codes plus per-(row, group) float16 scales.

    ``codes`` is (rows, cols) int8, ``scales`` is (rows, num_groups)
    float16, ``row_modes`` is (rows,) uint8 holding BitMode values.
    Weight matrices store output channels as rows; quantized activations
    store tokens as rows (see quantize_activations), so grouping always
    runs along the trailing axis.
    """

    codes: np.ndarray
    scales: np.ndarray
    row_modes: np.ndarray
    config: GroupQuantConfig

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int8)
        self.scales = np.asarray(self.scales, dtype=np.float16)
        self.row_modes = np.asarray(self.row_modes, dtype=np.uint8)
        if self.codes.ndim != 2:
            raise ValidationError(f"codes must be rank 2, got rank {self.codes.ndim}")
        rows, cols = self.codes.shape
        if self.row_modes.shape != (rows,):
            raise ValidationError(f"row_modes shape {self.row_modes.shape} != ({rows},)")
        if self.scales.shape != (rows, self.config.num_groups(cols)):
            raise ValidationError(
                f"scales shape {self.scales.shape} != ({rows}, {self.config.num_groups(cols)})"
            )
        if not np.all(np.isin(self.row_modes, list(_QMAX))):
            raise ValidationError("row_modes contains an unknown mode tag")
        if self.scales.size and not (self.scales.astype(np.float64) > 0).all():
            raise ValidationError("scales must be positive")
        for mode in BitMode:
            rows_of = self.row_modes == mode
            if rows_of.any():
                c = self.codes[rows_of]
                if np.abs(c.astype(np.int32)).max(initial=0) > mode.qmax:
                    raise ValidationError(f"{mode.label} codes exceed |q| <= {mode.qmax}")

    @property
    def rows(self) -> int:
        return self.codes.shape[0]

    @property
    def cols(self) -> int:
        return self.codes.shape[1]

    @property
    def num_groups(self) -> int:
        return self.scales.shape[1]

    def mode_of(self, row: int) -> BitMode:
        return BitMode(int(self.row_modes[row]))


# ----------------------------------------------------------------------
# group-level primitives
# ----------------------------------------------------------------------

def _full_scales(groups: np.ndarray, lengths: np.ndarray, mode: BitMode, config: GroupQuantConfig) -> np.ndarray:
    """Full-precision (float32) scales for a (rows, J, G) padded group view.

    ``lengths`` gives the true length of each group so padded tail zeros
    never dilute a mean.
    """
    absval = np.abs(groups)
    if mode is BitMode.TERNARY:
        raw = config.beta * absval.sum(axis=-1, dtype=np.float32) / lengths
    else:
        raw = absval.max(axis=-1) / np.float32(mode.qmax)
    return np.maximum(raw.astype(np.float32), np.float32(config.epsilon))


def quantize_group(values: np.ndarray, mode: BitMode, config: GroupQuantConfig) -> tuple[np.ndarray, np.float32]:
    """Quantize a single 1-D group.

    Args:
        values: finite float vector, length in [1, group_size].
        mode: target code alphabet.
        config: scale parameters; values may be shorter than
            config.group_size (tail group).

    Returns:
        (codes, stored_scale): int8 codes and the float16-rounded scale
        as a float32 scalar.
    """
    v = np.asarray(values, dtype=np.float32)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("group must be a non-empty 1-D array")
    if v.size > config.group_size:
        raise ValidationError(f"group of length {v.size} exceeds group_size {config.group_size}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("group contains non-finite values")
    scale = _full_scales(v[None, None, :], np.array([[v.size]], np.float32), mode, config)[0, 0]
    codes = round_half_away(v / scale)
    if mode is BitMode.TERNARY:
        codes = np.clip(codes, -1, 1)
    stored = np.float32(np.float16(scale))
    return codes.astype(np.int8), stored


def dequantize_group(codes: np.ndarray, scale: float) -> np.ndarray:
    """Reconstruct a group as float32: scale * codes."""
    if not scale > 0:
        raise ValidationError(f"scale must be positive, got {scale}")
    return np.asarray(codes, dtype=np.float32) * np.float32(scale)


# ----------------------------------------------------------------------
# matrix-level quantization
# ----------------------------------------------------------------------

def _check_weight_matrix(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float32)
    if w.ndim != 2 or w.size == 0:
        raise ValidationError("expected a non-empty rank-2 matrix")
    if not np.all(np.isfinite(w)):
        raise ValidationError("matrix contains non-finite values")
    return w


def _grouped_view(w: np.ndarray, group: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero-padded (rows, J, G) view plus per-group true lengths (1, J)."""
    rows, cols = w.shape
    j = -(-cols // group)
    padded = np.zeros((rows, j * group), dtype=np.float32)
    padded[:, :cols] = w
    lengths = np.full(j, group, dtype=np.float32)
    if cols % group:
        lengths[-1] = cols % group
    return padded.reshape(rows, j, group), lengths[None, :]


def quantize_rows(w: np.ndarray, row_modes: np.ndarray, config: GroupQuantConfig) -> QuantizedGroupMatrix:
    """Quantize a matrix with an explicit per-row mode array."""
    w = _check_weight_matrix(w)
    rows, cols = w.shape
    row_modes = np.asarray(row_modes, dtype=np.uint8)
    if row_modes.shape != (rows,):
        raise ValidationError(f"row_modes shape {row_modes.shape} != ({rows},)")
    if not np.all(np.isin(row_modes, list(_QMAX))):
        raise ValidationError("row_modes contains an unknown mode tag")
    groups, lengths = _grouped_view(w, config.group_size)
    j = groups.shape[1]

    scales_full = np.empty((rows, j), dtype=np.float32)
    codes = np.empty((rows, cols), dtype=np.int8)
    for mode in BitMode:
        sel = row_modes == mode
        if not sel.any():
            continue
        s = _full_scales(groups[sel], lengths, mode, config)
        scales_full[sel] = s
        q = round_half_away(groups[sel] / s[:, :, None])
        if mode is BitMode.TERNARY:
            q = np.clip(q, -1, 1)
        codes[sel] = q.reshape(sel.sum(), j * config.group_size)[:, :cols].astype(np.int8)
    return QuantizedGroupMatrix(
        codes=codes,
        scales=scales_full.astype(np.float16),
        row_modes=row_modes,
        config=config,
    )


def quantize_matrix(w: np.ndarray, plan: AllocationPlan, config: GroupQuantConfig) -> QuantizedGroupMatrix:
    """Quantize a weight matrix under an allocation plan.

    Rows with assignment 1 become int4, the rest ternary.  Rows are
    independent: splitting the matrix row-wise and concatenating the
    results is a no-op.

    Args:
        w: (d_out, d_in) float matrix, finite.
        plan: row assignment; plan.rows must equal d_out.
        config: grouping parameters.
    """
    w = _check_weight_matrix(w)
    if plan.rows != w.shape[0]:
        raise ValidationError(f"plan covers {plan.rows} rows but matrix has {w.shape[0]}")
    modes = np.where(plan.assignment == 1, np.uint8(BitMode.INT4), np.uint8(BitMode.TERNARY))
    return quantize_rows(w, modes, config)


def quantize_uniform(w: np.ndarray, mode: BitMode, config: GroupQuantConfig) -> QuantizedGroupMatrix:
    """Quantize every row of a matrix with the same mode."""
    w = _check_weight_matrix(w)
    return quantize_rows(w, np.full(w.shape[0], np.uint8(mode)), config)


def dequantize_matrix(q: QuantizedGroupMatrix) -> np.ndarray:
    """Reconstruct (rows, cols) float32 values from codes and stored scales."""
    g = q.config.group_size
    expanded = np.repeat(q.scales.astype(np.float32), g, axis=1)[:, : q.cols]
    return q.codes.astype(np.float32) * expanded


def fake_quantize(w: np.ndarray, plan: AllocationPlan, config: GroupQuantConfig) -> np.ndarray:
    """Quantize-dequantize round trip used in QAT forward passes."""
    return dequantize_matrix(quantize_matrix(w, plan, config))


# ----------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------

def quantize_activations(x: np.ndarray, config: GroupQuantConfig) -> QuantizedGroupMatrix:
    """Int8 per-group quantization of an activation matrix.

    Args:
        x: (d_in, n_tokens) activations; each token column is grouped
            along d_in.

    Returns:
        QuantizedGroupMatrix holding tokens as rows, (n_tokens, d_in).
    """
    x = _check_weight_matrix(x)
    xt = np.ascontiguousarray(x.T)
    return quantize_rows(xt, np.full(xt.shape[0], np.uint8(BitMode.INT8)), config)


def fake_quantize_activations(x: np.ndarray, config: GroupQuantConfig) -> np.ndarray:
    """Round trip activations back to (d_in, n_tokens) float32."""
    return dequantize_matrix(quantize_activations(x, config)).T
