"""Factorized integer matmul over group-quantized operands, plus STE grads.

The product of a quantized weight matrix (d_out x d_in) and quantized
activations (d_in x n_tokens) factors per group: for output (i, l) the
contribution of group j is

    (weight_scale[i, j] * act_scale[l, j]) * <weight codes, act codes>_j

The inner products are exact 64-bit integer dots; each scale product is
formed in float32 from the stored float16 scales; group contributions
accumulate in float64 in ascending j.  Because dequantizing both
operands and multiplying in floats commutes with this factorization up
to accumulation order, the integer route must agree with the float
reference route to rounding error, which is what the equivalence tests
pin down.
"""

from __future__ import annotations

import numpy as np

from .allocation import AllocationPlan
from .errors import ValidationError
from .quantize import (
    GroupQuantConfig,
    QuantizedGroupMatrix,
    dequantize_matrix,
    fake_quantize,
    fake_quantize_activations,
)

__all__ = ["mp_matmul", "reference_matmul", "fake_quant_forward", "ste_backward"]


def mp_matmul(wq: QuantizedGroupMatrix, xq: QuantizedGroupMatrix) -> np.ndarray:
    """Multiply quantized weights by quantized activations.

    Args:
        wq: quantized weights, rows = output channels, cols = d_in.
        xq: quantized activations as produced by quantize_activations,
            rows = tokens, cols = d_in.

    Returns:
        (d_out, n_tokens) float32 result.
    """
    if wq.cols != xq.cols:
        raise ValidationError(
            f"inner dimensions differ: weights have {wq.cols}, activations have {xq.cols}"
        )
    if wq.config.group_size != xq.config.group_size:
        raise ValidationError(
            f"group sizes differ: {wq.config.group_size} vs {xq.config.group_size}"
        )
    g = wq.config.group_size
    wcodes = wq.codes.astype(np.int64)
    xcodes = xq.codes.astype(np.int64)
    wscales = wq.scales.astype(np.float32)
    xscales = xq.scales.astype(np.float32)
    acc = np.zeros((wq.rows, xq.rows), dtype=np.float64)
    for j in range(wq.num_groups):
        lo, hi = j * g, min((j + 1) * g, wq.cols)
        dots = wcodes[:, lo:hi] @ xcodes[:, lo:hi].T  # exact in int64
        scale_prod = np.multiply.outer(wscales[:, j], xscales[:, j])  # float32
        acc += scale_prod.astype(np.float64) * dots
    return acc.astype(np.float32)


def reference_matmul(wq: QuantizedGroupMatrix, xq: QuantizedGroupMatrix) -> np.ndarray:
    """Float reference route: dequantize both operands, multiply densely."""
    w = dequantize_matrix(wq).astype(np.float64)
    x = dequantize_matrix(xq).astype(np.float64)  # (tokens, d_in)
    return (w @ x.T).astype(np.float32)


def fake_quant_forward(
    w: np.ndarray,
    x: np.ndarray,
    plan: AllocationPlan,
    config: GroupQuantConfig,
    activation_bits: int = 16,
) -> np.ndarray:
    """Training-style forward: fake-quantized weights times activations.

    Args:
        w: (d_out, d_in) weights.
        x: (d_in, n_tokens) activations.
        plan: row allocation for the weights.
        config: grouping parameters for both operands.
        activation_bits: 16 leaves activations untouched (weight-only);
            8 routes them through int8 fake quantization first.

    Returns:
        (d_out, n_tokens) float32 product.
    """
    if activation_bits not in (8, 16):
        raise ValidationError(f"activation_bits must be 8 or 16, got {activation_bits}")
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2:
        raise ValidationError(f"activations must be rank 2, got rank {x.ndim}")
    wq = fake_quantize(w, plan, config)
    if wq.shape[1] != x.shape[0]:
        raise ValidationError(f"inner dimensions differ: {wq.shape[1]} vs {x.shape[0]}")
    xu = fake_quantize_activations(x, config) if activation_bits == 8 else x
    return (wq.astype(np.float64) @ xu.astype(np.float64)).astype(np.float32)


def ste_backward(
    dy: np.ndarray,
    w: np.ndarray,
    x: np.ndarray,
    plan: AllocationPlan,
    config: GroupQuantConfig,
    activation_bits: int = 16,
) -> tuple[np.ndarray, np.ndarray]:
    """Straight-through gradients for fake_quant_forward.

    The quantizer is treated as identity in the backward pass and the
    scales carry no gradient, so with Y = fq(W) @ X':

        dW = dY @ X'^T     (X' = the activations actually multiplied)
        dX = fq(W)^T @ dY

    Args:
        dy: (d_out, n_tokens) upstream gradient.
        w, x, plan, config, activation_bits: exactly as in the forward.

    Returns:
        (dW, dX) float32 arrays shaped like w and x.
    """
    if activation_bits not in (8, 16):
        raise ValidationError(f"activation_bits must be 8 or 16, got {activation_bits}")
    dy = np.asarray(dy, dtype=np.float32)
    x = np.asarray(x, dtype=np.float32)
    wq = fake_quantize(w, plan, config)
    if dy.shape != (wq.shape[0], x.shape[1]):
        raise ValidationError(f"dY shape {dy.shape} != ({wq.shape[0]}, {x.shape[1]})")
    xu = fake_quantize_activations(x, config) if activation_bits == 8 else x
    dw = (dy.astype(np.float64) @ xu.astype(np.float64).T).astype(np.float32)
    dx = (wq.astype(np.float64).T @ dy.astype(np.float64)).astype(np.float32)
    return dw, dx
