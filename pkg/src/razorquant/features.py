"""Layer selection and feature-matching loss for distillation.

The selector scores each block by how little it rotates the residual
stream: the mean cosine similarity between its output and input features
over valid token positions.  Low scores mark the layers doing the most
work, and those are the ones whose features the student is asked to
match.  The feature loss averages a dimension-normalized squared error
over the selected layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "FeatureStack",
    "layer_cosine_scores",
    "select_layers",
    "adaptive_feature_loss",
    "layer_frequency_analysis",
]


@dataclass
class FeatureStack:
    """Per-layer features for one batch of token positions.

    Attributes:
        layers: (num_layers + 1, tokens, dim) float array; index 0 is the
            pre-block (embedding) features and index l is the output of
            block l.
        mask: (tokens,) boolean validity per position.  At least one
            position must be valid.
    """

    layers: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.layers = np.asarray(self.layers, dtype=np.float64)
        if self.layers.ndim != 3 or self.layers.shape[0] < 2:
            raise ValidationError(
                f"layers must be (num_layers + 1, tokens, dim) with >= 2 slabs, got {self.layers.shape}"
            )
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.layers.shape[1],):
            raise ValidationError(f"mask shape {self.mask.shape} != ({self.layers.shape[1]},)")
        if not self.mask.any():
            raise ValidationError("feature stack has no valid positions")
        if not np.all(np.isfinite(self.layers)):
            raise ValidationError("features contain non-finite values")

    @property
    def num_layers(self) -> int:
        return self.layers.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.layers.shape[2]


def layer_cosine_scores(stack: FeatureStack) -> np.ndarray:
    """Mean cosine similarity of each block's output to its input.

    Cosines are averaged over valid positions only; a position where
    either vector has zero norm contributes cosine 0.

    Returns:
        (num_layers,) float array; entry l - 1 scores block l.
    """
    feats = stack.layers[:, stack.mask, :]
    prev, cur = feats[:-1], feats[1:]
    num = (prev * cur).sum(axis=2)
    denom = np.linalg.norm(prev, axis=2) * np.linalg.norm(cur, axis=2)
    cos = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0.0)
    return cos.mean(axis=1)


def select_layers(scores: np.ndarray, k: int) -> list[int]:
    """Pick the k lowest-scoring layers (1-based indices, ascending).

    Exactly k layers come back; score ties break toward the smaller
    index.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValidationError("scores must be a non-empty 1-D array")
    if not 1 <= k <= s.size:
        raise ValidationError(f"k must be in [1, {s.size}], got {k}")
    order = np.argsort(s, kind="stable")  # stable sort = smaller index wins ties
    return sorted(int(i) + 1 for i in order[:k])


def adaptive_feature_loss(
    teacher: FeatureStack,
    student: FeatureStack,
    selected: list[int],
) -> float:
    """Feature-matching loss over the selected block outputs.

    For each selected layer l the per-layer term is the squared error
    between teacher and student features, summed over valid positions
    and divided by (valid positions * dim); the loss is the mean of the
    per-layer terms.
    """
    if teacher.layers.shape != student.layers.shape:
        raise ValidationError(
            f"teacher/student feature shapes differ: {teacher.layers.shape} vs {student.layers.shape}"
        )
    if not np.array_equal(teacher.mask, student.mask):
        raise ValidationError("teacher and student masks differ")
    if not selected:
        raise ValidationError("selected layer set is empty")
    if len(set(selected)) != len(selected):
        raise ValidationError("selected layers contain duplicates")
    for l in selected:
        if not 1 <= l <= teacher.num_layers:
            raise ValidationError(f"selected layer {l} outside [1, {teacher.num_layers}]")
    mask = teacher.mask
    denom = int(mask.sum()) * teacher.dim
    total = 0.0
    for l in selected:
        diff = teacher.layers[l][mask] - student.layers[l][mask]
        total += float((diff * diff).sum()) / denom
    return total / len(selected)


def layer_frequency_analysis(stacks: list[FeatureStack], k: int) -> np.ndarray:
    """How often each layer is selected across a collection of stacks.

    Args:
        stacks: non-empty list of stacks with equal layer counts.
        k: layers selected per stack.

    Returns:
        (num_layers,) int array; entry l - 1 counts selections of block
        l.  Counts sum to k * len(stacks) since selection always returns
        exactly k layers.
    """
    if not stacks:
        raise ValidationError("need at least one feature stack")
    n_layers = stacks[0].num_layers
    counts = np.zeros(n_layers, dtype=np.int64)
    for stack in stacks:
        if stack.num_layers != n_layers:
            raise ValidationError("stacks disagree on layer count")
        for l in select_layers(layer_cosine_scores(stack), k):
            counts[l - 1] += 1
    return counts
