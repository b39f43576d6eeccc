"""Desk-scale quantization-aware distillation on the toy model.

The student starts from the teacher's weights, fake-quantizes every
weight matrix each step, and minimizes

    alpha_task * cross_entropy
    + alpha_feature * feature-matching loss on selected layers
    + alpha_logit * entropy-adaptive logit loss

against the frozen full-precision teacher.  Layer selection and the
mixing coefficient are recomputed from the teacher every step.  The
optimizer is AdamW with decoupled weight decay and a constant learning
rate; all math is float64.

Training data is a synthetic previous-token task: sequences follow a
seed-fixed successor permutation over the vocab, so predicting the token
before position t is the position-local map x -> predecessor(x), which
this attention-free model can represent.  Position 0 has no predecessor
and is masked out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocation import AllocationScheme
from .errors import FormatError, ValidationError
from .features import FeatureStack, adaptive_feature_loss, layer_cosine_scores, select_layers
from .logits import KldConfig, LogitBatch, eakld_grad, eakld_loss, mixing_lambda, softmax
from .model import ForwardCache, QuantSetup, ToyModel, ToyModelConfig, backward, build_quant_setup, forward
from .rng import SeededRng

__all__ = [
    "TrainerConfig",
    "AdamW",
    "CopyTask",
    "cross_entropy",
    "total_loss",
    "pretrain_teacher",
    "token_accuracy",
    "train_step",
    "run_qad",
    "save_history_csv",
]


@dataclass(frozen=True)
class TrainerConfig:
    """QAD hyperparameters.  JSON serialization mirrors the field names."""

    alpha_task: float = 0.10
    alpha_feature: float = 0.10
    alpha_logit: float = 2.0
    k: int = 3
    K: int = 16
    rho: float = 0.25
    scheme: str = "super"
    group_size: int = 16
    lr: float = 5e-3
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    steps: int = 500
    batch_size: int = 16
    seed: int = 42

    def __post_init__(self):
        if self.alpha_task < 0 or self.alpha_feature < 0 or self.alpha_logit < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.K < 2:
            raise ValidationError(f"K must be >= 2, got {self.K}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValidationError(f"rho must be in [0, 1], got {self.rho}")
        if self.scheme not in {s.value for s in AllocationScheme}:
            raise ValidationError(f"unknown allocation scheme {self.scheme!r}")
        if self.group_size < 1:
            raise ValidationError(f"group_size must be >= 1, got {self.group_size}")
        if self.steps < 1 or self.batch_size < 1:
            raise ValidationError("steps and batch_size must be >= 1")
        if not self.lr > 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ValidationError(f"betas must lie in [0, 1), got {self.betas}")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")

    def to_json(self) -> dict:
        doc = {
            "alpha_task": self.alpha_task,
            "alpha_feature": self.alpha_feature,
            "alpha_logit": self.alpha_logit,
            "k": self.k,
            "K": self.K,
            "rho": self.rho,
            "scheme": self.scheme,
            "group_size": self.group_size,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "betas": list(self.betas),
            "steps": self.steps,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TrainerConfig":
        if not isinstance(doc, dict):
            raise FormatError("trainer config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise FormatError(f"unknown trainer config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "betas" in kwargs:
            betas = kwargs["betas"]
            if not (isinstance(betas, (list, tuple)) and len(betas) == 2):
                raise FormatError("betas must be a pair")
            kwargs["betas"] = (float(betas[0]), float(betas[1]))
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise FormatError(f"bad trainer config: {exc}") from exc


class AdamW:
    """AdamW with decoupled weight decay and bias correction."""

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(grads)
        if missing:
            raise ValidationError(f"gradients missing for {sorted(missing)}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= self.lr * (update + self.weight_decay * p)


@dataclass
class CopyTask:
    """Previous-token prediction over permutation-walk sequences."""

    vocab: int
    seq_len: int
    successor: np.ndarray = field(repr=False)
    rng: SeededRng = field(repr=False)

    @classmethod
    def create(cls, vocab: int, seq_len: int, seed: int) -> "CopyTask":
        if vocab < 2 or seq_len < 2:
            raise ValidationError("need vocab >= 2 and seq_len >= 2")
        base = SeededRng(seed)
        successor = base.permutation(vocab)
        return cls(vocab=vocab, seq_len=seq_len, successor=successor, rng=base.child())

    def sample(self, batch_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One batch: (tokens, labels, mask), each (batch, seq_len).

        labels[:, t] = tokens[:, t - 1]; position 0 is masked.
        """
        if batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        tokens = np.empty((batch_size, self.seq_len), dtype=np.int64)
        tokens[:, 0] = self.rng.integers(self.vocab, size=batch_size)
        for t in range(1, self.seq_len):
            tokens[:, t] = self.successor[tokens[:, t - 1]]
        labels = np.zeros_like(tokens)
        labels[:, 1:] = tokens[:, :-1]
        mask = np.ones_like(tokens, dtype=bool)
        mask[:, 0] = False
        return tokens, labels, mask


def cross_entropy(
    logits: np.ndarray, labels: np.ndarray, mask: np.ndarray
) -> tuple[float, np.ndarray]:
    """Masked cross entropy plus its logit gradient.

    Reduction matches the distillation losses: per-sample mean over
    valid positions, then mean over samples.

    Returns:
        (loss, dlogits) with dlogits shaped like logits and zero at
        invalid positions.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3:
        raise ValidationError("logits must be (batch, seq, vocab)")
    mask = np.asarray(mask, dtype=bool)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != logits.shape[:2] or mask.shape != logits.shape[:2]:
        raise ValidationError("labels/mask shapes do not match logits")
    if not mask.any(axis=1).all():
        raise ValidationError("every sample needs at least one valid position")
    q = softmax(logits)
    label_p = np.take_along_axis(q, labels[:, :, None], axis=2)[:, :, 0]
    nll = -np.log(np.maximum(label_p, 1e-300))
    msk = mask.astype(np.float64)
    per_sample = (nll * msk).sum(axis=1) / msk.sum(axis=1)
    loss = float(per_sample.mean())

    onehot = np.zeros_like(q)
    np.put_along_axis(onehot, labels[:, :, None], 1.0, axis=2)
    weights = msk / (logits.shape[0] * msk.sum(axis=1, keepdims=True))
    return loss, (q - onehot) * weights[:, :, None]


def total_loss(task: float, feature: float, logit: float, cfg: TrainerConfig) -> float:
    """Weighted sum of the three loss components."""
    return cfg.alpha_task * task + cfg.alpha_feature * feature + cfg.alpha_logit * logit


def token_accuracy(model: ToyModel, task: CopyTask, batches: int = 8, batch_size: int = 32) -> float:
    """Fraction of valid positions where argmax(logits) hits the label."""
    hit = total = 0
    for _ in range(batches):
        tokens, labels, mask = task.sample(batch_size)
        logits = forward(model, tokens).logits
        pred = logits.argmax(axis=2)
        hit += int((pred[mask] == labels[mask]).sum())
        total += int(mask.sum())
    return hit / total


def pretrain_teacher(
    model: ToyModel,
    task: CopyTask,
    steps: int = 600,
    lr: float = 1e-2,
    batch_size: int = 32,
) -> list[float]:
    """Plain cross-entropy training, no quantization.  Returns the losses."""
    opt = AdamW(model.params(), lr=lr)
    history = []
    for _ in range(steps):
        tokens, labels, mask = task.sample(batch_size)
        cache = forward(model, tokens)
        loss, dlogits = cross_entropy(cache.logits, labels, mask)
        opt.step(backward(model, cache, dlogits))
        history.append(loss)
    return history


def _composite_losses(
    teacher_cache: ForwardCache,
    student_cache: ForwardCache,
    labels: np.ndarray,
    mask: np.ndarray,
    cfg: TrainerConfig,
    kld_cfg: KldConfig,
) -> tuple[dict, np.ndarray, dict[int, np.ndarray]]:
    """All three loss terms plus the gradients feeding backward().

    Returns:
        (metrics, dlogits, dfeatures) where metrics holds the scalar
        terms and the step's lambda and selected layers.
    """
    flat_mask = mask.reshape(-1)
    t_stack = FeatureStack(teacher_cache.features, flat_mask)
    s_stack = FeatureStack(student_cache.features, flat_mask)
    selected = select_layers(layer_cosine_scores(t_stack), cfg.k)
    feature = adaptive_feature_loss(t_stack, s_stack, selected)

    task, d_task = cross_entropy(student_cache.logits, labels, mask)

    batch = LogitBatch(
        teacher_logits=teacher_cache.logits,
        student_logits=student_cache.logits,
        mask=mask,
        labels=labels,
    )
    lam = mixing_lambda(batch, kld_cfg)
    logit = eakld_loss(batch, kld_cfg)
    d_logit = eakld_grad(batch, kld_cfg)

    dlogits = cfg.alpha_task * d_task + cfg.alpha_logit * d_logit

    # d(feature)/d(student h_l) = 2 (s - t) / (valid * dim * |selected|),
    # nonzero only at valid positions of selected layers.
    denom = float(flat_mask.sum()) * s_stack.dim * len(selected)
    dfeatures: dict[int, np.ndarray] = {}
    for l in selected:
        diff = np.zeros_like(student_cache.features[l])
        diff[flat_mask] = (
            student_cache.features[l][flat_mask] - teacher_cache.features[l][flat_mask]
        )
        dfeatures[l] = cfg.alpha_feature * 2.0 * diff / denom

    metrics = {
        "task": task,
        "feature": feature,
        "logit": logit,
        "total": total_loss(task, feature, logit, cfg),
        "lambda": lam,
        "selected_layers": selected,
    }
    return metrics, dlogits, dfeatures


def train_step(
    student: ToyModel,
    teacher: ToyModel,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    cfg: TrainerConfig,
    quant: QuantSetup,
    opt: AdamW,
) -> dict:
    """One QAD update on the student.  Returns the step metrics."""
    tokens, labels, mask = batch
    teacher_cache = forward(teacher, tokens)
    student_cache = forward(student, tokens, quant)
    kld_cfg = KldConfig(entropy_cap_vocab=cfg.K)
    metrics, dlogits, dfeatures = _composite_losses(
        teacher_cache, student_cache, labels, mask, cfg, kld_cfg
    )
    opt.step(backward(student, student_cache, dlogits, dfeatures))
    return metrics


def run_qad(
    teacher: ToyModel,
    student: ToyModel,
    task: CopyTask,
    cfg: TrainerConfig,
) -> list[dict]:
    """Full distillation run.  The teacher is never modified.

    Returns:
        One metrics dict per step: step index, the three loss terms,
        their weighted total, lambda, and the selected layers.
    """
    if teacher.cfg != student.cfg:
        raise ValidationError("teacher and student must share a model config")
    quant = build_quant_setup(
        student.cfg, rho=cfg.rho, scheme=cfg.scheme, group_size=cfg.group_size, seed=cfg.seed
    )
    opt = AdamW(
        student.params(),
        lr=cfg.lr,
        betas=cfg.betas,
        weight_decay=cfg.weight_decay,
    )
    history = []
    for step in range(cfg.steps):
        batch = task.sample(cfg.batch_size)
        metrics = train_step(student, teacher, batch, cfg, quant, opt)
        metrics = {"step": step, **metrics}
        history.append(metrics)
    return history


def save_history_csv(path: str | Path, history: list[dict]) -> None:
    """Write a run history as CSV, one row per step."""
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "task", "feature", "logit", "total", "lambda", "selected_layers"])
    for row in history:
        writer.writerow(
            [
                row["step"],
                f"{row['task']:.10g}",
                f"{row['feature']:.10g}",
                f"{row['logit']:.10g}",
                f"{row['total']:.10g}",
                f"{row['lambda']:.10g}",
                "|".join(str(l) for l in row["selected_layers"]),
            ]
        )
    from .tensorio import atomic_write_bytes

    atomic_write_bytes(path, buf.getvalue().encode())
