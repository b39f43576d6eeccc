"""Entropy-adaptive logit distillation losses and their exact gradients.

The mixing coefficient lambda measures how uncertain the teacher is:
per response token, the teacher's softmax entropy is capped at ln(K) and
normalized by ln(K); lambda is the per-sample mean of that, averaged
over the batch.  The loss blends the two KL directions,

    loss = lambda * forward_kld + (1 - lambda) * reverse_kld,

so confident teachers push toward mode-seeking reverse KLD and uncertain
teachers toward mass-covering forward KLD.  lambda is treated as a
constant in the gradient.  A confidence-weighted variant uses the mean
teacher probability of the label token as the coefficient instead.

All reductions are mean-over-valid-tokens per sample, then mean over
samples.  Probabilities are clamped to >= 1e-12 inside every logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "PROB_FLOOR",
    "KldConfig",
    "LogitBatch",
    "softmax",
    "token_entropy",
    "mixing_lambda",
    "forward_kld",
    "reverse_kld",
    "eakld_loss",
    "cakld_loss",
    "mismatch_rate",
    "eakld_grad",
]

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class KldConfig:
    """Knobs for the adaptive mixture.

    Attributes:
        entropy_cap_vocab: the K in the entropy cap ln(K); must be >= 2.
        reduction: the only supported reduction is
            "mean_over_valid_tokens" (per sample, then mean over
            samples); the field exists so configs serialize explicitly.
    """

    entropy_cap_vocab: int = 16
    reduction: str = "mean_over_valid_tokens"

    def __post_init__(self):
        if self.entropy_cap_vocab < 2:
            raise ValidationError(f"entropy cap vocab must be >= 2, got {self.entropy_cap_vocab}")
        if self.reduction != "mean_over_valid_tokens":
            raise ValidationError(f"unsupported reduction {self.reduction!r}")


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class LogitBatch:
    """Teacher and student logits over a batch of response positions.

    Attributes:
        teacher_logits: (samples, positions, vocab) float array.
        student_logits: same shape as teacher_logits.
        mask: (samples, positions) boolean; True marks response tokens
            that enter the losses.  Every sample needs >= 1 valid token.
        labels: optional (samples, positions) int token ids, required by
            the confidence-weighted loss and the mismatch table.

    2-D inputs (positions, vocab) are accepted and treated as one
    sample.
    """

    teacher_logits: np.ndarray
    student_logits: np.ndarray
    mask: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.teacher_logits, dtype=np.float64)
        s = np.asarray(self.student_logits, dtype=np.float64)
        if t.ndim == 2:
            t = t[None]
        if s.ndim == 2:
            s = s[None]
        if t.ndim != 3 or s.shape != t.shape:
            raise ValidationError(f"logit shapes disagree: {t.shape} vs {s.shape}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
            raise ValidationError("logits contain non-finite values")
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim == 1:
            m = m[None]
        if m.shape != t.shape[:2]:
            raise ValidationError(f"mask shape {m.shape} != {t.shape[:2]}")
        if not m.any(axis=1).all():
            raise ValidationError("every sample needs at least one valid token")
        self.teacher_logits = t
        self.student_logits = s
        self.mask = m
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.ndim == 1:
                lab = lab[None]
            if lab.shape != t.shape[:2]:
                raise ValidationError(f"labels shape {lab.shape} != {t.shape[:2]}")
            if lab[m].min(initial=0) < 0 or lab[m].max(initial=0) >= t.shape[2]:
                raise ValidationError("labels outside [0, vocab)")
            self.labels = lab.astype(np.int64)

    @property
    def num_samples(self) -> int:
        return self.teacher_logits.shape[0]

    @property
    def vocab(self) -> int:
        return self.teacher_logits.shape[2]

    def teacher_probs(self) -> np.ndarray:
        return softmax(self.teacher_logits)

    def student_probs(self) -> np.ndarray:
        return softmax(self.student_logits)


def token_entropy(p: np.ndarray) -> float:
    """Shannon entropy (natural log) of one probability vector.

    Zero entries contribute zero.  The vector must be non-negative and
    sum to 1 within 1e-6.
    """
    v = np.asarray(p, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError("expected a non-empty 1-D probability vector")
    if v.min() < 0.0:
        raise ValidationError("probabilities must be non-negative")
    if abs(v.sum() - 1.0) > 1e-6:
        raise ValidationError(f"probabilities sum to {v.sum()}, not 1")
    nz = v[v > 0.0]
    return float(-(nz * np.log(nz)).sum())


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    logp = np.log(np.maximum(p, PROB_FLOOR))
    return -(p * logp).sum(axis=-1)


def _per_sample_mean(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean of per-token values over valid positions, one per sample."""
    msk = mask.astype(np.float64)
    return (values * msk).sum(axis=1) / msk.sum(axis=1)


def mixing_lambda(batch: LogitBatch, cfg: KldConfig = KldConfig()) -> float:
    """Normalized capped teacher entropy, averaged per sample then batch.

    Each valid token contributes min(H, ln K) / ln K where H is the
    teacher's softmax entropy at that position; the result lies in
    [0, 1].
    """
    cap = np.log(float(cfg.entropy_cap_vocab))
    h = np.minimum(_entropy_rows(batch.teacher_probs()), cap) / cap
    return float(_per_sample_mean(h, batch.mask).mean())


def _kld_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-token KL(p || q) with the documented probability floor."""
    logp = np.log(np.maximum(p, PROB_FLOOR))
    logq = np.log(np.maximum(q, PROB_FLOOR))
    return (p * (logp - logq)).sum(axis=-1)


def forward_kld(batch: LogitBatch) -> float:
    """KL(teacher || student), reduced over valid tokens then samples."""
    kl = _kld_rows(batch.teacher_probs(), batch.student_probs())
    return float(_per_sample_mean(kl, batch.mask).mean())


def reverse_kld(batch: LogitBatch) -> float:
    """KL(student || teacher), reduced over valid tokens then samples."""
    kl = _kld_rows(batch.student_probs(), batch.teacher_probs())
    return float(_per_sample_mean(kl, batch.mask).mean())


def eakld_loss(batch: LogitBatch, cfg: KldConfig = KldConfig()) -> float:
    """Entropy-adaptive mixture of the two KL directions."""
    lam = mixing_lambda(batch, cfg)
    return lam * forward_kld(batch) + (1.0 - lam) * reverse_kld(batch)


def cakld_loss(batch: LogitBatch, cfg: KldConfig = KldConfig()) -> float:
    """Confidence-adaptive variant: coefficient from label probabilities.

    The coefficient is the teacher's mean probability of the label
    token (per sample, then batch).  Requires labels.
    """
    del cfg  # accepted for signature symmetry; the cap plays no role here
    if batch.labels is None:
        raise ValidationError("confidence-adaptive loss requires labels")
    pt = batch.teacher_probs()
    conf = np.take_along_axis(pt, batch.labels[:, :, None], axis=2)[:, :, 0]
    coeff = float(_per_sample_mean(conf, batch.mask).mean())
    return coeff * forward_kld(batch) + (1.0 - coeff) * reverse_kld(batch)


def mismatch_rate(batch: LogitBatch, threshold: float) -> tuple[float, float]:
    """Label disagreement among the teacher's confident predictions.

    Pools all valid tokens.  Returns (high_confidence_fraction,
    mismatch_fraction): the fraction of valid tokens where the teacher's
    top probability exceeds the threshold, and the fraction of those
    whose argmax differs from the label.  The mismatch fraction is 0
    when no token clears the threshold.
    """
    if not 0.0 < threshold < 1.0:
        raise ValidationError(f"threshold must be in (0, 1), got {threshold}")
    if batch.labels is None:
        raise ValidationError("mismatch analysis requires labels")
    pt = batch.teacher_probs()
    top = pt.max(axis=2)[batch.mask]
    arg = pt.argmax(axis=2)[batch.mask]
    lab = batch.labels[batch.mask]
    confident = top > threshold
    n_conf = int(confident.sum())
    high_frac = n_conf / top.size
    if n_conf == 0:
        return high_frac, 0.0
    return high_frac, float((arg[confident] != lab[confident]).sum() / n_conf)


def eakld_grad(batch: LogitBatch, cfg: KldConfig = KldConfig()) -> np.ndarray:
    """Exact gradient of eakld_loss in the student logits.

    lambda is a constant (no gradient flows through the teacher's
    entropy).  With p the teacher and q the student softmax, each valid
    token at sample b contributes, per logit j,

        w_b * [ lambda * (q_j - p_j)
                + (1 - lambda) * q_j * (log(q_j / p_j) - KL(q || p)) ]

    where w_b = 1 / (num_samples * valid_tokens_in_b).  Invalid
    positions get zeros.  Each token's gradient sums to zero over the
    vocab, matching the softmax shift invariance.
    """
    lam = mixing_lambda(batch, cfg)
    p = batch.teacher_probs()
    q = batch.student_probs()
    logp = np.log(np.maximum(p, PROB_FLOOR))
    logq = np.log(np.maximum(q, PROB_FLOOR))
    rkl = (q * (logq - logp)).sum(axis=-1, keepdims=True)
    token_grad = lam * (q - p) + (1.0 - lam) * q * ((logq - logp) - rkl)
    msk = batch.mask.astype(np.float64)
    weights = msk / (batch.num_samples * msk.sum(axis=1, keepdims=True))
    return token_grad * weights[:, :, None]
