"""Attention-free toy decoder with hand-written forward/backward passes.

The model is an embedding lookup followed by residual MLP blocks

    u = h @ W1^T,  a = tanh(g * u),  h <- h + a @ W2^T

and a linear head producing per-position logits.  Every position is
processed independently, which keeps the adjoints short and makes the
whole graph checkable against finite differences.

All arithmetic runs in float64.  When a quantization setup is supplied,
each weight matrix is routed through the fake-quantize round trip before
use (the per-block scalar gains are never quantized), and the backward
pass applies the straight-through convention: the quantizer acts as the
identity, so a matrix's gradient is exactly what its fake-quantized
stand-in received.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .allocation import AllocationPlan, AllocationScheme, build_plan
from .errors import ValidationError
from .quantize import GroupQuantConfig, fake_quantize
from .rng import SeededRng

__all__ = ["ToyModelConfig", "ToyModel", "QuantSetup", "build_quant_setup", "ForwardCache", "forward", "backward"]


@dataclass(frozen=True)
class ToyModelConfig:
    vocab: int = 64
    dim: int = 32
    hidden: int = 64
    blocks: int = 6
    seq_len: int = 16

    def __post_init__(self):
        for name in ("vocab", "dim", "hidden", "blocks", "seq_len"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")


class ToyModel:
    """Parameter container.  All arrays are float64 and updated in place."""

    def __init__(self, cfg: ToyModelConfig, embedding, w1, w2, gain, head):
        self.cfg = cfg
        self.embedding = np.asarray(embedding, dtype=np.float64)
        self.w1 = [np.asarray(m, dtype=np.float64) for m in w1]
        self.w2 = [np.asarray(m, dtype=np.float64) for m in w2]
        self.gain = [np.asarray(g, dtype=np.float64).reshape(()) for g in gain]
        self.head = np.asarray(head, dtype=np.float64)
        if self.embedding.shape != (cfg.vocab, cfg.dim):
            raise ValidationError(f"embedding shape {self.embedding.shape} != {(cfg.vocab, cfg.dim)}")
        if self.head.shape != (cfg.vocab, cfg.dim):
            raise ValidationError(f"head shape {self.head.shape} != {(cfg.vocab, cfg.dim)}")
        if not (len(self.w1) == len(self.w2) == len(self.gain) == cfg.blocks):
            raise ValidationError("per-block parameter lists must match cfg.blocks")
        for bl, (m1, m2) in enumerate(zip(self.w1, self.w2)):
            if m1.shape != (cfg.hidden, cfg.dim) or m2.shape != (cfg.dim, cfg.hidden):
                raise ValidationError(f"block {bl} weight shapes {m1.shape}/{m2.shape} are wrong")

    @classmethod
    def init_random(cls, cfg: ToyModelConfig, rng: SeededRng) -> "ToyModel":
        """Variance-scaled random init keeping tanh in its active range."""
        d, h = cfg.dim, cfg.hidden
        return cls(
            cfg,
            embedding=rng.normal((cfg.vocab, d)) / np.sqrt(d),
            w1=[rng.normal((h, d)) / np.sqrt(d) for _ in range(cfg.blocks)],
            w2=[rng.normal((d, h)) / np.sqrt(h) * 0.5 for _ in range(cfg.blocks)],
            gain=[np.float64(1.0) for _ in range(cfg.blocks)],
            head=rng.normal((cfg.vocab, d)) / np.sqrt(d) * 0.1,
        )

    def params(self) -> dict[str, np.ndarray]:
        """Live views of every trainable array, keyed by stable names."""
        out = {"embedding": self.embedding}
        for bl in range(self.cfg.blocks):
            out[f"w1.{bl}"] = self.w1[bl]
            out[f"w2.{bl}"] = self.w2[bl]
            out[f"gain.{bl}"] = self.gain[bl]
        out["head"] = self.head
        return out

    def copy(self) -> "ToyModel":
        return ToyModel(
            self.cfg,
            self.embedding.copy(),
            [m.copy() for m in self.w1],
            [m.copy() for m in self.w2],
            [g.copy() for g in self.gain],
            self.head.copy(),
        )

    def state_bytes(self) -> bytes:
        """Deterministic byte serialization of all parameters (for hashing)."""
        chunks = [self.embedding.tobytes()]
        for bl in range(self.cfg.blocks):
            chunks += [self.w1[bl].tobytes(), self.w2[bl].tobytes(), self.gain[bl].tobytes()]
        chunks.append(self.head.tobytes())
        return b"".join(chunks)


@dataclass
class QuantSetup:
    """Per-matrix allocation plans plus the shared grouping config."""

    config: GroupQuantConfig
    plans: dict[str, AllocationPlan]


def build_quant_setup(
    model_cfg: ToyModelConfig,
    rho: float,
    scheme: AllocationScheme | str,
    group_size: int,
    seed: int,
    beta: float = 2.0,
    epsilon: float = 1e-5,
) -> QuantSetup:
    """Plans for every weight matrix of a ToyModel.

    Decoder-style matrices (w1/w2) follow the requested rho and scheme;
    embedding and head are always fully 4-bit.  Random-scheme plans get
    per-matrix seeds derived from the base seed.
    """
    scheme = AllocationScheme(scheme)
    config = GroupQuantConfig(group_size=group_size, beta=beta, epsilon=epsilon)
    seeder = SeededRng(seed)
    plans: dict[str, AllocationPlan] = {}

    def plan_for(rows: int, r: float) -> AllocationPlan:
        return build_plan(rows, r, scheme, seed=seeder.next_u64())

    plans["embedding"] = plan_for(model_cfg.vocab, 1.0)
    for bl in range(model_cfg.blocks):
        plans[f"w1.{bl}"] = plan_for(model_cfg.hidden, rho)
        plans[f"w2.{bl}"] = plan_for(model_cfg.dim, rho)
    plans["head"] = plan_for(model_cfg.vocab, 1.0)
    return QuantSetup(config=config, plans=plans)


@dataclass
class ForwardCache:
    """Everything backward() needs, plus the outputs."""

    tokens: np.ndarray           # (batch, seq)
    h: list[np.ndarray]          # blocks+1 arrays, (batch*seq, dim)
    u: list[np.ndarray]          # per block, (batch*seq, hidden)
    a: list[np.ndarray]          # per block, (batch*seq, hidden)
    used: dict[str, np.ndarray]  # weights as multiplied (maybe fake-quantized)
    logits: np.ndarray           # (batch, seq, vocab)
    features: np.ndarray = field(init=False)  # (blocks+1, batch*seq, dim)

    def __post_init__(self):
        self.features = np.stack(self.h)


def _used_weight(model: ToyModel, name: str, quant: QuantSetup | None) -> np.ndarray:
    w = model.params()[name]
    if quant is None:
        return w
    fq = fake_quantize(w.astype(np.float32), quant.plans[name], quant.config)
    return fq.astype(np.float64)


def forward(model: ToyModel, tokens: np.ndarray, quant: QuantSetup | None = None) -> ForwardCache:
    """Run the model over a token batch.

    Args:
        tokens: (batch, seq) integer ids in [0, vocab).
        quant: optional quantization setup; when given, every weight
            matrix is fake-quantized before use.

    Returns:
        ForwardCache with logits (batch, seq, vocab) and all
        intermediates.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValidationError(f"tokens must be (batch, seq), got shape {tokens.shape}")
    if tokens.min(initial=0) < 0 or tokens.max(initial=0) >= model.cfg.vocab:
        raise ValidationError("token id outside [0, vocab)")
    b, t = tokens.shape
    flat = tokens.reshape(-1)

    used = {name: _used_weight(model, name, quant) for name in model.params() if not name.startswith("gain")}
    h = [used["embedding"][flat]]
    u_list, a_list = [], []
    for bl in range(model.cfg.blocks):
        u = h[-1] @ used[f"w1.{bl}"].T
        a = np.tanh(float(model.gain[bl]) * u)
        h.append(h[-1] + a @ used[f"w2.{bl}"].T)
        u_list.append(u)
        a_list.append(a)
    logits = (h[-1] @ used["head"].T).reshape(b, t, model.cfg.vocab)
    return ForwardCache(tokens=tokens, h=h, u=u_list, a=a_list, used=used, logits=logits)


def backward(
    model: ToyModel,
    cache: ForwardCache,
    dlogits: np.ndarray,
    dfeatures: dict[int, np.ndarray] | None = None,
) -> dict[str, np.ndarray]:
    """Reverse-mode gradients for every parameter.

    Args:
        model: the model that produced the cache.
        cache: ForwardCache from forward().
        dlogits: (batch, seq, vocab) upstream gradient on the logits.
        dfeatures: optional {feature index: (batch*seq, dim) gradient}
            injected on h[index] (0 = embedding output, l = block l
            output), as produced by a feature-matching loss.

    Returns:
        dict keyed like model.params(); gradients for the weight
        matrices follow the straight-through convention.
    """
    dfeatures = dfeatures or {}
    nblocks = model.cfg.blocks
    for idx in dfeatures:
        if not 0 <= idx <= nblocks:
            raise ValidationError(f"feature gradient index {idx} outside [0, {nblocks}]")
    dlog = np.asarray(dlogits, dtype=np.float64)
    if dlog.shape != cache.logits.shape:
        raise ValidationError(f"dlogits shape {dlog.shape} != {cache.logits.shape}")
    dlog = dlog.reshape(-1, model.cfg.vocab)

    grads: dict[str, np.ndarray] = {}
    grads["head"] = dlog.T @ cache.h[-1]
    dh = dlog @ cache.used["head"]
    if nblocks in dfeatures:
        dh = dh + dfeatures[nblocks]
    for bl in range(nblocks - 1, -1, -1):
        a, u = cache.a[bl], cache.u[bl]
        da = dh @ cache.used[f"w2.{bl}"]
        grads[f"w2.{bl}"] = dh.T @ a
        sech2 = 1.0 - a * a
        du = da * sech2 * float(model.gain[bl])
        grads[f"gain.{bl}"] = np.asarray((da * sech2 * u).sum())
        grads[f"w1.{bl}"] = du.T @ cache.h[bl]
        dh = dh + du @ cache.used[f"w1.{bl}"]
        if bl in dfeatures:
            dh = dh + dfeatures[bl]
    de = np.zeros_like(model.embedding)
    np.add.at(de, cache.tokens.reshape(-1), dh)
    grads["embedding"] = de
    return grads
