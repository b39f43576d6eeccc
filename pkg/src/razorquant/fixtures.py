"""Checked-in manifests and golden expected values, with a verifier.

The two model manifests mirror the public configurations of small
open-weight decoder models (one ~0.6B with 28 blocks, hidden 1024,
grouped-query attention with per-head norms and a tied embedding over a
151936-token vocab; one ~350M with 32 thin blocks, hidden 960, vocab
32000, also tied).  They carry shapes only, no tensor data.

``goldens.json`` freezes expected values for hand-checkable cases across
the package.  Every entry names an evaluator in ``_EVALUATORS``;
``verify_goldens()`` recomputes each actual value and compares under the
entry's tolerance.  Regenerate the files after an intentional change
with ``python -m razorquant.fixtures regen`` and review the diff.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .allocation import AllocationScheme, build_plan, effective_bitwidth
from .discrepancy import allocation_points, star_discrepancy
from .features import select_layers
from .logits import KldConfig, LogitBatch, forward_kld, mixing_lambda, mismatch_rate, token_entropy
from .manifest import LayerRole, LayerSpec, ModelManifest, load_manifest
from .packing import CompressionPolicy, compression_report
from .quantize import BitMode, GroupQuantConfig, quantize_group
from .rng import SeededRng

__all__ = [
    "fixture_dir",
    "qwen3_manifest",
    "mobilellm_manifest",
    "build_qwen3_manifest",
    "build_mobilellm_manifest",
    "GoldenResult",
    "verify_goldens",
    "regenerate",
]


def fixture_dir() -> Path:
    return Path(__file__).parent / "fixtures"


# ----------------------------------------------------------------------
# manifest builders
# ----------------------------------------------------------------------

def build_qwen3_manifest() -> ModelManifest:
    """Shape manifest for the ~0.6B tied-embedding decoder."""
    hidden = 1024
    n_layers = 28
    q_heads, kv_heads, head_dim = 16, 8, 128
    ffn = 3072
    vocab = 151936

    layers = [LayerSpec("embed_tokens", vocab, hidden, LayerRole.EMBEDDING, True)]
    for i in range(n_layers):
        p = f"layers.{i}."
        layers += [
            LayerSpec(p + "self_attn.q_proj", q_heads * head_dim, hidden, LayerRole.DECODER, True),
            LayerSpec(p + "self_attn.k_proj", kv_heads * head_dim, hidden, LayerRole.DECODER, True),
            LayerSpec(p + "self_attn.v_proj", kv_heads * head_dim, hidden, LayerRole.DECODER, True),
            LayerSpec(p + "self_attn.o_proj", hidden, q_heads * head_dim, LayerRole.DECODER, True),
            LayerSpec(p + "self_attn.q_norm", 1, head_dim, LayerRole.NORM, False),
            LayerSpec(p + "self_attn.k_norm", 1, head_dim, LayerRole.NORM, False),
            LayerSpec(p + "mlp.gate_proj", ffn, hidden, LayerRole.DECODER, True),
            LayerSpec(p + "mlp.up_proj", ffn, hidden, LayerRole.DECODER, True),
            LayerSpec(p + "mlp.down_proj", hidden, ffn, LayerRole.DECODER, True),
            LayerSpec(p + "input_layernorm", 1, hidden, LayerRole.NORM, False),
            LayerSpec(p + "post_attention_layernorm", 1, hidden, LayerRole.NORM, False),
        ]
    layers += [
        LayerSpec("norm", 1, hidden, LayerRole.NORM, False),
        LayerSpec("lm_head", vocab, hidden, LayerRole.LM_HEAD, True),
    ]
    return ModelManifest(name="qwen3-0.6b-shape", tied_embedding=True, layers=tuple(layers))


def build_mobilellm_manifest() -> ModelManifest:
    """Shape manifest for the ~350M tied-embedding decoder."""
    hidden = 960
    n_layers = 32
    q_heads, kv_heads, head_dim = 15, 5, 64
    ffn = 2560
    vocab = 32000

    layers = [LayerSpec("embed_tokens", vocab, hidden, LayerRole.EMBEDDING, True)]
    for i in range(n_layers):
        p = f"layers.{i}."
        layers += [
            LayerSpec(p + "self_attn.q_proj", q_heads * head_dim, hidden, LayerRole.DECODER, True),
            LayerSpec(p + "self_attn.k_proj", kv_heads * head_dim, hidden, LayerRole.DECODER, True),
            LayerSpec(p + "self_attn.v_proj", kv_heads * head_dim, hidden, LayerRole.DECODER, True),
            LayerSpec(p + "self_attn.o_proj", hidden, q_heads * head_dim, LayerRole.DECODER, True),
            LayerSpec(p + "mlp.gate_proj", ffn, hidden, LayerRole.DECODER, True),
            LayerSpec(p + "mlp.up_proj", ffn, hidden, LayerRole.DECODER, True),
            LayerSpec(p + "mlp.down_proj", hidden, ffn, LayerRole.DECODER, True),
            LayerSpec(p + "input_layernorm", 1, hidden, LayerRole.NORM, False),
            LayerSpec(p + "post_attention_layernorm", 1, hidden, LayerRole.NORM, False),
        ]
    layers += [
        LayerSpec("norm", 1, hidden, LayerRole.NORM, False),
        LayerSpec("lm_head", vocab, hidden, LayerRole.LM_HEAD, True),
    ]
    return ModelManifest(name="mobilellm-350m-shape", tied_embedding=True, layers=tuple(layers))


def qwen3_manifest() -> ModelManifest:
    return load_manifest(fixture_dir() / "qwen3_0p6b.json")


def mobilellm_manifest() -> ModelManifest:
    return load_manifest(fixture_dir() / "mobilellm_350m.json")


# ----------------------------------------------------------------------
# golden evaluators
# ----------------------------------------------------------------------

def _eval_ternary_group():
    codes, scale = quantize_group(
        np.array([1.2, -2.0, 0.1, 0.7], np.float32), BitMode.TERNARY, GroupQuantConfig(4)
    )
    return {"scale": float(scale), "codes": codes.tolist()}


def _eval_int4_group():
    codes, scale = quantize_group(
        np.array([7.0, -3.5, 0.0, 1.75], np.float32), BitMode.INT4, GroupQuantConfig(4)
    )
    return {"scale": float(scale), "codes": codes.tolist()}


def _eval_int8_group():
    codes, scale = quantize_group(
        np.array([0.5, -1.0, 0.25, 1.0], np.float32), BitMode.INT8, GroupQuantConfig(4)
    )
    return {"scale": float(scale), "codes": codes.tolist()}


def _eval_pack_bytes():
    from .packing import _pack_int4_row, _pack_ternary_row

    return {
        "ternary_example": _pack_ternary_row(np.array([1, -1, 0, 0, 1], np.int8))[0],
        "ternary_zero": _pack_ternary_row(np.zeros(5, np.int8))[0],
        "int4_pair": _pack_int4_row(np.array([7, -4], np.int8))[0],
    }


def _eval_effective_bits():
    out = {}
    for rho in (1.0, 0.5, 0.125, 0.0):
        plan = build_plan(64, rho, AllocationScheme.SUPER_GROUP)
        out[str(rho)] = effective_bitwidth(plan)
    return out


def _eval_plan_super_d8():
    plan = build_plan(8, 0.125, AllocationScheme.SUPER_GROUP)
    return {"assignment": plan.assignment.tolist()}


def _eval_discrepancy_cases():
    super_plan = build_plan(16, 0.25, AllocationScheme.SUPER_GROUP)
    stacked_plan = build_plan(16, 0.25, AllocationScheme.STACKED)
    grid = (np.arange(4, dtype=np.float64) + 0.5) / 4.0
    return {
        "super_points": allocation_points(super_plan).tolist(),
        "stacked_points": allocation_points(stacked_plan).tolist(),
        "super_dstar": star_discrepancy(allocation_points(super_plan)),
        "stacked_dstar": star_discrepancy(allocation_points(stacked_plan)),
        "midpoint_grid_dstar": star_discrepancy(grid),
    }


def _eval_select_layers():
    return {"selected": select_layers(np.array([0.9, 0.2, 0.5, 0.2]), 2)}


def _eval_entropy():
    return {"value": token_entropy(np.array([0.5, 0.25, 0.25]))}


def _eval_fkld():
    # One token; probabilities realized through logits.
    t = np.log(np.array([[[0.5, 0.5]]]))
    s = np.log(np.array([[[0.25, 0.75]]]))
    batch = LogitBatch(t, s, np.array([[True]]))
    return {"value": forward_kld(batch)}


def _eval_lambda_cases():
    cfg = KldConfig(entropy_cap_vocab=16)
    # Near-one-hot teacher: entropy ~ 0.
    onehot = np.full((1, 1, 8), -1e9)
    onehot[0, 0, 3] = 0.0
    sharp = LogitBatch(onehot, np.zeros((1, 1, 8)), np.array([[True]]))
    # Uniform over 4 tokens: entropy ln(4), cap ln(16).
    quarter = LogitBatch(np.zeros((1, 1, 4)), np.zeros((1, 1, 4)), np.array([[True]]))
    # Uniform over 16 tokens: entropy hits the cap.
    full = LogitBatch(np.zeros((1, 1, 16)), np.zeros((1, 1, 16)), np.array([[True]]))
    return {
        "sharp": mixing_lambda(sharp, cfg),
        "uniform_quarter": mixing_lambda(quarter, cfg),
        "uniform_at_cap": mixing_lambda(full, cfg),
    }


def _eval_total_loss():
    from .training import TrainerConfig, total_loss

    return {"value": total_loss(1.0, 1.0, 1.0, TrainerConfig())}


def _eval_mismatch():
    # Four tokens: three confident (0.9 top), one of them mislabeled,
    # one diffuse (0.5 top).  Threshold 0.6.
    vocab = 4

    def logit_row(top_idx, top_p):
        rest = (1.0 - top_p) / (vocab - 1)
        row = np.full(vocab, rest)
        row[top_idx] = top_p
        return np.log(row)

    t = np.stack([
        logit_row(0, 0.9),
        logit_row(1, 0.9),
        logit_row(2, 0.9),
        logit_row(3, 0.5),
    ])[None]
    labels = np.array([[0, 1, 3, 3]])  # token 2 is confidently wrong
    batch = LogitBatch(t, np.zeros_like(t), np.ones((1, 4), bool), labels=labels)
    high, mism = mismatch_rate(batch, 0.6)
    return {"high_confidence_fraction": high, "mismatch_fraction": mism}


def _eval_mp_matmul_hand():
    from .gemm import mp_matmul
    from .quantize import QuantizedGroupMatrix

    cfg = GroupQuantConfig(group_size=4)
    wq = QuantizedGroupMatrix(
        codes=np.array([[1, -1, 0, 0]], np.int8),
        scales=np.array([[2.0]], np.float16),
        row_modes=np.array([BitMode.TERNARY], np.uint8),
        config=cfg,
    )
    xq = QuantizedGroupMatrix(
        codes=np.array([[10, 20, 0, 5]], np.int8),
        scales=np.array([[0.1]], np.float16),
        row_modes=np.array([BitMode.INT8], np.uint8),
        config=cfg,
    )
    y = mp_matmul(wq, xq)
    int_dot = int((wq.codes.astype(np.int64) @ xq.codes.astype(np.int64).T)[0, 0])
    return {"y": float(y[0, 0]), "integer_dot": int_dot}


def _eval_qwen3_params():
    m = qwen3_manifest()
    return {"total_params": m.total_params, "quantized_params": m.quantized_params}


def _eval_qwen3_compression():
    m = qwen3_manifest()
    out = {}
    for bits in (4.0, 2.79, 1.88, 1.58):
        rep = compression_report(m, CompressionPolicy(decoder_bits=bits, embedding_bits=4.0, group_size=256))
        out[str(bits)] = rep.compression_ratio_nominal
    rep = compression_report(m, CompressionPolicy(decoder_bits=1.58, embedding_bits=4.0, group_size=256))
    out["proportion"] = rep.quantization_proportion
    return out


def _eval_mobilellm_compression():
    m = mobilellm_manifest()
    rep = compression_report(m, CompressionPolicy(decoder_bits=4.0, embedding_bits=4.0, group_size=64))
    return {"ratio": rep.compression_ratio_nominal}


def _eval_single_layer_compression():
    m = ModelManifest(
        name="one-layer",
        tied_embedding=False,
        layers=(LayerSpec("w", 256, 256, LayerRole.DECODER, True),),
    )
    rep = compression_report(m, CompressionPolicy(decoder_bits=4.0, embedding_bits=4.0, group_size=256))
    return {
        "bits_per_weight": rep.nominal_bits_per_weight,
        "ratio": rep.compression_ratio_nominal,
    }


def _eval_trainer_step0():
    from .model import ToyModel, ToyModelConfig, build_quant_setup, forward
    from .training import CopyTask, TrainerConfig, _composite_losses

    mcfg = ToyModelConfig()
    teacher = ToyModel.init_random(mcfg, SeededRng(7))
    student = teacher.copy()
    task = CopyTask.create(mcfg.vocab, mcfg.seq_len, seed=11)
    tokens, labels, mask = task.sample(8)
    cfg = TrainerConfig()
    quant = build_quant_setup(mcfg, cfg.rho, cfg.scheme, cfg.group_size, cfg.seed)
    t_cache = forward(teacher, tokens)
    s_cache = forward(student, tokens, quant)
    metrics, _, _ = _composite_losses(
        t_cache, s_cache, labels, mask, cfg, KldConfig(entropy_cap_vocab=cfg.K)
    )
    return {
        "task": metrics["task"],
        "feature": metrics["feature"],
        "logit": metrics["logit"],
        "lambda": metrics["lambda"],
    }


_EVALUATORS = {
    "quantize/ternary_group": _eval_ternary_group,
    "quantize/int4_group": _eval_int4_group,
    "quantize/int8_group": _eval_int8_group,
    "packing/byte_values": _eval_pack_bytes,
    "allocation/effective_bits": _eval_effective_bits,
    "allocation/super_d8": _eval_plan_super_d8,
    "discrepancy/hand_cases": _eval_discrepancy_cases,
    "features/select_layers": _eval_select_layers,
    "logits/entropy": _eval_entropy,
    "logits/forward_kld": _eval_fkld,
    "logits/lambda_cases": _eval_lambda_cases,
    "logits/mismatch": _eval_mismatch,
    "training/total_loss": _eval_total_loss,
    "gemm/hand_case": _eval_mp_matmul_hand,
    "manifest/qwen3_params": _eval_qwen3_params,
    "compression/qwen3_ratios": _eval_qwen3_compression,
    "compression/mobilellm_ratio": _eval_mobilellm_compression,
    "compression/single_layer": _eval_single_layer_compression,
    "training/step0_regression": _eval_trainer_step0,
}

# Expected values frozen independently of the evaluators (hand
# derivations and published reference figures); tolerances per entry.
_FROZEN: dict[str, dict] = {
    "quantize/ternary_group": {
        "expected": {"scale": 2.0, "codes": [1, -1, 0, 0]},
        "rtol": 0.0,
    },
    "quantize/int4_group": {
        "expected": {"scale": 1.0, "codes": [7, -4, 0, 2]},
        "rtol": 0.0,
    },
    "quantize/int8_group": {
        # 1/127 rounded to float16 storage.
        "expected": {"scale": 0.00787353515625, "codes": [64, -127, 32, 127]},
        "rtol": 0.0,
    },
    "packing/byte_values": {
        "expected": {"ternary_example": 200, "ternary_zero": 121, "int4_pair": 79},
        "rtol": 0.0,
    },
    "allocation/effective_bits": {
        "expected": {"1.0": 4.0, "0.5": 2.79, "0.125": 1.8825, "0.0": 1.58},
        "rtol": 1e-12,
    },
    "allocation/super_d8": {
        "expected": {"assignment": [1, 0, 0, 0, 0, 0, 0, 0]},
        "rtol": 0.0,
    },
    "discrepancy/hand_cases": {
        "expected": {
            "super_points": [0.03125, 0.28125, 0.53125, 0.78125],
            "stacked_points": [0.03125, 0.09375, 0.15625, 0.21875],
            "super_dstar": 0.21875,
            "stacked_dstar": 0.78125,
            "midpoint_grid_dstar": 0.125,
        },
        "rtol": 1e-12,
    },
    "features/select_layers": {
        "expected": {"selected": [2, 4]},
        "rtol": 0.0,
    },
    "logits/entropy": {
        "expected": {"value": 1.0397207708399179},  # 1.5 * ln 2
        "rtol": 1e-12,
    },
    "logits/forward_kld": {
        "expected": {"value": 0.14384103622589045},  # 0.5 * ln(4/3)
        "rtol": 1e-9,
    },
    "logits/lambda_cases": {
        "expected": {"sharp": 0.0, "uniform_quarter": 0.5, "uniform_at_cap": 1.0},
        "atol": 1e-9,
    },
    "logits/mismatch": {
        "expected": {"high_confidence_fraction": 0.75, "mismatch_fraction": 1.0 / 3.0},
        "rtol": 1e-12,
    },
    "training/total_loss": {
        "expected": {"value": 2.2},
        "rtol": 1e-12,
    },
    "gemm/hand_case": {
        # Scales live in float16, so the hand value -2.0 is met at 1e-3.
        "expected": {"y": -2.0, "integer_dot": -10},
        "rtol": 1e-3,
    },
    "manifest/qwen3_params": {
        "expected": {"total_params": 596049920, "quantized_params": 595984384},
        "rtol": 0.0,
    },
    "compression/qwen3_ratios": {
        "expected": {"4.0": 3.94, "2.79": 5.05, "1.88": 6.41, "1.58": 7.04, "proportion": 99.99},
        "atol": 0.01,
    },
    "compression/mobilellm_ratio": {
        "expected": {"ratio": 3.76},
        "atol": 0.01,
    },
    "compression/single_layer": {
        "expected": {"bits_per_weight": 4.0625, "ratio": 3.938},
        "atol": 5e-4,
    },
    # Regression pin for the desk-scale trainer; values are regenerated
    # by `python -m razorquant.fixtures regen` and compared loosely
    # enough to absorb BLAS reduction-order differences.
    "training/step0_regression": {
        "expected": None,  # filled by regenerate()
        "rtol": 1e-6,
    },
}


@dataclass(frozen=True)
class GoldenResult:
    name: str
    passed: bool
    expected: object
    actual: object
    detail: str


def _compare(expected, actual, rtol: float, atol: float) -> tuple[bool, str]:
    if isinstance(expected, dict):
        if not isinstance(actual, dict) or set(expected) != set(actual):
            return False, f"key mismatch: {sorted(expected)} vs {sorted(actual) if isinstance(actual, dict) else actual}"
        for key in expected:
            ok, why = _compare(expected[key], actual[key], rtol, atol)
            if not ok:
                return False, f"{key}: {why}"
        return True, "ok"
    if isinstance(expected, list):
        if not isinstance(actual, list) or len(expected) != len(actual):
            return False, f"length mismatch: {expected} vs {actual}"
        for i, (e, a) in enumerate(zip(expected, actual)):
            ok, why = _compare(e, a, rtol, atol)
            if not ok:
                return False, f"[{i}]: {why}"
        return True, "ok"
    if isinstance(expected, bool) or isinstance(expected, str):
        return (expected == actual), f"{actual!r} != {expected!r}"
    if isinstance(expected, int) and rtol == 0.0 and atol == 0.0:
        return (expected == actual), f"{actual} != {expected}"
    e, a = float(expected), float(actual)
    tol = atol + rtol * abs(e)
    if math.isfinite(a) and abs(a - e) <= tol:
        return True, "ok"
    return False, f"|{a} - {e}| = {abs(a - e):.3g} > {tol:.3g}"


def _load_goldens() -> dict:
    path = fixture_dir() / "goldens.json"
    return json.loads(path.read_text())


def verify_goldens() -> list[GoldenResult]:
    """Recompute every golden case and compare against the frozen file."""
    doc = _load_goldens()
    results = []
    for name, entry in doc.items():
        if name not in _EVALUATORS:
            results.append(GoldenResult(name, False, entry.get("expected"), None, "no evaluator"))
            continue
        actual = _EVALUATORS[name]()
        ok, detail = _compare(
            entry["expected"], actual, entry.get("rtol", 0.0), entry.get("atol", 0.0)
        )
        results.append(GoldenResult(name, ok, entry["expected"], actual, detail))
    return results


def regenerate(root: Path | None = None) -> list[Path]:
    """Rewrite the fixture JSON files from the builders.

    The goldens file keeps the frozen hand values verbatim; only the
    trainer regression entry is recomputed, since it pins this
    implementation's own step-0 output.
    """
    root = root or fixture_dir()
    root.mkdir(parents=True, exist_ok=True)
    written = []

    for fname, builder in (
        ("qwen3_0p6b.json", build_qwen3_manifest),
        ("mobilellm_350m.json", build_mobilellm_manifest),
    ):
        path = root / fname
        path.write_text(json.dumps(builder().to_json(), indent=2) + "\n")
        written.append(path)

    goldens = {}
    for name, spec in _FROZEN.items():
        entry = {k: v for k, v in spec.items()}
        if name == "training/step0_regression":
            entry["expected"] = _EVALUATORS[name]()
        goldens[name] = entry
    path = root / "goldens.json"
    path.write_text(json.dumps(goldens, indent=2) + "\n")
    written.append(path)
    return written


def main(argv: list[str] | None = None) -> int:
    import sys

    args = sys.argv[1:] if argv is None else argv
    if args == ["regen"]:
        for p in regenerate():
            print(f"wrote {p}")
        return 0
    if args in ([], ["check"]):
        results = verify_goldens()
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
        return 0 if all(r.passed for r in results) else 1
    print("usage: python -m razorquant.fixtures [check|regen]", file=sys.stderr)
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
