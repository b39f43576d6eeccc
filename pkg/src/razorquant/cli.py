"""Command-line interface.

Every subcommand prints exactly one JSON summary object to stdout on
success (keys in a fixed order) and writes any file outputs atomically.
Report subcommands that emit CSV also render a PNG figure next to it
unless --no-figure is given.

Exit codes: 0 success, 1 bad input (unknown flags, malformed files,
out-of-range values), 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import reporting
from .allocation import AllocationScheme, build_plan, effective_bitwidth, load_plan
from .discrepancy import (
    allocation_points,
    analyze_plan,
    default_salience,
    roundtrip_error_pair,
    star_discrepancy,
)
from .errors import RazorquantError, ValidationError
from .features import FeatureStack, layer_cosine_scores, layer_frequency_analysis, select_layers
from .logits import (
    KldConfig,
    LogitBatch,
    cakld_loss,
    eakld_loss,
    forward_kld,
    mismatch_rate,
    mixing_lambda,
    reverse_kld,
)
from .manifest import load_manifest
from .model import ToyModel, ToyModelConfig
from .packing import (
    PACKED_MAGIC,
    CompressionPolicy,
    compression_report,
    load_blob,
    pack,
    save_blob,
    unpack,
)
from .quantize import (
    GroupQuantConfig,
    dequantize_matrix,
    mode_from_label,
    quantize_matrix,
    quantize_uniform,
)
from .rng import SeededRng
from .tensorio import TENSOR_MAGIC, atomic_write_bytes, load_matrix, load_tensor, save_tensor
from .training import CopyTask, TrainerConfig, pretrain_teacher, run_qad, save_history_csv, token_accuracy

__all__ = ["main", "dispatch"]

_DEFAULT_THRESHOLDS = "0.6,0.7,0.8,0.9,0.95"


class UsageError(RazorquantError):
    """Raised for argparse-level problems so they exit with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--threads",
        type=int,
        default=1,
        help="upper bound on worker threads; the current implementation always runs single-threaded",
    )


def _check_common(args) -> None:
    if args.threads < 1:
        raise ValidationError(f"--threads must be >= 1, got {args.threads}")


def _quant_config(args) -> GroupQuantConfig:
    return GroupQuantConfig(group_size=args.group, beta=args.beta, epsilon=args.eps)


# ----------------------------------------------------------------------
# quantize / pack / unpack
# ----------------------------------------------------------------------

def _blob_summary(command: str, blob, plan=None, out: str | None = None) -> dict:
    doc = {
        "command": command,
        "rows": blob.rows,
        "cols": blob.cols,
        "group_size": blob.group_size,
        "format": blob.format.label,
        "four_bit_rows": int((blob.row_modes == 1).sum()),
        "ternary_rows": int((blob.row_modes == 0).sum()),
        "int8_rows": int((blob.row_modes == 2).sum()),
        "payload_bytes": len(blob.payload),
        "scale_bytes": blob.scales.size * 2,
    }
    if plan is not None:
        doc["scheme"] = plan.scheme.value
        doc["rho"] = plan.rho
        doc["effective_bits"] = effective_bitwidth(plan)
    if out is not None:
        doc["out"] = out
    return doc


def cmd_quantize(args) -> dict:
    w = load_matrix(args.infile)
    plan = build_plan(w.shape[0], args.rho, args.scheme, seed=args.seed)
    q = quantize_matrix(w, plan, _quant_config(args))
    blob = pack(q)
    save_blob(args.out, blob)
    return _blob_summary("quantize", blob, plan=plan, out=args.out)


def cmd_pack(args) -> dict:
    if (args.mode is None) == (args.plan is None):
        raise ValidationError("pack needs exactly one of --mode or --plan")
    w = load_matrix(args.infile)
    config = _quant_config(args)
    if args.plan is not None:
        plan = load_plan(args.plan)
        q = quantize_matrix(w, plan, config)
        blob = pack(q)
        save_blob(args.out, blob)
        return _blob_summary("pack", blob, plan=plan, out=args.out)
    q = quantize_uniform(w, mode_from_label(args.mode), config)
    blob = pack(q)
    save_blob(args.out, blob)
    return _blob_summary("pack", blob, out=args.out)


def cmd_unpack(args) -> dict:
    blob = load_blob(args.infile)
    q = unpack(blob)
    values = dequantize_matrix(q)
    save_tensor(args.out, values)
    doc = _blob_summary("unpack", blob, out=args.out)
    doc["beta"] = blob.beta
    doc["epsilon"] = blob.epsilon
    return doc


# ----------------------------------------------------------------------
# report-compression
# ----------------------------------------------------------------------

def cmd_report_compression(args) -> dict:
    manifest = load_manifest(args.manifest)
    policy = CompressionPolicy(
        decoder_bits=args.decoder_bits,
        embedding_bits=args.embedding_bits,
        group_size=args.group,
    )
    report = compression_report(manifest, policy)
    doc = {"command": "report-compression", **report.to_json()}
    if args.csv:
        rows = [
            [l.name, l.role, l.params, int(l.quantized), float(l.nominal_bits), float(l.physical_bits)]
            for l in report.layers
        ]
        reporting.write_csv(
            args.csv,
            ["name", "role", "params", "quantized", "nominal_bits", "physical_bits"],
            rows,
        )
        doc["csv"] = args.csv
        if not args.no_figure:
            fig_path = reporting.figure_path_for(args.csv)
            reporting.save_figure(reporting.compression_figure(report), fig_path)
            doc["figure"] = str(fig_path)
    return doc


# ----------------------------------------------------------------------
# analyze-alloc
# ----------------------------------------------------------------------

def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ValidationError(f"{flag}: {exc}") from exc
    if not vals:
        raise ValidationError(f"{flag}: empty list")
    return vals


def _parse_ints(text: str, flag: str) -> list[int]:
    return [int(v) for v in _parse_floats(text, flag)]


def _resolve_salience(args, d_out: int, w: np.ndarray | None) -> np.ndarray:
    if args.salience:
        s = load_tensor(args.salience)
        if s.ndim != 1:
            raise ValidationError("--salience must be a rank-1 tensor")
        return s.astype(np.float64)
    if w is not None:
        return np.abs(w).mean(axis=1).astype(np.float64)
    return default_salience(d_out, args.seed)


def _resolve_errors(args, w: np.ndarray | None, config: GroupQuantConfig) -> tuple[float, float]:
    if (args.err_ternary is None) != (args.err_four_bit is None):
        raise ValidationError("give both --err-ternary and --err-four-bit or neither")
    if args.err_ternary is not None:
        return args.err_ternary, args.err_four_bit
    if w is not None:
        return roundtrip_error_pair(w, config)
    # Illustrative defaults when nothing is measurable: a ternary round
    # trip is ~16x noisier than int4 on smooth weight distributions.
    return 1.0, 0.0625


def cmd_analyze_alloc(args) -> dict:
    config = GroupQuantConfig(group_size=args.group, beta=args.beta, epsilon=args.eps)
    if args.sweep:
        return _alloc_sweep(args)
    w = load_matrix(args.infile) if args.infile else None
    d_out = w.shape[0] if w is not None else args.d_out
    if d_out is None:
        raise ValidationError("need --d-out or --in")
    salience = _resolve_salience(args, d_out, w)
    if salience.shape != (d_out,):
        raise ValidationError(f"salience length {salience.shape[0]} != d_out {d_out}")
    err_t, err_4 = _resolve_errors(args, w, config)

    schemes = (
        [AllocationScheme(args.scheme)]
        if args.scheme != "all"
        else [AllocationScheme.SUPER_GROUP, AllocationScheme.STACKED, AllocationScheme.RANDOM]
    )
    reports = {}
    for scheme in schemes:
        plan = build_plan(d_out, args.rho, scheme, seed=args.seed)
        reports[scheme.value] = analyze_plan(plan, salience, err_t, err_4).to_json()
    doc = {
        "command": "analyze-alloc",
        "d_out": d_out,
        "rho": args.rho,
        "seed": args.seed,
        "err_ternary": err_t,
        "err_four_bit": err_4,
        "schemes": reports,
    }
    if args.csv:
        header = [
            "scheme", "rows", "rho", "four_bit_count", "effective_bits", "discrepancy",
            "alignment", "variation", "bound", "empirical_gap", "surrogate",
        ]
        rows = [
            [
                name, r["rows"], float(r["rho"]), r["four_bit_count"], float(r["effective_bits"]),
                float(r["discrepancy"]), float(r["alignment"]), float(r["variation"]),
                float(r["bound"]), float(r["empirical_gap"]), float(r["surrogate"]),
            ]
            for name, r in reports.items()
        ]
        reporting.write_csv(args.csv, header, rows)
        doc["csv"] = args.csv
        if not args.no_figure:
            fig_path = reporting.figure_path_for(args.csv)
            reporting.save_figure(reporting.alloc_figure(reports), fig_path)
            doc["figure"] = str(fig_path)
    return doc


def _alloc_sweep(args) -> dict:
    if not args.csv:
        raise ValidationError("--sweep requires --csv")
    d_outs = _parse_ints(args.sweep_dims, "--sweep-dims")
    rhos = _parse_floats(args.sweep_rhos, "--sweep-rhos")
    if args.sweep_seeds < 1:
        raise ValidationError("--sweep-seeds must be >= 1")
    seeder = SeededRng(args.seed)
    seeds = [seeder.next_u64() for _ in range(args.sweep_seeds)]
    rows = []
    for d_out in d_outs:
        for rho in rhos:
            for scheme in (AllocationScheme.SUPER_GROUP, AllocationScheme.STACKED):
                plan = build_plan(d_out, rho, scheme)
                rows.append(
                    {
                        "d_out": d_out,
                        "rho": rho,
                        "scheme": scheme.value,
                        "n_points": plan.four_bit_count,
                        "discrepancy": star_discrepancy(allocation_points(plan)),
                    }
                )
            rand = [
                star_discrepancy(
                    allocation_points(build_plan(d_out, rho, AllocationScheme.RANDOM, seed=s))
                )
                for s in seeds
            ]
            plan = build_plan(d_out, rho, AllocationScheme.RANDOM, seed=seeds[0])
            rows.append(
                {
                    "d_out": d_out,
                    "rho": rho,
                    "scheme": "random",
                    "n_points": plan.four_bit_count,
                    "discrepancy": float(np.median(rand)),
                }
            )
    reporting.write_csv(
        args.csv,
        ["d_out", "rho", "scheme", "n_points", "discrepancy"],
        [[r["d_out"], float(r["rho"]), r["scheme"], r["n_points"], float(r["discrepancy"])] for r in rows],
    )
    doc = {
        "command": "analyze-alloc",
        "mode": "sweep",
        "configs": len(rows),
        "seeds_per_config": args.sweep_seeds,
        "csv": args.csv,
    }
    if not args.no_figure:
        fig_path = reporting.figure_path_for(args.csv)
        reporting.save_figure(reporting.sweep_figure(rows), fig_path)
        doc["figure"] = str(fig_path)
    return doc


# ----------------------------------------------------------------------
# analyze-layers
# ----------------------------------------------------------------------

def _load_stack(feat_path: str, mask_path: str | None) -> FeatureStack:
    layers = load_tensor(feat_path)
    if layers.ndim != 3:
        raise ValidationError(f"{feat_path}: feature stacks must be rank 3, got rank {layers.ndim}")
    if mask_path is None:
        mask = np.ones(layers.shape[1], dtype=bool)
    else:
        raw = load_tensor(mask_path)
        if raw.ndim != 1 or raw.shape[0] != layers.shape[1]:
            raise ValidationError(f"{mask_path}: mask must be rank 1 with {layers.shape[1]} entries")
        if not np.all(np.isin(raw, [0.0, 1.0])):
            raise ValidationError(f"{mask_path}: mask entries must be 0 or 1")
        mask = raw.astype(bool)
    return FeatureStack(layers, mask)


def cmd_analyze_layers(args) -> dict:
    if args.masks and len(args.masks) != len(args.features):
        raise ValidationError("--masks must list one file per --features entry")
    stacks = [
        _load_stack(f, args.masks[i] if args.masks else None)
        for i, f in enumerate(args.features)
    ]
    counts = layer_frequency_analysis(stacks, args.k)
    per_stack = [
        {
            "file": f,
            "scores": [float(s) for s in layer_cosine_scores(stack)],
            "selected": select_layers(layer_cosine_scores(stack), args.k),
        }
        for f, stack in zip(args.features, stacks)
    ]
    doc = {
        "command": "analyze-layers",
        "stacks": len(stacks),
        "num_layers": stacks[0].num_layers,
        "k": args.k,
        "counts": counts.tolist(),
        "per_stack": per_stack,
    }
    if args.csv:
        reporting.write_csv(
            args.csv,
            ["layer", "count"],
            [[i + 1, int(c)] for i, c in enumerate(counts)],
        )
        doc["csv"] = args.csv
        if not args.no_figure:
            fig_path = reporting.figure_path_for(args.csv)
            reporting.save_figure(reporting.layer_histogram_figure(counts), fig_path)
            doc["figure"] = str(fig_path)
    return doc


# ----------------------------------------------------------------------
# analyze-kld
# ----------------------------------------------------------------------

def _load_logits(path: str) -> np.ndarray:
    arr = load_tensor(path)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValidationError(f"{path}: logits must be rank 2 or 3, got rank {arr.ndim}")
    return arr


def cmd_analyze_kld(args) -> dict:
    teacher = _load_logits(args.teacher)
    student = _load_logits(args.student)
    if args.mask:
        raw = load_tensor(args.mask)
        if raw.ndim == 1:
            raw = raw[None]
        if not np.all(np.isin(raw, [0.0, 1.0])):
            raise ValidationError(f"{args.mask}: mask entries must be 0 or 1")
        mask = raw.astype(bool)
    else:
        mask = np.ones(teacher.shape[:2], dtype=bool)
    labels = None
    if args.labels:
        raw = load_tensor(args.labels)
        if raw.ndim == 1:
            raw = raw[None]
        if not np.all(raw == np.round(raw)):
            raise ValidationError(f"{args.labels}: labels must be integral")
        labels = raw.astype(np.int64)
    batch = LogitBatch(teacher, student, mask, labels=labels)
    cfg = KldConfig(entropy_cap_vocab=args.cap_k)
    doc = {
        "command": "analyze-kld",
        "samples": batch.num_samples,
        "vocab": batch.vocab,
        "cap_k": args.cap_k,
        "lambda": mixing_lambda(batch, cfg),
        "forward_kld": forward_kld(batch),
        "reverse_kld": reverse_kld(batch),
        "eakld": eakld_loss(batch, cfg),
        "cakld": cakld_loss(batch, cfg) if labels is not None else None,
    }
    if args.csv:
        if labels is None:
            raise ValidationError("the mismatch table needs --labels")
        thresholds = _parse_floats(args.thresholds, "--thresholds")
        rows = []
        for t in thresholds:
            high, mism = mismatch_rate(batch, t)
            rows.append({"threshold": t, "high_confidence_fraction": high, "mismatch_fraction": mism})
        reporting.write_csv(
            args.csv,
            ["threshold", "high_confidence_fraction", "mismatch_fraction"],
            [[float(r["threshold"]), float(r["high_confidence_fraction"]), float(r["mismatch_fraction"])] for r in rows],
        )
        doc["csv"] = args.csv
        if not args.no_figure:
            fig_path = reporting.figure_path_for(args.csv)
            reporting.save_figure(reporting.mismatch_figure(rows), fig_path)
            doc["figure"] = str(fig_path)
    return doc


# ----------------------------------------------------------------------
# distill-demo
# ----------------------------------------------------------------------

def _trainer_config_from(args) -> TrainerConfig:
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: invalid JSON: {exc}") from exc
        base = TrainerConfig.from_json(doc)
    else:
        base = TrainerConfig()
    overrides = {}
    for field, flag in (
        ("alpha_task", "alpha_task"),
        ("alpha_feature", "alpha_feature"),
        ("alpha_logit", "alpha_logit"),
        ("k", "k"),
        ("K", "cap_k"),
        ("rho", "rho"),
        ("scheme", "scheme"),
        ("group_size", "group"),
        ("lr", "lr"),
        ("weight_decay", "weight_decay"),
        ("steps", "steps"),
        ("batch_size", "batch_size"),
        ("seed", "seed"),
    ):
        val = getattr(args, flag)
        if val is not None:
            overrides[field] = val
    if overrides:
        merged = base.to_json()
        merged.update(overrides)
        base = TrainerConfig.from_json(merged)
    return base


def cmd_distill_demo(args) -> dict:
    cfg = _trainer_config_from(args)
    mcfg = ToyModelConfig(
        vocab=args.vocab, dim=args.dim, hidden=args.hidden, blocks=args.blocks, seq_len=args.seq_len
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    seeder = SeededRng(cfg.seed)
    teacher = ToyModel.init_random(mcfg, seeder.child())
    task_seed = seeder.next_u64()
    task = CopyTask.create(mcfg.vocab, mcfg.seq_len, seed=task_seed)
    pretrain_teacher(teacher, task, steps=args.teacher_steps, lr=args.teacher_lr)
    accuracy = token_accuracy(teacher, task)

    teacher_digest = hashlib.sha256(teacher.state_bytes()).hexdigest()
    student = teacher.copy()
    eval_task = CopyTask.create(mcfg.vocab, mcfg.seq_len, seed=task_seed)  # fresh stream, same walk
    history = run_qad(teacher, student, eval_task, cfg)
    teacher_digest_after = hashlib.sha256(teacher.state_bytes()).hexdigest()
    if teacher_digest_after != teacher_digest:
        raise AssertionError("teacher parameters changed during distillation")

    csv_path = out_dir / "history.csv"
    save_history_csv(csv_path, history)
    config_path = out_dir / "config.json"
    atomic_write_bytes(config_path, (json.dumps(cfg.to_json(), indent=2) + "\n").encode())
    doc = {
        "command": "distill-demo",
        "steps": cfg.steps,
        "teacher_accuracy": accuracy,
        "teacher_unchanged": True,
        "task_first": history[0]["task"],
        "task_last": history[-1]["task"],
        "task_ratio": history[-1]["task"] / history[0]["task"],
        "total_first": history[0]["total"],
        "total_last": history[-1]["total"],
        "lambda_first": history[0]["lambda"],
        "lambda_last": history[-1]["lambda"],
        "csv": str(csv_path),
        "config": str(config_path),
    }
    if not args.no_figure:
        fig_path = reporting.figure_path_for(csv_path)
        reporting.save_figure(reporting.training_figure(history), fig_path)
        doc["figure"] = str(fig_path)
    return doc


# ----------------------------------------------------------------------
# inspect
# ----------------------------------------------------------------------

def cmd_inspect(args) -> dict:
    path = Path(args.infile)
    try:
        with path.open("rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if head == TENSOR_MAGIC:
        arr = load_tensor(path)
        return {
            "command": "inspect",
            "type": "tensor",
            "shape": list(arr.shape),
            "dtype": "float32",
            "min": float(arr.min()),
            "max": float(arr.max()),
        }
    if head == PACKED_MAGIC:
        blob = load_blob(path)
        doc = _blob_summary("inspect", blob)
        doc = {"command": "inspect", "type": "packed", **{k: v for k, v in doc.items() if k != "command"}}
        doc["beta"] = blob.beta
        doc["epsilon"] = blob.epsilon
        return doc
    try:
        docu = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError, UnicodeDecodeError):
        raise ValidationError(f"{path}: unrecognized file (not a tensor, blob, or JSON document)") from None
    if isinstance(docu, dict) and {"name", "tied_embedding", "layers"} <= set(docu):
        m = load_manifest(path)
        return {
            "command": "inspect",
            "type": "manifest",
            "model": m.name,
            "layers": len(m.layers),
            "tied_embedding": m.tied_embedding,
            "total_params": m.total_params,
            "quantized_params": m.quantized_params,
        }
    if isinstance(docu, dict) and {"rows", "rho", "scheme", "assignment"} <= set(docu):
        plan = load_plan(path)
        return {
            "command": "inspect",
            "type": "plan",
            "rows": plan.rows,
            "rho": plan.rho,
            "scheme": plan.scheme.value,
            "four_bit_rows": plan.four_bit_count,
            "effective_bits": effective_bitwidth(plan),
        }
    if isinstance(docu, dict) and {"steps", "lr", "rho"} <= set(docu):
        cfg = TrainerConfig.from_json(docu)
        return {"command": "inspect", "type": "trainer-config", **cfg.to_json()}
    raise ValidationError(f"{path}: JSON document is not a manifest, plan, or trainer config")


# ----------------------------------------------------------------------
# parser wiring
# ----------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="razorquant", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_quant_flags(p, with_plan_flags: bool):
        p.add_argument("--group", type=int, default=32, help="columns per scale group")
        p.add_argument("--beta", type=float, default=2.0, help="ternary scale multiplier")
        p.add_argument("--eps", type=float, default=1e-5, help="scale floor")
        if with_plan_flags:
            p.add_argument("--rho", type=float, required=True, help="4-bit row fraction in [0, 1]")
            p.add_argument(
                "--scheme", choices=[s.value for s in AllocationScheme], default="super",
                help="row placement scheme",
            )
            p.add_argument("--seed", type=int, default=42, help="seed for the random scheme")

    p = sub.add_parser("quantize", help="quantize a tensor under an allocation plan and pack it")
    p.add_argument("--in", dest="infile", required=True, help="input rank-2 tensor file")
    p.add_argument("--out", required=True, help="output packed blob")
    add_quant_flags(p, with_plan_flags=True)
    _add_common(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("pack", help="quantize with a uniform mode or an explicit plan file, then pack")
    p.add_argument("--in", dest="infile", required=True, help="input rank-2 tensor file")
    p.add_argument("--out", required=True, help="output packed blob")
    p.add_argument("--mode", choices=["ternary", "int4", "int8"], help="uniform row mode")
    p.add_argument("--plan", help="allocation plan JSON (alternative to --mode)")
    add_quant_flags(p, with_plan_flags=False)
    _add_common(p)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("unpack", help="decode a packed blob to a float32 tensor file")
    p.add_argument("--in", dest="infile", required=True, help="input packed blob")
    p.add_argument("--out", required=True, help="output tensor file (dequantized values)")
    _add_common(p)
    p.set_defaults(func=cmd_unpack)

    p = sub.add_parser("report-compression", help="storage accounting for a model manifest")
    p.add_argument("--manifest", required=True, help="manifest JSON file")
    p.add_argument("--decoder-bits", type=float, required=True, help="nominal bits for decoder layers")
    p.add_argument("--embedding-bits", type=float, default=4.0, help="nominal bits for embedding/head")
    p.add_argument("--group", type=int, default=256, help="scale group size")
    p.add_argument("--csv", help="write a per-layer CSV here")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG next to the CSV")
    _add_common(p)
    p.set_defaults(func=cmd_report_compression)

    p = sub.add_parser("analyze-alloc", help="uniformity analysis of allocation schemes")
    p.add_argument("--d-out", type=int, help="number of output channels (or derive from --in)")
    p.add_argument("--rho", type=float, default=0.25, help="4-bit row fraction")
    p.add_argument("--scheme", choices=["all", "super", "stacked", "random"], default="all")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--in", dest="infile", help="optional weight tensor for empirical salience/errors")
    p.add_argument("--salience", help="optional rank-1 salience tensor")
    p.add_argument("--err-ternary", type=float, help="override the ternary error level")
    p.add_argument("--err-four-bit", type=float, help="override the int4 error level")
    p.add_argument("--group", type=int, default=32)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--sweep", action="store_true", help="emit a (d_out, rho, scheme) discrepancy sweep CSV")
    p.add_argument("--sweep-dims", default="64,256,1024")
    p.add_argument("--sweep-rhos", default="0.5,0.25,0.125")
    p.add_argument("--sweep-seeds", type=int, default=33, help="random-scheme seeds per config (median reported)")
    p.add_argument("--csv", help="write analysis rows here")
    p.add_argument("--no-figure", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_analyze_alloc)

    p = sub.add_parser("analyze-layers", help="layer selection frequency over feature stacks")
    p.add_argument("--features", nargs="+", required=True, help="rank-3 feature stack tensors")
    p.add_argument("--masks", nargs="*", default=[], help="optional rank-1 validity masks, one per stack")
    p.add_argument("-k", type=int, default=3, help="layers selected per stack")
    p.add_argument("--csv", help="write the layer histogram here")
    p.add_argument("--no-figure", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_analyze_layers)

    p = sub.add_parser("analyze-kld", help="adaptive logit-loss diagnostics")
    p.add_argument("--teacher", required=True, help="teacher logits tensor (rank 2 or 3)")
    p.add_argument("--student", required=True, help="student logits tensor (rank 2 or 3)")
    p.add_argument("--mask", help="optional validity mask tensor")
    p.add_argument("--labels", help="optional integer label tensor")
    p.add_argument("--cap-k", type=int, default=16, help="entropy cap vocabulary")
    p.add_argument("--thresholds", default=_DEFAULT_THRESHOLDS, help="mismatch table thresholds")
    p.add_argument("--csv", help="write the mismatch table here (needs --labels)")
    p.add_argument("--no-figure", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_analyze_kld)

    p = sub.add_parser("distill-demo", help="teacher pretraining plus a QAD run on the toy model")
    p.add_argument("--config", help="trainer config JSON; flags override its fields")
    p.add_argument("--out-dir", required=True, help="directory for history.csv, figures, config.json")
    p.add_argument("--steps", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--scheme", choices=[s.value for s in AllocationScheme])
    p.add_argument("--group", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--cap-k", type=int, help="entropy cap vocabulary (the K field)")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--alpha-task", type=float)
    p.add_argument("--alpha-feature", type=float)
    p.add_argument("--alpha-logit", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--vocab", type=int, default=64)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--blocks", type=int, default=6)
    p.add_argument("--seq-len", type=int, default=16)
    p.add_argument("--teacher-steps", type=int, default=600)
    p.add_argument("--teacher-lr", type=float, default=1e-2)
    p.add_argument("--no-figure", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_distill_demo)

    p = sub.add_parser("inspect", help="identify a file and print its header fields")
    p.add_argument("--in", dest="infile", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_inspect)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _check_common(args)
        doc = args.func(args)
        _emit(doc)
        return 0
    except RazorquantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 1
    except Exception as exc:  # invariant violation: report and exit 2
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
