"""Model manifests: named weight shapes with roles, for storage accounting.

A manifest lists every weight matrix of a model (decoder projections,
embedding, lm head, norm vectors) without any tensor data, which is all
the compression report needs.  When ``tied_embedding`` is set, lm_head
entries share the embedding's storage and are excluded from parameter
totals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import FormatError, ValidationError

__all__ = ["LayerRole", "LayerSpec", "ModelManifest", "load_manifest"]


class LayerRole(str, Enum):
    DECODER = "decoder"
    EMBEDDING = "embedding"
    LM_HEAD = "lm_head"
    NORM = "norm"
    OTHER = "other"


@dataclass(frozen=True)
class LayerSpec:
    """One weight matrix: name, shape, role, and whether it gets quantized."""

    name: str
    d_out: int
    d_in: int
    role: LayerRole
    quantize: bool

    def __post_init__(self):
        if not self.name:
            raise ValidationError("layer name must be non-empty")
        if self.d_out <= 0 or self.d_in <= 0:
            raise ValidationError(f"layer {self.name}: dims must be positive, got {self.d_out}x{self.d_in}")

    @property
    def params(self) -> int:
        return self.d_out * self.d_in


@dataclass(frozen=True)
class ModelManifest:
    name: str
    tied_embedding: bool
    layers: tuple[LayerSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        seen = set()
        for layer in self.layers:
            if layer.name in seen:
                raise ValidationError(f"duplicate layer name {layer.name!r}")
            seen.add(layer.name)

    def counted_layers(self) -> tuple[LayerSpec, ...]:
        """Layers contributing to storage (tied lm_head entries dropped)."""
        if not self.tied_embedding:
            return self.layers
        return tuple(l for l in self.layers if l.role is not LayerRole.LM_HEAD)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.counted_layers())

    @property
    def quantized_params(self) -> int:
        return sum(l.params for l in self.counted_layers() if l.quantize)

    # ------------------------------------------------------------------
    # JSON round trip
    # ------------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "tied_embedding": self.tied_embedding,
            "layers": [
                {
                    "name": l.name,
                    "d_out": l.d_out,
                    "d_in": l.d_in,
                    "role": l.role.value,
                    "quantize": l.quantize,
                }
                for l in self.layers
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ModelManifest":
        if not isinstance(doc, dict):
            raise FormatError("manifest root must be a JSON object")
        for key in ("name", "tied_embedding", "layers"):
            if key not in doc:
                raise FormatError(f"manifest missing required key {key!r}")
        if not isinstance(doc["layers"], list) or not doc["layers"]:
            raise FormatError("manifest 'layers' must be a non-empty list")
        layers = []
        for i, entry in enumerate(doc["layers"]):
            if not isinstance(entry, dict):
                raise FormatError(f"layer entry {i} must be an object")
            try:
                role = LayerRole(entry["role"])
            except (KeyError, ValueError):
                raise FormatError(
                    f"layer entry {i}: unknown role {entry.get('role')!r}"
                ) from None
            try:
                layers.append(
                    LayerSpec(
                        name=str(entry["name"]),
                        d_out=int(entry["d_out"]),
                        d_in=int(entry["d_in"]),
                        role=role,
                        quantize=bool(entry["quantize"]),
                    )
                )
            except KeyError as exc:
                raise FormatError(f"layer entry {i}: missing key {exc}") from None
        return cls(name=str(doc["name"]), tied_embedding=bool(doc["tied_embedding"]), layers=tuple(layers))


def load_manifest(path: str | Path) -> ModelManifest:
    """Parse a manifest JSON file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return ModelManifest.from_json(doc)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc
