"""Output-channel bit allocation: which rows get 4-bit, which get ternary.

A plan assigns each of the d_out output channels of a weight matrix either
the high-precision 4-bit mode (assignment 1) or ternary (assignment 0),
at a target 4-bit fraction rho.  Three placement schemes:

* super:   one 4-bit channel at the start of every period of
           round(1 / rho) rows, so high-precision rows are spread evenly.
* stacked: the first round(rho * d_out) rows, all in one block.
* random:  a seeded uniform subset of round(rho * d_out) rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .rng import SeededRng

__all__ = [
    "TERNARY_BITS",
    "FOUR_BITS",
    "AllocationScheme",
    "AllocationPlan",
    "build_plan",
    "effective_bitwidth",
    "load_plan",
    "save_plan",
]

TERNARY_BITS = 1.58
FOUR_BITS = 4.0


class AllocationScheme(str, Enum):
    SUPER_GROUP = "super"
    STACKED = "stacked"
    RANDOM = "random"


@dataclass(frozen=True)
class AllocationPlan:
    """Frozen per-row mode assignment for one weight matrix.

    Attributes:
        rows: number of output channels (d_out).
        rho: requested 4-bit fraction in [0, 1].
        scheme: placement scheme the assignment was built with.
        seed: RNG seed for the random scheme, None otherwise.
        assignment: uint8 array of length rows; 1 = 4-bit, 0 = ternary.
    """

    rows: int
    rho: float
    scheme: AllocationScheme
    seed: int | None
    assignment: np.ndarray

    def __post_init__(self):
        if self.rows <= 0:
            raise ValidationError(f"plan rows must be positive, got {self.rows}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValidationError(f"rho must be in [0, 1], got {self.rho}")
        a = np.asarray(self.assignment, dtype=np.uint8)
        if a.shape != (self.rows,):
            raise ValidationError(f"assignment shape {a.shape} != ({self.rows},)")
        if not np.all((a == 0) | (a == 1)):
            raise ValidationError("assignment entries must be 0 or 1")
        object.__setattr__(self, "assignment", a)

    @property
    def four_bit_count(self) -> int:
        return int(self.assignment.sum())

    @property
    def four_bit_rows(self) -> np.ndarray:
        return np.flatnonzero(self.assignment)

    def to_json(self) -> dict:
        doc = {
            "rows": self.rows,
            "rho": self.rho,
            "scheme": self.scheme.value,
            "seed": self.seed,
            "assignment": "".join("1" if b else "0" for b in self.assignment),
        }
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "AllocationPlan":
        try:
            bits = doc["assignment"]
            if not isinstance(bits, str) or set(bits) - {"0", "1"}:
                raise FormatError("plan assignment must be a string of 0/1")
            return cls(
                rows=int(doc["rows"]),
                rho=float(doc["rho"]),
                scheme=AllocationScheme(doc["scheme"]),
                seed=None if doc.get("seed") is None else int(doc["seed"]),
                assignment=np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0"),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad plan document: {exc}") from exc


def build_plan(
    d_out: int,
    rho: float,
    scheme: AllocationScheme | str = AllocationScheme.SUPER_GROUP,
    seed: int | None = None,
) -> AllocationPlan:
    """Construct the row assignment for one matrix.

    The endpoints short-circuit: rho = 0 is all-ternary and rho = 1 is
    all-4-bit under every scheme.  The super period round(1 / rho) is
    evaluated in 64-bit floats and rounds halves to even, so e.g.
    rho = 0.4 gives period 2.

    Args:
        d_out: number of output channels, positive.
        rho: target 4-bit fraction in [0, 1].
        scheme: placement scheme (enum or its string value).
        seed: required for the random scheme, ignored otherwise.

    Returns:
        AllocationPlan with the realized assignment.
    """
    scheme = AllocationScheme(scheme)
    if d_out <= 0:
        raise ValidationError(f"d_out must be positive, got {d_out}")
    if not 0.0 <= rho <= 1.0:
        raise ValidationError(f"rho must be in [0, 1], got {rho}")

    stored_seed = seed if scheme is AllocationScheme.RANDOM else None
    a = np.zeros(d_out, dtype=np.uint8)
    if rho == 1.0:
        a[:] = 1
    elif rho > 0.0:
        if scheme is AllocationScheme.SUPER_GROUP:
            period = max(1, round(1.0 / rho))
            a[::period] = 1
        elif scheme is AllocationScheme.STACKED:
            a[: round(rho * d_out)] = 1
        else:
            if seed is None:
                raise ValidationError("random scheme requires a seed")
            n4 = round(rho * d_out)
            a[SeededRng(seed).sample_indices(d_out, n4)] = 1
    return AllocationPlan(rows=d_out, rho=rho, scheme=scheme, seed=stored_seed, assignment=a)


def effective_bitwidth(plan: AllocationPlan) -> float:
    """Realized code bits per weight for a plan (scales not included).

    4-bit rows cost 4.0 bits, ternary rows 1.58; the figure reflects the
    assignment actually built, not the requested rho.
    """
    n4 = plan.four_bit_count
    return (FOUR_BITS * n4 + TERNARY_BITS * (plan.rows - n4)) / plan.rows


def save_plan(path: str | Path, plan: AllocationPlan) -> None:
    from .tensorio import atomic_write_bytes

    atomic_write_bytes(path, (json.dumps(plan.to_json(), indent=2) + "\n").encode())


def load_plan(path: str | Path) -> AllocationPlan:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read plan {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    return AllocationPlan.from_json(doc)
