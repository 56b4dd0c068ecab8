"""Tolerance-based algebra on sets of angular frequencies.

Two frequencies coincide when they differ by at most ``delta``; for a record
of duration ``T`` the working tolerance is ``delta = 2*pi/T``. Coincidence is
not transitive, so intersections are materialised as an explicit one-to-one
matching (:class:`MatchTable`): candidate pairs are accepted greedily in order
of increasing distance, ties broken by ascending frequency, which makes the
result independent of argument order.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "FORMAT_VERSION",
    "FrequencySet",
    "MatchTable",
    "SemiringReport",
    "ToleranceMismatchError",
    "coincident",
    "set_intersect",
    "set_difference",
    "set_union",
    "semiring_check",
    "decorrelate",
    "write_sets_json",
    "read_sets_json",
]

FORMAT_VERSION = 1


class ToleranceMismatchError(ValueError):
    """Operands carry different coincidence tolerances and no override was given."""


@dataclass(frozen=True, eq=False)
class FrequencySet:
    freqs: np.ndarray
    delta: float
    label: str = ""

    def __post_init__(self):
        freqs = np.array(self.freqs, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(freqs)) or np.any(freqs < 0):
            raise ValueError("frequencies must be finite and >= 0")
        if np.any(np.diff(freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        delta = float(self.delta)
        if not np.isfinite(delta) or delta < 0:
            raise ValueError(f"delta must be finite and >= 0, got {self.delta!r}")
        freqs.setflags(write=False)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "label", str(self.label))

    @classmethod
    def from_values(cls, values, delta: float, label: str = "") -> "FrequencySet":
        """Sort and drop exact duplicates."""
        arr = np.unique(np.asarray(list(values), dtype=np.float64))
        return cls(arr, delta, label)

    @classmethod
    def empty(cls, delta: float, label: str = "") -> "FrequencySet":
        return cls(np.zeros(0), delta, label)

    def __len__(self):
        return int(self.freqs.size)

    def __iter__(self):
        return iter(self.freqs.tolist())

    def __repr__(self):
        return f"FrequencySet({self.freqs.tolist()!r}, delta={self.delta:g}, label={self.label!r})"

    def equals(self, other: "FrequencySet") -> bool:
        return self.delta == other.delta and np.array_equal(self.freqs, other.freqs)

    def tolist(self) -> list[float]:
        return self.freqs.tolist()

    def relabel(self, label: str) -> "FrequencySet":
        return FrequencySet(self.freqs, self.delta, label)

    def with_delta(self, delta: float) -> "FrequencySet":
        return FrequencySet(self.freqs, delta, self.label)

    def self_coincidences(self) -> list[tuple[float, float]]:
        """Neighbouring entries closer than the tolerance."""
        f = self.freqs
        close = np.flatnonzero(np.diff(f) <= self.delta)
        return [(float(f[i]), float(f[i + 1])) for i in close]

    def to_records(self) -> list[dict]:
        return [{"omega": w, "label": self.label} for w in self.tolist()]

    def to_csv(self) -> str:
        return "omega\n" + "".join(f"{w!r}\n" for w in self.tolist())

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv(), encoding="utf-8", newline="\n")

    @classmethod
    def read_csv(cls, path, delta: float, label: str = "") -> "FrequencySet":
        values = []
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or not row[0].strip():
                    continue
                try:
                    values.append(float(row[0]))
                except ValueError:
                    if lineno == 1:
                        continue  # header
                    raise ValueError(f"{path}: line {lineno}: not a number: {row[0]!r}") from None
        return cls(values, delta, label)


@dataclass(frozen=True)
class MatchTable:
    """One-to-one matching between two frequency sets.

    ``pairs`` holds ``(index_in_a, index_in_b, midpoint)`` sorted by midpoint.
    """

    a: FrequencySet
    b: FrequencySet
    delta: float
    pairs: tuple = ()
    unmatched_a: tuple = ()
    unmatched_b: tuple = ()

    def __len__(self):
        return len(self.pairs)

    @property
    def midpoints(self) -> np.ndarray:
        return np.array([m for _, _, m in self.pairs], dtype=np.float64)

    def sources(self) -> list[tuple[float, float, float]]:
        """``(omega_a, omega_b, midpoint)`` per pair."""
        return [(float(self.a.freqs[i]), float(self.b.freqs[j]), m) for i, j, m in self.pairs]

    def to_set(self, label: str = "") -> FrequencySet:
        return FrequencySet.from_values(self.midpoints, self.delta, label)


@dataclass(frozen=True)
class SemiringReport:
    holds: bool
    violations: tuple = ()  # (label_a, label_b, omega_a, omega_b)

    def __bool__(self):
        return self.holds


def coincident(a: float, b: float, delta: float) -> bool:
    return abs(a - b) <= delta


def _common_delta(a: FrequencySet, b: FrequencySet, delta: float | None) -> float:
    if delta is not None:
        return float(delta)
    if a.delta != b.delta:
        raise ToleranceMismatchError(
            f"sets {a.label!r} (delta={a.delta:g}) and {b.label!r} (delta={b.delta:g}) "
            "have different tolerances; pass delta= explicitly"
        )
    return a.delta


def _candidates(fa: np.ndarray, fb: np.ndarray, delta: float):
    lo = np.searchsorted(fb, fa - delta, side="left")
    hi = np.searchsorted(fb, fa + delta, side="right")
    for i in range(fa.size):
        for j in range(lo[i], hi[i]):
            d = abs(fa[i] - fb[j])
            if d <= delta:
                yield d, min(fa[i], fb[j]), max(fa[i], fb[j]), i, j


def set_intersect(a: FrequencySet, b: FrequencySet, delta: float | None = None) -> MatchTable:
    """Greedy closest-first one-to-one matching of coincident frequencies."""
    delta = _common_delta(a, b, delta)
    fa, fb = a.freqs, b.freqs
    used_a = np.zeros(fa.size, dtype=bool)
    used_b = np.zeros(fb.size, dtype=bool)
    pairs = []
    for _, lo, hi, i, j in sorted(_candidates(fa, fb, delta)):
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = used_b[j] = True
        pairs.append((int(i), int(j), float((lo + hi) / 2)))
    pairs.sort(key=lambda p: (p[2], p[0]))
    return MatchTable(
        a=a,
        b=b,
        delta=delta,
        pairs=tuple(pairs),
        unmatched_a=tuple(int(i) for i in np.flatnonzero(~used_a)),
        unmatched_b=tuple(int(j) for j in np.flatnonzero(~used_b)),
    )


def _near_mask(fa: np.ndarray, fb: np.ndarray, delta: float) -> np.ndarray:
    """True where an entry of ``fa`` coincides with some entry of ``fb``."""
    if fb.size == 0 or fa.size == 0:
        return np.zeros(fa.size, dtype=bool)
    idx = np.searchsorted(fb, fa)
    left = np.abs(fa - fb[np.clip(idx - 1, 0, fb.size - 1)])
    right = np.abs(fb[np.clip(idx, 0, fb.size - 1)] - fa)
    return np.minimum(left, right) <= delta


def set_difference(a: FrequencySet, b: FrequencySet, delta: float | None = None) -> FrequencySet:
    """Entries of ``a`` not coincident with any entry of ``b``; keeps ``a``'s label and tolerance."""
    delta = _common_delta(a, b, delta)
    keep = ~_near_mask(a.freqs, b.freqs, delta)
    return FrequencySet(a.freqs[keep], a.delta, a.label)


def set_union(sets: Sequence[FrequencySet], label: str = "", delta: float | None = None) -> FrequencySet:
    """Union with exact-duplicate removal only (no tolerance merging)."""
    if delta is None:
        if not sets:
            raise ValueError("cannot infer a tolerance from no sets")
        delta = sets[0].delta
    values = np.concatenate([s.freqs for s in sets]) if sets else np.zeros(0)
    return FrequencySet.from_values(values, delta, label)


def _require_family(sets: Sequence[FrequencySet]) -> float:
    if len(sets) < 2:
        raise ValueError(f"need at least two frequency sets, got {len(sets)}")
    deltas = {s.delta for s in sets}
    if len(deltas) != 1:
        raise ToleranceMismatchError(f"frequency sets carry different tolerances: {sorted(deltas)}")
    return deltas.pop()


def semiring_check(sets: Sequence[FrequencySet]) -> SemiringReport:
    """Are the sets pairwise disjoint at their common tolerance?"""
    delta = _require_family(sets)
    violations = []
    for sa, sb in combinations(sets, 2):
        for wa, wb, _ in set_intersect(sa, sb, delta).sources():
            violations.append((sa.label, sb.label, wa, wb))
    return SemiringReport(not violations, tuple(violations))


def decorrelate(inputs: Sequence[FrequencySet], mode: str = "coupling"):
    """Split input sets into pairwise-disjoint parts and a common coupling set.

    The coupling set collects the matched midpoints of every input pair.
    ``mode="coupling"`` subtracts that set from each input. ``mode="symmetric"``
    instead removes from each input every frequency that coincides with any
    frequency of another input; it is stricter and never keeps an entry that
    the coupling mode drops.

    Returns ``(outputs, coupling)``.
    """
    delta = _require_family(inputs)
    mids = [set_intersect(sa, sb, delta).midpoints for sa, sb in combinations(inputs, 2)]
    coupling = FrequencySet.from_values(np.concatenate(mids) if mids else [], delta, "coupling")
    if mode == "coupling":
        outputs = [set_difference(s, coupling) for s in inputs]
    elif mode == "symmetric":
        outputs = []
        for q, s in enumerate(inputs):
            others = set_union([o for p, o in enumerate(inputs) if p != q], delta=delta)
            outputs.append(set_difference(set_difference(s, others), coupling))
    else:
        raise ValueError(f"unknown decorrelation mode {mode!r}; use 'coupling' or 'symmetric'")
    return outputs, coupling


def write_sets_json(path, sets: Sequence[FrequencySet], **meta) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        **meta,
        "sets": [
            {"label": s.label, "delta": s.delta, "count": len(s), "frequencies": s.to_records()}
            for s in sets
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8", newline="\n")


def read_sets_json(path) -> list[FrequencySet]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        FrequencySet([r["omega"] for r in s["frequencies"]], s["delta"], s["label"]) for s in doc["sets"]
    ]
