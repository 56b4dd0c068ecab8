"""Current amplitude spectrum on a dense grid and local-maximum line detection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .freqset import FrequencySet
from .signals import SampledRecord, besicovitch_mean, bohr_coefficients

__all__ = [
    "DEFAULT_SEPARATION_FACTOR",
    "SpectrumScan",
    "PeakParams",
    "coincidence_tolerance",
    "scan_spectrum",
    "detect_frequencies",
    "detect_lines",
]

# A rectangular record window puts its first two sidelobes at about 1.43 and
# 2.46 tolerances from a line, with relative heights 0.217 and 0.128; a 3-delta
# exclusion zone around each accepted peak discards both.
DEFAULT_SEPARATION_FACTOR = 3.0


def coincidence_tolerance(duration: float) -> float:
    """``2*pi/T``: the resolution of a record of duration ``T``."""
    return 2.0 * np.pi / duration


@dataclass(frozen=True, eq=False)
class SpectrumScan:
    grid: np.ndarray
    amplitudes: np.ndarray
    duration: float
    label: str = ""

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float64, copy=True).reshape(-1)
        amps = np.array(self.amplitudes, dtype=np.float64, copy=True).reshape(-1)
        if grid.shape != amps.shape:
            raise ValueError("grid and amplitudes differ in length")
        if grid.size == 0:
            raise ValueError("empty spectrum grid")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(amps < 0):
            raise ValueError("amplitudes must be nonnegative")
        grid.setflags(write=False)
        amps.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0]) if self.grid.size > 1 else 0.0

    @property
    def delta(self) -> float:
        return coincidence_tolerance(self.duration)

    def local_maxima(self) -> np.ndarray:
        """Indices of strict interior local maxima."""
        a = self.amplitudes
        if a.size < 3:
            return np.zeros(0, dtype=np.int64)
        mid = a[1:-1]
        return np.flatnonzero((mid > a[:-2]) & (mid > a[2:])) + 1

    def to_csv(self) -> str:
        lines = ["omega,amplitude\n"]
        lines += [f"{w!r},{a!r}\n" for w, a in zip(self.grid.tolist(), self.amplitudes.tolist())]
        return "".join(lines)


@dataclass(frozen=True)
class PeakParams:
    """Peak-picking controls.

    ``min_separation=None`` means ``DEFAULT_SEPARATION_FACTOR * delta`` of the
    scanned record.
    """

    threshold_mode: str = "relative"
    threshold_value: float = 0.1
    min_separation: float | None = None
    refine: bool = True

    def __post_init__(self):
        if self.threshold_mode not in ("relative", "absolute"):
            raise ValueError(f"threshold_mode must be 'relative' or 'absolute', got {self.threshold_mode!r}")
        if not self.threshold_value >= 0:
            raise ValueError("threshold_value must be >= 0")
        if self.threshold_mode == "relative" and self.threshold_value > 1:
            raise ValueError("relative threshold_value must lie in [0, 1]")
        if self.min_separation is not None and self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")

    def separation_for(self, delta: float) -> float:
        if self.min_separation is None:
            return DEFAULT_SEPARATION_FACTOR * delta
        return float(self.min_separation)


def scan_spectrum(
    record: SampledRecord,
    omega_min: float,
    omega_max: float,
    delta_omega: float | None = None,
) -> SpectrumScan:
    """``|bohr_coefficient|`` of the mean-removed record on a uniform grid.

    The default step is a quarter of the coincidence tolerance, which is also
    the coarsest step accepted.
    """
    T = record.require_duration()
    delta = coincidence_tolerance(T)
    if delta_omega is None:
        delta_omega = delta / 4
    if not delta_omega > 0:
        raise ValueError("delta_omega must be positive")
    if delta_omega > delta / 4 * (1 + 1e-12):
        raise ValueError(
            f"grid step {delta_omega:g} rad/s is coarser than delta/4 = {delta / 4:g} rad/s"
        )
    if not 0 <= omega_min < omega_max:
        raise ValueError(f"need 0 <= omega_min < omega_max, got [{omega_min}, {omega_max}]")
    if omega_max > record.nyquist * (1 + 1e-12):
        raise ValueError(f"omega_max {omega_max:g} exceeds the Nyquist frequency {record.nyquist:g} rad/s")
    count = int(np.floor((omega_max - omega_min) / delta_omega + 1e-9)) + 1
    if count < 1:
        raise ValueError("empty frequency grid")
    grid = omega_min + delta_omega * np.arange(count)
    centred = record.with_samples(record.samples - besicovitch_mean(record))
    amps = np.abs(bohr_coefficients(centred, grid))
    return SpectrumScan(grid, amps, T, record.channel_id)


def _parabolic_offset(a: np.ndarray, idx: np.ndarray) -> np.ndarray:
    left, centre, right = a[idx - 1], a[idx], a[idx + 1]
    denom = left - 2.0 * centre + right
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(denom < 0, 0.5 * (left - right) / denom, 0.0)
    return np.clip(off, -0.5, 0.5)


def detect_frequencies(scan: SpectrumScan, params: PeakParams | None = None) -> FrequencySet:
    """Frequencies of strict local maxima above threshold, thinned by separation.

    Thinning walks peaks from the largest down and drops any peak closer than
    ``min_separation`` to one already kept. The returned set carries the
    record's coincidence tolerance ``2*pi/T``.
    """
    params = params or PeakParams()
    delta = scan.delta
    a = scan.amplitudes
    idx = scan.local_maxima()
    if params.threshold_mode == "relative":
        thr = params.threshold_value * float(a.max())
    else:
        thr = params.threshold_value
    idx = idx[a[idx] >= thr]
    if idx.size and float(a.max()) == 0.0:
        idx = idx[:0]
    omegas = scan.grid[idx].astype(np.float64)
    if params.refine and idx.size:
        omegas = omegas + _parabolic_offset(a, idx) * scan.step
    sep = params.separation_for(delta)
    order = np.lexsort((idx, -a[idx]))
    kept: list[float] = []
    for k in order:
        w = omegas[k]
        if all(abs(w - v) >= sep for v in kept):
            kept.append(float(w))
    return FrequencySet.from_values(kept, delta, scan.label)


def detect_lines(
    record: SampledRecord,
    omega_min: float,
    omega_max: float,
    params: PeakParams | None = None,
    delta_omega: float | None = None,
) -> tuple[FrequencySet, SpectrumScan]:
    """Scan then detect; returns the set and the scan it came from."""
    scan = scan_spectrum(record, omega_min, omega_max, delta_omega)
    return detect_frequencies(scan, params), scan
