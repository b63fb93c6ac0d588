"""Validation grid, a synthetic pose-error sampler and envelope fitting.

The grid places the observer on spheres of increasing range around the
target and sweeps the sun angle. At each (range, angle) cell the error is
sampled ``rotations_per_angle * radial_factor`` times; the cell maximum is
the bound the envelope must dominate. Envelopes are fitted per range over
the angle, pooled over all ranges, and over range for the per-range maxima.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .uncertainty import QuadraticEnvelope, fit_quadratic_envelope

DATASET_COLUMNS = ("range_m", "sun_angle_deg", "rotation_id", "error_norm")


@dataclass(frozen=True)
class ValidationGrid:
    ranges: tuple[float, ...]
    sun_angles: tuple[float, ...]  # degrees
    rotations_per_angle: int = 50
    radial_factor: int = 12

    def __post_init__(self):
        object.__setattr__(self, "ranges", tuple(float(r) for r in self.ranges))
        object.__setattr__(self, "sun_angles", tuple(float(a) for a in self.sun_angles))
        if not self.ranges or not self.sun_angles:
            raise ValueError("grid needs at least one range and one angle")
        if any(r <= 0 for r in self.ranges):
            raise ValueError("ranges must be positive")
        if any(not 0 <= a <= 180 for a in self.sun_angles):
            raise ValueError("sun angles must lie in [0, 180] degrees")
        if self.rotations_per_angle < 1 or self.radial_factor < 1:
            raise ValueError("rotation and radial counts must be >= 1")

    @property
    def samples_per_cell(self) -> int:
        return self.rotations_per_angle * self.radial_factor

    @property
    def n_rows(self) -> int:
        return len(self.ranges) * len(self.sun_angles) * self.samples_per_cell


def default_grid() -> ValidationGrid:
    return ValidationGrid(
        ranges=tuple(range(10, 50, 5)),
        sun_angles=tuple(range(0, 195, 15)),
        rotations_per_angle=50,
        radial_factor=12,
    )


@dataclass(frozen=True)
class SyntheticErrorSampler:
    """``err = (c0 + c1 r + c2 theta^2) (1 + noise U(-1, 1))``, theta in degrees."""

    c0: float = 0.05
    c1: float = 0.002
    c2: float = 2e-5
    noise: float = 0.2

    def __post_init__(self):
        if min(self.c0, self.c1, self.c2) < 0:
            raise ValueError("sampler coefficients must be nonnegative")
        if not 0 <= self.noise <= 1:
            raise ValueError("noise amplitude must lie in [0, 1]")

    def mean(self, range_m, sun_angle_deg):
        return self.c0 + self.c1 * np.asarray(range_m) + self.c2 * np.asarray(sun_angle_deg) ** 2

    def __call__(self, range_m, sun_angle_deg, rng: np.random.Generator, size: int | None = None):
        base = self.mean(range_m, sun_angle_deg)
        if self.noise == 0:
            return base if size is None else np.full(size, base, dtype=float)
        u = rng.uniform(-1.0, 1.0, size)
        return base * (1.0 + self.noise * u)


def synthetic_error_sampler(range_m, sun_angle_deg, rng: np.random.Generator,
                            sampler: SyntheticErrorSampler | None = None) -> float:
    return float((sampler or SyntheticErrorSampler())(range_m, sun_angle_deg, rng))


@dataclass
class Dataset:
    range_m: np.ndarray
    sun_angle_deg: np.ndarray
    rotation_id: np.ndarray
    error_norm: np.ndarray

    def __len__(self) -> int:
        return len(self.error_norm)

    def write_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(DATASET_COLUMNS)
            for r, a, k, e in zip(self.range_m, self.sun_angle_deg, self.rotation_id, self.error_norm):
                w.writerow([repr(float(r)), repr(float(a)), int(k), repr(float(e))])

    @classmethod
    def read_csv(cls, path) -> "Dataset":
        lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
        rows = list(csv.reader(lines))
        if tuple(rows[0]) != DATASET_COLUMNS:
            raise ValueError(f"unexpected columns {rows[0]}")
        body = rows[1:]
        return cls(
            np.array([float(r[0]) for r in body]),
            np.array([float(r[1]) for r in body]),
            np.array([int(r[2]) for r in body], dtype=int),
            np.array([float(r[3]) for r in body]),
        )

    def cell_maxima(self, grid: ValidationGrid) -> np.ndarray:
        """Per-(range, angle) maximum error, shape (n_ranges, n_angles)."""
        M = np.full((len(grid.ranges), len(grid.sun_angles)), -np.inf)
        ri = {r: i for i, r in enumerate(grid.ranges)}
        ai = {a: j for j, a in enumerate(grid.sun_angles)}
        for r, a, e in zip(self.range_m, self.sun_angle_deg, self.error_norm):
            i, j = ri[float(r)], ai[float(a)]
            if e > M[i, j]:
                M[i, j] = e
        return M


@dataclass
class EnvelopeResult:
    grid: ValidationGrid
    dataset: Dataset
    maxima: np.ndarray  # (n_ranges, n_angles)
    per_range: list[QuadraticEnvelope]
    combined: QuadraticEnvelope  # over angle, all ranges pooled
    over_range: QuadraticEnvelope  # over range, per-range maxima
    illumination: tuple[float, float] | None = field(default=None)  # (a2, a0) on s = 2 sin(theta/2)

    def dominates(self) -> bool:
        ang = np.asarray(self.grid.sun_angles)
        ok = all(env.min_slack(ang, self.maxima[i]) >= 0 for i, env in enumerate(self.per_range))
        ok &= self.combined.min_slack(np.tile(ang, len(self.grid.ranges)), self.maxima.ravel()) >= 0
        ok &= self.over_range.min_slack(np.asarray(self.grid.ranges), self.maxima.max(axis=1)) >= 0
        return bool(ok)


def generate_dataset(grid: ValidationGrid, sampler: Callable, seed: int = 0) -> Dataset:
    """Sample every grid cell; cell ``(i, j)`` uses its own stream ``(seed, i, j)``."""
    k = grid.samples_per_cell
    R, A, K, E = [], [], [], []
    for i, r in enumerate(grid.ranges):
        for j, a in enumerate(grid.sun_angles):
            rng = np.random.default_rng([int(seed), i, j])
            e = np.asarray(sampler(r, a, rng, k), dtype=float).reshape(k)
            if np.any(e < 0):
                raise ValueError("error samples must be nonnegative")
            R.append(np.full(k, r))
            A.append(np.full(k, a))
            K.append(np.arange(k))
            E.append(e)
    return Dataset(np.concatenate(R), np.concatenate(A), np.concatenate(K), np.concatenate(E))


def build_envelope(grid: ValidationGrid, sampler: Callable | None = None, seed: int = 0,
                   dataset: Dataset | None = None) -> EnvelopeResult:
    """Cell maxima and their quadratic envelopes; pass ``dataset`` to skip sampling."""
    sampler = sampler or SyntheticErrorSampler()
    data = dataset if dataset is not None else generate_dataset(grid, sampler, seed)
    M = data.cell_maxima(grid)
    if not np.all(np.isfinite(M)):
        raise ValueError("dataset does not cover every grid cell")
    ang = np.asarray(grid.sun_angles)
    per = [fit_quadratic_envelope(ang, M[i]) for i in range(len(grid.ranges))]
    combined = fit_quadratic_envelope(np.tile(ang, len(grid.ranges)), M.ravel())
    rng_ = np.asarray(grid.ranges)
    if len(rng_) >= 3:
        over_range = fit_quadratic_envelope(rng_, M.max(axis=1))
    else:
        over_range = QuadraticEnvelope(0.0, 0.0, float(M.max()))
    # coefficients for the illumination model: radius = a2 s^2 + a0
    s = 2.0 * np.sin(np.deg2rad(np.tile(ang, len(grid.ranges))) / 2.0)
    illum = None
    if np.ptp(s) > 0 and s.size >= 3:
        env = fit_quadratic_envelope(s, M.ravel(), linear=False)
        illum = (env.alpha, env.gamma)
    return EnvelopeResult(grid, data, M, per, combined, over_range, illum)
