"""Scenario synthesis: strictly noncircular sources, array data, augmentation.

A strictly noncircular source is a real waveform rotated by a fixed phase.
The augmented observation stacks the conjugated snapshots on top of the raw
ones, which doubles the effective aperture for such sources.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .arrays import GridSpec, steering_vector

__all__ = [
    "ScenarioConfig",
    "TruthRecord",
    "AugmentedObservation",
    "generate_sources",
    "synthesize",
    "dump_observation",
    "load_observation",
]

SOURCE_KINDS = ("gaussian_real", "bpsk")


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario.

    ``thetas`` are the true DOAs in degrees, ``phis`` the noncircularity
    phases in radians. ``snr_db`` may be ``inf`` to disable noise. Each
    Monte Carlo trial should use its own ``seed``.
    """

    n_elements: int
    n_snapshots: int
    thetas: tuple
    phis: tuple
    snr_db: float
    grid: GridSpec
    seed: int
    source_kind: str = "gaussian_real"
    require_on_grid: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "thetas", tuple(float(t) for t in self.thetas))
        object.__setattr__(self, "phis", tuple(float(p) for p in self.phis))
        if self.n_elements < 1:
            raise ValueError("need at least one array element")
        if self.n_snapshots < 1:
            raise ValueError("need at least one snapshot")
        if len(self.thetas) < 1:
            raise ValueError("need at least one source")
        if len(self.phis) != len(self.thetas):
            raise ValueError("one noncircularity phase per source required")
        if len(set(self.thetas)) != len(self.thetas):
            raise ValueError("source DOAs must be distinct")
        for t in self.thetas:
            if not self.grid.theta_min < t < self.grid.theta_max:
                raise ValueError(f"DOA {t} deg outside the open grid interval")
            if self.require_on_grid and not self.grid.contains(t):
                raise ValueError(f"DOA {t} deg is not a grid point")
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source_kind {self.source_kind!r}")

    @property
    def n_sources(self) -> int:
        return len(self.thetas)

    def with_trial(self, snr_db: float, seed: int) -> "ScenarioConfig":
        return replace(self, snr_db=snr_db, seed=seed)


@dataclass(frozen=True)
class TruthRecord:
    thetas: tuple
    phis: tuple
    s_real: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AugmentedObservation:
    """Raw snapshots plus their conjugate-augmented stack.

    ``augmented`` is (2M, L) with the top half exactly the conjugate of the
    bottom half; ``raw`` is the (M, L) array output it was built from.
    """

    augmented: np.ndarray
    raw: np.ndarray
    truth: Optional[TruthRecord] = None

    @property
    def n_elements(self) -> int:
        return self.raw.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.raw.shape[1]


def generate_sources(cfg: ScenarioConfig, rng: np.random.Generator):
    """Real source waveforms and their per-source rotation factors.

    Returns ``(s_real, phase_factors)`` where ``s_real`` is (K, L) with unit
    average power per source and ``phase_factors[k] = exp(-1j * phis[k])``;
    the transmitted signal is ``phase_factors[:, None] * s_real``.
    """
    k, l = cfg.n_sources, cfg.n_snapshots
    if cfg.source_kind == "bpsk":
        s_real = rng.integers(0, 2, size=(k, l)).astype(np.float64) * 2.0 - 1.0
    else:
        s_real = rng.standard_normal((k, l))
    phase_factors = np.exp(-1j * np.asarray(cfg.phis))
    return s_real, phase_factors


def synthesize(cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None) -> AugmentedObservation:
    """Simulate one trial and return the augmented observation.

    Noise is circular complex Gaussian, calibrated so that the ratio of mean
    per-entry signal power (over the clean array output) to per-entry noise
    variance equals ``snr_db``. Noise is drawn once on the raw snapshots and
    augmented by conjugation, never drawn independently per half.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    m, l = cfg.n_elements, cfg.n_snapshots
    manifold = np.column_stack([steering_vector(t, m) for t in cfg.thetas])
    s_real, phase_factors = generate_sources(cfg, rng)
    clean = manifold @ (phase_factors[:, None] * s_real)
    if np.isinf(cfg.snr_db):
        raw = clean
    else:
        signal_power = float(np.mean(np.abs(clean) ** 2))
        noise_var = signal_power * 10.0 ** (-cfg.snr_db / 10.0)
        noise = np.sqrt(noise_var / 2.0) * (
            rng.standard_normal((m, l)) + 1j * rng.standard_normal((m, l))
        )
        raw = clean + noise
    augmented = np.vstack([raw.conj(), raw])
    truth = TruthRecord(cfg.thetas, cfg.phis, s_real)
    return AugmentedObservation(augmented, raw, truth)


def dump_observation(obs: AugmentedObservation, basepath) -> None:
    """Write ``<basepath>.bin`` and ``<basepath>.csv`` for cross-tool regression.

    The .bin file holds the augmented matrix row-major as little-endian
    complex128 (interleaved re, im float64). The .csv file lists rows, cols,
    n_elements, n_snapshots and, when ground truth is present, n_sources,
    thetas (degrees) and phis (radians), one record per line.
    """
    base = Path(basepath)
    obs.augmented.astype("<c16").tofile(base.with_suffix(".bin"))
    with open(base.with_suffix(".csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rows", obs.augmented.shape[0]])
        writer.writerow(["cols", obs.augmented.shape[1]])
        writer.writerow(["n_elements", obs.n_elements])
        writer.writerow(["n_snapshots", obs.n_snapshots])
        if obs.truth is not None:
            writer.writerow(["n_sources", len(obs.truth.thetas)])
            writer.writerow(["thetas_deg"] + [repr(t) for t in obs.truth.thetas])
            writer.writerow(["phis_rad"] + [repr(p) for p in obs.truth.phis])


def load_observation(basepath) -> AugmentedObservation:
    """Read an observation written by :func:`dump_observation`."""
    base = Path(basepath)
    meta = {}
    with open(base.with_suffix(".csv"), newline="") as fh:
        for row in csv.reader(fh):
            if row:
                meta[row[0]] = row[1:]
    rows = int(meta["rows"][0])
    cols = int(meta["cols"][0])
    augmented = np.fromfile(base.with_suffix(".bin"), dtype="<c16").reshape(rows, cols)
    raw = augmented[rows // 2 :]
    truth = None
    if "thetas_deg" in meta:
        truth = TruthRecord(
            tuple(float(t) for t in meta["thetas_deg"]),
            tuple(float(p) for p in meta["phis_rad"]),
        )
    return AugmentedObservation(augmented, raw, truth)
