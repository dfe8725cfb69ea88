"""Simulation campaigns: fixed versus perturbed capture across loudspeaker counts."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .estimator import MODES, CorrelationCurve, VarianceTable, correlation_curve, \
    sum_of_variances, variance_by_distance
from .field_theory import BandSpec
from .geometry import ArrayGeometry, LoudspeakerLayout, Trajectory, sample_pose, sample_trajectory
from .simulator import DEFAULT_DURATION, DEFAULT_FS, CaptureConfig, render_capture

log = logging.getLogger(__name__)

TABLE_SPEAKER_COUNTS = (1, 2, 4, 8, 16, 26)
DEFAULT_TRIALS = 20
DEFAULT_SEGMENTS = 300

_DRIVE, _MOTION = 0, 1


def trial_seed(seed: int, speakers: int, trial: int, stream: int) -> int:
    """Seed for one stream of one campaign cell; identical across modes."""
    return int(np.random.SeedSequence([seed, speakers, trial, stream]).generate_state(1)[0])


def capture_trajectory(mode: str, layout: LoudspeakerLayout, geom: ArrayGeometry,
                       duration: float, num_segments: int, seed) -> Trajectory:
    """One random static pose (``fixed``) or a random segmented motion (``proposed``)."""
    if mode == "fixed":
        return Trajectory.stationary(duration, sample_pose(layout.radius, geom.extent, seed))
    if mode == "proposed":
        return sample_trajectory(layout.radius, geom.extent, num_segments, duration, seed)
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


@dataclass
class CampaignResult:
    table: VarianceTable
    per_distance: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)


def run_variance_campaign(layout: LoudspeakerLayout, geom: ArrayGeometry, band: BandSpec,
                          speaker_counts=TABLE_SPEAKER_COUNTS, trials: int = DEFAULT_TRIALS,
                          modes=MODES, duration: float = DEFAULT_DURATION,
                          fs: float = DEFAULT_FS, num_segments: int = DEFAULT_SEGMENTS,
                          seed: int = 0, keep_curves: bool = False) -> CampaignResult:
    """Sum of correlation variances for each (speaker count, mode) cell.

    Each trial of a fixed cell places the array at a fresh random static pose;
    each trial of a proposed cell draws a fresh random trajectory. Trials with
    the same index share drive seeds across modes.
    """
    cells, per_distance, kept = {}, {}, {}
    for s in speaker_counts:
        for mode in modes:
            curves: list[CorrelationCurve] = []
            for t in range(trials):
                traj = capture_trajectory(mode, layout, geom, duration, num_segments,
                                          trial_seed(seed, s, t, _MOTION))
                cfg = CaptureConfig(band, duration=duration, sample_rate=fs, speaker_count=s,
                                    trajectory=traj, seed=trial_seed(seed, s, t, _DRIVE))
                curves.append(correlation_curve(render_capture(layout, geom, cfg), geom))
            pdv = variance_by_distance(curves)
            per_distance[(s, mode)] = pdv
            cells[(s, mode)] = sum_of_variances(pdv)
            if keep_curves:
                kept[(s, mode)] = curves
            log.info("speakers=%d mode=%s sum_of_variances=%.6g", s, mode, cells[(s, mode)])
    return CampaignResult(VarianceTable(cells), per_distance, kept)


def variance_near(per_distance, distance: float) -> tuple[float, float]:
    """The ``(distance, variance)`` bin closest to ``distance``."""
    return min(per_distance, key=lambda dv: abs(dv[0] - distance))
