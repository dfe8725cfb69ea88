"""Free-field rendering of multichannel captures.

Every loudspeaker is a far-field source: its drive reaches a microphone at
position ``x`` delayed by ``x . y / c``, where ``y`` is the unit propagation
direction (from the loudspeaker towards the shell center). Rendering happens in
the frequency domain, one trajectory segment at a time: each segment of the
drive is transformed, given one phase ramp per (microphone, loudspeaker) pair,
restricted to the drive band and transformed back. Delays are therefore exact
circular fractional delays within a segment, and segment boundaries do not
overlap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AliasingError, InvalidGeometryError
from .field_theory import AIR, BandSpec, PhysicalConstants
from .geometry import ArrayGeometry, LoudspeakerLayout, Trajectory, apply_pose

DEFAULT_FS = 16000.0
DEFAULT_DURATION = 30.0
SPECTRA = ("white", "pink")


@dataclass(frozen=True)
class Recording:
    """``channels`` has shape ``(M, T)``; row ``i`` is microphone ``i``."""

    sample_rate: float
    channels: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ch = np.array(self.channels, dtype=float)
        if ch.ndim != 2 or ch.shape[1] == 0:
            raise ValueError(f"channels must have shape (M, T) with T > 0, got {ch.shape}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @property
    def num_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def num_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256(np.float64(self.sample_rate).tobytes())
        h.update(np.ascontiguousarray(self.channels).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class CaptureConfig:
    """Settings of one synthetic capture.

    ``trajectory`` absent means a fixed array at the identity pose.
    ``channel_gains_db`` (shape ``(M, K)``, on ``gain_freqs_hz``) imposes a
    per-channel magnitude response, interpolated linearly in frequency.
    """

    band: BandSpec
    duration: float = DEFAULT_DURATION
    sample_rate: float = DEFAULT_FS
    speaker_count: int = 26
    trajectory: Trajectory | None = None
    seed: int = 0
    spectrum: str = "white"
    channel_gains_db: np.ndarray | None = None
    gain_freqs_hz: np.ndarray | None = None
    constants: PhysicalConstants = AIR

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.speaker_count < 1:
            raise ValueError("speaker_count must be >= 1")
        if self.spectrum not in SPECTRA:
            raise ValueError(f"spectrum must be one of {SPECTRA}")
        if (self.channel_gains_db is None) != (self.gain_freqs_hz is None):
            raise ValueError("channel_gains_db and gain_freqs_hz go together")

    def with_(self, **changes) -> CaptureConfig:
        return replace(self, **changes)


def _check_nyquist(band: BandSpec, fs: float):
    if not fs > band.omega_max / math.pi:
        raise AliasingError(
            f"sample rate {fs} Hz does not exceed twice the band edge {band.f_hi} Hz")


def _band_bins(n: int, fs: float, band: BandSpec) -> np.ndarray:
    f = np.fft.rfftfreq(n, 1.0 / fs)
    return np.flatnonzero((f >= band.f_lo) & (f <= band.f_hi) & (f > 0) & (f < fs / 2))


def _shape(freqs: np.ndarray, spectrum: str) -> np.ndarray:
    if spectrum == "pink":
        return 1.0 / np.sqrt(freqs)
    return np.ones_like(freqs)


def synth_speaker_drives(count: int, band: BandSpec, duration: float, fs: float,
                         seed, spectrum: str = "white") -> np.ndarray:
    """Independent band-limited noise signals, shape ``(count, T)``.

    Built in the frequency domain: complex Gaussian bins inside the band
    (``1/sqrt(f)`` amplitude for pink), zero elsewhere. Each channel has unit
    expected variance.
    """
    _check_nyquist(band, fs)
    if count < 1:
        raise ValueError("count must be >= 1")
    if spectrum not in SPECTRA:
        raise ValueError(f"spectrum must be one of {SPECTRA}")
    n = int(round(duration * fs))
    bins = _band_bins(n, fs, band)
    if bins.size == 0:
        raise ValueError("band contains no frequency bins at this duration")
    amp = _shape(bins * fs / n, spectrum)
    scale = n / np.sqrt(2.0 * np.sum(amp**2))
    rng = np.random.default_rng(seed)
    spec = np.zeros((count, n // 2 + 1), dtype=complex)
    z = rng.standard_normal((count, bins.size, 2)) @ np.array([1.0, 1j]) / math.sqrt(2.0)
    spec[:, bins] = z * (amp * scale)
    return np.fft.irfft(spec, n=n, axis=1)


def _segment_bounds(traj: Trajectory, n: int, fs: float) -> np.ndarray:
    ends = np.rint(np.cumsum([d for d, _ in traj.segments]) * fs).astype(int)
    ends[-1] = n
    bounds = np.concatenate([[0], ends])
    if np.any(np.diff(bounds) < 2):
        raise ValueError("trajectory segments are shorter than two samples")
    return bounds


def _gain_curves(cfg: CaptureConfig, num_mics: int, freqs: np.ndarray):
    if cfg.channel_gains_db is None:
        return None
    g = np.asarray(cfg.channel_gains_db, dtype=float)
    if g.shape[0] != num_mics:
        raise ValueError(f"{g.shape[0]} gain curves for {num_mics} microphones")
    fg = np.asarray(cfg.gain_freqs_hz, dtype=float)
    return np.stack([10.0 ** (np.interp(freqs, fg, gm) / 20.0) for gm in g])


def _render_segment(drive_seg: np.ndarray, positions: np.ndarray, dirs: np.ndarray,
                    fs: float, band: BandSpec, c: float, gains_fn) -> np.ndarray:
    n = drive_seg.shape[1]
    bins = _band_bins(n, fs, band)
    omega = 2.0 * np.pi * bins * fs / n
    D = np.fft.rfft(drive_seg, axis=1)[:, bins]
    tau = positions @ dirs.T / c
    out = np.zeros((positions.shape[0], n // 2 + 1), dtype=complex)
    for m in range(positions.shape[0]):
        out[m, bins] = np.einsum("sf,sf->f", D, np.exp(-1j * np.outer(tau[m], omega)))
    if gains_fn is not None:
        out[:, bins] *= gains_fn(bins * fs / n)
    return np.fft.irfft(out, n=n, axis=1)


def render_capture(layout: LoudspeakerLayout, geom: ArrayGeometry,
                   cfg: CaptureConfig) -> Recording:
    """Render what the array records from ``cfg.speaker_count`` loudspeakers.

    With a trajectory, each segment uses the array posed by that segment's
    pose; otherwise the array stays at the identity pose for the whole capture.
    """
    fs = cfg.sample_rate
    _check_nyquist(cfg.band, fs)
    if cfg.speaker_count > layout.count:
        raise InvalidGeometryError(
            f"{cfg.speaker_count} speakers requested, layout has {layout.count}")
    speakers = layout if cfg.speaker_count == layout.count else layout.subset(cfg.speaker_count)
    traj = cfg.trajectory or Trajectory.stationary(cfg.duration)
    if abs(traj.duration - cfg.duration) > 1.0 / fs:
        raise ValueError(f"trajectory lasts {traj.duration} s, capture {cfg.duration} s")
    if not traj.fits_inside(geom, layout.radius):
        raise InvalidGeometryError("a trajectory pose moves microphones outside the loudspeaker shell")
    if geom.extent > layout.radius / 4.0:
        warnings.warn(f"array extent {geom.extent:.3g} m exceeds a quarter of the shell radius; "
                      "the far-field model is a poor fit", stacklevel=2)

    drives = synth_speaker_drives(speakers.count, cfg.band, cfg.duration, fs, cfg.seed, cfg.spectrum)
    n = drives.shape[1]
    dirs = speakers.directions()
    bounds = _segment_bounds(traj, n, fs)
    gains_fn = None
    if cfg.channel_gains_db is not None:
        _gain_curves(cfg, geom.num_mics, np.zeros(1))

        def gains_fn(freqs):
            return _gain_curves(cfg, geom.num_mics, freqs)

    out = np.empty((geom.num_mics, n))
    for (a, b), (_, pose) in zip(zip(bounds[:-1], bounds[1:]), traj.segments):
        posed = apply_pose(geom, pose).positions
        out[:, a:b] = _render_segment(drives[:, a:b], posed, dirs, fs, cfg.band,
                                      cfg.constants.c, gains_fn)
    meta = {
        "kind": "capture",
        "band_hz": [cfg.band.f_lo, cfg.band.f_hi],
        "seed": cfg.seed,
        "speaker_count": speakers.count,
        "layout_kind": layout.kind,
        "layout_radius_m": layout.radius,
        "mode": "fixed" if len(traj.segments) == 1 else "proposed",
        "segments": len(traj.segments),
        "trajectory_digest": traj.digest(),
        "spectrum": cfg.spectrum,
        "c": cfg.constants.c,
        "mics": geom.positions.tolist(),
    }
    return Recording(fs, out, meta)


def fibonacci_sphere(count: int) -> np.ndarray:
    """``count`` quasi-uniform unit vectors on the golden-angle spiral."""
    i = np.arange(count) + 0.5
    z = 1.0 - 2.0 * i / count
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def render_diffuse_oracle(geom: ArrayGeometry, band: BandSpec, num_directions: int,
                          duration: float, fs: float, seed,
                          constants: PhysicalConstants = AIR,
                          directions_per_block: int = 128) -> Recording:
    """Render an approximately diffuse field from independent plane waves.

    Directions come from a randomly rotated golden-angle spiral. To bound the
    cost the capture is split into equal time blocks and the directions are
    dealt round-robin to the blocks, each block carrying an independent noise
    superposition of its own directions. Over the capture every direction
    contributes the same energy, so time-averaged second-order statistics
    equal those of the simultaneous superposition.
    """
    from .geometry import sample_rotations

    _check_nyquist(band, fs)
    if num_directions < 1:
        raise ValueError("num_directions must be >= 1")
    rng = np.random.default_rng(seed)
    dirs = fibonacci_sphere(num_directions) @ sample_rotations(rng, 1)[0].T
    n = int(round(duration * fs))
    n_blocks = max(1, math.ceil(num_directions / directions_per_block))
    bounds = np.linspace(0, n, n_blocks + 1).astype(int)
    pos = geom.positions
    out = np.empty((geom.num_mics, n))
    for b in range(n_blocks):
        block_dirs = dirs[b::n_blocks]
        L = bounds[b + 1] - bounds[b]
        bins = _band_bins(L, fs, band)
        omega = 2.0 * np.pi * bins * fs / L
        z = rng.standard_normal((len(block_dirs), bins.size, 2)) @ np.array([1.0, 1j])
        z *= L / np.sqrt(4.0 * bins.size * len(block_dirs))
        tau = pos @ block_dirs.T / constants.c
        spec = np.zeros((geom.num_mics, L // 2 + 1), dtype=complex)
        for m in range(geom.num_mics):
            spec[m, bins] = np.einsum("df,df->f", z, np.exp(-1j * np.outer(tau[m], omega)))
        out[:, bounds[b]:bounds[b + 1]] = np.fft.irfft(spec, n=L, axis=1)
    meta = {
        "kind": "diffuse-oracle",
        "band_hz": [band.f_lo, band.f_hi],
        "seed": seed,
        "num_directions": num_directions,
        "c": constants.c,
        "mics": pos.tolist(),
    }
    return Recording(fs, out, meta)


def random_gain_curves(num_channels: int, max_db: float, seed,
                       f_lo: float = 20.0, f_hi: float = 20000.0, points: int = 64):
    """Smooth random per-channel magnitude responses within ``+-max_db``.

    Each curve is a random mix of a level, a tilt and two slow sinusoids in
    log frequency. Returns ``(freqs_hz, gains_db)`` with ``gains_db`` of shape
    ``(num_channels, points)``.
    """
    rng = np.random.default_rng(seed)
    f = np.geomspace(f_lo, f_hi, points)
    x = np.log2(f / 1000.0)
    c = rng.uniform(-1.0, 1.0, (num_channels, 4))
    ph = rng.uniform(0.0, 2.0 * np.pi, (num_channels, 2))
    g = (c[:, :1] + c[:, 1:2] * x / 3.0 + c[:, 2:3] * np.sin(1.3 * x + ph[:, :1])
         + c[:, 3:4] * np.cos(0.7 * x + ph[:, 1:]))
    peak = np.max(np.abs(g))
    if peak > 0:
        g *= max_db / peak
    return f, g
