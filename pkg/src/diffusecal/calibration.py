"""Diffuse-field magnitude calibration of multichannel arrays.

The procedure: average each channel's power spectrum over a perturbed capture,
subtract the across-channel mean (in dB) at every frequency, smooth the
resulting offsets on a fractional-octave scale, and equalize every channel with
a linear-phase FIR filter whose magnitude is the inverse of its offset. Phase
is left untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from .errors import CalibrationError, DegenerateInputError
from .field_theory import BandSpec
from .simulator import Recording

NPERSEG = 4096
OVERLAP = 0.5
WINDOW = "hann"
SMOOTHING_OCTAVES = 1.0 / 6.0
NUMTAPS = 1025
OUT_OF_BAND_LIMIT_DB = 3.0
DESIGN_TOL_DB = 0.1
TRIM_FREQ_HZ = 1000.0
MIN_DURATION = 10.0


@dataclass(frozen=True)
class MagnitudeSpectra:
    """In-band magnitude per channel; ``db`` has shape ``(M, F)``."""

    freqs_hz: np.ndarray
    db: np.ndarray
    nperseg: int = NPERSEG
    noverlap: int = NPERSEG // 2
    window: str = WINDOW
    averages: int = 0

    def __post_init__(self):
        f = np.asarray(self.freqs_hz, dtype=float)
        db = np.atleast_2d(np.asarray(self.db, dtype=float))
        if f.ndim != 1 or db.shape[1] != f.size:
            raise ValueError("db must have one column per frequency")
        if f.size > 1 and np.any(np.diff(f) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if not np.all(np.isfinite(db)):
            raise DegenerateInputError("non-finite magnitude in band")
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "db", db)

    @property
    def num_channels(self) -> int:
        return self.db.shape[0]


@dataclass(frozen=True)
class TrimStat:
    freq_hz: float
    spread_db: float
    deviations_db: np.ndarray


@dataclass(frozen=True)
class CalibrationProfile:
    """Per-channel offsets (dB relative to the channel mean) and optional filters."""

    freqs_hz: np.ndarray
    offsets_db: np.ndarray
    filters: np.ndarray | None = None
    sample_rate: float | None = None
    trim_stat_1khz_db: float | None = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def num_channels(self) -> int:
        return self.offsets_db.shape[0]


def _band_hz(band) -> tuple[float, float]:
    if isinstance(band, BandSpec):
        return band.f_lo, band.f_hi
    lo, hi = band
    return float(lo), float(hi)


def estimate_magnitude_response(rec: Recording, band, nperseg: int = NPERSEG,
                                overlap: float = OVERLAP, window: str = WINDOW) -> MagnitudeSpectra:
    """Welch-averaged power spectrum of every channel, as dB magnitude, in ``band``.

    ``band`` is a :class:`BandSpec` or ``(lo_hz, hi_hz)``. The dB value is
    ``20 log10`` of the root of the averaged power, i.e. ``10 log10`` of power.
    """
    lo, hi = _band_hz(band)
    if rec.duration < MIN_DURATION:
        raise DegenerateInputError(f"recording lasts {rec.duration:.3g} s, need {MIN_DURATION} s")
    if not 0 <= lo < hi <= rec.sample_rate / 2:
        raise CalibrationError(f"band ({lo}, {hi}) Hz is not inside (0, Nyquist]")
    noverlap = int(round(overlap * nperseg))
    f, p = signal.welch(rec.channels, fs=rec.sample_rate, window=window, nperseg=nperseg,
                        noverlap=noverlap, detrend=False, scaling="density", axis=-1)
    sel = (f >= lo) & (f <= hi) & (f > 0)
    p = p[:, sel]
    if np.any(p <= 0) or np.any(rec.channels.std(axis=1) == 0):
        raise DegenerateInputError("silent channel in band")
    averages = 1 + (rec.num_samples - nperseg) // (nperseg - noverlap)
    return MagnitudeSpectra(f[sel], 10.0 * np.log10(p), nperseg, noverlap, window, averages)


def smooth_fractional_octave(freqs_hz, values, fraction: float = SMOOTHING_OCTAVES) -> np.ndarray:
    """Mean of ``values`` over the ``fraction``-octave window centred on each bin.

    Rectangular on the log-frequency axis and truncated at the grid ends.
    Works along the last axis.
    """
    f = np.asarray(freqs_hz, dtype=float)
    v = np.asarray(values, dtype=float)
    if not fraction or fraction <= 0:
        return v.copy()
    half = 2.0 ** (fraction / 2.0)
    lo = np.searchsorted(f, f / half, side="left")
    hi = np.searchsorted(f, f * half, side="right")
    csum = np.concatenate([np.zeros(v.shape[:-1] + (1,)), np.cumsum(v, axis=-1)], axis=-1)
    return (csum[..., hi] - csum[..., lo]) / (hi - lo)


def relative_offsets(spec: MagnitudeSpectra, smoothing: float | None = None) -> CalibrationProfile:
    """Each channel's dB curve minus the across-channel mean curve.

    With ``smoothing`` (octaves) the offsets are fractional-octave smoothed;
    smoothing is linear, so the offsets still sum to zero at every frequency.
    """
    if spec.num_channels < 2:
        raise CalibrationError("relative offsets need at least two channels")
    off = spec.db - spec.db.mean(axis=0, keepdims=True)
    if smoothing:
        off = smooth_fractional_octave(spec.freqs_hz, off, smoothing)
        off -= off.mean(axis=0, keepdims=True)
    prof = CalibrationProfile(spec.freqs_hz.copy(), off)
    if spec.freqs_hz[0] <= TRIM_FREQ_HZ <= spec.freqs_hz[-1]:
        prof = replace(prof, trim_stat_1khz_db=trim_drift_at(prof, TRIM_FREQ_HZ).spread_db)
    return prof


def trim_drift_at(source, f0: float, smoothing: float | None = SMOOTHING_OCTAVES) -> TrimStat:
    """Spread (max minus min across channels) of the offsets at ``f0``.

    ``source`` is a :class:`MagnitudeSpectra` (offsets are derived and smoothed
    with ``smoothing``) or a :class:`CalibrationProfile` (used as is).
    """
    prof = relative_offsets(source, smoothing) if isinstance(source, MagnitudeSpectra) else source
    f = prof.freqs_hz
    if not f[0] <= f0 <= f[-1]:
        raise CalibrationError(f"{f0} Hz lies outside the analysis band [{f[0]:.1f}, {f[-1]:.1f}] Hz")
    dev = np.array([np.interp(f0, f, row) for row in prof.offsets_db])
    return TrimStat(float(f0), float(dev.max() - dev.min()), dev)


def _target_response(freqs_hz, gain_db, fs: float, transition_octaves: float = 1.0 / 3.0):
    """Full-band design grid: in-band gains, held then cosine-tapered to 0 dB outside."""
    f = np.asarray(freqs_hz, dtype=float)
    lo, hi = f[0], f[-1]
    held = 2.0 ** transition_octaves
    taper = held ** 2
    grid = [0.0]
    gains = [0.0]

    def ramp(edge_gain, a, b, n=16):
        x = np.linspace(0.0, 1.0, n)
        return np.linspace(a, b, n), edge_gain * 0.5 * (1.0 - np.cos(np.pi * x))

    if lo / taper > 0:
        fr, gr = ramp(gain_db[0], lo / taper, lo / held)
        grid += fr.tolist()
        gains += gr.tolist()
    grid += f.tolist()
    gains += list(gain_db)
    nyq = fs / 2.0
    if hi < nyq:
        b = min(hi * taper, nyq)
        a = min(hi * held, b)
        fr, gr = ramp(gain_db[-1], b, a)
        fr, gr = fr[::-1], gr[::-1]
        keep = fr > hi
        grid += fr[keep].tolist()
        gains += gr[keep].tolist()
        if grid[-1] < nyq:
            grid.append(nyq)
            gains.append(0.0)
    grid = np.asarray(grid)
    gains = np.asarray(gains)
    outside = (grid < lo) | (grid > hi)
    gains[outside] = np.clip(gains[outside], -OUT_OF_BAND_LIMIT_DB, OUT_OF_BAND_LIMIT_DB)
    keep = np.concatenate([[True], np.diff(grid) > 0])
    return grid[keep], gains[keep]


def design_calibration_filters(profile: CalibrationProfile, fs: float,
                               smoothing: float | None = SMOOTHING_OCTAVES,
                               numtaps: int = NUMTAPS, tol_db: float = DESIGN_TOL_DB) -> CalibrationProfile:
    """Linear-phase FIR equalizers, one per channel, with magnitude ``-offset``.

    Frequency sampling (``scipy.signal.firwin2``) of the smoothed inverse
    offsets. Outside the band the target holds the edge value for a third of
    an octave and then tapers to 0 dB. Raises :class:`CalibrationError` when
    the realized in-band response misses the target by more than ``tol_db``.
    """
    if numtaps % 2 == 0:
        raise CalibrationError("numtaps must be odd for a type I linear-phase filter")
    off = np.asarray(profile.offsets_db, dtype=float)
    if not np.all(np.isfinite(off)):
        raise CalibrationError("offsets must be finite in band")
    f = profile.freqs_hz
    if f[-1] >= fs / 2:
        raise CalibrationError("band edge must lie below Nyquist")
    smoothed = smooth_fractional_octave(f, off, smoothing) if smoothing else off
    taps = np.empty((off.shape[0], numtaps))
    worst = 0.0
    for i, row in enumerate(smoothed):
        grid, g = _target_response(f, -row, fs)
        taps[i] = signal.firwin2(numtaps, grid, 10.0 ** (g / 20.0), fs=fs)
        realized = filter_response_db(taps[i], f, fs)
        worst = max(worst, float(np.max(np.abs(realized + row))))
    if worst > tol_db:
        raise CalibrationError(
            f"{numtaps}-tap filters miss the target by {worst:.3f} dB (> {tol_db} dB)")
    meta = dict(profile.meta, design_error_db=worst, smoothing_octaves=smoothing, numtaps=numtaps)
    return replace(profile, filters=taps, sample_rate=float(fs), meta=meta)


def filter_response_db(taps, freqs_hz, fs: float) -> np.ndarray:
    _, h = signal.freqz(taps, worN=np.asarray(freqs_hz, dtype=float), fs=fs)
    return 20.0 * np.log10(np.abs(h))


def apply_calibration(rec: Recording, profile: CalibrationProfile) -> Recording:
    """Filter every channel with its equalizer; the filter delay is removed."""
    if profile.filters is None:
        raise CalibrationError("profile carries no filters; run design_calibration_filters first")
    if profile.filters.shape[0] != rec.num_channels:
        raise CalibrationError(
            f"profile has {profile.filters.shape[0]} channels, recording {rec.num_channels}")
    if profile.sample_rate is not None and profile.sample_rate != rec.sample_rate:
        raise CalibrationError("profile and recording sample rates differ")
    delay = (profile.filters.shape[1] - 1) // 2
    n = rec.num_samples
    out = signal.fftconvolve(rec.channels, profile.filters, mode="full", axes=-1)[:, delay:delay + n]
    meta = dict(rec.meta, calibrated=True)
    return Recording(rec.sample_rate, out, meta)


def calibrate(rec: Recording, band, smoothing: float = SMOOTHING_OCTAVES,
              numtaps: int = NUMTAPS) -> CalibrationProfile:
    """Full pipeline: spectra, smoothed offsets, trim statistic and filters."""
    spec = estimate_magnitude_response(rec, band)
    prof = relative_offsets(spec, smoothing)
    return design_calibration_filters(prof, rec.sample_rate, smoothing=None, numtaps=numtaps)
