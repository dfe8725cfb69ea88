"""Spatial correlation estimates from recordings and their spread across trials."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .geometry import ArrayGeometry, pair_distances
from .simulator import Recording

SILENCE_THRESHOLD = 1e-20
DEFAULT_BIN_TOL = 5e-4
MODES = ("fixed", "proposed")


def _check_recording(rec: Recording):
    if rec.duration < 1.0:
        raise DegenerateInputError(f"recording lasts {rec.duration:.3g} s, at least 1 s is needed")


def estimate_correlation(rec: Recording, p: int, q: int, symmetric: bool = True) -> float:
    """Time-averaged correlation of channels ``p`` and ``q``.

    The mean product is divided by the geometric mean of both channel powers
    (``symmetric=True``) or by the power of channel ``p`` alone, the literal
    single-reference normalization.
    """
    _check_recording(rec)
    m = rec.num_channels
    if not (0 <= p < m and 0 <= q < m):
        raise IndexError(f"channel pair ({p}, {q}) out of range for {m} channels")
    sp, sq = rec.channels[p], rec.channels[q]
    pp = float(np.mean(sp * sp))
    qq = float(np.mean(sq * sq))
    if pp < SILENCE_THRESHOLD or qq < SILENCE_THRESHOLD:
        raise DegenerateInputError(f"channel {p if pp < SILENCE_THRESHOLD else q} is silent")
    if p == q:
        return 1.0
    pq = float(np.mean(sp * sq))
    return pq / np.sqrt(pp * qq) if symmetric else pq / pp


def correlation_matrix(rec: Recording) -> np.ndarray:
    """All symmetric pairwise correlations at once, shape ``(M, M)``."""
    _check_recording(rec)
    x = rec.channels
    gram = x @ x.T / x.shape[1]
    power = np.diag(gram).copy()
    if np.any(power < SILENCE_THRESHOLD):
        raise DegenerateInputError(f"silent channels: {np.flatnonzero(power < SILENCE_THRESHOLD).tolist()}")
    rho = gram / np.sqrt(np.outer(power, power))
    np.fill_diagonal(rho, 1.0)
    return rho


@dataclass(frozen=True)
class CorrelationCurve:
    """``entries`` holds ``((p, q), distance_m, rho_hat)``, one per microphone pair."""

    entries: tuple
    provenance: str = ""

    def sorted(self) -> CorrelationCurve:
        return CorrelationCurve(tuple(sorted(self.entries, key=lambda e: (e[1], e[0]))),
                                self.provenance)

    @property
    def distances(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries])

    @property
    def values(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["distance_m", "rho_hat", "pair_p", "pair_q"])
        for (p, q), d, r in self.sorted().entries:
            w.writerow([f"{d:.6f}", f"{r:.9f}", p, q])
        return buf.getvalue()


def correlation_curve(rec: Recording, geom: ArrayGeometry) -> CorrelationCurve:
    """Correlation of every microphone pair, tagged with the pair distance."""
    if rec.num_channels != geom.num_mics:
        raise ValueError(f"{rec.num_channels} channels for a {geom.num_mics}-microphone geometry")
    rho = correlation_matrix(rec)
    entries = tuple((pq, d, float(rho[pq])) for pq, d in pair_distances(geom))
    return CorrelationCurve(entries, rec.digest())


def rms_deviation(curve: CorrelationCurve, model) -> float:
    """RMS difference between the estimates and ``model(distances)``."""
    return float(np.sqrt(np.mean((curve.values - model(curve.distances)) ** 2)))


def bin_distances(distances, tol: float = DEFAULT_BIN_TOL) -> list[np.ndarray]:
    """Group indices of sorted ``distances``; a bin spans at most ``tol`` meters."""
    d = np.asarray(distances, dtype=float)
    order = np.argsort(d, kind="stable")
    bins, start, cur = [], None, []
    for i in order:
        if cur and d[i] - start > tol:
            bins.append(np.array(cur))
            cur = []
        if not cur:
            start = d[i]
        cur.append(i)
    if cur:
        bins.append(np.array(cur))
    return bins


def variance_by_distance(curves, tol: float = DEFAULT_BIN_TOL) -> list[tuple[float, float]]:
    """Unbiased variance of the estimates in each distance bin, pooled over ``curves``.

    Returns ``(mean distance, variance)`` per bin in ascending distance.
    """
    curves = list(curves)
    if not curves:
        raise DegenerateInputError("no correlation curves given")
    d = np.concatenate([c.distances for c in curves])
    r = np.concatenate([c.values for c in curves])
    out = []
    for idx in bin_distances(d, tol):
        if idx.size < 2:
            raise DegenerateInputError(
                f"distance bin at {d[idx[0]]:.4f} m holds a single estimate")
        out.append((float(np.mean(d[idx])), float(np.var(r[idx], ddof=1))))
    return out


def sum_of_variances(per_distance) -> float:
    per_distance = list(per_distance)
    if not per_distance:
        raise DegenerateInputError("no distance bins")
    return float(sum(v for _, v in per_distance))


@dataclass
class VarianceTable:
    """Sum of variances per (speaker count, mode)."""

    cells: dict

    def value(self, speakers: int, mode: str) -> float:
        return self.cells[(speakers, mode)]

    @property
    def speaker_counts(self) -> list[int]:
        return sorted({s for s, _ in self.cells})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["speakers", *MODES])
        for s in self.speaker_counts:
            w.writerow([s, *(f"{self.cells[(s, m)]:.6g}" if (s, m) in self.cells else ""
                             for m in MODES)])
        return buf.getvalue()
