"""Microphone arrays, loudspeaker shells and randomized capture trajectories.

Positions are plain ``numpy`` arrays in meters. Array geometries live in an
array-local frame; loudspeaker layouts and posed arrays live in the room frame
whose origin is the center of the loudspeaker shell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InvalidGeometryError

# Gaps (mm) of the default 16-element linear array. The set yields 109 distinct
# pair distances between 16 mm and 320 mm, including a pair at exactly 150 mm.
DEFAULT_LINEAR_GAPS_MM = (22, 21, 23, 16, 18, 20, 26, 16, 32, 24, 27, 25, 16, 17, 17)

TRANSLATION_SAFETY = 0.9

_PHI = (1.0 + np.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class ArrayGeometry:
    """Ordered microphone positions, shape ``(M, 3)``, in the array frame."""

    positions: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidGeometryError(f"positions must have shape (M, 3), got {pos.shape}")
        if pos.shape[0] < 2:
            raise InvalidGeometryError("an array needs at least 2 microphones")
        if not np.all(np.isfinite(pos)):
            raise InvalidGeometryError("microphone positions must be finite")
        sep = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        iu = np.triu_indices(len(pos), 1)
        if np.any(sep[iu] == 0.0):
            raise InvalidGeometryError("two microphones share the same position")
        pos.setflags(write=False)
        labels = tuple(self.labels) if self.labels else tuple(f"mic{i}" for i in range(len(pos)))
        if len(labels) != len(pos):
            raise InvalidGeometryError("one label per microphone is required")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "labels", labels)

    @property
    def num_mics(self) -> int:
        return self.positions.shape[0]

    @property
    def extent(self) -> float:
        """Largest distance of any microphone from the array-frame origin."""
        return float(np.max(np.linalg.norm(self.positions, axis=1)))


@dataclass(frozen=True)
class LoudspeakerLayout:
    positions: np.ndarray
    radius: float
    kind: str = "explicit"

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        if pos.shape[0] < 1:
            raise InvalidGeometryError("a layout needs at least one loudspeaker")
        r = np.linalg.norm(pos, axis=1)
        if np.any(r <= 0.0):
            raise InvalidGeometryError("loudspeakers must not sit at the origin")
        if self.kind != "explicit" and np.any(np.abs(r - self.radius) > 1e-9):
            raise InvalidGeometryError("polyhedral shell radii are not all equal")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def directions(self) -> np.ndarray:
        """Unit propagation directions, pointing from each loudspeaker to the origin."""
        return -self.positions / np.linalg.norm(self.positions, axis=1, keepdims=True)

    def subset(self, count: int) -> LoudspeakerLayout:
        """The ``count``-speaker subset chosen by :func:`select_spread_subset`."""
        idx = select_spread_subset(self.positions, count)
        return LoudspeakerLayout(self.positions[idx], self.radius, self.kind)


@dataclass(frozen=True)
class Pose:
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        rot = np.array(self.rotation, dtype=float).reshape(3, 3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise InvalidGeometryError("rotation must be orthonormal with determinant +1")
        t.setflags(write=False)
        rot.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", rot)

    @classmethod
    def identity(cls) -> Pose:
        return cls()


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-constant poses; ``segments`` is a tuple of ``(duration_s, Pose)``."""

    segments: tuple[tuple[float, Pose], ...]

    def __post_init__(self):
        segs = tuple((float(d), p) for d, p in self.segments)
        if not segs:
            raise InvalidGeometryError("a trajectory needs at least one segment")
        if any(d <= 0.0 for d, _ in segs):
            raise InvalidGeometryError("segment durations must be positive")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def stationary(cls, duration: float, pose: Pose | None = None) -> Trajectory:
        return cls(((duration, pose or Pose.identity()),))

    @property
    def duration(self) -> float:
        return sum(d for d, _ in self.segments)

    def max_radius(self, geom: ArrayGeometry) -> float:
        """Largest room-frame distance of any microphone over all poses."""
        return max(float(np.max(np.linalg.norm(apply_pose(geom, p).positions, axis=1)))
                   for _, p in self.segments)

    def fits_inside(self, geom: ArrayGeometry, shell_radius: float) -> bool:
        return self.max_radius(geom) < shell_radius

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for d, p in self.segments:
            h.update(np.float64(d).tobytes())
            h.update(np.ascontiguousarray(p.translation).tobytes())
            h.update(np.ascontiguousarray(p.rotation).tobytes())
        return h.hexdigest()[:16]


def make_linear_array(gaps) -> ArrayGeometry:
    """Microphones on the x axis; mic 0 at the origin, mic k at the sum of the first k gaps."""
    gaps = np.asarray(gaps, dtype=float).ravel()
    if gaps.size == 0 or np.any(~np.isfinite(gaps)) or np.any(gaps <= 0.0):
        raise InvalidGeometryError("all gaps must be positive and finite")
    x = np.concatenate([[0.0], np.cumsum(gaps)])
    pos = np.zeros((x.size, 3))
    pos[:, 0] = x
    return ArrayGeometry(pos)


def default_linear_array() -> ArrayGeometry:
    """The default 16-element non-uniform line array (0.016 m to 0.32 m pair spacings)."""
    return make_linear_array(np.array(DEFAULT_LINEAR_GAPS_MM) / 1000.0)


def make_spherical_array(radius: float = 0.042) -> ArrayGeometry:
    """32 capsules at the face centers of a truncated icosahedron.

    This is the capsule arrangement of common 32-channel spherical arrays; the
    rigid baffle is not modeled, capsules are point receivers.
    """
    dirs = _unit(np.vstack([_icosahedron(), _dodecahedron()]))
    return ArrayGeometry(radius * dirs)


def pair_distances(geom: ArrayGeometry) -> list[tuple[tuple[int, int], float]]:
    """All ``M(M-1)/2`` unordered pairs ``(p, q)`` with ``p < q`` and their separation."""
    pos = geom.positions
    out = []
    for p, q in itertools.combinations(range(geom.num_mics), 2):
        out.append(((p, q), float(np.linalg.norm(pos[q] - pos[p]))))
    return out


def apply_pose(geom: ArrayGeometry, pose: Pose) -> ArrayGeometry:
    """Rigidly move ``geom``: each position maps to ``rotation @ x + translation``."""
    pos = geom.positions @ pose.rotation.T + pose.translation
    return ArrayGeometry(pos, geom.labels)


# -- polyhedra -------------------------------------------------------------

def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _cyclic(points):
    pts = []
    for p in points:
        x, y, z = p
        pts.extend([(x, y, z), (z, x, y), (y, z, x)])
    return np.array(pts, dtype=float)


def _signs(p):
    nz = [i for i, v in enumerate(p) if v != 0]
    out = []
    for s in itertools.product((1.0, -1.0), repeat=len(nz)):
        q = list(p)
        for i, si in zip(nz, s):
            q[i] *= si
        out.append(tuple(q))
    return out


def _tetrahedron():
    return np.array([(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)], dtype=float)


def _octahedron():
    return np.vstack([np.eye(3), -np.eye(3)])


def _cube():
    return np.array(_signs((1.0, 1.0, 1.0)))


def _icosahedron():
    return _cyclic(_signs((0.0, 1.0, _PHI)))


def _dodecahedron():
    # oriented as the dual of _icosahedron(): its vertices sit on the icosahedron face centres
    return np.vstack([_cube(), _cyclic(_signs((0.0, _PHI, 1.0 / _PHI)))])


def _icosidodecahedron():
    axial = _cyclic(_signs((0.0, 0.0, _PHI)))
    axial = np.unique(np.round(axial, 12), axis=0)
    return np.vstack([axial, _cyclic(_signs((0.5, _PHI / 2.0, _PHI**2 / 2.0)))])


def _rhombic_triacontahedron():
    # 12 five-fold vertices (icosahedron) followed by 20 three-fold vertices
    # (dodecahedron); both families are projected onto a common sphere.
    return np.vstack([_unit(_icosahedron()), _unit(_dodecahedron())])


POLYHEDRA = {
    "tetrahedron": _tetrahedron,
    "octahedron": _octahedron,
    "cube": _cube,
    "icosahedron": _icosahedron,
    "dodecahedron": _dodecahedron,
    "icosidodecahedron": _icosidodecahedron,
    "rhombic-triacontahedron": _rhombic_triacontahedron,
}
# The 30 edge midpoints of a dodecahedron are the icosidodecahedron vertices.
POLYHEDRA["dodecahedron-edges"] = _icosidodecahedron


def polyhedron_directions(kind: str) -> np.ndarray:
    """Unit vertex directions of ``kind`` in a fixed, documented order."""
    try:
        return _unit(POLYHEDRA[kind]())
    except KeyError:
        raise InvalidGeometryError(
            f"unknown polyhedron {kind!r}; choose from {sorted(POLYHEDRA)}") from None


def _angles(dirs):
    cos = np.clip(_unit(dirs) @ _unit(dirs).T, -1.0, 1.0)
    return np.arccos(cos)


def _independent_set(adjacent: np.ndarray, count: int):
    """First (lexicographic) ``count`` vertices with no two adjacent, or None."""
    n = adjacent.shape[0]

    def search(chosen, candidates):
        if len(chosen) == count:
            return chosen
        if len(chosen) + len(candidates) < count:
            return None
        v, rest = candidates[0], candidates[1:]
        found = search(chosen + [v], [u for u in rest if not adjacent[v, u]])
        return found if found is not None else search(chosen, rest)

    return search([], list(range(n)))


def select_spread_subset(points, count: int) -> np.ndarray:
    """Indices of the ``count``-point subset with the largest minimum angular separation.

    The optimum angle is found exactly: candidate thresholds are the distinct
    pairwise angles, and a subset exists at threshold ``t`` iff the graph
    joining points closer than ``t`` has an independent set of size ``count``.
    Among optimal subsets, single swaps that keep the optimum and lower the
    Riesz energy (sum of inverse chord lengths) are applied until none is left.
    Deterministic; returned indices are sorted ascending.
    """
    pts = _unit(np.asarray(points, dtype=float).reshape(-1, 3))
    n = pts.shape[0]
    if not 1 <= count <= n:
        raise InvalidGeometryError(f"cannot select {count} of {n} points")
    if count == n:
        return np.arange(n)
    ang = np.round(_angles(pts), 9)
    chord = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
    with np.errstate(divide="ignore"):
        inv = np.where(chord > 0, 1.0 / chord, 0.0)
    np.fill_diagonal(ang, np.inf)

    keep = None
    best = np.pi
    if count > 1:
        for t in np.unique(ang[np.isfinite(ang)])[::-1]:
            keep = _independent_set(ang < t, count)
            if keep is not None:
                best = t
                break
    else:
        keep = [0]

    def energy(idx):
        return np.round(inv[np.ix_(idx, idx)].sum(), 9)

    current = energy(keep)
    improved = True
    while improved:
        improved = False
        for pos in range(len(keep)):
            for j in range(n):
                if j in keep:
                    continue
                trial = keep[:pos] + [j] + keep[pos + 1:]
                if count > 1 and ang[np.ix_(trial, trial)].min() < best:
                    continue
                e = energy(trial)
                if e < current:
                    keep, current, improved = trial, e, True
                    break
            if improved:
                break
    return np.array(sorted(keep))


def make_polyhedral_layout(kind: str, radius: float, count: int | None = None,
                           indices=None) -> LoudspeakerLayout:
    """Loudspeakers on the projected vertices of a polyhedron.

    With ``count`` below the vertex count, a subset is chosen by
    :func:`select_spread_subset`; explicit ``indices`` override that choice.
    For the rhombic triacontahedron the default 26-speaker subset keeps the
    full 37.4 degree vertex spacing and drops four five-fold and two
    three-fold vertices (energy tie-break).
    """
    if not radius > 0:
        raise InvalidGeometryError("radius must be positive")
    dirs = polyhedron_directions(kind)
    if indices is not None:
        idx = np.asarray(indices, dtype=int)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= len(dirs) or len(set(idx.tolist())) != idx.size:
            raise InvalidGeometryError("vertex indices out of range or repeated")
    else:
        count = len(dirs) if count is None else int(count)
        if count > len(dirs):
            raise InvalidGeometryError(f"{kind} has only {len(dirs)} vertices, {count} requested")
        idx = select_spread_subset(dirs, count)
    return LoudspeakerLayout(radius * dirs[idx], radius, kind)


# -- random motion ---------------------------------------------------------

def sample_ball(rng: np.random.Generator, radius: float, size: int) -> np.ndarray:
    """``size`` points uniform in the solid ball of ``radius``."""
    v = rng.standard_normal((size, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(size) ** (1.0 / 3.0)
    return v * r[:, None]


def sample_rotations(rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` Haar-uniform rotation matrices, shape ``(size, 3, 3)``."""
    return Rotation.random(size, random_state=rng).as_matrix().reshape(size, 3, 3)


def sample_pose(shell_radius: float, array_extent: float, seed) -> Pose:
    """One uniformly random pose that keeps the array inside the shell."""
    return sample_trajectory(shell_radius, array_extent, 1, 1.0, seed).segments[0][1]


def sample_trajectory(shell_radius: float, array_extent: float, num_segments: int,
                      total_duration: float, seed) -> Trajectory:
    """Random piecewise-constant motion of an array inside a loudspeaker shell.

    Segments have equal duration. Translations are uniform in a ball of radius
    ``0.9 * (shell_radius - array_extent)`` and rotations are uniform on SO(3),
    so every microphone stays strictly inside the shell.
    """
    if not 0 <= array_extent < shell_radius:
        raise InvalidGeometryError(
            f"array extent {array_extent} m does not fit in a {shell_radius} m shell")
    if num_segments < 1:
        raise InvalidGeometryError("num_segments must be >= 1")
    if not total_duration > 0:
        raise InvalidGeometryError("total_duration must be positive")
    rng = np.random.default_rng(seed)
    rots = sample_rotations(rng, num_segments)
    trans = sample_ball(rng, TRANSLATION_SAFETY * (shell_radius - array_extent), num_segments)
    dur = total_duration / num_segments
    return Trajectory(tuple((dur, Pose(t, r)) for t, r in zip(trans, rots)))
