"""WAV, JSON, CSV and TOML config files.

Every writer is atomic: data goes to a temporary file in the target directory
which is then renamed over the destination.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import jsonschema
import numpy as np
import tomli
import tomli_w
from scipy.io import wavfile

from . import __version__
from .calibration import CalibrationProfile
from .errors import ConfigError
from .geometry import (ArrayGeometry, LoudspeakerLayout, default_linear_array, make_polyhedral_layout,
                       make_spherical_array)
from .simulator import Recording


def atomic_write(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def provenance(config: dict | None = None, seed=None) -> dict:
    return {"version": __version__, "config_digest": digest(config or {}), "seed": seed}


# -- recordings ------------------------------------------------------------

def sidecar_path(wav_path) -> Path:
    return Path(wav_path).with_suffix(".json")


def write_recording(path, rec: Recording, extra: dict | None = None):
    """32-bit float WAV, channel order = microphone order, plus a JSON sidecar."""
    import io

    buf = io.BytesIO()
    wavfile.write(buf, int(round(rec.sample_rate)), np.ascontiguousarray(rec.channels.T, dtype=np.float32))
    atomic_write(path, buf.getvalue())
    meta = dict(rec.meta)
    meta.update(extra or {})
    meta.update(sample_rate=rec.sample_rate, channels=rec.num_channels, samples=rec.num_samples)
    atomic_write(sidecar_path(path), dumps_json(meta))


def read_recording(path) -> Recording:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"recording {path} does not exist")
    fs, data = wavfile.read(path)
    data = np.asarray(data)
    if data.dtype.kind == "i":
        data = data / float(np.iinfo(data.dtype).max)
    elif data.dtype.kind == "u":
        data = (data.astype(float) - 128.0) / 128.0
    data = np.atleast_2d(data.T) if data.ndim == 2 else data[None, :]
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    return Recording(float(fs), data.astype(float), meta)


# -- calibration profiles --------------------------------------------------

def profile_to_dict(profile: CalibrationProfile) -> dict:
    chans = []
    for i in range(profile.num_channels):
        ch = {"index": i, "offset_db": np.round(profile.offsets_db[i], 9).tolist()}
        if profile.filters is not None:
            ch["filter_taps"] = profile.filters[i].tolist()
        chans.append(ch)
    return {
        "freq_hz": profile.freqs_hz.tolist(),
        "channels": chans,
        "sample_rate": profile.sample_rate,
        "trim_stat_1khz_db": profile.trim_stat_1khz_db,
        "meta": profile.meta,
    }


def profile_from_dict(d: dict) -> CalibrationProfile:
    chans = sorted(d["channels"], key=lambda c: c["index"])
    filters = None
    if chans and "filter_taps" in chans[0]:
        filters = np.array([c["filter_taps"] for c in chans], dtype=float)
    return CalibrationProfile(
        np.asarray(d["freq_hz"], dtype=float),
        np.array([c["offset_db"] for c in chans], dtype=float),
        filters,
        d.get("sample_rate"),
        d.get("trim_stat_1khz_db"),
        d.get("meta", {}),
    )


# -- config ----------------------------------------------------------------

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mics": {"type": "array", "items": _VEC3, "minItems": 2},
        "array": {"enum": ["linear-default", "spherical32"]},
        "labels": {"type": "array", "items": {"type": "string"}},
        "band": {
            "type": "object", "additionalProperties": False,
            "properties": {"lo_hz": {"type": "number", "minimum": 0},
                           "hi_hz": {"type": "number", "exclusiveMinimum": 0},
                           "c": {"type": "number", "exclusiveMinimum": 0}},
        },
        "layout": {
            "type": "object", "additionalProperties": False,
            "properties": {"kind": {"type": "string"},
                           "radius_m": {"type": "number", "exclusiveMinimum": 0},
                           "count": {"type": "integer", "minimum": 1},
                           "indices": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                           "positions": {"type": "array", "items": _VEC3, "minItems": 1}},
        },
        "trajectory": {
            "type": "object", "additionalProperties": False,
            "properties": {"seed": {"type": "integer", "minimum": 0},
                           "segments": {"type": "integer", "minimum": 1}},
        },
        "capture": {
            "type": "object", "additionalProperties": False,
            "properties": {"duration": {"type": "number", "exclusiveMinimum": 0},
                           "fs": {"type": "number", "exclusiveMinimum": 0},
                           "mode": {"enum": ["fixed", "proposed"]},
                           "modes": {"type": "array", "items": {"enum": ["fixed", "proposed"]}},
                           "speakers": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                           "spectrum": {"enum": ["white", "pink"]},
                           "seed": {"type": "integer", "minimum": 0},
                           "trials": {"type": "integer", "minimum": 1}},
        },
        "gains": {
            "type": "object", "additionalProperties": False,
            "properties": {"max_db": {"type": "number", "minimum": 0},
                           "seed": {"type": "integer", "minimum": 0}},
        },
        "theory": {
            "type": "object", "additionalProperties": False,
            "properties": {"d_max": {"type": "number", "exclusiveMinimum": 0},
                           "n_points": {"type": "integer", "minimum": 2}},
        },
        "calibration": {
            "type": "object", "additionalProperties": False,
            "properties": {"smoothing_octaves": {"type": "number", "minimum": 0},
                           "numtaps": {"type": "integer", "minimum": 3},
                           "trim_hz": {"type": "number", "exclusiveMinimum": 0}},
        },
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"dir": {"type": "string"}},
        },
    },
}


def validate_config(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        cfg = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return validate_config(cfg)


def dumps_config(cfg: dict) -> str:
    return tomli_w.dumps(validate_config(cfg))


def geometry_from_config(cfg: dict, default: str = "linear-default") -> ArrayGeometry:
    if "mics" in cfg:
        return ArrayGeometry(np.asarray(cfg["mics"], dtype=float), tuple(cfg.get("labels", ())))
    preset = cfg.get("array", default)
    return make_spherical_array() if preset == "spherical32" else default_linear_array()


def geometry_to_config(geom: ArrayGeometry) -> dict:
    return {"mics": geom.positions.tolist(), "labels": list(geom.labels)}


REFERENCE_SPEAKERS = 26


def layout_from_config(cfg: dict) -> LoudspeakerLayout:
    lay = cfg.get("layout", {})
    radius = float(lay.get("radius_m", 1.8))
    if "positions" in lay:
        return LoudspeakerLayout(np.asarray(lay["positions"], dtype=float), radius,
                                 lay.get("kind", "explicit"))
    kind = lay.get("kind", "rhombic-triacontahedron")
    count = lay.get("count", REFERENCE_SPEAKERS if kind == "rhombic-triacontahedron" else None)
    return make_polyhedral_layout(kind, radius, count, lay.get("indices"))


def layout_to_config(layout: LoudspeakerLayout) -> dict:
    return {"layout": {"kind": layout.kind, "radius_m": layout.radius,
                       "positions": layout.positions.tolist(), "count": layout.count}}
