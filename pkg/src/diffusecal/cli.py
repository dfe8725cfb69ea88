"""Command-line entry point: ``diffusecal {theory,simulate,analyze,calibrate}``.

Settings come from an optional TOML file (``--config``) and are overridden by
flags. Outputs go to ``--out``, else ``$DIFFUSECAL_OUT``, else ``./out``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (SMOOTHING_OCTAVES, NUMTAPS, TRIM_FREQ_HZ, apply_calibration,
                          design_calibration_filters, estimate_magnitude_response,
                          relative_offsets, trim_drift_at)
from .errors import (CalibrationError, ConfigError, DegenerateInputError, DiffuseCalError,
                     QuadratureError, TruncationError)
from .estimator import MODES, VarianceTable, correlation_curve, sum_of_variances, variance_by_distance
from .experiments import (DEFAULT_SEGMENTS, TABLE_SPEAKER_COUNTS, _DRIVE, _MOTION, capture_trajectory,
                          run_variance_campaign, trial_seed)
from .field_theory import (BandSpec, PhysicalConstants, rho_narrowband, rho_second_order,
                           rho_wideband_closed, rho_wideband_quadrature)
from .fileio import (atomic_write, dumps_json, geometry_from_config, layout_from_config,
                     load_config, profile_to_dict, provenance, read_recording,
                     write_recording)
from .simulator import CaptureConfig, random_gain_curves, render_capture

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
ENV_OUT = "DIFFUSECAL_OUT"
NUMERIC_ERRORS = (QuadratureError, TruncationError, CalibrationError, DegenerateInputError)

log = logging.getLogger("diffusecal")


class UsageError(DiffuseCalError):
    pass


def _band_arg(text: str):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO,HI in Hz") from None
    return lo, hi


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected a comma-separated list of integers") from None


def _modes_arg(text: str):
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise argparse.ArgumentTypeError(f"mode must be fixed, proposed or both, got {text!r}")
    return modes


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--out", type=Path, help=f"output directory (default ${ENV_OUT} or ./out)")
    common.add_argument("--band", type=_band_arg, metavar="LO,HI", help="band edges in Hz")
    common.add_argument("-v", "--verbose", action="store_true")

    capture = argparse.ArgumentParser(add_help=False)
    capture.add_argument("--speakers", type=_int_list, metavar="LIST", help="speaker counts, e.g. 1,2,26")
    capture.add_argument("--mode", type=_modes_arg, metavar="fixed|proposed",
                         help="capture mode; a comma list selects several")
    capture.add_argument("--duration", type=float, metavar="SECS")
    capture.add_argument("--fs", type=float, metavar="HZ")
    capture.add_argument("--trials", type=int)
    capture.add_argument("--segments", type=int, help="poses per proposed-mode capture")

    p = argparse.ArgumentParser(prog="diffusecal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("theory", parents=[common], help="theoretical correlation curves as CSV")
    t.add_argument("--c", type=float, help="speed of sound, m/s")
    t.add_argument("--d-max", type=float, help="largest distance, m")
    t.add_argument("--n-points", type=int)

    s = sub.add_parser("simulate", parents=[common, capture], help="render synthetic captures to WAV")
    s.add_argument("--array", choices=["linear-default", "spherical32"])
    s.add_argument("--spectrum", choices=["white", "pink"])
    s.add_argument("--gains-db", type=float, help="impose random per-channel gains within +-DB")

    a = sub.add_parser("analyze", parents=[common, capture],
                       help="correlation curves and the variance table")
    a.add_argument("recordings", nargs="*", type=Path, help="WAV files or directories of WAV files")
    a.add_argument("--campaign", action="store_true",
                   help="simulate the matched-seed campaign in memory instead of reading WAVs")

    c = sub.add_parser("calibrate", parents=[common], help="diffuse-field magnitude calibration")
    c.add_argument("recording", type=Path)
    c.add_argument("--apply", action="store_true", help="also write the calibrated WAV")
    c.add_argument("--smoothing", type=float, help="fractional-octave smoothing (octaves)")
    c.add_argument("--numtaps", type=int)
    return p


# -- settings --------------------------------------------------------------

def _load(args) -> dict:
    return load_config(args.config) if args.config else {}


def _section(cfg: dict, name: str) -> dict:
    return dict(cfg.get(name, {}))


def _band(args, cfg: dict, default=(500.0, 4500.0)) -> BandSpec:
    b = _section(cfg, "band")
    lo, hi = args.band or (b.get("lo_hz", default[0]), b.get("hi_hz", default[1]))
    return BandSpec.from_hz(lo, hi)


def _out_dir(args, cfg: dict) -> Path:
    if args.out:
        return args.out
    if "dir" in _section(cfg, "output"):
        return Path(cfg["output"]["dir"])
    return Path(os.environ.get(ENV_OUT, "out"))


def _effective(args, cfg: dict) -> dict:
    """The merged document that provenance digests are taken over."""
    eff = {k: v for k, v in cfg.items()}
    eff["_flags"] = {k: (str(v) if isinstance(v, Path) else v)
                     for k, v in sorted(vars(args).items())
                     if v is not None and k not in ("config", "out", "verbose")}
    return eff


def _capture_settings(args, cfg: dict) -> dict:
    cap = _section(cfg, "capture")
    traj = _section(cfg, "trajectory")
    seed = args.seed if args.seed is not None else cap.get("seed", 0)
    modes = args.mode or cap.get("modes") or [cap.get("mode", "proposed")]
    return {
        "duration": args.duration or cap.get("duration", 30.0),
        "fs": args.fs or cap.get("fs", 16000.0),
        "speakers": args.speakers or cap.get("speakers"),
        "modes": modes,
        "trials": args.trials or cap.get("trials"),
        "spectrum": getattr(args, "spectrum", None) or cap.get("spectrum", "white"),
        "seed": seed,
        "motion_seed": traj.get("seed", seed),
        "segments": args.segments or traj.get("segments", DEFAULT_SEGMENTS),
    }


# -- commands --------------------------------------------------------------

def cmd_theory(args) -> int:
    cfg = _load(args)
    band = _band(args, cfg)
    th = _section(cfg, "theory")
    c = args.c or _section(cfg, "band").get("c", 343.0)
    k = PhysicalConstants(c)
    d_max = args.d_max or th.get("d_max", 0.32)
    n = args.n_points or th.get("n_points", 200)
    if not d_max > 0 or n < 2:
        raise ConfigError("need d_max > 0 and at least 2 points")
    d = np.linspace(0.0, d_max, n)
    closed = rho_wideband_closed(d, band, k)
    quad = np.array([rho_wideband_quadrature(x, band, k, tol=1e-10) for x in d])
    nb = rho_narrowband(d, band.omega_c, k)
    second = np.where(d > 0, rho_second_order(np.where(d > 0, d, 1.0), band, k), closed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["distance_m", "rho_closed", "rho_quadrature", "rho_narrowband", "rho_second_order"])
    for row in zip(d, closed, quad, nb, second):
        w.writerow([f"{row[0]:.6f}"] + [f"{v:.12f}" for v in row[1:]])
    out = _out_dir(args, cfg)
    atomic_write(out / "theory.csv", buf.getvalue())
    meta = dict(provenance(_effective(args, cfg)), band_hz=[band.f_lo, band.f_hi], c=c)
    atomic_write(out / "theory.json", dumps_json(meta))
    print(f"wrote {out / 'theory.csv'} ({n} rows)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if args.array:
        cfg = dict(cfg, array=args.array)
    band = _band(args, cfg)
    st = _capture_settings(args, cfg)
    geom = geometry_from_config(cfg)
    layout = layout_from_config(cfg)
    speakers = st["speakers"] or [layout.count]
    trials = st["trials"] or 1
    gains_cfg = _section(cfg, "gains")
    max_db = args.gains_db if args.gains_db is not None else gains_cfg.get("max_db")
    gains = None
    if max_db:
        gains = random_gain_curves(geom.num_mics, max_db, gains_cfg.get("seed", st["seed"]))
    out = _out_dir(args, cfg)
    prov = provenance(_effective(args, cfg), st["seed"])
    for s in speakers:
        for mode in st["modes"]:
            for t in range(trials):
                traj = capture_trajectory(mode, layout, geom, st["duration"], st["segments"],
                                          trial_seed(st["motion_seed"], s, t, _MOTION))
                cc = CaptureConfig(band, duration=st["duration"], sample_rate=st["fs"], speaker_count=s,
                                   trajectory=traj, seed=trial_seed(st["seed"], s, t, _DRIVE),
                                   spectrum=st["spectrum"],
                                   channel_gains_db=None if gains is None else gains[1],
                                   gain_freqs_hz=None if gains is None else gains[0])
                rec = render_capture(layout, geom, cc)
                extra = dict(prov, mode=mode, trial=t)
                if gains is not None:
                    extra["true_gains"] = {"freq_hz": gains[0].tolist(), "gain_db": gains[1].tolist()}
                path = out / f"capture_{mode}_s{s:02d}_t{t:02d}.wav"
                write_recording(path, rec, extra)
                print(f"wrote {path} ({rec.num_channels} ch, {rec.duration:g} s)")
    return EXIT_OK


def _expand(paths) -> list[Path]:
    files = []
    for p in paths:
        if p.is_dir():
            files.extend(sorted(p.glob("*.wav")))
        else:
            files.append(p)
    return files


def _variance_rows(per_distance: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["speakers", "mode", "distance_m", "variance"])
    for (s, mode), rows in sorted(per_distance.items()):
        for d, v in rows:
            w.writerow([s, mode, f"{d:.6f}", f"{v:.9g}"])
    return buf.getvalue()


def cmd_analyze(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg)
    prov = provenance(_effective(args, cfg), args.seed)
    if args.campaign:
        if args.recordings:
            raise UsageError("--campaign takes no recordings")
        band = _band(args, cfg)
        st = _capture_settings(args, cfg)
        res = run_variance_campaign(
            layout_from_config(cfg), geometry_from_config(cfg), band,
            speaker_counts=st["speakers"] or TABLE_SPEAKER_COUNTS, trials=st["trials"] or 20,
            modes=args.mode or MODES, duration=st["duration"], fs=st["fs"],
            num_segments=st["segments"], seed=st["seed"])
        table, per_distance = res.table, res.per_distance
    else:
        files = _expand(args.recordings)
        if not files:
            raise UsageError("no recordings given (pass WAV files or use --campaign)")
        groups: dict = {}
        for f in files:
            rec = read_recording(f)
            if "mics" in rec.meta and "mics" not in cfg and "array" not in cfg:
                geom = geometry_from_config({"mics": rec.meta["mics"]})
            else:
                geom = geometry_from_config(cfg)
            if rec.num_channels != geom.num_mics:
                raise ConfigError(f"{f}: {rec.num_channels} channels, geometry has {geom.num_mics} mics")
            curve = correlation_curve(rec, geom)
            atomic_write(out / f"{f.stem}_curve.csv", curve.to_csv())
            key = (int(rec.meta.get("speaker_count", 0)), rec.meta.get("mode", "fixed"))
            groups.setdefault(key, []).append(curve)
        cells, per_distance = {}, {}
        for key, curves in sorted(groups.items()):
            try:
                pdv = variance_by_distance(curves)
            except DegenerateInputError as exc:
                log.warning("speakers=%d mode=%s: %s; cell left empty", key[0], key[1], exc)
                continue
            per_distance[key] = pdv
            cells[key] = sum_of_variances(pdv)
        table = VarianceTable(cells)
    atomic_write(out / "variance_table.csv", table.to_csv())
    atomic_write(out / "variance_by_distance.csv", _variance_rows(per_distance))
    atomic_write(out / "analysis.json", dumps_json(prov))
    print(table.to_csv(), end="")
    return EXIT_OK


def _offsets_csv(freqs, offsets) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["freq_hz"] + [f"mic{i}" for i in range(offsets.shape[0])])
    for j, f in enumerate(freqs):
        w.writerow([f"{f:.4f}"] + [f"{v:.6f}" for v in offsets[:, j]])
    return buf.getvalue()


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    rec = read_recording(args.recording)
    cal = _section(cfg, "calibration")
    default_band = tuple(rec.meta.get("band_hz", (200.0, 7000.0)))
    band = _band(args, cfg, default=default_band)
    smoothing = args.smoothing if args.smoothing is not None else cal.get("smoothing_octaves",
                                                                         SMOOTHING_OCTAVES)
    numtaps = args.numtaps or cal.get("numtaps", NUMTAPS)
    trim_hz = cal.get("trim_hz", TRIM_FREQ_HZ)
    spec = estimate_magnitude_response(rec, band)
    prof = relative_offsets(spec, smoothing)
    prof = design_calibration_filters(prof, rec.sample_rate, smoothing=None, numtaps=numtaps)
    out = _out_dir(args, cfg)
    report = dict(provenance(_effective(args, cfg), args.seed), band_hz=[band.f_lo, band.f_hi])
    if prof.freqs_hz[0] <= trim_hz <= prof.freqs_hz[-1]:
        report["trim_stat_db"] = trim_drift_at(prof, trim_hz).spread_db
        print(f"trim spread at {trim_hz:g} Hz before calibration: {report['trim_stat_db']:.3f} dB")
    truth = rec.meta.get("true_gains")
    if truth:
        g = np.array([np.interp(prof.freqs_hz, truth["freq_hz"], row) for row in truth["gain_db"]])
        g -= g.mean(axis=0)
        err = float(np.max(np.abs(prof.offsets_db - g)))
        report["max_offset_error_db"] = err
        print(f"largest in-band error against the known gains: {err:.3f} dB")
    if args.apply:
        calibrated = apply_calibration(rec, prof)
        post = relative_offsets(estimate_magnitude_response(calibrated, band), smoothing)
        report["residual_max_db"] = float(np.max(np.abs(post.offsets_db)))
        print(f"largest residual offset after calibration: {report['residual_max_db']:.3f} dB")
        write_recording(out / f"{args.recording.stem}_calibrated.wav", calibrated,
                        {"calibration": report})
    doc = profile_to_dict(prof)
    doc["meta"] = dict(doc["meta"], **report)
    atomic_write(out / "profile.json", dumps_json(doc))
    atomic_write(out / "offsets.csv", _offsets_csv(prof.freqs_hz, prof.offsets_db))
    print(f"wrote {out / 'profile.json'} and {out / 'offsets.csv'}")
    return EXIT_OK


COMMANDS = {"theory": cmd_theory, "simulate": cmd_simulate, "analyze": cmd_analyze,
            "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DiffuseCalError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
