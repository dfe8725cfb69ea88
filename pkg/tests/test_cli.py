import csv
import json

import numpy as np
import pytest

from diffusecal.cli import main
from diffusecal.fileio import read_recording


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_theory_csv(tmp_path):
    assert main(["theory", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "theory.csv")
    assert len(rows) == 200
    first = rows[0]
    for col in ("rho_closed", "rho_quadrature", "rho_narrowband", "rho_second_order"):
        assert float(first[col]) == 1.0
    d = np.array([float(r["distance_m"]) for r in rows])
    assert d[-1] == pytest.approx(0.32)
    nb = np.array([float(r["rho_narrowband"]) for r in rows])
    # first sign change of the narrowband column: pi c / w_c with w_c = 2 pi 2500
    k = np.flatnonzero(np.sign(nb[:-1]) != np.sign(nb[1:]))[0]
    zero = d[k] - nb[k] * (d[k + 1] - d[k]) / (nb[k + 1] - nb[k])
    assert zero == pytest.approx(343.0 / 5000.0, abs=2e-4)
    meta = json.loads((tmp_path / "theory.json").read_text())
    assert {"version", "config_digest", "seed"} <= set(meta)


def test_theory_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["theory", "--out", str(a), "--n-points", "20"]) == 0
    assert main(["theory", "--out", str(b), "--n-points", "20"]) == 0
    for name in ("theory.csv", "theory.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DIFFUSECAL_OUT", str(tmp_path / "env"))
    assert main(["theory", "--n-points", "5"]) == 0
    assert (tmp_path / "env" / "theory.csv").exists()


def test_config_errors_exit_two(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text('[capture]\nmode = "sideways"\n')
    assert main(["theory", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["theory", "--config", str(tmp_path / "missing.toml")]) == 2
    assert main(["theory", "--band", "4500,500", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["theory", "--band", "nonsense"])
    assert exc.value.code == 2


def test_analyze_without_recordings_is_usage_error(tmp_path):
    assert main(["analyze", "--out", str(tmp_path)]) == 2


def test_simulate_writes_wav_and_sidecar(tmp_path):
    args = ["simulate", "--out", str(tmp_path), "--speakers", "2", "--mode", "fixed,proposed",
            "--duration", "2", "--segments", "20", "--trials", "2", "--seed", "3"]
    assert main(args) == 0
    wavs = sorted(p.name for p in tmp_path.glob("*.wav"))
    assert wavs == ["capture_fixed_s02_t00.wav", "capture_fixed_s02_t01.wav",
                    "capture_proposed_s02_t00.wav", "capture_proposed_s02_t01.wav"]
    rec = read_recording(tmp_path / "capture_proposed_s02_t00.wav")
    assert rec.num_channels == 16 and rec.num_samples == 32000 and rec.sample_rate == 16000
    assert rec.meta["mode"] == "proposed" and rec.meta["segments"] == 20
    assert {"version", "config_digest", "seed"} <= set(rec.meta)
    again = tmp_path / "again"
    assert main(args[:2] + [str(again)] + args[3:]) == 0
    for name in wavs:
        assert (tmp_path / name).read_bytes() == (again / name).read_bytes()
        assert (tmp_path / name).with_suffix(".json").read_bytes() == \
            (again / name).with_suffix(".json").read_bytes()


def test_analyze_recordings(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--out", str(sim), "--speakers", "2", "--mode", "fixed,proposed",
                 "--duration", "2", "--segments", "40", "--trials", "3"]) == 0
    out = tmp_path / "ana"
    assert main(["analyze", str(sim), "--out", str(out)]) == 0
    rows = read_csv(out / "variance_table.csv")
    assert len(rows) == 1 and rows[0]["speakers"] == "2"
    assert float(rows[0]["proposed"]) < float(rows[0]["fixed"])
    assert len(list(out.glob("*_curve.csv"))) == 6
    curve = read_csv(out / "capture_fixed_s02_t00_curve.csv")
    assert len(curve) == 120


def test_analyze_rejects_geometry_mismatch(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--out", str(sim), "--speakers", "1", "--mode", "fixed",
                 "--duration", "1"]) == 0
    assert main(["analyze", str(sim), "--out", str(tmp_path), "--config",
                 str(_write(tmp_path / "c.toml", 'array = "spherical32"\n'))]) == 2


def _write(path, text):
    path.write_text(text)
    return path


def test_analyze_campaign_table_shape(tmp_path):
    assert main(["analyze", "--campaign", "--out", str(tmp_path), "--duration", "1",
                 "--trials", "2", "--segments", "10"]) == 0
    rows = read_csv(tmp_path / "variance_table.csv")
    assert [r["speakers"] for r in rows] == ["1", "2", "4", "8", "16", "26"]
    assert all(r["fixed"] and r["proposed"] for r in rows)


def test_calibrate_with_known_gains(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--out", str(sim), "--array", "spherical32", "--speakers", "2",
                 "--mode", "proposed", "--duration", "20", "--band", "200,7000",
                 "--spectrum", "pink", "--gains-db", "1.5"]) == 0
    wav = sim / "capture_proposed_s02_t00.wav"
    out = tmp_path / "cal"
    assert main(["calibrate", str(wav), "--out", str(out), "--apply"]) == 0
    prof = json.loads((out / "profile.json").read_text())
    assert len(prof["channels"]) == 32
    assert len(prof["channels"][0]["filter_taps"]) == 1025
    assert prof["meta"]["max_offset_error_db"] < 0.2
    assert prof["meta"]["residual_max_db"] < 0.1
    offsets = read_csv(out / "offsets.csv")
    total = np.array([[float(v) for k, v in r.items() if k != "freq_hz"] for r in offsets]).sum(axis=1)
    np.testing.assert_allclose(total, 0.0, atol=1e-4)
    assert (out / "capture_proposed_s02_t00_calibrated.wav").exists()


def test_calibrate_identical_channels(tmp_path):
    # one speaker, two mics: the channels differ by a pure delay only
    cfg = _write(tmp_path / "c.toml", """
mics = [[0.0, 0.0, 0.0], [0.0, 0.05, 0.0]]
[layout]
kind = "explicit"
radius_m = 1.8
positions = [[1.8, 0.0, 0.0]]
""")
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--out", str(sim), "--mode", "fixed",
                 "--duration", "12", "--seed", "1"]) == 0
    wav = next(sim.glob("*.wav"))
    # the random static pose only delays one channel relative to the other,
    # which leaves both magnitude spectra identical
    assert read_recording(wav).num_channels == 2
    out = tmp_path / "cal"
    assert main(["calibrate", str(wav), "--out", str(out)]) == 0
    prof = json.loads((out / "profile.json").read_text())
    offs = np.array([c["offset_db"] for c in prof["channels"]])
    assert np.max(np.abs(offs)) < 0.05


def test_calibrate_short_recording_is_numeric_failure(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--out", str(sim), "--speakers", "1", "--mode", "fixed",
                 "--duration", "2"]) == 0
    assert main(["calibrate", str(next(sim.glob("*.wav"))), "--out", str(tmp_path)]) == 3
