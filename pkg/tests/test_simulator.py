import numpy as np
import pytest
from scipy import signal

from diffusecal.errors import AliasingError, InvalidGeometryError
from diffusecal.field_theory import REFERENCE_BAND, BandSpec, DirectionalGain, rho_direct
from diffusecal.geometry import (ArrayGeometry, LoudspeakerLayout, Pose, Trajectory,
                                 default_linear_array, make_linear_array, make_polyhedral_layout,
                                 sample_rotations, sample_trajectory)
from diffusecal.simulator import (CaptureConfig, Recording, fibonacci_sphere, random_gain_curves,
                                  render_capture, render_diffuse_oracle, synth_speaker_drives)

FS = 16000.0
C = 343.0


def welch_db(x, fs=FS):
    f, p = signal.welch(x, fs=fs, nperseg=4096, noverlap=2048, axis=-1)
    return f, 10 * np.log10(p)


def single_speaker(direction, radius=1.8):
    d = np.asarray(direction, dtype=float)
    return LoudspeakerLayout(radius * d[None, :] / np.linalg.norm(d), radius)


# -- drives ------------------------------------------------------------------

def test_white_drive_is_flat_in_band():
    x = synth_speaker_drives(1, REFERENCE_BAND, 30.0, FS, seed=1)[0]
    f, db = welch_db(x)
    inner = (f >= 600) & (f <= 4400)
    dev = db[inner] - db[inner].mean()
    # per-bin Welch scatter is ~0.3 dB here, so allow the rare tail bin
    assert np.mean(np.abs(dev) < 1.0) >= 0.99
    assert np.all(np.abs(np.convolve(dev, np.ones(32) / 32, mode="valid")) < 0.2)
    # out of band: at least 40 dB down (window leakage only)
    outer = ((f >= 100) & (f <= 300)) | (f >= 4800)
    assert db[outer].max() < db[inner].mean() - 40


def test_drive_unit_variance():
    x = synth_speaker_drives(4, REFERENCE_BAND, 10.0, FS, seed=2)
    np.testing.assert_allclose(x.var(axis=1), 1.0, rtol=0.05)


def test_two_drives_uncorrelated():
    x = synth_speaker_drives(2, REFERENCE_BAND, 30.0, FS, seed=3)
    assert abs(np.corrcoef(x)[0, 1]) < 0.02


def test_drive_seed_determinism():
    a = synth_speaker_drives(3, REFERENCE_BAND, 2.0, FS, seed=9)
    b = synth_speaker_drives(3, REFERENCE_BAND, 2.0, FS, seed=9)
    c = synth_speaker_drives(3, REFERENCE_BAND, 2.0, FS, seed=10)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_pink_drive_slope():
    x = synth_speaker_drives(1, BandSpec.from_hz(200, 6000), 30.0, FS, seed=4, spectrum="pink")[0]
    f, db = welch_db(x)
    sel = (f >= 400) & (f <= 5000)
    slope = np.polyfit(np.log2(f[sel]), db[sel], 1)[0]
    assert slope == pytest.approx(-10 * np.log10(2), abs=0.3)


def test_aliasing_rejected():
    with pytest.raises(AliasingError):
        synth_speaker_drives(1, REFERENCE_BAND, 1.0, 8000.0, seed=0)
    with pytest.raises(AliasingError):
        render_capture(single_speaker([1, 0, 0]), make_linear_array([0.1]),
                       CaptureConfig(REFERENCE_BAND, duration=1.0, sample_rate=9000.0, speaker_count=1))


# -- capture rendering ---------------------------------------------------------

def test_far_field_delay_matches_phase_shift():
    # speaker on +x: the wave travels along -x, so the mic at x = 0.1 hears it 0.1/c early
    geom = make_linear_array([0.1])
    cfg = CaptureConfig(REFERENCE_BAND, duration=2.0, speaker_count=1, seed=5)
    rec = render_capture(single_speaker([1, 0, 0]), geom, cfg)
    drive = synth_speaker_drives(1, REFERENCE_BAND, 2.0, FS, seed=5)[0]
    np.testing.assert_allclose(rec.channels[0], drive, atol=1e-12)
    n = drive.size
    w = 2 * np.pi * np.fft.rfftfreq(n, 1 / FS)
    advanced = np.fft.irfft(np.fft.rfft(drive) * np.exp(1j * w * 0.1 / C), n=n)
    np.testing.assert_allclose(rec.channels[1], advanced, atol=1e-10)


def test_broadside_channels_identical():
    geom = ArrayGeometry([[0.0, 0.0, 0.0], [0.0, 0.2, 0.0]])
    rec = render_capture(single_speaker([1, 0, 0]), geom,
                         CaptureConfig(REFERENCE_BAND, duration=2.0, speaker_count=1, seed=1))
    np.testing.assert_allclose(rec.channels[0], rec.channels[1], atol=1e-12)
    assert np.corrcoef(rec.channels)[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_power_grows_with_speaker_count():
    geom = make_linear_array([0.05])
    layout = make_polyhedral_layout("rhombic-triacontahedron", 1.8, 26)
    for count in (1, 4, 16):
        rec = render_capture(layout, geom, CaptureConfig(REFERENCE_BAND, duration=10.0,
                                                         speaker_count=count, seed=count))
        assert rec.channels.var(axis=1).mean() == pytest.approx(count, rel=0.08)


def test_capture_seed_determinism():
    geom = default_linear_array()
    layout = make_polyhedral_layout("rhombic-triacontahedron", 1.8, 26)
    cfg = CaptureConfig(REFERENCE_BAND, duration=1.0, speaker_count=4, seed=7)
    a = render_capture(layout, geom, cfg)
    b = render_capture(layout, geom, cfg)
    assert a.digest() == b.digest()


def test_identity_trajectory_matches_fixed_array():
    geom = default_linear_array()
    layout = make_polyhedral_layout("rhombic-triacontahedron", 1.8, 26)
    cfg = CaptureConfig(REFERENCE_BAND, duration=2.0, speaker_count=8, seed=3)
    fixed = render_capture(layout, geom, cfg)
    one = render_capture(layout, geom, cfg.with_(trajectory=Trajectory.stationary(2.0)))
    assert np.array_equal(fixed.channels, one.channels)
    # many identity segments: only the circular wrap at segment edges differs
    many = Trajectory(tuple((0.1, Pose.identity()) for _ in range(20)))
    split = render_capture(layout, geom, cfg.with_(trajectory=many))
    for m in range(geom.num_mics):
        assert np.corrcoef(fixed.channels[m], split.channels[m])[0, 1] > 0.97


def test_trajectory_outside_shell_rejected():
    geom = make_linear_array([0.1])
    far = Pose(np.array([1.79, 0.0, 0.0]), np.eye(3))
    cfg = CaptureConfig(REFERENCE_BAND, duration=1.0, speaker_count=1,
                        trajectory=Trajectory(((1.0, far),)))
    with pytest.raises(InvalidGeometryError):
        render_capture(single_speaker([0, 0, 1]), geom, cfg)


def test_too_many_speakers_rejected():
    layout = make_polyhedral_layout("cube", 1.8)
    with pytest.raises(InvalidGeometryError):
        render_capture(layout, make_linear_array([0.1]),
                       CaptureConfig(REFERENCE_BAND, duration=1.0, speaker_count=9))


def test_large_array_warns():
    geom = make_linear_array([0.6])
    with pytest.warns(UserWarning):
        render_capture(single_speaker([0, 0, 1]), geom,
                       CaptureConfig(REFERENCE_BAND, duration=1.0, speaker_count=1))


def test_proposed_capture_is_rendered_per_segment():
    geom = default_linear_array()
    layout = make_polyhedral_layout("rhombic-triacontahedron", 1.8, 26)
    traj = sample_trajectory(1.8, geom.extent, 30, 3.0, seed=1)
    rec = render_capture(layout, geom, CaptureConfig(REFERENCE_BAND, duration=3.0, speaker_count=2,
                                                     trajectory=traj))
    assert rec.meta["mode"] == "proposed"
    assert rec.meta["segments"] == 30
    assert rec.meta["trajectory_digest"] == traj.digest()
    assert np.all(np.isfinite(rec.channels))


def test_constant_channel_gain_scales_power():
    geom = make_linear_array([0.05])
    gains = np.array([[0.0, 0.0], [3.0, 3.0]])
    cfg = CaptureConfig(REFERENCE_BAND, duration=5.0, speaker_count=1, seed=2,
                        channel_gains_db=gains, gain_freqs_hz=np.array([0.0, 8000.0]))
    rec = render_capture(single_speaker([0, 1, 0]), geom, cfg)
    # broadside: identical signals apart from the gain
    ratio = rec.channels[1].var() / rec.channels[0].var()
    assert 10 * np.log10(ratio) == pytest.approx(3.0, abs=1e-9)


def test_random_gain_curves_bounded():
    f, g = random_gain_curves(32, 1.9, seed=4)
    assert g.shape == (32, f.size)
    assert np.max(np.abs(g)) == pytest.approx(1.9)
    f2, g2 = random_gain_curves(32, 1.9, seed=4)
    assert np.array_equal(g, g2)


# -- diffuse oracle ------------------------------------------------------------

def test_fibonacci_sphere_unit_and_balanced():
    d = fibonacci_sphere(1000)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    assert np.all(np.abs(d.mean(axis=0)) < 2e-3)


def test_oracle_single_direction_is_coherent():
    geom = make_linear_array([0.05, 0.1])
    rec = render_diffuse_oracle(geom, REFERENCE_BAND, 1, 10.0, FS, seed=8)
    f, coh = signal.coherence(rec.channels[0], rec.channels[2], fs=FS, nperseg=1024)
    sel = (f > 600) & (f < 4400)
    assert np.all(coh[sel] > 0.99)
    # zero-lag correlation of a single plane wave: band average of cos(w tau)
    rot = sample_rotations(np.random.default_rng(8), 1)[0]
    direction = fibonacci_sphere(1) @ rot.T
    sep = geom.positions[2] - geom.positions[0]
    expect = rho_direct(sep, REFERENCE_BAND, DirectionalGain.plane_waves(direction)).real
    assert np.corrcoef(rec.channels[[0, 2]])[0, 1] == pytest.approx(expect, abs=0.02)


def test_oracle_seed_determinism_and_shape():
    geom = make_linear_array([0.05, 0.1])
    a = render_diffuse_oracle(geom, REFERENCE_BAND, 300, 2.0, FS, seed=1)
    b = render_diffuse_oracle(geom, REFERENCE_BAND, 300, 2.0, FS, seed=1)
    assert a.channels.shape == (3, 32000)
    assert np.array_equal(a.channels, b.channels)
    np.testing.assert_allclose(a.channels.var(axis=1), 1.0, rtol=0.1)


def test_recording_validation():
    with pytest.raises(ValueError):
        Recording(FS, np.zeros((2, 0)))
    with pytest.raises(ValueError):
        Recording(0.0, np.zeros((2, 10)))
