import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covdetect.signal_io import (EmptyEpochSetError, EpochSet, FilterSpec, ParseError, Recording,
                                 bandpass_filter, design_fir, downsample, epoch_windows,
                                 load_epochs, load_recording, reject_artifacts, save_epochs,
                                 save_recording)

RATE = 250.0


def sine_rec(freq, seconds=20.0, rate=RATE, channels=1):
    t = np.arange(int(seconds * rate)) / rate
    return Recording(np.tile(np.sin(2 * np.pi * freq * t), (channels, 1)), rate,
                     tuple(f"c{i}" for i in range(channels)))


def steady_amplitude(rec):
    x = rec.samples[0]
    edge = rec.edge_samples + 10
    return np.max(np.abs(x[edge:-edge]))


def test_passband_sine_kept():
    out = bandpass_filter(sine_rec(15.0), FilterSpec(8, 24))
    assert steady_amplitude(out) == pytest.approx(1.0, rel=0.01)


def test_stopband_sine_attenuated():
    out = bandpass_filter(sine_rec(50.0), FilterSpec(8, 24))
    assert 20 * np.log10(steady_amplitude(out)) <= -20


def test_zero_in_zero_out():
    rec = Recording(np.zeros((2, 1000)), RATE, ("a", "b"))
    assert not np.any(bandpass_filter(rec, FilterSpec(8, 24)).samples)


def test_filter_keeps_timing():
    # a symmetric pulse stays centred after group-delay removal
    x = np.zeros(2001)
    x[1000] = 1.0
    out = bandpass_filter(Recording(x, RATE, ("a",)), FilterSpec(8, 24)).samples[0]
    assert int(np.argmax(np.abs(out))) == 1000
    np.testing.assert_allclose(out[1000 - 50:1000], out[1001:1051][::-1], atol=1e-12)


def test_filter_design_symmetric_and_edges():
    taps = design_fir(FilterSpec(8, 24), RATE)
    assert len(taps) % 2 == 1
    np.testing.assert_allclose(taps, taps[::-1])
    out = bandpass_filter(sine_rec(15.0), FilterSpec(8, 24), edge="zero")
    assert out.edge_samples == (len(taps) - 1) // 2
    assert not np.any(out.samples[:, :out.edge_samples])
    assert out.passband_hz == (8.0, 24.0)


@pytest.mark.parametrize("spec", [FilterSpec(24, 8), FilterSpec(8, 125), FilterSpec(8, 24, order=7),
                                  FilterSpec(8, 24, design="kaiser")])
def test_filter_spec_validation(spec):
    with pytest.raises(ValueError):
        design_fir(spec, RATE)


def test_lowpass_design():
    out = bandpass_filter(sine_rec(5.0), FilterSpec(0, 20))
    assert steady_amplitude(out) == pytest.approx(1.0, rel=0.01)


def test_downsample_factor_ten():
    rec = Recording(np.random.default_rng(0).standard_normal((2, 25_003)), 2500.0, ("a", "b"))
    out = downsample(rec, 250.0, lowpassed=True)
    assert out.sample_rate_hz == 250.0
    assert out.n_samples == 25_003 // 10
    np.testing.assert_array_equal(out.samples, rec.samples[:, ::10][:, :2500])


def test_downsample_identity_and_errors():
    rec = Recording(np.ones((1, 100)), 2500.0, ("a",))
    assert downsample(rec, 2500.0) is rec
    with pytest.raises(ValueError):
        downsample(rec, 400.0, lowpassed=True)
    with pytest.raises(ValueError, match="band limited"):
        downsample(rec, 250.0)
    filtered = bandpass_filter(Recording(np.random.default_rng(1).standard_normal((1, 5000)),
                                         2500.0, ("a",)), FilterSpec(8, 24, order=200))
    assert downsample(filtered, 250.0).n_samples == 500


def test_epoch_layout_default():
    rec = Recording(np.zeros((2, 150_000)), RATE, ("a", "b"))
    es = epoch_windows(rec, 5.0, 0.5, "SV")
    assert es.n_times == 1250
    assert len(es) == 239
    assert es.start_times_s[1] == pytest.approx(2.5)
    assert es.conditions[0] == "SV"


def test_epoch_single_window_and_tiling():
    x = np.arange(2 * 1250, dtype=float).reshape(2, 1250)
    rec = Recording(x, RATE, ("a", "b"))
    assert len(epoch_windows(rec, 5.0, 0.9)) == 1
    rec2 = Recording(np.arange(3 * 1250, dtype=float)[None], RATE, ("a",))
    es = epoch_windows(rec2, 5.0, 0.0)
    assert len(es) == 3
    np.testing.assert_array_equal(es.data.reshape(-1), rec2.samples[0])


def test_epoch_errors():
    rec = Recording(np.zeros((1, 100)), RATE, ("a",))
    with pytest.raises(EmptyEpochSetError):
        epoch_windows(rec, 5.0)
    with pytest.raises(ValueError):
        epoch_windows(rec, 0.1, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 400), st.integers(2, 60), st.floats(0, 0.95))
def test_epoch_count_property(n, w, overlap):
    rec = Recording(np.zeros((1, n)), 10.0, ("a",))
    if w > n:
        return
    es = epoch_windows(rec, w / 10.0, overlap)
    hop = max(1, int(round(w * (1 - overlap))))
    assert len(es) == (n - w) // hop + 1


def _epochs(data, cond="SV"):
    return EpochSet(data, (cond,) * len(data), np.arange(len(data)) * 1.0, RATE,
                    tuple(f"c{i}" for i in range(data.shape[1])))


def test_reject_artifacts():
    data = np.random.default_rng(2).uniform(-1, 1, (5, 2, 50))
    es = _epochs(data)
    kept, rej = reject_artifacts(es, 10.0)
    assert len(kept) == 5 and len(rej) == 0
    spiky = data.copy()
    spiky[3, 1, 7] = 100.0
    kept, rej = reject_artifacts(_epochs(spiky), 10.0)
    assert rej.tolist() == [3]
    assert len(kept) == 4
    kept, rej = reject_artifacts(_epochs(spiky), np.inf)
    assert len(kept) == 5


def test_epochset_validation():
    with pytest.raises(ValueError):
        EpochSet(np.zeros((2, 2, 5)), ("SV",), np.zeros(2), RATE, ("a", "b"))
    with pytest.raises(ValueError):
        EpochSet(np.zeros((1, 2, 5)), ("XX",), np.zeros(1), RATE, ("a", "b"))
    es = _epochs(np.zeros((3, 2, 5)))
    assert es.pick(["c1"]).n_channels == 1
    assert len(es.subset([0, 2])) == 2
    with pytest.raises(KeyError):
        es.pick(["nope"])


def test_epoch_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    es = EpochSet(rng.standard_normal((3, 2, 7)), ("SV", "LD", "SN"), [0.0, 2.5, 5.0], RATE,
                  ("Fz", "Cz"), window_samples=7, overlap=0.5)
    save_epochs(es, tmp_path / "e.txt")
    back = load_epochs(tmp_path / "e.txt")
    np.testing.assert_array_equal(back.data, es.data)
    assert back.conditions == es.conditions
    assert back.channel_labels == es.channel_labels
    assert back.sample_rate_hz == es.sample_rate_hz
    assert back.overlap == 0.5 and back.window_samples == 7
    np.testing.assert_array_equal(back.start_times_s, es.start_times_s)


def test_recording_round_trip(tmp_path):
    rec = Recording(np.random.default_rng(4).standard_normal((3, 20)), 500.0, ("a", "b", "c"))
    save_recording(rec, tmp_path / "r.txt")
    back = load_recording(tmp_path / "r.txt")
    np.testing.assert_array_equal(back.samples, rec.samples)
    assert back.channel_labels == rec.channel_labels


def test_parse_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("")
    with pytest.raises(ParseError):
        load_recording(p)
    with pytest.raises(ParseError):
        load_epochs(p)
    p.write_text("# rate_hz=250.0 channels=a,b,c modality=eeg\n1,2\n3,4\n")
    with pytest.raises(ParseError) as err:
        load_recording(p)
    assert err.value.lineno == 2
    p.write_text("# rate_hz=250.0 channels=a,b modality=eeg window_samples=2 overlap=0.0\n"
                 "# epoch 0 condition=SV start_s=0.0\n1,2\n3,4,5\n")
    with pytest.raises(ParseError) as err:
        load_epochs(p)
    assert err.value.lineno == 4
    p.write_text("# rate_hz=250.0 channels=a,b modality=eeg window_samples=3 overlap=0.0\n"
                 "# epoch 0 condition=SV start_s=0.0\n1,2\n3,4\n")
    with pytest.raises(ParseError):
        load_epochs(p)
