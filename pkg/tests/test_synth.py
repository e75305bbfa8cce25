import numpy as np
import pytest

from covdetect import synth
from covdetect.baselines import airflow_features
from covdetect.evaluation import kfold_auc, preprocess


def test_deterministic():
    spec = synth.preset("separable", 3, duration_s=20.0)
    a, b = synth.generate(spec, "alt"), synth.generate(spec, "alt")
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, synth.generate(spec, "ref").samples)
    f = synth.generate_airflow(spec, "ref")
    np.testing.assert_array_equal(f.samples, synth.generate_airflow(spec, "ref").samples)


def test_reference_covariance_moment():
    spec = synth.preset("separable", 0, duration_s=400.0)
    x = synth.generate(spec, "ref").samples
    emp = x @ x.T / x.shape[1]
    noise = np.mean(np.sum(spec.mixing0 ** 2, axis=1)) / spec.snr
    expected = spec.mixing0 @ spec.mixing0.T + noise * np.eye(spec.n_channels)
    assert np.linalg.norm(emp - expected) < 0.05 * np.linalg.norm(expected)


def test_null_construction():
    spec = synth.preset("null", 2, duration_s=300.0)
    np.testing.assert_array_equal(spec.mixing0, spec.mixing1)
    ref, alt = (preprocess(synth.generate(spec, c), (8, 24)) for c in ("ref", "alt"))
    assert np.mean(kfold_auc(ref, alt)) == pytest.approx(0.5, abs=0.05)


def test_separable_construction():
    spec = synth.preset("separable", 0, duration_s=150.0)
    assert np.linalg.cond(np.linalg.solve(spec.mixing0, spec.mixing1)) > 3
    ref, alt = (preprocess(synth.generate(spec, c), (8, 24)) for c in ("ref", "alt"))
    assert np.mean(kfold_auc(ref, alt)) >= 0.95


def test_informative_rows_only():
    spec = synth.channels_spec(0)
    m = spec.effective_mixing("alt")
    other = [c for c in range(14) if c not in spec.informative_channels]
    np.testing.assert_array_equal(m[other], spec.mixing0[other])
    assert not np.allclose(m[list(spec.informative_channels)], spec.mixing0[list(spec.informative_channels)])


def test_airflow_examples():
    spec = synth.preset("separable", 0, duration_s=300.0)
    ref = synth.generate_airflow(spec, "ref")
    alt = synth.generate_airflow(spec, "alt")
    assert abs(airflow_features(ref.samples, ref.sample_rate_hz, ("skewness",))[0]) < 0.2
    peak = lambda r: airflow_features(r.samples, r.sample_rate_hz, ("peak",))[0]
    assert peak(alt) >= 2 * peak(ref)
    load = synth.generate_airflow(synth.preset("separable", 0, duration_s=60.0,
                                               airflow={"mode": "load"}), "alt")
    assert peak(load) < peak(ref)


def test_spec_validation():
    with pytest.raises(ValueError):
        synth.SynthSpec(2, 250.0, 10.0, np.eye(3), np.eye(3))
    with pytest.raises(ValueError):
        synth.SynthSpec(2, 250.0, 10.0, np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        synth.SynthSpec(2, 250.0, 10.0, np.eye(2), np.eye(2), informative_channels=(5,))
    with pytest.raises(ValueError):
        synth.preset("nope")
    with pytest.raises(ValueError):
        synth.generate(synth.preset("null"), "baseline")


def test_spec_round_trip(tmp_path):
    spec = synth.preset("lowrank", 4, duration_s=30.0)
    synth.save_spec(spec, tmp_path / "s.json")
    back = synth.load_spec(tmp_path / "s.json")
    np.testing.assert_array_equal(back.mixing1, spec.mixing1)
    np.testing.assert_array_equal(synth.generate(back, "alt").samples, synth.generate(spec, "alt").samples)
    (tmp_path / "p.json").write_text('{"preset": "channels", "seed": 2, "duration_s": 12.0}')
    p = synth.load_spec(tmp_path / "p.json")
    assert p.n_channels == 14 and p.duration_s == 12.0 and p.seed == 2
    inf = synth.SynthSpec(2, 250.0, 4.0, np.eye(2), np.eye(2), snr=float("inf"))
    synth.save_spec(inf, tmp_path / "i.json")
    assert synth.load_spec(tmp_path / "i.json").snr == float("inf")


def test_noise_free_permutation_equivariance():
    m0 = np.array([[1.0, 0.2, 0.0], [0.1, 1.0, 0.3], [0.0, 0.4, 1.0]])
    perm = np.array([2, 0, 1])
    a = synth.SynthSpec(3, 250.0, 8.0, m0, m0, snr=float("inf"))
    b = synth.SynthSpec(3, 250.0, 8.0, m0[perm], m0[perm], snr=float("inf"))
    np.testing.assert_allclose(synth.generate(b).samples, synth.generate(a).samples[perm])
