"""Synthetic reference / altered recordings with known covariance contrast."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .signal_io import FilterSpec, Recording, design_fir, fir_filter

CONDITION_CODES = {"ref": 0, "alt": 1}


@dataclass(frozen=True, eq=False)
class SynthSpec:
    """Generator settings.

    Band-limited unit-variance sources (``band_hz``) are mixed through
    ``mixing0`` for the reference condition and ``mixing1`` for the altered
    one; rows of channels outside ``informative_channels`` always use
    ``mixing0``. Optional broadband background sources (same mixing in both
    conditions) and white sensor noise at ``snr`` (mean band-signal power over
    noise power) are added.
    """

    n_channels: int
    sample_rate_hz: float
    duration_s: float
    mixing0: np.ndarray
    mixing1: np.ndarray
    band_hz: tuple = (8.0, 24.0)
    informative_channels: tuple = None
    snr: float = 10.0
    seed: int = 0
    background_power: float = 0.0
    background_band_hz: tuple = (1.0, 40.0)
    airflow: dict = None

    def __post_init__(self):
        m0 = np.asarray(self.mixing0, dtype=float)
        m1 = np.asarray(self.mixing1, dtype=float)
        n = int(self.n_channels)
        for name, m in (("mixing0", m0), ("mixing1", m1)):
            if m.ndim != 2 or m.shape[0] != n:
                raise ValueError(f"{name} must have {n} rows")
            if np.linalg.matrix_rank(m) < min(m.shape):
                raise ValueError(f"{name} is rank deficient")
        if m0.shape != m1.shape:
            raise ValueError("mixing matrices differ in shape")
        inf = tuple(range(n)) if self.informative_channels is None else \
            tuple(sorted(int(c) for c in self.informative_channels))
        if any(not 0 <= c < n for c in inf):
            raise ValueError("informative channels must be valid channel indices")
        if not self.snr > 0:
            raise ValueError("snr must be positive (use inf for no noise)")
        object.__setattr__(self, "mixing0", m0)
        object.__setattr__(self, "mixing1", m1)
        object.__setattr__(self, "informative_channels", inf)
        object.__setattr__(self, "band_hz", tuple(float(b) for b in self.band_hz))

    def effective_mixing(self, condition):
        if condition == "ref":
            return self.mixing0
        m = self.mixing0.copy()
        idx = list(self.informative_channels)
        m[idx] = self.mixing1[idx]
        return m

    def channel_labels(self):
        return tuple(f"ch{i:02d}" for i in range(self.n_channels))

    def to_dict(self):
        d = asdict(self)
        d["mixing0"] = self.mixing0.tolist()
        d["mixing1"] = self.mixing1.tolist()
        d["snr"] = "inf" if np.isinf(self.snr) else self.snr
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "preset" in d:
            base = preset(d.pop("preset"), int(d.pop("seed", 0)))
            return replace(base, **d) if d else base
        if isinstance(d.get("snr"), str):
            d["snr"] = float(d["snr"])
        return cls(**d)


def load_spec(path) -> SynthSpec:
    return SynthSpec.from_dict(json.loads(Path(path).read_text()))


def save_spec(spec: SynthSpec, path):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def _rng(spec, condition, stream=0):
    return np.random.default_rng(np.random.SeedSequence([int(spec.seed), CONDITION_CODES[condition], stream]))


def band_noise(rng, n_sources, n_samples, band_hz, rate):
    """Unit-variance white noise band-passed to ``band_hz``."""
    taps = design_fir(FilterSpec(band_hz[0], band_hz[1]), rate)
    pad = len(taps)
    white = rng.standard_normal((n_sources, n_samples + 2 * pad))
    s = fir_filter(white, taps)[:, pad:pad + n_samples]
    return s / s.std(axis=1, keepdims=True)


def generate(spec: SynthSpec, condition="ref") -> Recording:
    """One EEG-like recording of the reference (``"ref"``) or altered (``"alt"``) condition.

    Deterministic in ``(spec.seed, condition)``. The sensor noise is i.i.d.
    per channel, so channel-permutation equivariance is exact only in
    distribution unless ``snr`` is infinite.
    """
    if condition not in CONDITION_CODES:
        raise ValueError("condition must be 'ref' or 'alt'")
    n_samples = int(round(spec.duration_s * spec.sample_rate_hz))
    rng = _rng(spec, condition)
    mixing = spec.effective_mixing(condition)
    sources = band_noise(rng, mixing.shape[1], n_samples, spec.band_hz, spec.sample_rate_hz)
    x = mixing @ sources
    signal_power = float(np.mean(np.sum(spec.mixing0 ** 2, axis=1)))
    if spec.background_power > 0:
        # background mixing is drawn from the seed alone: identical for both conditions
        bg_mix = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 7])).standard_normal(
            (spec.n_channels, spec.n_channels)) / np.sqrt(spec.n_channels)
        high = min(spec.background_band_hz[1], 0.45 * spec.sample_rate_hz)
        bg = band_noise(rng, spec.n_channels, n_samples, (spec.background_band_hz[0], high),
                        spec.sample_rate_hz)
        x = x + np.sqrt(spec.background_power) * bg_mix @ bg
    if np.isfinite(spec.snr):
        x = x + np.sqrt(signal_power / spec.snr) * rng.standard_normal(x.shape)
    return Recording(x, spec.sample_rate_hz, spec.channel_labels(), "eeg")


def generate_airflow(spec: SynthSpec, condition="ref") -> Recording:
    """Single-channel air-flow trace.

    A quasi-periodic sinusoidal breath (period jittered breath to breath) for
    the reference; the altered condition adds brisk sniff pulses on a
    fraction of inspirations (``mode="sniff"``) or flattens and prolongs
    inspiration (``mode="load"``).
    """
    if condition not in CONDITION_CODES:
        raise ValueError("condition must be 'ref' or 'alt'")
    cfg = dict(breath_period_s=4.0, amplitude=0.5, sniff_rate=0.5, sniff_amplitude=3.0,
               load_amplitude=0.4, mode="sniff", noise=0.02)
    cfg.update(spec.airflow or {})
    rate = spec.sample_rate_hz
    n = int(round(spec.duration_s * rate))
    rng = _rng(spec, condition, stream=1)
    n_breaths = int(np.ceil(spec.duration_s / cfg["breath_period_s"])) + 2
    periods = cfg["breath_period_s"] * (1 + 0.1 * rng.uniform(-1, 1, n_breaths))
    t = np.arange(n) / rate
    edges = np.concatenate([[0.0], np.cumsum(periods)])
    k = np.searchsorted(edges, t, side="right") - 1
    phase = 2 * np.pi * (k + (t - edges[k]) / periods[k])
    flow = cfg["amplitude"] * np.sin(phase)
    if condition == "alt":
        if cfg["mode"] == "sniff":
            width = 0.1
            for b in range(n_breaths - 1):
                if rng.uniform() < cfg["sniff_rate"]:
                    centre = edges[b] + periods[b] / 4
                    flow += cfg["sniff_amplitude"] * cfg["amplitude"] * np.exp(
                        -0.5 * ((t - centre) / width) ** 2)
        elif cfg["mode"] == "load":
            cap = cfg["load_amplitude"] * cfg["amplitude"]
            flow = np.where(flow > cap, cap + 0.2 * (flow - cap), flow)
        else:
            raise ValueError(f"unknown air-flow mode {cfg['mode']!r}")
    flow = flow + cfg["noise"] * cfg["amplitude"] * rng.standard_normal(n)
    return Recording(flow[None], rate, ("flow",), "airflow")


###############################################################################
# Presets


def _random_mixing(rng, n):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q


def separable_spec(seed=0, n_channels=8, duration_s=600.0, **kw) -> SynthSpec:
    """Clearly separable conditions: three source powers change between conditions."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 101]))
    m0 = _random_mixing(rng, n_channels) @ np.diag(np.linspace(1.5, 0.5, n_channels))
    scale = np.ones(n_channels)
    scale[: 3] = (2.0, 0.5, 1.6)
    m1 = m0 @ np.diag(scale)
    return SynthSpec(n_channels, 250.0, duration_s, m0, m1, seed=seed, **kw)


def null_spec(seed=0, n_channels=8, duration_s=600.0, **kw) -> SynthSpec:
    """Both conditions drawn from one distribution."""
    base = separable_spec(seed, n_channels, duration_s, **kw)
    return replace(base, mixing1=base.mixing0.copy())


def lowrank_spec(seed=0, n_channels=8, duration_s=600.0, **kw) -> SynthSpec:
    """Source powers spanning two decades; only the weakest sources change.

    Covariances are close to rank deficient, and the contrast sits in
    directions the Frobenius norm barely sees.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 102]))
    amps = np.geomspace(3.0, 0.03, n_channels)
    m0 = _random_mixing(rng, n_channels) @ np.diag(amps)
    scale = np.ones(n_channels)
    scale[-3:] = 1.6
    m1 = m0 @ np.diag(scale)
    kw.setdefault("snr", 1e4)
    return SynthSpec(n_channels, 250.0, duration_s, m0, m1, seed=seed, **kw)


def channels_spec(seed=0, n_channels=14, informative=(1, 3, 5, 8, 10, 12), duration_s=600.0,
                  effect=0.17, **kw) -> SynthSpec:
    """Only ``informative`` channels differ between conditions.

    Each channel is dominated by its own source with weak cross-talk. The
    altered condition scales an informative channel's mixing row by
    ``1 + effect`` (odd index) or its inverse (even index).
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 103]))
    m0 = np.eye(n_channels) + 0.15 * rng.standard_normal((n_channels, n_channels))
    m1 = m0.copy()
    for c in informative:
        m1[c] = m0[c] * (1 + effect) ** (1 if c % 2 else -1)
    kw.setdefault("snr", 20.0)
    return SynthSpec(n_channels, 250.0, duration_s, m0, m1, informative_channels=tuple(informative),
                     seed=seed, **kw)


def band_spec(seed=0, n_channels=8, duration_s=600.0, band_hz=(10.0, 20.0), **kw) -> SynthSpec:
    """Contrast confined to ``band_hz``; broadband background is condition-free."""
    kw.setdefault("background_power", 1.0)
    return separable_spec(seed, n_channels, duration_s, band_hz=band_hz, **kw)


PRESETS = {"separable": separable_spec, "null": null_spec, "lowrank": lowrank_spec,
           "channels": channels_spec, "band": band_spec}


def preset(name, seed=0, **kw) -> SynthSpec:
    try:
        return PRESETS[name](seed=seed, **kw)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
