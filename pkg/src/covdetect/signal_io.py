"""Recordings, epochs, preprocessing and the plain-text file formats."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import signal

MODALITIES = ("eeg", "airflow")
CONDITIONS = ("SV", "SN", "LD", "unknown")


class ParseError(ValueError):
    """Malformed recording or epoch file. ``lineno`` is 1-based."""

    def __init__(self, message, path=None, lineno=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if lineno is not None:
            where += f":{lineno}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.lineno = lineno


class EmptyEpochSetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Recording:
    """Continuous multichannel signal, channels in rows.

    ``passband_hz`` is set by :func:`bandpass_filter` and lets
    :func:`downsample` check for aliasing. ``edge_samples`` counts the samples
    at each end that lie within one group delay of the boundary after
    filtering.
    """

    samples: np.ndarray
    sample_rate_hz: float
    channel_labels: tuple
    modality: str = "eeg"
    passband_hz: tuple | None = None
    edge_samples: int = 0

    def __post_init__(self):
        data = np.asarray(self.samples, dtype=float)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise ValueError("recording samples must be 2-D (channels x time)")
        if data.shape[1] < 2:
            raise ValueError("every channel needs at least 2 samples")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        labels = tuple(str(c) for c in self.channel_labels)
        if len(labels) != data.shape[0]:
            raise ValueError(f"{len(labels)} channel labels for {data.shape[0]} channels")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}")
        data.setflags(write=False)
        object.__setattr__(self, "samples", data)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        object.__setattr__(self, "channel_labels", labels)

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration_s(self):
        return self.n_samples / self.sample_rate_hz

    def pick(self, channels):
        idx = _channel_indices(self.channel_labels, channels)
        return replace(self, samples=self.samples[idx],
                       channel_labels=tuple(self.channel_labels[i] for i in idx))


@dataclass(frozen=True, eq=False)
class Epoch:
    data: np.ndarray
    condition: str = "unknown"
    start_time_s: float = 0.0


@dataclass(frozen=True, eq=False)
class EpochSet:
    """Fixed-shape stack of epochs, ``data`` is (n_epochs, n_channels, n_times)."""

    data: np.ndarray
    conditions: tuple
    start_times_s: np.ndarray
    sample_rate_hz: float
    channel_labels: tuple
    modality: str = "eeg"
    window_samples: int | None = None
    overlap: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise ValueError("epoch data must be 3-D (epochs x channels x samples)")
        if not np.all(np.isfinite(data)):
            raise ValueError("epochs contain non-finite values")
        n = data.shape[0]
        conditions = tuple(self.conditions)
        if len(conditions) != n:
            raise ValueError("one condition label per epoch is required")
        for c in conditions:
            if c not in CONDITIONS:
                raise ValueError(f"unknown condition {c!r}")
        starts = np.asarray(self.start_times_s, dtype=float).reshape(n)
        labels = tuple(str(c) for c in self.channel_labels)
        if len(labels) != data.shape[1]:
            raise ValueError(f"{len(labels)} channel labels for {data.shape[1]} channels")
        data.setflags(write=False)
        starts.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "conditions", conditions)
        object.__setattr__(self, "start_times_s", starts)
        object.__setattr__(self, "channel_labels", labels)
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))
        if self.window_samples is None:
            object.__setattr__(self, "window_samples", int(data.shape[2]))

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, i) -> Epoch:
        return Epoch(self.data[i], self.conditions[i], float(self.start_times_s[i]))

    def __iter__(self) -> Iterator[Epoch]:
        for i in range(len(self)):
            yield self[i]

    @property
    def n_channels(self):
        return self.data.shape[1]

    @property
    def n_times(self):
        return self.data.shape[2]

    def subset(self, index):
        index = np.asarray(index, dtype=int).reshape(-1)
        return replace(self, data=self.data[index],
                       conditions=tuple(self.conditions[i] for i in index),
                       start_times_s=self.start_times_s[index])

    def pick(self, channels):
        idx = _channel_indices(self.channel_labels, channels)
        return replace(self, data=self.data[:, idx],
                       channel_labels=tuple(self.channel_labels[i] for i in idx))


def _channel_indices(labels, channels):
    out = []
    for ch in channels:
        if isinstance(ch, (int, np.integer)):
            if not 0 <= ch < len(labels):
                raise IndexError(f"channel index {ch} out of range")
            out.append(int(ch))
        else:
            try:
                out.append(labels.index(ch))
            except ValueError:
                raise KeyError(f"no channel named {ch!r}") from None
    return out


###############################################################################
# Filtering and resampling


@dataclass(frozen=True)
class FilterSpec:
    """Linear-phase FIR band-pass. ``order`` None picks ``4 * rate / low_cut``
    rounded up to an even number (``4 * rate / high_cut`` for a low-pass)."""

    low_cut_hz: float
    high_cut_hz: float
    order: int | None = None
    design: str = "windowed_sinc_hamming"

    def validate(self, sample_rate_hz):
        nyq = sample_rate_hz / 2
        if not (0 <= self.low_cut_hz < self.high_cut_hz < nyq):
            raise ValueError(
                f"invalid band {self.low_cut_hz}-{self.high_cut_hz} Hz for "
                f"sample rate {sample_rate_hz} Hz (need 0 <= low < high < {nyq})"
            )
        if self.design != "windowed_sinc_hamming":
            raise ValueError(f"unsupported filter design {self.design!r}")
        if self.order is not None and (self.order < 2 or self.order % 2):
            raise ValueError("filter order must be a positive even integer")

    def resolved_order(self, sample_rate_hz):
        if self.order is not None:
            return int(self.order)
        edge = self.low_cut_hz if self.low_cut_hz > 0 else self.high_cut_hz
        return 2 * math.ceil(2 * sample_rate_hz / edge)


def design_fir(spec: FilterSpec, sample_rate_hz):
    """Impulse response (length order+1, symmetric) of the band-pass."""
    spec.validate(sample_rate_hz)
    ntaps = spec.resolved_order(sample_rate_hz) + 1
    if spec.low_cut_hz == 0:
        return signal.firwin(ntaps, spec.high_cut_hz, window="hamming", fs=sample_rate_hz)
    return signal.firwin(ntaps, [spec.low_cut_hz, spec.high_cut_hz], pass_zero=False,
                         window="hamming", fs=sample_rate_hz)


def fir_filter(x, taps, axis=-1):
    """Apply a symmetric FIR along ``axis`` with the group delay removed.

    The causal output is shifted left by ``(len(taps)-1)/2`` samples, so the
    result has the input's length and timing.
    """
    x = np.asarray(x, dtype=float)
    taps = np.asarray(taps, dtype=float)
    delay = (len(taps) - 1) // 2
    x = np.moveaxis(x, axis, -1)
    shape = (1,) * (x.ndim - 1) + (len(taps),)
    full = signal.convolve(x, taps.reshape(shape), mode="full")
    out = full[..., delay:delay + x.shape[-1]]
    return np.moveaxis(out, -1, axis)


def bandpass_filter(rec: Recording, spec: FilterSpec, edge="flag") -> Recording:
    """Zero-phase-aligned linear-phase FIR band-pass of every channel.

    ``edge="flag"`` leaves the first and last group-delay samples as computed
    and records their count in ``edge_samples``; ``edge="zero"`` also zeroes
    them.
    """
    if edge not in ("flag", "zero"):
        raise ValueError("edge must be 'flag' or 'zero'")
    taps = design_fir(spec, rec.sample_rate_hz)
    out = fir_filter(rec.samples, taps)
    delay = (len(taps) - 1) // 2
    if edge == "zero" and delay:
        out[:, :delay] = 0.0
        out[:, -delay:] = 0.0
    return replace(rec, samples=out,
                   passband_hz=(float(spec.low_cut_hz), float(spec.high_cut_hz)),
                   edge_samples=min(delay, rec.n_samples))


def downsample(rec: Recording, target_hz, lowpassed=None) -> Recording:
    """Keep every ``rate/target``-th sample.

    Only integer factors are supported. The signal must already be band
    limited below the new Nyquist: either it carries a ``passband_hz`` from
    :func:`bandpass_filter` whose upper edge is below ``target_hz/2``, or the
    caller passes ``lowpassed=True``.
    """
    if not target_hz > 0:
        raise ValueError("target rate must be positive")
    ratio = rec.sample_rate_hz / target_hz
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9 * ratio:
        raise ValueError(
            f"decimation factor {rec.sample_rate_hz}/{target_hz} is not an integer"
        )
    if factor == 1:
        return rec
    if lowpassed is None:
        lowpassed = rec.passband_hz is not None and rec.passband_hz[1] < target_hz / 2
    if not lowpassed:
        raise ValueError(
            f"signal is not known to be band limited below {target_hz / 2} Hz; "
            "filter first or pass lowpassed=True"
        )
    n_out = rec.n_samples // factor
    return replace(rec, samples=rec.samples[:, : n_out * factor : factor],
                   sample_rate_hz=rec.sample_rate_hz / factor,
                   edge_samples=math.ceil(rec.edge_samples / factor))


###############################################################################
# Epoching


def window_layout(n_samples, window_samples, hop):
    """Start indices of full windows; the trailing partial window is dropped."""
    if window_samples > n_samples:
        return np.zeros(0, dtype=int)
    count = (n_samples - window_samples) // hop + 1
    return np.arange(count) * hop


def epoch_windows(rec: Recording, window_s=5.0, overlap_frac=0.5, condition="unknown") -> EpochSet:
    """Cut a recording into sliding windows.

    ``N_t = round(window_s * rate)``, ``hop = round(N_t * (1 - overlap))``
    (1250 and 625 for 5 s at 250 Hz with 50 % overlap).
    """
    if not 0 <= overlap_frac < 1:
        raise ValueError("overlap must lie in [0, 1)")
    n_t = int(round(window_s * rec.sample_rate_hz))
    if n_t < 2:
        raise ValueError("window must span at least 2 samples")
    hop = max(1, int(round(n_t * (1 - overlap_frac))))
    starts = window_layout(rec.n_samples, n_t, hop)
    if len(starts) == 0:
        raise EmptyEpochSetError(
            f"recording of {rec.n_samples} samples is shorter than one window ({n_t})"
        )
    idx = starts[:, None] + np.arange(n_t)
    data = np.transpose(rec.samples[:, idx], (1, 0, 2))
    return EpochSet(data, (condition,) * len(starts), starts / rec.sample_rate_hz,
                    rec.sample_rate_hz, rec.channel_labels, rec.modality,
                    window_samples=n_t, overlap=float(overlap_frac))


def reject_artifacts(es: EpochSet, amp_thresh=100.0):
    """Drop epochs with any ``|sample| > amp_thresh``.

    Returns the kept epochs and the indices of the rejected ones.
    """
    if not amp_thresh > 0:
        raise ValueError("amplitude threshold must be positive")
    bad = np.any(np.abs(es.data) > amp_thresh, axis=(1, 2))
    rejected = np.flatnonzero(bad)
    return es.subset(np.flatnonzero(~bad)), rejected


###############################################################################
# Text formats


def _fmt(x):
    return repr(float(x))


def _header(pairs):
    return "# " + " ".join(f"{k}={v}" for k, v in pairs) + "\n"


def _parse_header(line, path, lineno, required):
    if not line.startswith("#"):
        raise ParseError("expected a '# key=value ...' header", path, lineno)
    out = {}
    for token in line[1:].split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ParseError(f"malformed header token {token!r}", path, lineno)
        out[key] = value
    missing = [k for k in required if k not in out]
    if missing:
        raise ParseError(f"header is missing {', '.join(missing)}", path, lineno)
    return out


def _parse_row(line, n_cols, path, lineno):
    parts = line.split(",")
    if len(parts) != n_cols:
        raise ParseError(f"expected {n_cols} values, found {len(parts)}", path, lineno)
    try:
        row = [float(p) for p in parts]
    except ValueError:
        raise ParseError("could not parse a number", path, lineno) from None
    if not all(math.isfinite(v) for v in row):
        raise ParseError("non-finite value", path, lineno)
    return row


def _common_header(rate, labels, modality):
    for lab in labels:
        if not lab or any(ch in lab for ch in ", =\n#"):
            raise ValueError(f"channel label {lab!r} cannot be serialized")
    return [("rate_hz", _fmt(rate)), ("channels", ",".join(labels)), ("modality", modality)]


def _header_fields(hdr, path):
    try:
        rate = float(hdr["rate_hz"])
    except ValueError:
        raise ParseError("rate_hz is not a number", path, 1) from None
    if not rate > 0:
        raise ParseError("rate_hz must be positive", path, 1)
    labels = tuple(hdr["channels"].split(","))
    modality = hdr["modality"]
    if modality not in MODALITIES:
        raise ParseError(f"unknown modality {modality!r}", path, 1)
    return rate, labels, modality


def save_recording(rec: Recording, path):
    path = Path(path)
    with path.open("w") as fh:
        fh.write(_header(_common_header(rec.sample_rate_hz, rec.channel_labels, rec.modality)))
        for row in rec.samples.T:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _read_lines(path):
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if not lines or not any(l.strip() for l in lines):
        raise ParseError("file is empty", path, 1)
    return path, lines


def load_recording(path) -> Recording:
    path, lines = _read_lines(path)
    hdr = _parse_header(lines[0], path, 1, ("rate_hz", "channels", "modality"))
    rate, labels, modality = _header_fields(hdr, path)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            raise ParseError("unexpected comment line in recording data", path, lineno)
        rows.append(_parse_row(line, len(labels), path, lineno))
    if len(rows) < 2:
        raise ParseError("recording needs at least 2 samples", path, len(lines))
    return Recording(np.array(rows).T, rate, labels, modality)


def save_epochs(es: EpochSet, path):
    path = Path(path)
    pairs = _common_header(es.sample_rate_hz, es.channel_labels, es.modality)
    pairs += [("window_samples", str(es.window_samples)), ("overlap", _fmt(es.overlap))]
    with path.open("w") as fh:
        fh.write(_header(pairs))
        for i, ep in enumerate(es):
            fh.write(f"# epoch {i} condition={ep.condition} start_s={_fmt(ep.start_time_s)}\n")
            for row in ep.data.T:
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def load_epochs(path) -> EpochSet:
    path, lines = _read_lines(path)
    hdr = _parse_header(lines[0], path, 1,
                        ("rate_hz", "channels", "modality", "window_samples", "overlap"))
    rate, labels, modality = _header_fields(hdr, path)
    try:
        n_t = int(hdr["window_samples"])
        overlap = float(hdr["overlap"])
    except ValueError:
        raise ParseError("window_samples/overlap are not numbers", path, 1) from None
    epochs, conditions, starts = [], [], []
    current = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            tokens = line[1:].split()
            if len(tokens) < 2 or tokens[0] != "epoch":
                raise ParseError("expected '# epoch <index> condition=... start_s=...'", path, lineno)
            meta = _parse_header("# " + " ".join(tokens[2:]), path, lineno, ("condition", "start_s"))
            if meta["condition"] not in CONDITIONS:
                raise ParseError(f"unknown condition {meta['condition']!r}", path, lineno)
            if current is not None and len(current) != n_t:
                raise ParseError(f"epoch has {len(current)} samples, expected {n_t}", path, lineno)
            try:
                starts.append(float(meta["start_s"]))
            except ValueError:
                raise ParseError("start_s is not a number", path, lineno) from None
            conditions.append(meta["condition"])
            current = []
            epochs.append(current)
            continue
        if current is None:
            raise ParseError("data before the first epoch marker", path, lineno)
        current.append(_parse_row(line, len(labels), path, lineno))
    if not epochs:
        raise ParseError("no epochs in file", path, len(lines))
    if len(current) != n_t:
        raise ParseError(f"epoch has {len(current)} samples, expected {n_t}", path, len(lines))
    data = np.transpose(np.array(epochs), (0, 2, 1))
    return EpochSet(data, tuple(conditions), np.array(starts), rate, labels, modality,
                    window_samples=n_t, overlap=overlap)


def as_epoch_array(epochs) -> np.ndarray:
    """Accept an EpochSet, a sequence of Epoch or a raw array; return (n, c, t)."""
    if isinstance(epochs, EpochSet):
        return epochs.data
    if isinstance(epochs, Epoch):
        return np.asarray(epochs.data, dtype=float)[None]
    if isinstance(epochs, Sequence) and epochs and isinstance(epochs[0], Epoch):
        return np.stack([np.asarray(e.data, dtype=float) for e in epochs])
    arr = np.asarray(epochs, dtype=float)
    return arr[None] if arr.ndim == 2 else arr
