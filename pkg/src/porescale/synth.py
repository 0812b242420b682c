"""Seeded synthetic nanopore current traces with exact ground-truth
annotations.

Open-pore current is Gaussian noise around a slowly drifting baseline.
Each blockade event drops the current to open_pore_mean * rel_blockade
(2-sample entry/exit ramps), adds a class-specific oscillation, and
re-adds noise. Oscillation and noise are re-centered inside each event
so the annotated mean relative blockade is exact by construction, not
just statistically close.

All randomness flows from SynthConfig.rng_seed through named substreams,
so identical configs give byte-identical traces and annotations.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .seeds import derive_seed
from .wavelets import Signal

Trace = Signal

_NPTR_MAGIC = b"NPTR"
_NPTR_VERSION = 1

# float seconds of dwell below this are never emitted nor retained downstream
MIN_DWELL_US = 80.0
_RAMP_SAMPLES = 2


@dataclass(frozen=True)
class ClassSignature:
    """Per-class event fingerprint: depth distribution plus oscillation."""

    class_id: int
    mean_rel_blockade: float
    blockade_sigma_g: float
    blockade_gamma_l: float
    intra_event_osc_freq_hz: float
    osc_amplitude: float  # fraction of open-pore current
    dwell_scale_us: float

    def __post_init__(self):
        if not 0.0 < self.mean_rel_blockade < 1.0:
            raise ValueError("mean_rel_blockade must lie in (0, 1)")
        if self.blockade_sigma_g < 0 or self.blockade_gamma_l < 0:
            raise ValueError("blockade widths must be >= 0")
        if self.dwell_scale_us <= 0:
            raise ValueError("dwell_scale_us must be positive")


@dataclass(frozen=True)
class ForcedEvent:
    """Deterministic event insertion for tests and demos."""

    class_id: int
    start_sample: int
    dwell_us: float
    rel_blockade: float | None = None  # None -> sample from the class


@dataclass(frozen=True)
class GroundTruthEvent:
    class_id: int
    start_sample: int
    end_sample: int  # exclusive
    true_mean_rel_blockade: float


@dataclass(frozen=True)
class SynthConfig:
    sample_rate_hz: float = 250_000.0
    duration_s: float = 1.0
    open_pore_mean: float = 100.0  # pA
    noise_sigma: float = 1.0  # pA
    baseline_drift_amplitude: float = 0.5  # pA
    drift_period_s: float = 5.0
    n_classes: int = 42
    event_rate_hz: float = 20.0
    class_table: tuple[ClassSignature, ...] | None = None
    rng_seed: int = 0
    min_gap_samples: int = 4096  # 2x the default detector baseline window
    forced_events: tuple[ForcedEvent, ...] = ()

    def __post_init__(self):
        if self.sample_rate_hz <= 0 or self.duration_s <= 0:
            raise ValueError("sample_rate_hz and duration_s must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 1 <= self.n_classes <= 4096:
            raise ValueError("n_classes must lie in [1, 4096]")
        if self.event_rate_hz < 0:
            raise ValueError("event_rate_hz must be >= 0")
        if self.min_gap_samples < 1:
            raise ValueError("min_gap_samples must be >= 1")
        if self.class_table is None:
            object.__setattr__(
                self, "class_table", tuple(auto_class_table(self.n_classes, self.rng_seed))
            )
        if len(self.class_table) != self.n_classes:
            raise ValueError("class_table length must equal n_classes")
        if self.event_rate_hz > 0:
            mean_dwell_s = (MIN_DWELL_US + np.mean([s.dwell_scale_us for s in self.class_table])) * 1e-6
            need = self.min_gap_samples / self.sample_rate_hz + mean_dwell_s
            if 1.0 / self.event_rate_hz < need:
                raise ValueError(
                    f"event_rate_hz={self.event_rate_hz} cannot honor the "
                    f"{self.min_gap_samples}-sample inter-event gap"
                )

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate_hz * self.duration_s))


def auto_class_table(
    n_classes: int,
    seed: int,
    rel_range: tuple[float, float] = (0.30, 0.80),
    freq_range_hz: tuple[float, float] = (2_000.0, 60_000.0),
) -> list[ClassSignature]:
    """Deterministic table of class signatures.

    Mean depths are spread evenly over ``rel_range`` with widths sized so
    adjacent depth histograms partially overlap. Oscillation frequencies are
    log-spaced and assigned through a coprime-stride permutation, so classes
    adjacent in depth land far apart in frequency. Frequencies assume the
    default 250 kHz sampling; rescale ``freq_range_hz`` for other rates.
    """
    if n_classes < 1:
        raise ValueError("n_classes must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, "class-table"))
    lo, hi = rel_range
    spacing = (hi - lo) / n_classes
    centers = lo + (np.arange(n_classes) + 0.5) * spacing

    f_lo, f_hi = freq_range_hz
    if n_classes == 1:
        freqs = np.array([math.sqrt(f_lo * f_hi)])
    else:
        freqs = np.geomspace(f_lo, f_hi, n_classes)
    stride = max(1, round(n_classes * 0.618))
    while math.gcd(stride, n_classes) != 1:
        stride += 1
    perm = (np.arange(n_classes) * stride) % n_classes

    table = []
    for i in range(n_classes):
        sigma_g = 0.35 * spacing * (0.8 + 0.4 * rng.random())
        gamma_l = 0.12 * spacing * (0.8 + 0.4 * rng.random())
        table.append(
            ClassSignature(
                class_id=i,
                mean_rel_blockade=float(centers[i]),
                blockade_sigma_g=float(sigma_g),
                blockade_gamma_l=float(gamma_l),
                intra_event_osc_freq_hz=float(freqs[perm[i]]),
                osc_amplitude=float(0.05 + 0.04 * rng.random()),
                dwell_scale_us=float(120.0 + 200.0 * rng.random()),
            )
        )
    return table


def _event_waveform(
    sig: ClassSignature,
    n_dwell: int,
    open_pore_mean: float,
    noise_sigma: float,
    sample_rate_hz: float,
    rng: np.random.Generator,
    rel_override: float | None = None,
) -> tuple[np.ndarray, float]:
    """In-event current samples plus the exact mean relative blockade.

    The oscillation and the noise are both centered over the event span, so
    the emitted mean equals the deterministic ramp profile mean exactly.
    """
    if rel_override is None:
        rel = (
            sig.mean_rel_blockade
            + sig.blockade_sigma_g * rng.standard_normal()
            + sig.blockade_gamma_l * rng.standard_cauchy()
        )
        rel = float(np.clip(rel, 0.05, 0.95))
    else:
        rel = float(rel_override)

    w = np.ones(n_dwell)
    r = min(_RAMP_SAMPLES, n_dwell // 2)
    if r > 0:
        ramp = np.arange(1, r + 1) / (r + 1.0)
        w[:r] = ramp
        w[n_dwell - r:] = ramp[::-1]
    level = open_pore_mean * (1.0 - w * (1.0 - rel))

    amp = sig.osc_amplitude * open_pore_mean * (0.8 + 0.4 * rng.random())
    phase = 2.0 * math.pi * rng.random()
    t = np.arange(n_dwell) / sample_rate_hz
    osc = amp * np.cos(2.0 * math.pi * sig.intra_event_osc_freq_hz * t + phase)
    osc -= osc.mean()

    noise = noise_sigma * rng.standard_normal(n_dwell)
    if n_dwell > 1:
        noise -= noise.mean()

    true_rel = float(level.mean()) / open_pore_mean
    return level + osc + noise, true_rel


def _draw_dwell_samples(sig: ClassSignature, sample_rate_hz: float, rng: np.random.Generator) -> int:
    # shifted exponential == exponential truncated below at the dwell floor
    dwell_us = MIN_DWELL_US + rng.exponential(sig.dwell_scale_us)
    return max(int(round(dwell_us * 1e-6 * sample_rate_hz)), int(math.ceil(MIN_DWELL_US * 1e-6 * sample_rate_hz)))


def generate_trace(config: SynthConfig) -> tuple[Trace, list[GroundTruthEvent]]:
    """Render the full trace and its exact annotations.

    Forced events are placed first (validated against overlap and the gap
    rule); random events then fill the remaining timeline with inter-event
    gaps of at least ``min_gap_samples``.
    """
    n = config.n_samples
    fs = config.sample_rate_hz
    i0 = config.open_pore_mean
    gap = config.min_gap_samples

    rng_place = np.random.default_rng(derive_seed(config.rng_seed, "placement"))
    rng_event = np.random.default_rng(derive_seed(config.rng_seed, "event-shapes"))
    rng_noise = np.random.default_rng(derive_seed(config.rng_seed, "open-pore-noise"))

    t = np.arange(n) / fs
    x = np.full(n, float(i0))
    if config.baseline_drift_amplitude != 0.0 and config.drift_period_s > 0:
        x += config.baseline_drift_amplitude * np.sin(2.0 * math.pi * t / config.drift_period_s)
    if config.noise_sigma > 0:
        x += config.noise_sigma * rng_noise.standard_normal(n)

    spans: list[tuple[int, int, ClassSignature, float | None]] = []
    for fe in config.forced_events:
        if not 0 <= fe.class_id < config.n_classes:
            raise ValueError("forced event class_id out of range")
        n_dwell = int(round(fe.dwell_us * 1e-6 * fs))
        if n_dwell < 1:
            raise ValueError("forced event dwell shorter than one sample")
        if fe.start_sample < gap or fe.start_sample + n_dwell + gap > n:
            raise ValueError("forced event does not fit inside the gap margins")
        spans.append((fe.start_sample, fe.start_sample + n_dwell, config.class_table[fe.class_id], fe.rel_blockade))
    spans.sort(key=lambda s: s[0])
    for (a0, a1, _, _), (b0, b1, _, _) in zip(spans, spans[1:]):
        if b0 - a1 < gap:
            raise ValueError("forced events closer than min_gap_samples")

    if config.event_rate_hz > 0:
        mean_gap_s = 1.0 / config.event_rate_hz
        forced_spans = list(spans)
        cursor = gap
        while True:
            gap_samples = rng_place.exponential(mean_gap_s) * fs
            if not gap_samples < n:
                # inf for subnormal rates, or a draw past the end: nothing fits
                break
            jitter = int(round(gap_samples))
            start = cursor + max(0, jitter - gap)
            sig = config.class_table[int(rng_place.integers(config.n_classes))]
            n_dwell = _draw_dwell_samples(sig, fs, rng_place)
            end = start + n_dwell
            if end + gap > n:
                break
            clash = next((f for f in forced_spans if start - gap < f[1] and f[0] < end + gap), None)
            if clash is not None:
                cursor = clash[1] + gap
                continue
            spans.append((start, end, sig, None))
            cursor = end + gap

    spans.sort(key=lambda s: s[0])
    truth: list[GroundTruthEvent] = []
    for start, end, sig, rel_override in spans:
        wave, true_rel = _event_waveform(
            sig, end - start, i0, config.noise_sigma, fs, rng_event, rel_override
        )
        x[start:end] = wave
        truth.append(GroundTruthEvent(sig.class_id, start, end, true_rel))

    return Signal(x, fs), truth


def generate_event_bank(
    config: SynthConfig, events_per_class: int, seed: int | None = None
) -> list[tuple[int, np.ndarray]]:
    """In-event relative-current waveforms straight from ground truth.

    Returns (class_id, rel_samples) pairs, class-major, ``events_per_class``
    each. This bypasses detection and histogram labeling so classifier
    experiments can use noiseless labels; the detector path is validated
    separately and exercised end to end by the demo pipeline.
    """
    if events_per_class < 1:
        raise ValueError("events_per_class must be >= 1")
    root = config.rng_seed if seed is None else seed
    out: list[tuple[int, np.ndarray]] = []
    for sig in config.class_table:
        rng = np.random.default_rng(derive_seed(root, "event-bank", sig.class_id))
        for _ in range(events_per_class):
            n_dwell = _draw_dwell_samples(sig, config.sample_rate_hz, rng)
            wave, _ = _event_waveform(
                sig, n_dwell, config.open_pore_mean, config.noise_sigma, config.sample_rate_hz, rng
            )
            out.append((sig.class_id, wave / config.open_pore_mean))
    return out


def write_trace(path, trace: Trace) -> None:
    """NPTR v1: magic, u32 version, f64 rate, u64 count, f32 samples (LE)."""
    samples = trace.samples.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_NPTR_MAGIC)
        fh.write(struct.pack("<I", _NPTR_VERSION))
        fh.write(struct.pack("<d", trace.sample_rate_hz))
        fh.write(struct.pack("<Q", samples.size))
        fh.write(samples.tobytes())


def read_trace(path) -> Trace:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _NPTR_MAGIC:
            raise ValueError(f"not a trace file (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _NPTR_VERSION:
            raise ValueError(f"unsupported trace version {version}")
        (rate,) = struct.unpack("<d", fh.read(8))
        (count,) = struct.unpack("<Q", fh.read(8))
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError("trace file truncated")
        samples = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return Signal(samples, rate)


def write_annotations(path, events: list[GroundTruthEvent]) -> None:
    rows = [
        {
            "class_id": ev.class_id,
            "start_sample": ev.start_sample,
            "end_sample": ev.end_sample,
            "true_mean_rel_blockade": ev.true_mean_rel_blockade,
        }
        for ev in events
    ]
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_annotations(path) -> list[GroundTruthEvent]:
    with open(path) as fh:
        rows = json.load(fh)
    return [
        GroundTruthEvent(
            class_id=int(r["class_id"]),
            start_sample=int(r["start_sample"]),
            end_sample=int(r["end_sample"]),
            true_mean_rel_blockade=float(r["true_mean_rel_blockade"]),
        )
        for r in rows
    ]
