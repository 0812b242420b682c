"""Single-pass blockade-event detection with a trailing open-pore baseline.

The detector classifies each sample as open-pore or in-event. Baseline
mean is a running sum over the last ``baseline_window_samples`` accepted
(open-pore) samples; sigma is a MAD estimate refreshed every quarter
window of accepted samples. An event opens when the current drops below
mean - k_onset*sigma and closes when it rises back above
mean - end_hysteresis_fraction*k_onset*sigma, with mean and sigma frozen
at onset. Retained events are normalized by the average of the window
means immediately before and after the event, which forces the
post-event window to fill before an event is emitted.

All state transitions are keyed to accepted-sample counts, never to
chunk boundaries, so feeding the trace in arbitrary chunk sizes yields
identical output to one-shot processing.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .synth import GroundTruthEvent
from .wavelets import Signal

_NPEV_MAGIC = b"NPEV"
_NPEV_VERSION = 1

_MAD_TO_SIGMA = 1.4826022185056018  # 1/Phi^-1(3/4)


@dataclass(frozen=True)
class DetectorConfig:
    baseline_window_samples: int = 2048
    k_onset: float = 3.0
    k_outlier: float = 4.0
    min_dwell_us: float = 80.0
    end_hysteresis_fraction: float = 0.5
    # Which side of the 4 sigma band counts as an outlier is deployment
    # specific, so both rejections exist and both default off (keep all).
    outlier_reject_deeper: bool = False
    outlier_reject_shallower: bool = False
    use_mad_sigma: bool = True
    sigma_refresh_interval: int | None = None  # accepted samples; None -> window/4

    def __post_init__(self):
        if self.baseline_window_samples < 16:
            raise ValueError("baseline_window_samples must be >= 16")
        if not (self.k_outlier >= self.k_onset > 0):
            raise ValueError("require k_outlier >= k_onset > 0")
        if self.min_dwell_us < 0:
            raise ValueError("min_dwell_us must be >= 0")
        if not 0.0 <= self.end_hysteresis_fraction <= 1.0:
            raise ValueError("end_hysteresis_fraction must lie in [0, 1]")
        if self.outlier_reject_deeper and self.outlier_reject_shallower:
            raise ValueError("the two outlier rejections are mutually exclusive")
        if self.sigma_refresh_interval is not None and self.sigma_refresh_interval < 1:
            raise ValueError("sigma_refresh_interval must be >= 1")


@dataclass(frozen=True)
class Event:
    start_sample: int
    end_sample: int  # exclusive
    open_pore_mean: float
    dwell_us: float
    raw_samples: np.ndarray
    rel_samples: np.ndarray
    mean_rel_blockade: float


class EventDetector:
    """Streaming detector; feed chunks with :meth:`process`, then :meth:`finish`."""

    def __init__(self, config: DetectorConfig, sample_rate_hz: float):
        if sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        self.config = config
        self.sample_rate_hz = sample_rate_hz
        w = config.baseline_window_samples
        self._w = w
        self._refresh = config.sigma_refresh_interval or max(1, w // 4)
        self._ring = [0.0] * w
        self._ring_pos = 0
        self._ring_sum = 0.0
        self._ring_count = 0
        self._accepted = 0
        self._sigma: float | None = None
        self._n_seen = 0
        self._in_event = False
        self._ev_start = 0
        self._ev_samples: list[float] = []
        self._onset_mean = 0.0
        self._onset_sigma = 0.0
        self._close_level = 0.0
        # candidates waiting for their post-event window:
        # [start, end, samples, pre_mean, post_sum, post_count]
        self._pending: list[list] = []

    def _estimate_sigma(self) -> float:
        arr = np.asarray(self._ring)
        if self.config.use_mad_sigma:
            med = np.median(arr)
            return float(_MAD_TO_SIGMA * np.median(np.abs(arr - med)))
        return float(arr.std())

    def _finalize(self, entry: list, post_mean: float | None) -> Event | None:
        start, end, samples, pre_mean = entry[0], entry[1], entry[2], entry[3]
        open_pore = pre_mean if post_mean is None else 0.5 * (pre_mean + post_mean)
        if open_pore <= 0:
            return None
        raw = np.array(samples, dtype=np.float64)
        rel = raw / open_pore
        mean_rel = float(rel.mean())
        if not 0.0 < mean_rel < 1.0:
            return None
        dwell_us = (end - start) / self.sample_rate_hz * 1e6
        return Event(start, end, open_pore, dwell_us, raw, rel, mean_rel)

    def process(self, chunk) -> list[Event]:
        arr = np.asarray(chunk, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("chunk must be 1-D")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("non-finite samples in chunk")

        cfg = self.config
        out: list[Event] = []
        w = self._w
        refresh = self._refresh
        ring = self._ring
        pos = self._ring_pos
        rsum = self._ring_sum
        cnt = self._ring_count
        acc = self._accepted
        sigma = self._sigma
        idx = self._n_seen
        in_event = self._in_event
        ev_start = self._ev_start
        ev_samples = self._ev_samples
        onset_mean = self._onset_mean
        onset_sigma = self._onset_sigma
        close_level = self._close_level
        pending = self._pending
        k_onset = cfg.k_onset
        fs = self.sample_rate_hz

        for x in arr.tolist():
            if in_event:
                if x <= close_level:
                    ev_samples.append(x)
                    idx += 1
                    continue
                # close: x itself is open pore again
                in_event = False
                dwell_us = (idx - ev_start) / fs * 1e6
                if dwell_us >= cfg.min_dwell_us:
                    mean_raw = sum(ev_samples) / len(ev_samples)
                    deep_thr = onset_mean - cfg.k_outlier * onset_sigma
                    drop = (cfg.outlier_reject_deeper and mean_raw < deep_thr) or (
                        cfg.outlier_reject_shallower and mean_raw >= deep_thr
                    )
                    if not drop:
                        pending.append([ev_start, idx, ev_samples, onset_mean, 0.0, 0])
                ev_samples = []
            elif sigma is not None and x < rsum / w - k_onset * sigma:
                in_event = True
                ev_start = idx
                ev_samples = [x]
                onset_mean = rsum / w
                onset_sigma = sigma
                close_level = onset_mean - cfg.end_hysteresis_fraction * k_onset * sigma
                idx += 1
                continue

            # accept x as open pore
            if cnt == w:
                old = ring[pos]
                ring[pos] = x
                rsum += x - old
            else:
                ring[pos] = x
                rsum += x
                cnt += 1
            pos += 1
            if pos == w:
                pos = 0
            acc += 1
            if pending:
                for p in pending:
                    p[4] += x
                    p[5] += 1
                while pending and pending[0][5] == w:
                    entry = pending.pop(0)
                    ev = self._finalize(entry, entry[4] / w)
                    if ev is not None:
                        out.append(ev)
            if cnt == w and (sigma is None or acc % refresh == 0):
                sigma = self._estimate_sigma()
            idx += 1

        self._ring_pos = pos
        self._ring_sum = rsum
        self._ring_count = cnt
        self._accepted = acc
        self._sigma = sigma
        self._n_seen = idx
        self._in_event = in_event
        self._ev_start = ev_start
        self._ev_samples = ev_samples
        self._onset_mean = onset_mean
        self._onset_sigma = onset_sigma
        self._close_level = close_level
        return out

    def finish(self) -> list[Event]:
        """Flush candidates whose post window the trace cut short.

        A partial post window falls back to however many open-pore samples
        followed the event, or to the pre-event mean alone if none did. An
        event still open at end of trace is discarded as truncated.
        """
        out = []
        for entry in self._pending:
            post = entry[4] / entry[5] if entry[5] > 0 else None
            ev = self._finalize(entry, post)
            if ev is not None:
                out.append(ev)
        self._pending = []
        self._in_event = False
        self._ev_samples = []
        return out


def detect_events(trace: Signal, config: DetectorConfig | None = None) -> list[Event]:
    """One-shot detection over a whole trace."""
    config = config or DetectorConfig()
    if len(trace) <= config.baseline_window_samples:
        raise ValueError("trace must be longer than the baseline window")
    det = EventDetector(config, trace.sample_rate_hz)
    events = det.process(trace.samples)
    events.extend(det.finish())
    return events


def _iou(a0: int, a1: int, b0: int, b1: int) -> float:
    inter = min(a1, b1) - max(a0, b0)
    if inter <= 0:
        return 0.0
    return inter / ((a1 - a0) + (b1 - b0) - inter)


def match_against_truth(
    detected: list[Event],
    truth: list[GroundTruthEvent],
    iou_threshold: float = 0.5,
) -> tuple[float, float]:
    """Greedy one-to-one interval matching; returns (precision, recall).

    Pairs are ranked by IoU and matched greedily. Convention for empty
    inputs: precision is 1.0 when nothing was detected, recall is 1.0 when
    there was nothing to find.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    pairs = []
    ti = 0
    for di, d in enumerate(detected):
        while ti < len(truth) and truth[ti].end_sample <= d.start_sample:
            ti += 1
        tj = ti
        while tj < len(truth) and truth[tj].start_sample < d.end_sample:
            iou = _iou(d.start_sample, d.end_sample, truth[tj].start_sample, truth[tj].end_sample)
            if iou >= iou_threshold:
                pairs.append((iou, di, tj))
            tj += 1
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_d: set[int] = set()
    used_t: set[int] = set()
    matched = 0
    for _, di, tj in pairs:
        if di in used_d or tj in used_t:
            continue
        used_d.add(di)
        used_t.add(tj)
        matched += 1
    precision = matched / len(detected) if detected else 1.0
    recall = matched / len(truth) if truth else 1.0
    return precision, recall


def write_events(jsonl_path, npev_path, events: list[Event]) -> None:
    """JSON-lines metadata plus an NPEV companion holding rel_samples.

    NPEV layout: magic, u32 version, then per event u64 id, u64 n and
    n little-endian f32 relative samples, in file order until EOF.
    """
    with open(jsonl_path, "w") as jf, open(npev_path, "wb") as bf:
        bf.write(_NPEV_MAGIC)
        bf.write(struct.pack("<I", _NPEV_VERSION))
        for i, ev in enumerate(events):
            row = {
                "id": i,
                "start_sample": ev.start_sample,
                "end_sample": ev.end_sample,
                "open_pore_mean": ev.open_pore_mean,
                "dwell_us": ev.dwell_us,
                "mean_rel_blockade": ev.mean_rel_blockade,
            }
            jf.write(json.dumps(row, sort_keys=True) + "\n")
            rel = ev.rel_samples.astype("<f4")
            bf.write(struct.pack("<QQ", i, rel.size))
            bf.write(rel.tobytes())


def read_events(jsonl_path, npev_path) -> list[Event]:
    rel_by_id: dict[int, np.ndarray] = {}
    with open(npev_path, "rb") as bf:
        if bf.read(4) != _NPEV_MAGIC:
            raise ValueError("not an NPEV file")
        (version,) = struct.unpack("<I", bf.read(4))
        if version != _NPEV_VERSION:
            raise ValueError(f"unsupported NPEV version {version}")
        while True:
            head = bf.read(16)
            if not head:
                break
            if len(head) != 16:
                raise ValueError("NPEV file truncated")
            ev_id, n = struct.unpack("<QQ", head)
            payload = bf.read(4 * n)
            if len(payload) != 4 * n:
                raise ValueError("NPEV file truncated")
            rel_by_id[ev_id] = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    events = []
    with open(jsonl_path) as jf:
        for line in jf:
            if not line.strip():
                continue
            row = json.loads(line)
            rel = rel_by_id[int(row["id"])]
            open_pore = float(row["open_pore_mean"])
            events.append(
                Event(
                    start_sample=int(row["start_sample"]),
                    end_sample=int(row["end_sample"]),
                    open_pore_mean=open_pore,
                    dwell_us=float(row["dwell_us"]),
                    raw_samples=rel * open_pore,
                    rel_samples=rel,
                    mean_rel_blockade=float(row["mean_rel_blockade"]),
                )
            )
    return events
