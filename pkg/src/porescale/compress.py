"""Post-training compression: global L1 pruning and static int8 quantization.

Pruning zeros the floor(f * P) smallest-magnitude entries across all
conv and dense weight tensors jointly (biases untouched), with exact
ties broken by layer index then flat index so results are reproducible.
Quantization stores weights per-tensor symmetric (s = max|w|/127, z = 0)
and activations per-site affine from calibration min/max, then runs
simulated-quantization inference: every tensor crossing a layer boundary
is squeezed through its int8 grid and dequantized back to float.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .evaluate import compute_metrics
from .nnet.layers import Model, layer_from_spec
from .nnet.train import predict_labels

_PRUNABLE_KINDS = ("conv2d", "dense")
_MAGIC = b"NPQ8"
_VERSION = 1


def _prunable_names(model: Model) -> list[str]:
    names = []
    for name, i, key, _ in model.named_params():
        if key == "weight" and model.layers[i].spec()["kind"] in _PRUNABLE_KINDS:
            names.append(name)
    return names


def prune_global_l1(model: Model, fraction: float) -> tuple[Model, dict[str, np.ndarray]]:
    """Returns a pruned copy of the model plus the per-tensor zero masks."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    clone = model.copy()
    names = _prunable_names(clone)
    state = clone.state_dict()
    mags, layer_ids, flat_ids = [], [], []
    for li, name in enumerate(names):
        w = state[name]
        mags.append(np.abs(w).ravel())
        layer_ids.append(np.full(w.size, li, dtype=np.int64))
        flat_ids.append(np.arange(w.size, dtype=np.int64))
    mags = np.concatenate(mags)
    layer_ids = np.concatenate(layer_ids)
    flat_ids = np.concatenate(flat_ids)

    k = math.floor(fraction * mags.size)
    order = np.lexsort((flat_ids, layer_ids, mags))
    chosen = order[:k]

    masks = {name: np.zeros(state[name].size, dtype=bool) for name in names}
    for li, name in enumerate(names):
        sel = chosen[layer_ids[chosen] == li]
        masks[name][flat_ids[sel]] = True
    for name in names:
        w = state[name]
        w.ravel()[masks[name]] = 0.0
        masks[name] = masks[name].reshape(w.shape)
    return clone, masks


def per_layer_sparsity(model: Model) -> dict[str, float]:
    """Zero fraction of each prunable weight tensor."""
    state = model.state_dict()
    return {name: float(np.mean(state[name] == 0.0)) for name in _prunable_names(model)}


def global_sparsity(model: Model) -> float:
    state = model.state_dict()
    names = _prunable_names(model)
    zeros = sum(int(np.sum(state[n] == 0.0)) for n in names)
    total = sum(state[n].size for n in names)
    return zeros / total


@dataclass(frozen=True)
class PruneReport:
    fraction: float
    macro: float
    micro: float
    per_layer_sparsity: dict[str, float]
    global_sparsity: float


def prune_sweep(
    model: Model,
    fractions: list[float],
    images: np.ndarray,
    labels: np.ndarray,
    n_classes: int | None = None,
) -> list[PruneReport]:
    """Each fraction is applied to a fresh copy of the original weights."""
    if list(fractions) != sorted(fractions):
        raise ValueError("fractions must be ascending")
    labels = np.asarray(labels)
    reports = []
    for f in fractions:
        pruned, _ = prune_global_l1(model, f)
        pred = predict_labels(pruned, images)
        metrics = compute_metrics(labels, pred, n_classes)
        reports.append(PruneReport(
            fraction=float(f),
            macro=metrics.macro,
            micro=metrics.micro,
            per_layer_sparsity=per_layer_sparsity(pruned),
            global_sparsity=global_sparsity(pruned),
        ))
    return reports


def write_prune_sweep_csv(path, reports: list[PruneReport]) -> None:
    layer_names = sorted(reports[0].per_layer_sparsity) if reports else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "macro", "micro", "global_sparsity"]
                        + [f"sparsity_{n}" for n in layer_names])
        for r in reports:
            writer.writerow([f"{r.fraction:.4f}", f"{r.macro:.6f}", f"{r.micro:.6f}",
                             f"{r.global_sparsity:.6f}"]
                            + [f"{r.per_layer_sparsity[n]:.6f}" for n in layer_names])


def round_half_away(x: np.ndarray) -> np.ndarray:
    """round(2.5) = 3, round(-2.5) = -3; ties never go to even."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True)
class QuantizedTensor:
    name: str
    shape: tuple[int, ...]
    scale: float
    zero_point: int
    values: np.ndarray  # int8, flat

    def dequantized(self) -> np.ndarray:
        # f64 so the s/2 error bound holds exactly; callers cast as needed
        out = (self.values.astype(np.float64) - self.zero_point) * self.scale
        return out.reshape(self.shape)


def quantize_weight_tensor(name: str, w: np.ndarray) -> QuantizedTensor:
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    scale = peak / 127.0 if peak > 0 else 1.0
    q = np.clip(round_half_away(np.asarray(w, dtype=np.float64) / scale), -127, 127)
    return QuantizedTensor(name, tuple(w.shape), scale, 0, q.astype(np.int8).ravel())


@dataclass(frozen=True)
class ActivationSite:
    """int8 grid for one inter-layer tensor; site 0 is the network input."""

    index: int
    scale: float
    zero_point: int
    lo: float
    hi: float
    degenerate: bool = False

    def fake_quant(self, x: np.ndarray) -> np.ndarray:
        if self.degenerate:
            return np.full_like(x, np.float32(self.lo))
        q = np.clip(round_half_away(x.astype(np.float64) / self.scale) + self.zero_point,
                    -128, 127)
        return ((q - self.zero_point) * self.scale).astype(np.float32)


def _site_from_range(index: int, lo: float, hi: float) -> ActivationSite:
    if hi == lo:
        return ActivationSite(index, 0.0, 0, lo, hi, degenerate=True)
    scale = (hi - lo) / 255.0
    zero_point = int(round_half_away(np.float64(-lo) / scale)) - 128
    return ActivationSite(index, scale, zero_point, lo, hi)


@dataclass
class QuantizedModel:
    architecture: list[dict]
    weights: dict[str, QuantizedTensor]
    biases: dict[str, np.ndarray]
    sites: list[ActivationSite]
    metadata: dict = field(default_factory=dict)

    def dequantized_model(self, dtype=np.float32) -> Model:
        model = Model([layer_from_spec(s) for s in self.architecture], dtype=dtype)
        model.init_params(0)
        state = dict(self.biases)
        state.update({name: qt.dequantized() for name, qt in self.weights.items()})
        model.load_state(state)
        return model

    def forward(self, x: np.ndarray) -> np.ndarray:
        if not hasattr(self, "_exec"):
            self._exec = self.dequantized_model()
        a = self.sites[0].fake_quant(np.asarray(x, dtype=np.float32))
        for i, layer in enumerate(self._exec.layers):
            a = self.sites[i + 1].fake_quant(layer.forward(a))
        return a

    def degenerate_sites(self) -> list[int]:
        return [s.index for s in self.sites if s.degenerate]


def quantize_static(model: Model, calibration_images: np.ndarray,
                    chunk: int = 256) -> QuantizedModel:
    calibration_images = np.asarray(calibration_images, dtype=np.float32)
    if calibration_images.ndim != 3 or len(calibration_images) == 0:
        raise ValueError("calibration set must be a nonempty (N, H, W) stack")

    weights, biases = {}, {}
    for name, i, key, arr in model.named_params():
        if key == "weight" and model.layers[i].spec()["kind"] in _PRUNABLE_KINDS:
            weights[name] = quantize_weight_tensor(name, arr)
        else:
            biases[name] = np.asarray(arr, dtype=np.float32).copy()

    qm = QuantizedModel(model.architecture(), weights, biases, sites=[])
    calib = qm.dequantized_model()

    n_sites = len(calib.layers) + 1
    lows = np.full(n_sites, np.inf)
    highs = np.full(n_sites, -np.inf)
    for lo_idx in range(0, len(calibration_images), chunk):
        a = calibration_images[lo_idx:lo_idx + chunk, None, :, :]
        lows[0] = min(lows[0], float(a.min()))
        highs[0] = max(highs[0], float(a.max()))
        for i, layer in enumerate(calib.layers):
            a = layer.forward(a)
            lows[i + 1] = min(lows[i + 1], float(a.min()))
            highs[i + 1] = max(highs[i + 1], float(a.max()))
    qm.sites = [_site_from_range(i, lows[i], highs[i]) for i in range(n_sites)]
    return qm


def save_quantized(path, qmodel: QuantizedModel) -> None:
    entries, payload = [], []
    offset = 0
    for name in sorted(qmodel.weights):
        qt = qmodel.weights[name]
        data = qt.values.tobytes()
        entries.append({"name": name, "shape": list(qt.shape), "offset": offset,
                        "scale": qt.scale, "zero_point": qt.zero_point})
        payload.append(data)
        offset += len(data)
    bias_entries = []
    for name in sorted(qmodel.biases):
        data = np.ascontiguousarray(qmodel.biases[name], dtype="<f4").tobytes()
        bias_entries.append({"name": name, "shape": list(qmodel.biases[name].shape),
                             "offset": offset})
        payload.append(data)
        offset += len(data)
    header = {
        "architecture": qmodel.architecture,
        "weights": entries,
        "biases": bias_entries,
        "sites": [{"index": s.index, "scale": s.scale, "zero_point": s.zero_point,
                   "lo": s.lo, "hi": s.hi, "degenerate": s.degenerate}
                  for s in qmodel.sites],
        "metadata": qmodel.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)
        for data in payload:
            fh.write(data)


def load_quantized(path) -> QuantizedModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad quantized checkpoint magic {magic!r}")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise ValueError(f"unsupported quantized checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        body = fh.read()

    weights = {}
    for e in header["weights"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start, end = e["offset"], e["offset"] + count
        if end > len(body):
            raise ValueError("quantized payload truncated")
        weights[e["name"]] = QuantizedTensor(
            e["name"], tuple(e["shape"]), e["scale"], e["zero_point"],
            np.frombuffer(body[start:end], dtype=np.int8).copy())
    biases = {}
    for e in header["biases"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start, end = e["offset"], e["offset"] + 4 * count
        if end > len(body):
            raise ValueError("quantized payload truncated")
        biases[e["name"]] = np.frombuffer(body[start:end], dtype="<f4").reshape(e["shape"]).copy()
    sites = [ActivationSite(s["index"], s["scale"], s["zero_point"], s["lo"], s["hi"],
                            s["degenerate"]) for s in header["sites"]]
    return QuantizedModel(header["architecture"], weights, biases, sites, header["metadata"])


def weight_payload_bytes(qmodel: QuantizedModel) -> tuple[int, int]:
    """(float32 bytes, int8 bytes) over the quantized weight tensors."""
    n = sum(qt.values.size for qt in qmodel.weights.values())
    return 4 * n, n


def file_size_ratio(f32_path, quantized_path) -> float:
    return os.path.getsize(f32_path) / os.path.getsize(quantized_path)
