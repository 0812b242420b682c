"""Declarative TOML configuration for the whole pipeline.

Every section maps one-to-one onto a module's config object, values are
validated by those objects' own invariants, and unknown keys anywhere
are rejected outright so typos fail loudly before any work starts. The
effective config (after any seed override) is hashed canonically; that
hash is stamped into artifact sidecars and the run manifest.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .events import DetectorConfig
from .nnet.augment import AugmentParams
from .nnet.train import TrainConfig
from .seeds import derive_seed
from .synth import SynthConfig
from .wavelets import HermitianHat, Morlet, MotherWavelet, ScaleGrid


class ConfigError(ValueError):
    pass


def _table(raw: dict, name: str) -> dict:
    section = raw.pop(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    return dict(section)


def _reject_unknown(section: dict, name: str) -> None:
    if section:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(section)}")


def _pop(section: dict, key: str, default, cast=None):
    value = section.pop(key, default)
    if cast is not None and value is not None:
        try:
            value = cast(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return value


def _pop_pair(section: dict, key: str, default):
    value = section.pop(key, list(default))
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{key!r} must be a 2-element array")
    return (float(value[0]), float(value[1]))


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    output_dir: str
    synth: SynthConfig
    detector: DetectorConfig
    wavelet: MotherWavelet
    grid: ScaleGrid
    n_peaks: int
    n_bins: int | None
    label_policy: str
    split_ratios: tuple[float, float, float]
    out_height: int
    out_width: int
    epsilon: float
    train: TrainConfig
    prune_fractions: tuple[float, ...]
    knn_k: int
    saliency_patch: tuple[int, int]
    saliency_stride: int


def _build_wavelet(section: dict) -> tuple[MotherWavelet, ScaleGrid]:
    kind = _pop(section, "kind", "hermitian_hat", str)
    if kind == "hermitian_hat":
        wavelet: MotherWavelet = HermitianHat(mu=_pop(section, "mu", 5.0, float))
    elif kind == "morlet":
        wavelet = Morlet(omega0=_pop(section, "omega0", 6.0, float))
    else:
        raise ConfigError(f"unknown wavelet kind {kind!r}")
    grid = ScaleGrid(
        a_min=_pop(section, "a_min", 2.0, float),
        a_max=_pop(section, "a_max", 256.0, float),
        n_voices=_pop(section, "n_voices", 8, int),
    )
    _reject_unknown(section, "wavelet")
    return wavelet, grid


def _build_augment(section: dict) -> AugmentParams | None:
    enabled = _pop(section, "enabled", False, bool)
    params = AugmentParams(
        crop_prob=_pop(section, "crop_prob", 1.0, float),
        crop_area_range=_pop_pair(section, "crop_area_range", (0.6, 1.0)),
        hflip_prob=_pop(section, "hflip_prob", 0.5, float),
        vflip_prob=_pop(section, "vflip_prob", 0.5, float),
        erase_prob=_pop(section, "erase_prob", 0.5, float),
        erase_area_range=_pop_pair(section, "erase_area_range", (0.02, 0.2)),
        erase_aspect_range=_pop_pair(section, "erase_aspect_range", (0.3, 1.0 / 0.3)),
    )
    _reject_unknown(section, "train.augment")
    return params if enabled else None


def build_config(raw: dict) -> PipelineConfig:
    raw = dict(raw)
    seed = _pop(raw, "seed", 0, int)
    output_dir = _pop(raw, "output_dir", None, str)
    if not output_dir:
        raise ConfigError("output_dir is required")

    s = _table(raw, "synth")
    try:
        synth = SynthConfig(
            sample_rate_hz=_pop(s, "sample_rate_hz", 250_000.0, float),
            duration_s=_pop(s, "duration_s", 1.0, float),
            open_pore_mean=_pop(s, "open_pore_mean", 100.0, float),
            noise_sigma=_pop(s, "noise_sigma", 1.0, float),
            baseline_drift_amplitude=_pop(s, "baseline_drift_amplitude", 0.5, float),
            drift_period_s=_pop(s, "drift_period_s", 5.0, float),
            n_classes=_pop(s, "n_classes", 42, int),
            event_rate_hz=_pop(s, "event_rate_hz", 20.0, float),
            min_gap_samples=_pop(s, "min_gap_samples", 4096, int),
            rng_seed=derive_seed(seed, "synth"),
        )
    except ValueError as exc:
        raise ConfigError(f"[synth]: {exc}") from exc
    _reject_unknown(s, "synth")

    d = _table(raw, "detector")
    refresh = _pop(d, "sigma_refresh_interval", 0, int)
    try:
        detector = DetectorConfig(
            baseline_window_samples=_pop(d, "baseline_window_samples", 2048, int),
            k_onset=_pop(d, "k_onset", 3.0, float),
            k_outlier=_pop(d, "k_outlier", 4.0, float),
            min_dwell_us=_pop(d, "min_dwell_us", 80.0, float),
            end_hysteresis_fraction=_pop(d, "end_hysteresis_fraction", 0.5, float),
            outlier_reject_deeper=_pop(d, "outlier_reject_deeper", False, bool),
            outlier_reject_shallower=_pop(d, "outlier_reject_shallower", False, bool),
            use_mad_sigma=_pop(d, "use_mad_sigma", True, bool),
            sigma_refresh_interval=refresh or None,
        )
    except ValueError as exc:
        raise ConfigError(f"[detector]: {exc}") from exc
    _reject_unknown(d, "detector")

    try:
        wavelet, grid = _build_wavelet(_table(raw, "wavelet"))
    except ValueError as exc:
        raise ConfigError(f"[wavelet]: {exc}") from exc

    lab = _table(raw, "labeling")
    n_peaks = _pop(lab, "n_peaks", synth.n_classes, int)
    n_bins = _pop(lab, "n_bins", 256, int)
    label_policy = _pop(lab, "policy", "max_density", str)
    ratios = lab.pop("split_ratios", [0.8, 0.1, 0.1])
    if not isinstance(ratios, (list, tuple)) or len(ratios) != 3:
        raise ConfigError("split_ratios must be a 3-element array")
    split_ratios = tuple(float(r) for r in ratios)
    _reject_unknown(lab, "labeling")
    if n_peaks < 1:
        raise ConfigError("n_peaks must be >= 1")
    if label_policy not in ("max_density", "drop"):
        raise ConfigError(f"unknown labeling policy {label_policy!r}")

    sg = _table(raw, "scaleogram")
    out_height = _pop(sg, "height", 64, int)
    out_width = _pop(sg, "width", 64, int)
    epsilon = _pop(sg, "epsilon", 1e-12, float)
    _reject_unknown(sg, "scaleogram")
    if min(out_height, out_width) < 8:
        raise ConfigError("scaleogram sides must be >= 8")

    t = _table(raw, "train")
    augment = _build_augment(_table(t, "augment"))
    minibatch = _pop(t, "minibatch_size", 0, int)
    swa_start = _pop(t, "swa_start_epoch", -1, int)
    try:
        train = TrainConfig(
            lr=_pop(t, "lr", 0.05, float),
            batch_size=_pop(t, "batch_size", 50, int),
            epochs=_pop(t, "epochs", 10, int),
            minibatch_size=minibatch or None,
            momentum=_pop(t, "momentum", 0.9, float),
            weight_decay=_pop(t, "weight_decay", 1e-4, float),
            lr_milestones=tuple(int(m) for m in _pop(t, "lr_milestones", [])),
            lr_factor=_pop(t, "lr_factor", 0.1, float),
            swa_start_epoch=None if swa_start < 0 else swa_start,
            augment_params=augment,
            seed=derive_seed(seed, "train"),
        )
    except ValueError as exc:
        raise ConfigError(f"[train]: {exc}") from exc
    _reject_unknown(t, "train")

    c = _table(raw, "compress")
    fractions = c.pop("prune_fractions", [0.0, 0.1, 0.3, 0.5, 0.7, 0.9])
    if not isinstance(fractions, (list, tuple)):
        raise ConfigError("prune_fractions must be an array")
    prune_fractions = tuple(float(f) for f in fractions)
    if list(prune_fractions) != sorted(prune_fractions):
        raise ConfigError("prune_fractions must be ascending")
    _reject_unknown(c, "compress")

    e = _table(raw, "eval")
    knn_k = _pop(e, "knn_k", 5, int)
    patch = e.pop("saliency_patch", [8, 8])
    if not isinstance(patch, (list, tuple)) or len(patch) != 2:
        raise ConfigError("saliency_patch must be a 2-element array")
    saliency_patch = (int(patch[0]), int(patch[1]))
    saliency_stride = _pop(e, "saliency_stride", 4, int)
    _reject_unknown(e, "eval")
    if knn_k < 1 or knn_k % 2 == 0:
        raise ConfigError("knn_k must be a positive odd integer")

    _reject_unknown(raw, "config")
    return PipelineConfig(
        seed=seed, output_dir=output_dir, synth=synth, detector=detector,
        wavelet=wavelet, grid=grid, n_peaks=n_peaks, n_bins=n_bins or None,
        label_policy=label_policy, split_ratios=split_ratios,
        out_height=out_height, out_width=out_width, epsilon=epsilon,
        train=train, prune_fractions=prune_fractions, knn_k=knn_k,
        saliency_patch=saliency_patch, saliency_stride=saliency_stride,
    )


def config_hash(effective: dict) -> str:
    canonical = json.dumps(effective, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path, seed_override: int | None = None) -> tuple[PipelineConfig, str]:
    """Parses, applies any seed override, validates, and hashes."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed TOML: {exc}") from exc
    if seed_override is not None:
        raw["seed"] = int(seed_override)
    cfg = build_config(raw)
    return cfg, config_hash(raw)
