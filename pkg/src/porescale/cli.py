"""Command-line pipeline driver.

Stages read and write a fixed artifact layout under the configured
output directory, every artifact gets a sidecar stamped with the config
hash, and `pipeline` chains all stages then emits a run manifest with a
content hash per artifact. Heavy imports happen inside main() so the
NP_THREADS cap can be applied to the BLAS pools before numpy loads.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

_FORMAT_VERSION = 1


def _apply_thread_cap() -> None:
    threads = os.environ.get("NP_THREADS")
    if not threads:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, threads)


class _Paths:
    """Canonical artifact layout inside the output directory."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        d = self.out_dir
        self.trace = d / "trace.nptr"
        self.annotations = d / "annotations.json"
        self.events_jsonl = d / "events.jsonl"
        self.events_npev = d / "events.npev"
        self.peaks = d / "voigt_peaks.json"
        self.manifest = d / "label_manifest.jsonl"
        self.scaleogram_dir = d / "scaleograms"
        self.stats = d / "pixel_stats.json"
        self.model = d / "model.npck"
        self.train_log = d / "train_log.csv"
        self.metrics = d / "metrics.csv"
        self.confusion_csv = d / "confusion.csv"
        self.confusion_pgm = d / "confusion.pgm"
        self.prune_csv = d / "prune_sweep.csv"
        self.quantized = d / "model.npq8"
        self.quant_report = d / "quantize_report.json"
        self.saliency_pgm = d / "saliency.pgm"
        self.saliency_json = d / "saliency.json"
        self.run_manifest = d / "run_manifest.json"

    def scaleogram_file(self, event_id: int) -> Path:
        return self.scaleogram_dir / f"sg_{event_id:06d}.npsg"


def _write_sidecar(artifact: Path, stage: str, cfg_hash: str) -> None:
    meta = {"config_hash": cfg_hash, "format_version": _FORMAT_VERSION, "stage": stage}
    side = artifact.parent / (artifact.name + ".meta.json")
    side.write_text(json.dumps(meta, sort_keys=True) + "\n")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{stage}: missing input artifact {path}")
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def cmd_synth(cfg, cfg_hash: str, paths: _Paths) -> dict:
    from .synth import generate_trace, write_annotations, write_trace

    trace, truth = generate_trace(cfg.synth)
    paths.out_dir.mkdir(parents=True, exist_ok=True)
    write_trace(paths.trace, trace)
    write_annotations(paths.annotations, truth)
    _write_sidecar(paths.trace, "synth", cfg_hash)
    _write_sidecar(paths.annotations, "synth", cfg_hash)
    return {"trace": str(paths.trace), "n_samples": len(trace), "n_events": len(truth)}


def cmd_detect(cfg, cfg_hash: str, paths: _Paths, trace_path=None) -> dict:
    from .events import detect_events, write_events
    from .synth import read_trace

    source = Path(trace_path) if trace_path else _require(paths.trace, "detect")
    trace = read_trace(source)
    events = detect_events(trace, cfg.detector)
    paths.out_dir.mkdir(parents=True, exist_ok=True)
    write_events(paths.events_jsonl, paths.events_npev, events)
    _write_sidecar(paths.events_jsonl, "detect", cfg_hash)
    _write_sidecar(paths.events_npev, "detect", cfg_hash)
    return {"n_events": len(events), "events": str(paths.events_jsonl)}


def cmd_label(cfg, cfg_hash: str, paths: _Paths) -> dict:
    from .events import read_events
    from .labeling import build_histogram, fit_voigt_peaks, label_events, label_summary

    events = read_events(_require(paths.events_jsonl, "label"),
                         _require(paths.events_npev, "label"))
    hist = build_histogram(events, cfg.n_bins)
    fit = fit_voigt_peaks(hist, cfg.n_peaks)
    labeled = label_events(events, fit.peaks, policy=cfg.label_policy)

    peak_rows = [{"center": p.center, "sigma_g": p.sigma_g, "gamma_l": p.gamma_l,
                  "amplitude": p.amplitude, "fwhm": p.fwhm} for p in fit.peaks]
    paths.peaks.write_text(json.dumps(
        {"peaks": peak_rows, "residual_rel": fit.residual_rel,
         "converged": fit.converged}, sort_keys=True) + "\n")
    with open(paths.manifest, "w") as fh:
        for i, le in enumerate(labeled):
            fh.write(json.dumps({
                "event_id": i, "source_trace": paths.trace.name,
                "start_sample": le.event.start_sample,
                "end_sample": le.event.end_sample,
                "label": le.label, "split": None,
            }, sort_keys=True) + "\n")
    _write_sidecar(paths.peaks, "label", cfg_hash)
    _write_sidecar(paths.manifest, "label", cfg_hash)
    summary = dict(label_summary(labeled))
    summary["residual_rel"] = fit.residual_rel
    return summary


def cmd_split(cfg, cfg_hash: str, paths: _Paths) -> dict:
    from .labeling import read_label_manifest, split_labels
    from .seeds import derive_seed

    rows = read_label_manifest(_require(paths.manifest, "split"))
    split = split_labels([r["label"] for r in rows], cfg.split_ratios,
                         seed=derive_seed(cfg.seed, "split"))
    with open(paths.manifest, "w") as fh:
        for i, row in enumerate(rows):
            row = dict(row)
            row["split"] = split.assignment.get(i)
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    _write_sidecar(paths.manifest, "split", cfg_hash)
    counts = {name: len(split.indices(name)) for name in ("train", "validation", "test")}
    return counts


def cmd_scaleogram(cfg, cfg_hash: str, paths: _Paths) -> dict:
    from .events import read_events
    from .scaleogram import event_to_scaleogram, write_scaleogram

    events = read_events(_require(paths.events_jsonl, "scaleogram"),
                         _require(paths.events_npev, "scaleogram"))
    paths.scaleogram_dir.mkdir(parents=True, exist_ok=True)
    for i, ev in enumerate(events):
        sg = event_to_scaleogram(ev, cfg.wavelet, cfg.grid,
                                 out_size=(cfg.out_height, cfg.out_width),
                                 epsilon=cfg.epsilon, event_id=i)
        write_scaleogram(paths.scaleogram_file(i), sg)
    _write_sidecar(paths.scaleogram_dir, "scaleogram", cfg_hash)
    return {"n_scaleograms": len(events), "directory": str(paths.scaleogram_dir)}


def _load_split_arrays(cfg, paths: _Paths, wanted=("train", "validation", "test")):
    """Standardized image stacks and labels per split; stats from train only."""
    import numpy as np

    from .labeling import read_label_manifest
    from .scaleogram import compute_stats, read_scaleogram, read_stats, standardize, write_stats

    rows = read_label_manifest(_require(paths.manifest, "dataset"))
    ids = {name: [] for name in ("train", "validation", "test")}
    labels = {name: [] for name in ("train", "validation", "test")}
    for row in rows:
        if row["split"] in ids:
            ids[row["split"]].append(row["event_id"])
            labels[row["split"]].append(row["label"])
    sgs = {}
    for name in wanted:
        for event_id in ids[name]:
            sgs[event_id] = read_scaleogram(
                _require(paths.scaleogram_file(event_id), "dataset"))

    if paths.stats.exists():
        stats = read_stats(paths.stats)
    else:
        if "train" not in wanted:
            raise FileNotFoundError(f"dataset: missing input artifact {paths.stats}")
        stats = compute_stats([sgs[i] for i in ids["train"]])
        write_stats(paths.stats, stats)

    out = {}
    for name in wanted:
        if ids[name]:
            imgs = np.stack([standardize(sgs[i], stats).pixels for i in ids[name]])
        else:
            imgs = np.zeros((0, cfg.out_height, cfg.out_width), dtype=np.float32)
        out[name] = (imgs, np.asarray(labels[name], dtype=np.int64), ids[name])
    return out, stats


def cmd_train(cfg, cfg_hash: str, paths: _Paths) -> dict:
    from .nnet import porenet_s, save_checkpoint
    from .nnet.train import train, write_training_log
    from .scaleogram import grid_signature
    from .seeds import derive_seed

    paths.stats.unlink(missing_ok=True)  # recompute from the current split
    data, stats = _load_split_arrays(cfg, paths, wanted=("train", "validation"))
    x_train, y_train, _ = data["train"]
    x_val, y_val, _ = data["validation"]
    model = porenet_s(cfg.n_peaks, in_hw=(cfg.out_height, cfg.out_width))
    model.init_params(derive_seed(cfg.seed, "init"))
    result = train(model, x_train, y_train, x_val, y_val, cfg.train)
    best = result.best_model()
    save_checkpoint(paths.model, best, metadata={
        "n_classes": cfg.n_peaks,
        "grid_id": grid_signature(cfg.wavelet, cfg.grid),
        "input_height": cfg.out_height,
        "input_width": cfg.out_width,
        "pixel_mean": stats.mean,
        "pixel_std": stats.std,
    })
    write_training_log(paths.train_log, result.history)
    _write_sidecar(paths.model, "train", cfg_hash)
    _write_sidecar(paths.train_log, "train", cfg_hash)
    _write_sidecar(paths.stats, "train", cfg_hash)
    last = result.history[-1]
    return {"epochs": len(result.history), "train_loss": last.train_loss,
            "val_macro": last.val_macro, "val_micro": last.val_micro,
            "swa": result.swa_model is not None}


def cmd_eval(cfg, cfg_hash: str, paths: _Paths) -> dict:
    import csv

    from .evaluate import (REFERENCE_RESNET18, compute_metrics, confusion,
                           write_confusion_csv, write_confusion_pgm, write_metrics_csv)
    from .nnet import knn_predict, load_checkpoint, pool_features
    from .nnet.train import predict_labels

    model, meta = load_checkpoint(_require(paths.model, "eval"))
    data, _ = _load_split_arrays(cfg, paths)
    x_test, y_test, _ = data["test"]
    x_train, y_train, _ = data["train"]
    if not len(x_test):
        raise ValueError("eval: test split is empty")
    pred = predict_labels(model, x_test)
    report = compute_metrics(y_test, pred, n_classes=meta["n_classes"])
    write_metrics_csv(paths.metrics, report, reference=REFERENCE_RESNET18)
    knn_pred = knn_predict(pool_features(x_train), y_train, pool_features(x_test), cfg.knn_k)
    knn = compute_metrics(y_test, knn_pred, n_classes=meta["n_classes"])
    with open(paths.metrics, "a", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["knn_macro", f"{knn.macro:.6f}"])
        writer.writerow(["knn_micro", f"{knn.micro:.6f}"])
    cm = confusion(y_test, pred, meta["n_classes"])
    write_confusion_csv(paths.confusion_csv, cm)
    write_confusion_pgm(paths.confusion_pgm, cm)
    for artifact in (paths.metrics, paths.confusion_csv, paths.confusion_pgm):
        _write_sidecar(artifact, "eval", cfg_hash)
    return {"macro": report.macro, "micro": report.micro, "top10": report.top10,
            "knn_macro": knn.macro}


def cmd_prune(cfg, cfg_hash: str, paths: _Paths) -> dict:
    from .compress import prune_sweep, write_prune_sweep_csv
    from .nnet import load_checkpoint

    model, meta = load_checkpoint(_require(paths.model, "prune"))
    data, _ = _load_split_arrays(cfg, paths, wanted=("test",))
    x_test, y_test, _ = data["test"]
    reports = prune_sweep(model, list(cfg.prune_fractions), x_test, y_test,
                          n_classes=meta["n_classes"])
    write_prune_sweep_csv(paths.prune_csv, reports)
    _write_sidecar(paths.prune_csv, "prune", cfg_hash)
    return {"fractions": [r.fraction for r in reports],
            "macro": [r.macro for r in reports]}


def cmd_quantize(cfg, cfg_hash: str, paths: _Paths) -> dict:
    from .compress import (file_size_ratio, quantize_static, save_quantized,
                           weight_payload_bytes)
    from .nnet import load_checkpoint

    model, _ = load_checkpoint(_require(paths.model, "quantize"))
    data, _ = _load_split_arrays(cfg, paths, wanted=("validation",))
    x_val, _, _ = data["validation"]
    if not len(x_val):
        raise ValueError("quantize: validation split is empty")
    qm = quantize_static(model, x_val)
    save_quantized(paths.quantized, qm)
    f32_bytes, int8_bytes = weight_payload_bytes(qm)
    report = {
        "file_ratio": file_size_ratio(paths.model, paths.quantized),
        "weight_payload_ratio": f32_bytes / int8_bytes,
        "degenerate_sites": qm.degenerate_sites(),
    }
    paths.quant_report.write_text(json.dumps(report, sort_keys=True) + "\n")
    _write_sidecar(paths.quantized, "quantize", cfg_hash)
    _write_sidecar(paths.quant_report, "quantize", cfg_hash)
    return report


def _open_pore_fill(cfg, stats) -> float:
    """Standardized mean pixel of scaleograms cut from an event-free trace."""
    import numpy as np
    from dataclasses import replace

    from .scaleogram import compute_stats, scaleogram_from_rel, standardize
    from .seeds import derive_seed
    from .synth import generate_trace

    slice_len, n_slices = 128, 16
    quiet = replace(cfg.synth, event_rate_hz=0.0,
                    duration_s=slice_len * n_slices / cfg.synth.sample_rate_hz,
                    rng_seed=derive_seed(cfg.seed, "open-pore-fill"))
    trace, _ = generate_trace(quiet)
    rel = trace.samples / float(trace.samples.mean())
    values = []
    for i in range(n_slices):
        sg = scaleogram_from_rel(rel[i * slice_len:(i + 1) * slice_len],
                                 cfg.wavelet, cfg.grid,
                                 out_size=(cfg.out_height, cfg.out_width),
                                 epsilon=cfg.epsilon)
        values.append(float(standardize(sg, stats).pixels.mean()))
    return float(np.mean(values))


def cmd_saliency(cfg, cfg_hash: str, paths: _Paths, event_id: int | None = None) -> dict:
    import numpy as np

    from .evaluate import occlusion_saliency, write_saliency_pgm
    from .nnet import load_checkpoint

    model, _ = load_checkpoint(_require(paths.model, "saliency"))
    data, stats = _load_split_arrays(cfg, paths, wanted=("test",))
    x_test, y_test, test_ids = data["test"]
    if not len(x_test):
        raise ValueError("saliency: test split is empty")
    if event_id is None:
        pos = 0
    else:
        if event_id not in test_ids:
            raise ValueError(f"saliency: event {event_id} is not in the test split")
        pos = test_ids.index(event_id)
    fill = _open_pore_fill(cfg, stats)
    heat = occlusion_saliency(model, x_test[pos], int(y_test[pos]),
                              patch=cfg.saliency_patch, stride=cfg.saliency_stride,
                              fill_value=fill)
    write_saliency_pgm(paths.saliency_pgm, heat)
    peak = np.unravel_index(int(np.argmax(heat)), heat.shape)
    summary = {
        "event_id": test_ids[pos], "true_class": int(y_test[pos]),
        "fill_value": fill, "max_drop": float(heat.max()),
        "peak_row": int(peak[0]), "peak_col": int(peak[1]),
        "patch": list(cfg.saliency_patch), "stride": cfg.saliency_stride,
    }
    paths.saliency_json.write_text(json.dumps(summary, sort_keys=True) + "\n")
    _write_sidecar(paths.saliency_pgm, "saliency", cfg_hash)
    _write_sidecar(paths.saliency_json, "saliency", cfg_hash)
    return summary


def cmd_pipeline(cfg, cfg_hash: str, paths: _Paths) -> dict:
    import numpy as np
    import scipy

    from . import __version__

    stage_summaries = {}
    stage_summaries["synth"] = cmd_synth(cfg, cfg_hash, paths)
    stage_summaries["detect"] = cmd_detect(cfg, cfg_hash, paths)
    stage_summaries["label"] = cmd_label(cfg, cfg_hash, paths)
    stage_summaries["scaleogram"] = cmd_scaleogram(cfg, cfg_hash, paths)
    stage_summaries["split"] = cmd_split(cfg, cfg_hash, paths)
    stage_summaries["train"] = cmd_train(cfg, cfg_hash, paths)
    stage_summaries["eval"] = cmd_eval(cfg, cfg_hash, paths)
    stage_summaries["prune"] = cmd_prune(cfg, cfg_hash, paths)
    stage_summaries["quantize"] = cmd_quantize(cfg, cfg_hash, paths)
    stage_summaries["saliency"] = cmd_saliency(cfg, cfg_hash, paths)

    artifacts = {}
    for path in sorted(paths.out_dir.rglob("*")):
        if path.is_file() and path != paths.run_manifest:
            artifacts[str(path.relative_to(paths.out_dir))] = _sha256(path)
    manifest = {
        "config_hash": cfg_hash,
        "seed": cfg.seed,
        "versions": {
            "porescale": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": "%d.%d.%d" % sys.version_info[:3],
        },
        "artifacts": artifacts,
    }
    paths.run_manifest.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return {"run_manifest": str(paths.run_manifest), "n_artifacts": len(artifacts),
            "eval": stage_summaries["eval"]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="porescale",
        description="Nanopore blockade classification pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = ("synth", "detect", "label", "scaleogram", "split", "train",
                "eval", "prune", "quantize", "saliency", "pipeline")
    for name in commands:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="TOML pipeline config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out-dir", default=None,
                       help="override the config output directory")
        if name == "detect":
            p.add_argument("--trace", default=None, help="trace file to scan")
        if name == "saliency":
            p.add_argument("--event-id", type=int, default=None,
                           help="test-split event to explain")
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    try:
        from .config import load_config

        cfg, cfg_hash = load_config(args.config, seed_override=args.seed)
        paths = _Paths(args.out_dir if args.out_dir else cfg.output_dir)
        paths.out_dir.mkdir(parents=True, exist_ok=True)
        handlers = {
            "synth": lambda: cmd_synth(cfg, cfg_hash, paths),
            "detect": lambda: cmd_detect(cfg, cfg_hash, paths, trace_path=args.trace),
            "label": lambda: cmd_label(cfg, cfg_hash, paths),
            "scaleogram": lambda: cmd_scaleogram(cfg, cfg_hash, paths),
            "split": lambda: cmd_split(cfg, cfg_hash, paths),
            "train": lambda: cmd_train(cfg, cfg_hash, paths),
            "eval": lambda: cmd_eval(cfg, cfg_hash, paths),
            "prune": lambda: cmd_prune(cfg, cfg_hash, paths),
            "quantize": lambda: cmd_quantize(cfg, cfg_hash, paths),
            "saliency": lambda: cmd_saliency(cfg, cfg_hash, paths,
                                             event_id=args.event_id),
            "pipeline": lambda: cmd_pipeline(cfg, cfg_hash, paths),
        }
        summary = handlers[args.command]()
    except Exception as exc:
        error = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(error, sort_keys=True), file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, "summary": summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
