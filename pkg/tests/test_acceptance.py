"""Acceptance gate: ten pipeline-level criteria, one verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s``. Criterion 6 trains the
full 42-class model once (several minutes on one core); criteria 7 and 8
reuse that model. Everything else finishes in seconds.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from porescale import cli
from porescale.compress import (global_sparsity, prune_global_l1, quantize_static,
                                save_quantized, weight_payload_bytes)
from porescale.evaluate import compute_metrics, confusion
from porescale.events import (DetectorConfig, EventDetector, detect_events,
                              match_against_truth)
from porescale.labeling import (BlockadeHistogram, VoigtPeak, fit_voigt_peaks,
                                fwhm_voigt, split_labels, voigt_value,
                                TRAIN, VALIDATION, TEST)
from porescale.nnet import (Conv2d, Dense, GELU, MaxPool2d, ReLU, cross_entropy_loss,
                            knn_predict, pool_features, porenet_s, save_checkpoint)
from porescale.nnet.train import TrainConfig, predict_labels, train
from porescale.scaleogram import scaleogram_from_rel
from porescale.seeds import derive_seed
from porescale.synth import SynthConfig, auto_class_table, generate_event_bank, generate_trace
from porescale.wavelets import (HermitianHat, ScaleGrid, Signal, cwt,
                                dwt_forward, dwt_inverse)

ROOT_SEED = 20260814
DEMO_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "demo6.toml"


def _report(criterion: int, passed: bool, detail: str) -> None:
    print(f"\n[criterion {criterion:02d}] {'PASS' if passed else 'FAIL'}: {detail}",
          flush=True)
    assert passed, f"criterion {criterion}: {detail}"


# --- criterion 1 -----------------------------------------------------------

def test_criterion_01_dwt_perfect_reconstruction():
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed(ROOT_SEED, "c1"))
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(64, 4097))
        x = rng.standard_normal(n)
        approx, details, lengths = dwt_forward(x, levels=4)
        y = dwt_inverse(approx, details, lengths)
        worst = max(worst, float(np.linalg.norm(y - x) / np.linalg.norm(x)))
    dt = time.perf_counter() - t0
    _report(1, worst < 1e-8 and dt < 5.0,
            f"worst relative L2 {worst:.3e} over 100 signals in {dt:.2f}s")


# --- criterion 2 -----------------------------------------------------------

def test_criterion_02_cwt_correctness():
    t0 = time.perf_counter()
    fs = 250_000.0
    wavelet = HermitianHat()
    grid = ScaleGrid(2.0, 256.0, n_voices=8)

    zero = cwt(Signal(np.zeros(1024), fs), wavelet, grid)
    const = cwt(Signal(np.full(1024, 3.7), fs), wavelet, grid)
    exact = bool(np.all(zero.values == 0.0) and np.all(const.values == 0.0))

    hits = 0
    freqs = np.geomspace(3_000.0, 50_000.0, 10)
    t = np.arange(4096) / fs
    for f in freqs:
        sig = Signal(np.sin(2 * np.pi * f * t), fs)
        coeffs = cwt(sig, wavelet, grid)
        power = np.abs(coeffs.values)[:, 1024:3072].mean(axis=1)
        found = int(np.argmax(power))
        expected = grid.nearest_index(grid.scale_for_frequency(f, fs, wavelet))
        hits += abs(found - expected) <= 1
    dt = time.perf_counter() - t0
    _report(2, exact and hits == 10 and dt < 30.0,
            f"zero/const exact: {exact}, peak-scale hits {hits}/10 in {dt:.2f}s")


# --- criterion 3 -----------------------------------------------------------

def test_criterion_03_event_detector():
    t0 = time.perf_counter()
    cfg = SynthConfig(duration_s=60.0, event_rate_hz=20.0,
                      rng_seed=derive_seed(ROOT_SEED, "c3"))
    trace, truth = generate_trace(cfg)
    assert len(truth) >= 1000, f"only {len(truth)} injected events"

    detected = detect_events(trace)
    precision, recall = match_against_truth(detected, truth, iou_threshold=0.5)

    stream = EventDetector(DetectorConfig(), trace.sample_rate_hz)
    streamed = []
    pos, sizes = 0, [99_991, 250_000, 1_000_003]
    i = 0
    while pos < len(trace.samples):
        step = sizes[i % len(sizes)]
        streamed.extend(stream.process(trace.samples[pos:pos + step]))
        pos += step
        i += 1
    streamed.extend(stream.finish())
    same = len(streamed) == len(detected) and all(
        a.start_sample == b.start_sample and a.end_sample == b.end_sample
        and np.array_equal(a.rel_samples, b.rel_samples)
        for a, b in zip(streamed, detected))
    dt = time.perf_counter() - t0
    _report(3, precision >= 0.99 and recall >= 0.99 and same and dt < 60.0,
            f"P {precision:.4f} R {recall:.4f} on {len(truth)} events, "
            f"streaming equal: {same}, in {dt:.1f}s")


# --- criterion 4 -----------------------------------------------------------

def _fwhm_bisect(sigma_g: float, gamma_l: float) -> float:
    peak = VoigtPeak(center=0.0, sigma_g=sigma_g, gamma_l=gamma_l, amplitude=1.0)
    half = float(voigt_value(np.array([0.0]), peak)[0]) / 2.0
    lo, hi = 0.0, 60.0 * (sigma_g + gamma_l)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(voigt_value(np.array([mid]), peak)[0]) > half:
            lo = mid
        else:
            hi = mid
    return lo + hi


def test_criterion_04_voigt_machinery():
    t0 = time.perf_counter()
    widths = np.linspace(0.01, 2.0, 20)
    worst = 0.0
    for sg in widths:
        for gl in widths:
            oracle = _fwhm_bisect(float(sg), float(gl))
            worst = max(worst, abs(fwhm_voigt(float(sg), float(gl)) - oracle) / oracle)

    rng = np.random.default_rng(derive_seed(ROOT_SEED, "c4"))
    center, sigma_g, gamma_l = 0.55, 0.020, 0.010
    draws = (center + sigma_g * rng.standard_normal(100_000)
             + gamma_l * rng.standard_cauchy(100_000))
    window = 10 * fwhm_voigt(sigma_g, gamma_l)
    draws = draws[np.abs(draws - center) < window]
    counts, edges = np.histogram(draws, bins=256)
    hist = BlockadeHistogram(edges, counts, int(counts.sum()))
    fit = fit_voigt_peaks(hist, n_peaks=1)
    peak = fit.peaks[0]
    center_err = abs(peak.center - center)
    sg_err = abs(peak.sigma_g - sigma_g) / sigma_g
    gl_err = abs(peak.gamma_l - gamma_l) / gamma_l
    dt = time.perf_counter() - t0
    ok = worst < 2e-4 and center_err < 1e-3 and sg_err < 0.10 and gl_err < 0.10 and dt < 60.0
    _report(4, ok,
            f"fwhm worst rel err {worst:.2e} on 20x20 grid; fit center err "
            f"{center_err:.2e}, width errs {sg_err:.1%}/{gl_err:.1%}, in {dt:.1f}s")


# --- criterion 5 -----------------------------------------------------------

def _scalar_loss(layer, x, direction):
    return float(np.sum(layer.forward(x) * direction))


def _fd_grad(fn, x, h=1e-6):
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn()
        flat[i] = keep - h
        down = fn()
        flat[i] = keep
        gflat[i] = (up - down) / (2 * h)
    return g


def _check_layer(layer, x, rel_tol=1e-4):
    direction = np.random.default_rng(0).standard_normal(layer.forward(x).shape)
    out = layer.forward(x)
    analytic_in = layer.backward(direction)
    fd_in = _fd_grad(lambda: _scalar_loss(layer, x, direction), x)
    errs = [np.linalg.norm(analytic_in - fd_in)
            / max(np.linalg.norm(fd_in), 1e-12)]
    for key, w in layer.params.items():
        layer.zero_grad()
        layer.forward(x)
        layer.backward(direction)
        analytic_w = layer.grads[key].copy()
        fd_w = _fd_grad(lambda: _scalar_loss(layer, x, direction), w)
        errs.append(np.linalg.norm(analytic_w - fd_w)
                    / max(np.linalg.norm(fd_w), 1e-12))
    return max(errs)


def test_criterion_05_gradient_checks():
    t0 = time.perf_counter()
    rng = np.random.default_rng(derive_seed(ROOT_SEED, "c5"))
    worst = 0.0
    for rep in range(20):
        n, c, s = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(5, 8))
        x4 = rng.standard_normal((n, c, s, s))
        oc = int(rng.integers(1, 4))
        cases = [
            (Conv2d(c, oc, 3, stride=1, pad=1), x4),
            (Conv2d(c, oc, 3, stride=2, pad=0), x4),
            (MaxPool2d(2, 2), x4),
            (MaxPool2d(3, 2), rng.standard_normal((n, c, s + 2, s + 2))),
            (ReLU(), x4 + 0.1),
            (GELU(), x4),
            (Dense(c * s * s, 5), rng.standard_normal((n, c * s * s))),
        ]
        for layer, x in cases:
            layer.init_params(rng, np.float64)
            for w in layer.params.values():
                w[...] = rng.standard_normal(w.shape)
            worst = max(worst, _check_layer(layer, x))

        logits = rng.standard_normal((4, 7))
        labels = rng.integers(0, 7, size=4)
        _, analytic = cross_entropy_loss(logits, labels)
        fd = _fd_grad(lambda: cross_entropy_loss(logits, labels)[0], logits)
        worst = max(worst, float(np.linalg.norm(analytic - fd)
                                 / np.linalg.norm(fd)))
    dt = time.perf_counter() - t0
    _report(5, worst < 1e-4 and dt < 60.0,
            f"worst relative grad error {worst:.2e} over 20 reps in {dt:.1f}s")


# --- criteria 6-8 share one trained model ----------------------------------

@pytest.fixture(scope="module")
def full_scale(tmp_path_factory):
    """42-class bank -> scaleograms -> split -> PoreNet-S, timed end to end."""
    t0 = time.perf_counter()
    seed = ROOT_SEED

    table = tuple(
        replace(sig, dwell_scale_us=sig.dwell_scale_us * 2.5)
        for sig in auto_class_table(42, derive_seed(seed, "synth"),
                                    freq_range_hz=(8_000.0, 80_000.0))
    )
    synth = SynthConfig(n_classes=42, class_table=table,
                        rng_seed=derive_seed(seed, "synth"))
    bank = generate_event_bank(synth, events_per_class=300)

    wavelet = HermitianHat()
    grid = ScaleGrid(2.0, 256.0, n_voices=8)
    images = np.stack([
        scaleogram_from_rel(w, wavelet, grid, out_size=(64, 64)).pixels
        for _, w in bank
    ])
    labels = np.array([c for c, _ in bank], dtype=np.int64)

    split = split_labels(list(labels), (0.8, 0.1, 0.1),
                         seed=derive_seed(seed, "split"))
    idx = {name: np.array(split.indices(name))
           for name in (TRAIN, VALIDATION, TEST)}
    mean = float(images[idx[TRAIN]].mean())
    std = float(images[idx[TRAIN]].std())
    z = ((images - mean) / std).astype(np.float32)
    x = {name: z[idx[name]] for name in idx}
    y = {name: labels[idx[name]] for name in idx}

    model = porenet_s(42)
    model.init_params(derive_seed(seed, "init"))
    cfg = TrainConfig(lr=0.05, batch_size=128, epochs=12, momentum=0.9,
                      weight_decay=1e-4, lr_milestones=(8, 11), lr_factor=0.1,
                      seed=derive_seed(seed, "train"))
    result = train(model, x[TRAIN], y[TRAIN], x[VALIDATION], y[VALIDATION], cfg)
    best = result.best_model()

    pred = predict_labels(best, x[TEST])
    report = compute_metrics(y[TEST], pred, n_classes=42)
    knn = compute_metrics(
        y[TEST],
        knn_predict(pool_features(x[TRAIN]), y[TRAIN], pool_features(x[TEST]), 5),
        n_classes=42)
    elapsed = time.perf_counter() - t0
    return {"model": best, "x": x, "y": y, "report": report, "knn": knn,
            "elapsed": elapsed, "tmp": tmp_path_factory.mktemp("c8")}


def test_criterion_06_end_to_end_classification(full_scale):
    fs = full_scale
    macro, knn_macro = fs["report"].macro, fs["knn"].macro
    ok = macro >= 0.90 and macro - knn_macro >= 0.05 and fs["elapsed"] < 1800.0
    _report(6, ok,
            f"macro {macro:.4f} vs knn {knn_macro:.4f} "
            f"(margin {macro - knn_macro:+.4f}), {fs['elapsed']:.0f}s total")


def test_criterion_07_pruning_behavior(full_scale):
    fs = full_scale
    model, x_test, y_test = fs["model"], fs["x"][TEST], fs["y"][TEST]

    def macro_at(fraction):
        pruned, _ = prune_global_l1(model, fraction)
        pred = predict_labels(pruned, x_test)
        return compute_metrics(y_test, pred, n_classes=42).macro

    base, light, dead = macro_at(0.0), macro_at(0.1), macro_at(1.0)
    near_base = abs(light - base) <= 0.01
    near_chance = abs(dead - 1.0 / 42.0) <= 0.03

    exact, nested = True, True
    prev_zero = None
    n_weights = sum(w.size for name, _, key, w in model.named_params()
                    if key == "weight")
    for f in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]:
        pruned, masks = prune_global_l1(model, f)
        zero = {name: np.flatnonzero(mask.ravel()) for name, mask in masks.items()}
        n_zero = sum(v.size for v in zero.values())
        exact &= n_zero == int(np.floor(f * n_weights))
        exact &= abs(global_sparsity(pruned) - n_zero / n_weights) < 1e-12
        if prev_zero is not None:
            nested &= all(np.isin(prev_zero[name], zero[name]).all()
                          for name in zero)
        prev_zero = zero
    _report(7, near_base and near_chance and exact and nested,
            f"macro f=0 {base:.4f}, f=0.1 {light:.4f}, f=1 {dead:.4f} "
            f"(chance {1 / 42:.4f}); sparsity exact: {exact}, nesting: {nested}")


def test_criterion_08_quantization(full_scale):
    fs = full_scale
    model, x_test, y_test = fs["model"], fs["x"][TEST], fs["y"][TEST]
    qm = quantize_static(model, fs["x"][VALIDATION])

    bound_ok = True
    for name, qt in qm.weights.items():
        _, _, key, w = next(p for p in model.named_params() if p[0] == name)
        err = np.max(np.abs(qt.dequantized() - w.astype(np.float64)))
        bound_ok &= err <= qt.scale / 2 + 1e-12

    f32_bytes, int8_bytes = weight_payload_bytes(qm)
    payload_ratio = f32_bytes / int8_bytes

    ckpt = fs["tmp"] / "model.npck"
    qpath = fs["tmp"] / "model.npq8"
    save_checkpoint(ckpt, model, metadata={})
    save_quantized(qpath, qm)
    file_ratio = ckpt.stat().st_size / qpath.stat().st_size

    pred_q = []
    for i in range(0, len(x_test), 256):
        logits = qm.forward(x_test[i:i + 256][:, None, :, :])
        pred_q.append(np.argmax(logits, axis=1))
    macro_q = compute_metrics(y_test, np.concatenate(pred_q), n_classes=42).macro
    macro_f = fs["report"].macro
    ok = (bound_ok and payload_ratio == 4.0 and file_ratio >= 3.8
          and abs(macro_q - macro_f) <= 0.03)
    _report(8, ok,
            f"round-trip bound: {bound_ok}, payload x{payload_ratio:.1f}, "
            f"file x{file_ratio:.2f}, macro f32 {macro_f:.4f} vs int8 {macro_q:.4f}")


# --- criterion 9 -----------------------------------------------------------

def test_criterion_09_metric_identities():
    rng = np.random.default_rng(derive_seed(ROOT_SEED, "c9"))
    ok = True
    for _ in range(1000):
        n_classes = int(rng.integers(2, 51))
        n = int(rng.integers(1, 400))
        truth = rng.integers(0, n_classes, size=n)
        pred = rng.integers(0, n_classes, size=n)
        cm = confusion(truth, pred, n_classes)
        rep = compute_metrics(truth, pred, n_classes=n_classes)
        diag = np.diag(cm.counts)
        ok &= rep.micro == diag.sum() / cm.counts.sum()
        totals = cm.counts.sum(axis=1)
        present = totals > 0
        per_class = diag[present] / totals[present]
        ok &= rep.macro == per_class.mean()
        ok &= cm.counts.sum() == n
        ok &= np.array_equal(np.bincount(truth, minlength=n_classes), totals)

    hand = compute_metrics([0, 0, 0, 1], [0, 0, 1, 1], n_classes=2)
    ok &= hand.micro == 0.75
    ok &= abs(hand.macro - 5 / 6) < 1e-15
    _report(9, ok, "macro/micro/confusion identities on 1000 random sets "
                   "+ 4-sample hand case (micro 0.75, macro 5/6)")


# --- criterion 10 ----------------------------------------------------------

def test_criterion_10_reproducibility(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = cli.main(["pipeline", "--config", str(DEMO_CONFIG),
                         "--out-dir", str(out)])
        assert code == 0, f"pipeline run {name} failed"
        runs.append(out)
    files_a = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(runs[1]) for p in runs[1].rglob("*") if p.is_file())
    same_sets = files_a == files_b
    diff = [str(rel) for rel in files_a
            if (runs[0] / rel).read_bytes() != (runs[1] / rel).read_bytes()]
    _report(10, same_sets and not diff,
            f"{len(files_a)} artifacts byte-identical across two pipeline runs"
            + (f"; differing: {diff[:5]}" if diff else ""))
