"""DWT perfect reconstruction and CWT frequency-localization properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porescale.wavelets import (
    HHAT_XI_PEAK,
    CwtCoefficients,
    HermitianHat,
    Morlet,
    ScaleGrid,
    Signal,
    cwt,
    dwt_denoise,
    dwt_forward,
    dwt_inverse,
    wavelet_freq_response,
)


def rel_l2(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300)


class TestDwtReconstruction:
    def test_round_trip_exact_across_lengths(self):
        # acceptance clause: random signals, lengths 64..4096 incl. odd, 1e-8
        rng = np.random.default_rng(101)
        for _ in range(30):
            n = int(rng.integers(64, 4097))
            x = rng.normal(size=n)
            levels = int(rng.integers(1, 5))
            a, d, lens = dwt_forward(x, levels)
            y = dwt_inverse(a, d, lens)
            assert y.shape == x.shape
            assert rel_l2(y, x) < 1e-10

    def test_threshold_zero_is_identity(self):
        rng = np.random.default_rng(7)
        x = Signal(rng.normal(size=777), 1e6)
        y = dwt_denoise(x, threshold=0.0, levels=3)
        assert rel_l2(y.samples, x.samples) < 1e-10

    def test_odd_lengths_round_trip(self):
        rng = np.random.default_rng(8)
        for n in (65, 127, 333, 1023, 2049):
            x = rng.normal(size=n)
            a, d, lens = dwt_forward(x, 3)
            assert rel_l2(dwt_inverse(a, d, lens), x) < 1e-10

    def test_halfband_lengths(self):
        x = np.random.default_rng(9).normal(size=256)
        a, d, lens = dwt_forward(x, 2)
        assert a.size == 64 and d[0].size == 128 and d[1].size == 64

    def test_denoise_kills_small_noise_keeps_steps(self):
        # a step plus faint noise: hard threshold above the noise detail
        # magnitude must recover the step much better than the input
        rng = np.random.default_rng(10)
        step = np.where(np.arange(1024) < 512, 0.0, 1.0)
        noisy = step + 0.01 * rng.normal(size=1024)
        den = dwt_denoise(Signal(noisy, 1e6), threshold=0.05, levels=4)
        assert np.mean((den.samples - step) ** 2) < 0.25 * np.mean((noisy - step) ** 2)

    def test_too_many_levels_rejected(self):
        with pytest.raises(ValueError):
            dwt_forward(np.zeros(16), 5)

    @settings(max_examples=40, deadline=None)
    @given(
        n=st.integers(min_value=64, max_value=1500),
        levels=st.integers(min_value=1, max_value=4),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_reconstruction_property(self, n, levels, seed):
        x = np.random.default_rng(seed).normal(size=n)
        a, d, lens = dwt_forward(x, levels)
        assert rel_l2(dwt_inverse(a, d, lens), x) < 1e-10


class TestWaveletWindows:
    def test_hhat_zero_below_mu_and_at_zero(self):
        w = HermitianHat(mu=5.0)
        om = np.array([-3.0, 0.0, 2.0, 4.999999])
        assert np.all(wavelet_freq_response(w, om) == 0.0)

    def test_hhat_peak_location(self):
        # analytic argmax of xi*(1+xi)*exp(-xi^2/2)
        w = HermitianHat(mu=5.0)
        om = np.linspace(5.0, 9.0, 400001)
        resp = w.freq_response(om)
        assert abs(om[np.argmax(resp)] - (5.0 + HHAT_XI_PEAK)) < 1e-4
        xi = HHAT_XI_PEAK
        assert abs(1.0 + 2.0 * xi - xi * xi - xi**3) < 1e-9

    def test_hhat_unit_peak_scaled_norm(self):
        # normalization 2/(sqrt(5) pi^(1/4)) puts the peak near 1.0524/pi^(1/4)
        w = HermitianHat(mu=5.0)
        peak = w.freq_response(np.array([w.peak_omega]))[0]
        xi = HHAT_XI_PEAK
        expect = 2.0 / math.sqrt(5.0) / math.pi**0.25 * xi * (1 + xi) * math.exp(-0.5 * xi * xi)
        assert abs(peak - expect) < 1e-12

    def test_morlet_exactly_zero_at_dc(self):
        w = Morlet(6.0)
        assert w.freq_response(np.array([0.0]))[0] == 0.0

    def test_morlet_peak_near_omega0(self):
        w = Morlet(6.0)
        om = np.linspace(4.0, 8.0, 200001)
        assert abs(om[np.argmax(w.freq_response(om))] - 6.0) < 1e-3


class TestCwt:
    def test_zero_signal_maps_to_zero(self):
        sig = Signal(np.zeros(256), 1e6)
        grid = ScaleGrid.for_signal_length(256, HermitianHat())
        out = cwt(sig, HermitianHat(), grid)
        assert np.all(out.values == 0.0)

    def test_constant_signal_maps_to_zero(self):
        # psi_hat(0) == 0 for both wavelets, and the radix-2 FFT of a
        # constant is exactly zero off the DC bin: the product vanishes
        # identically, not just to roundoff
        for w in (HermitianHat(), Morlet()):
            sig = Signal(np.full(300, 3.25), 1e6)
            grid = ScaleGrid.for_signal_length(300, w)
            out = cwt(sig, w, grid)
            assert np.max(np.abs(out.values)) == 0.0

    def test_linearity(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=200)
        y = rng.normal(size=200)
        w = HermitianHat()
        grid = ScaleGrid.for_signal_length(200, w)
        cx = cwt(Signal(x, 1.0), w, grid).values
        cy = cwt(Signal(y, 1.0), w, grid).values
        cxy = cwt(Signal(2.0 * x - 3.0 * y, 1.0), w, grid).values
        assert np.max(np.abs(cxy - (2.0 * cx - 3.0 * cy))) < 1e-10

    def test_shift_covariance_morlet(self):
        # Morlet decays fast in time, so an interior shift moves coefficients
        # exactly (up to fft roundoff) away from the pad boundary. Scales
        # start at 6 so the window is below eps at Nyquist; smaller scales
        # pick up 1/t sinc tails from the brick-wall frequency truncation.
        rng = np.random.default_rng(12)
        n, s = 1024, 64
        x = np.zeros(n)
        x[420:520] = rng.normal(size=100)
        xs = np.roll(x, s)
        w = Morlet(6.0)
        grid = ScaleGrid(a_min=6.0, a_max=32.0, n_voices=8)
        c0 = cwt(Signal(x, 1.0), w, grid).values
        c1 = cwt(Signal(xs, 1.0), w, grid).values
        lo, hi = 350, 600
        err = np.abs(c1[:, lo + s:hi + s] - c0[:, lo:hi])
        assert np.max(err) / np.max(np.abs(c0)) < 1e-8

    def test_shift_covariance_hhat_loose(self):
        # the spectral kink at xi=0 gives 1/t^2 time tails, so finite-signal
        # shift covariance holds only to a few parts in 1e4 of the peak
        rng = np.random.default_rng(13)
        n, s = 1024, 64
        x = np.zeros(n)
        x[440:520] = rng.normal(size=80)
        xs = np.roll(x, s)
        w = HermitianHat(5.0)
        grid = ScaleGrid(a_min=2.0, a_max=16.0, n_voices=8)
        c0 = cwt(Signal(x, 1.0), w, grid).values
        c1 = cwt(Signal(xs, 1.0), w, grid).values
        lo, hi = 380, 580
        err = np.abs(c1[:, lo + s:hi + s] - c0[:, lo:hi])
        assert np.max(err) / np.max(np.abs(c0)) < 1e-3

    def test_sinusoid_peaks_at_matching_scale(self):
        # acceptance clause: peak row within one grid step of the analytic scale
        n, fs = 4096, 1.0
        w = HermitianHat(5.0)
        grid = ScaleGrid.for_signal_length(n, w)
        t = np.arange(n)
        for freq in np.geomspace(0.01, 0.2, 10):
            sig = Signal(np.sin(2 * math.pi * freq * t), fs)
            out = cwt(sig, w, grid)
            power = np.mean(np.abs(out.values[:, n // 4:3 * n // 4]) ** 2, axis=1)
            k_hat = int(np.argmax(power))
            k_true = grid.nearest_index(grid.scale_for_frequency(freq, fs, w))
            assert abs(k_hat - k_true) <= 1

    def test_sinusoid_peak_morlet(self):
        n, fs = 2048, 1.0
        w = Morlet(6.0)
        grid = ScaleGrid.for_signal_length(n, w)
        t = np.arange(n)
        for freq in (0.02, 0.05, 0.11):
            out = cwt(Signal(np.sin(2 * math.pi * freq * t), fs), w, grid)
            power = np.mean(np.abs(out.values[:, n // 4:3 * n // 4]) ** 2, axis=1)
            assert abs(int(np.argmax(power)) - grid.nearest_index(grid.scale_for_frequency(freq, fs, w))) <= 1

    def test_amplitude_homogeneity(self):
        x = np.random.default_rng(14).normal(size=256)
        w = HermitianHat()
        grid = ScaleGrid.for_signal_length(256, w)
        c1 = cwt(Signal(x, 1.0), w, grid).values
        c4 = cwt(Signal(4.0 * x, 1.0), w, grid).values
        assert np.max(np.abs(c4 - 4.0 * c1)) < 1e-10

    def test_chirp_ridge_tracks_frequency(self):
        # instantaneous frequency doubling moves the argmax row monotonically
        # toward smaller scales
        n = 4096
        t = np.arange(n)
        f0, f1 = 0.02, 0.08
        phase = 2 * math.pi * (f0 * t + (f1 - f0) * t * t / (2 * n))
        w = HermitianHat()
        grid = ScaleGrid.for_signal_length(n, w)
        out = cwt(Signal(np.sin(phase), 1.0), w, grid)
        mag = np.abs(out.values)
        ridge_early = int(np.argmax(mag[:, n // 8]))
        ridge_late = int(np.argmax(mag[:, 7 * n // 8]))
        assert ridge_late < ridge_early  # higher freq -> smaller scale

    def test_output_shape_and_types(self):
        sig = Signal(np.random.default_rng(15).normal(size=128), 2.0)
        grid = ScaleGrid(a_min=1.0, a_max=8.0, n_voices=4)
        out = cwt(sig, HermitianHat(), grid)
        assert isinstance(out, CwtCoefficients)
        assert out.values.shape == (len(grid), 128)
        assert out.values.dtype == np.complex128
        assert out.sample_times[1] - out.sample_times[0] == pytest.approx(0.5)


class TestScaleGrid:
    def test_log_spacing(self):
        g = ScaleGrid(a_min=1.0, a_max=16.0, n_voices=8)
        ratios = g.scales[1:] / g.scales[:-1]
        assert np.allclose(ratios, 2.0 ** (1.0 / 8.0))
        assert g.scales[0] == 1.0
        assert g.scales[-1] <= 16.0 * (1 + 1e-12)

    def test_voices_per_octave_count(self):
        g = ScaleGrid(a_min=1.0, a_max=4.0, n_voices=8)
        assert len(g) == 17  # two octaves -> 16 steps + endpoint

    def test_invalid_grids_rejected(self):
        with pytest.raises(ValueError):
            ScaleGrid(a_min=0.0, a_max=4.0)
        with pytest.raises(ValueError):
            ScaleGrid(a_min=4.0, a_max=2.0)
