"""TOML config loading: defaults, overrides, rejection, hashing."""

from pathlib import Path

import pytest

from porescale.config import ConfigError, build_config, config_hash, load_config
from porescale.nnet.augment import AugmentParams
from porescale.seeds import derive_seed
from porescale.wavelets import HermitianHat, Morlet

MINIMAL = {"output_dir": "/tmp/out"}
CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, text):
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    return path


class TestDefaults:
    def test_minimal_config(self):
        cfg = build_config(dict(MINIMAL))
        assert cfg.seed == 0
        assert cfg.synth.n_classes == 42
        assert cfg.n_peaks == 42
        assert cfg.n_bins == 256
        assert cfg.label_policy == "max_density"
        assert cfg.split_ratios == (0.8, 0.1, 0.1)
        assert (cfg.out_height, cfg.out_width) == (64, 64)
        assert isinstance(cfg.wavelet, HermitianHat)
        assert (cfg.grid.a_min, cfg.grid.a_max, cfg.grid.n_voices) == (2.0, 256.0, 8)
        assert cfg.prune_fractions == (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)
        assert cfg.knn_k == 5
        assert cfg.train.augment_params is None

    def test_output_dir_required(self):
        with pytest.raises(ConfigError, match="output_dir"):
            build_config({})

    def test_n_peaks_follows_n_classes(self):
        cfg = build_config({**MINIMAL, "synth": {"n_classes": 7}})
        assert cfg.n_peaks == 7

    def test_n_peaks_override_independent(self):
        cfg = build_config({**MINIMAL, "synth": {"n_classes": 7},
                            "labeling": {"n_peaks": 3}})
        assert cfg.n_peaks == 3

    def test_reference_file_matches_defaults(self, tmp_path):
        # the committed reference config enumerates every default
        import dataclasses

        ref, _ = load_config(CONFIGS / "reference.toml")
        bare = build_config({"output_dir": "runs/reference"})
        for f in dataclasses.fields(ref):
            a, b = getattr(ref, f.name), getattr(bare, f.name)
            if f.name == "wavelet":
                assert (type(a), a.mu) == (type(b), b.mu)
            elif f.name == "grid":
                assert (a.a_min, a.a_max, a.n_voices) == (b.a_min, b.a_max, b.n_voices)
            else:
                assert a == b, f.name


class TestSeedFanout:
    def test_stage_seeds_derived_from_root(self):
        cfg = build_config({**MINIMAL, "seed": 17})
        assert cfg.synth.rng_seed == derive_seed(17, "synth")
        assert cfg.train.seed == derive_seed(17, "train")
        assert cfg.synth.rng_seed != cfg.train.seed

    def test_seed_override_changes_everything(self, tmp_path):
        path = _write(tmp_path, 'output_dir = "/tmp/x"\nseed = 1\n')
        cfg1, h1 = load_config(path)
        cfg2, h2 = load_config(path, seed_override=2)
        assert cfg2.seed == 2
        assert h1 != h2
        assert cfg1.synth.rng_seed != cfg2.synth.rng_seed

    def test_noop_override_keeps_hash(self, tmp_path):
        path = _write(tmp_path, 'output_dir = "/tmp/x"\nseed = 5\n')
        _, h1 = load_config(path)
        _, h2 = load_config(path, seed_override=5)
        assert h1 == h2

    def test_rng_seed_not_settable_directly(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            build_config({**MINIMAL, "synth": {"rng_seed": 3}})


class TestRejection:
    @pytest.mark.parametrize("section", [
        "synth", "detector", "wavelet", "labeling", "scaleogram",
        "train", "compress", "eval",
    ])
    def test_unknown_key_in_each_section(self, section):
        raw = {**MINIMAL, section: {"not_a_key": 1}}
        with pytest.raises(ConfigError, match="not_a_key"):
            build_config(raw)

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            build_config({**MINIMAL, "stray": 1})

    def test_unknown_augment_key(self):
        raw = {**MINIMAL, "train": {"augment": {"enabled": True, "zap": 1}}}
        with pytest.raises(ConfigError, match="zap"):
            build_config(raw)

    def test_module_validation_wrapped(self):
        with pytest.raises(ConfigError, match=r"\[synth\]"):
            build_config({**MINIMAL, "synth": {"duration_s": -1.0}})
        with pytest.raises(ConfigError, match=r"\[detector\]"):
            build_config({**MINIMAL, "detector": {"k_onset": -1.0}})
        with pytest.raises(ConfigError, match=r"\[train\]"):
            build_config({**MINIMAL, "train": {"lr": -0.1}})

    def test_bad_wavelet_kind(self):
        with pytest.raises(ConfigError, match="haar"):
            build_config({**MINIMAL, "wavelet": {"kind": "haar"}})

    def test_bad_policy(self):
        with pytest.raises(ConfigError, match="policy"):
            build_config({**MINIMAL, "labeling": {"policy": "nearest"}})

    def test_unsorted_prune_fractions(self):
        with pytest.raises(ConfigError, match="ascending"):
            build_config({**MINIMAL, "compress": {"prune_fractions": [0.5, 0.1]}})

    def test_even_knn_k(self):
        with pytest.raises(ConfigError, match="odd"):
            build_config({**MINIMAL, "eval": {"knn_k": 4}})

    def test_tiny_scaleogram_rejected(self):
        with pytest.raises(ConfigError, match=">= 8"):
            build_config({**MINIMAL, "scaleogram": {"height": 4}})

    def test_malformed_toml(self, tmp_path):
        path = _write(tmp_path, "this is not [ toml\n")
        with pytest.raises(ConfigError, match="malformed"):
            load_config(path)


class TestSections:
    def test_morlet_selection(self):
        cfg = build_config({**MINIMAL, "wavelet": {"kind": "morlet", "omega0": 7.0}})
        assert isinstance(cfg.wavelet, Morlet)
        assert cfg.wavelet.omega0 == 7.0

    def test_sigma_refresh_zero_means_never(self):
        cfg = build_config({**MINIMAL, "detector": {"sigma_refresh_interval": 0}})
        assert cfg.detector.sigma_refresh_interval is None
        cfg = build_config({**MINIMAL, "detector": {"sigma_refresh_interval": 9000}})
        assert cfg.detector.sigma_refresh_interval == 9000

    def test_swa_disabled_by_negative(self):
        cfg = build_config({**MINIMAL, "train": {"swa_start_epoch": -1}})
        assert cfg.train.swa_start_epoch is None
        cfg = build_config({**MINIMAL, "train": {"swa_start_epoch": 3}})
        assert cfg.train.swa_start_epoch == 3

    def test_augment_enabled(self):
        raw = {**MINIMAL, "train": {"augment": {"enabled": True, "hflip_prob": 1.0}}}
        cfg = build_config(raw)
        assert isinstance(cfg.train.augment_params, AugmentParams)
        assert cfg.train.augment_params.hflip_prob == 1.0

    def test_n_bins_zero_means_auto(self):
        cfg = build_config({**MINIMAL, "labeling": {"n_bins": 0}})
        assert cfg.n_bins is None


class TestHash:
    def test_hash_is_key_order_independent(self):
        a = config_hash({"b": 1, "a": {"y": 2, "x": 3}})
        b = config_hash({"a": {"x": 3, "y": 2}, "b": 1})
        assert a == b

    def test_hash_sensitive_to_values(self):
        assert config_hash({"a": 1}) != config_hash({"a": 2})

    def test_demo_config_loads(self):
        cfg, digest = load_config(CONFIGS / "demo6.toml")
        assert cfg.synth.n_classes == 6
        assert len(digest) == 64
