"""YAML run-configuration parsing."""

import numpy as np
import pytest

from tremorhmm import config_from_mapping, load_config


class TestDefaults:
    def test_empty_mapping(self):
        cfg = config_from_mapping({})
        assert cfg.k == 2
        assert cfg.backend == "parallel"
        assert cfg.delta_mode == "stationary"
        assert cfg.engine.workers == 1
        assert cfg.mcmc.iterations == 50_000
        assert cfg.mcmc.thin == 10
        assert cfg.forecast.horizon == 120
        assert cfg.forecast.sample_stride == 1000
        assert cfg.forecast.max_draws == 500
        assert cfg.prior.dirichlet_alpha == 0.01
        assert cfg.prior.p_low == (10.0, 100.0)
        assert cfg.prior.p_high == (810.0, 900.0)

    def test_none_is_empty(self):
        assert config_from_mapping(None).k == 2

    def test_prior_df_follows_k(self):
        assert config_from_mapping({"k": 6}).prior.iw_df == 6.0
        assert config_from_mapping({"k": 1}).prior.iw_df == 2.0


class TestOverrides:
    def test_full_document(self):
        cfg = config_from_mapping({
            "k": 3,
            "backend": "serial",
            "delta": "uniform",
            "prior": {
                "dirichlet_alpha": 0.5,
                "p_low": {"mean": 0.2, "variance": 0.002},
                "p_high": {"mean": 0.8, "variance": 0.002},
                "mu_bounds": [0.0, 1.0, 10.0, 11.0],
                "iw_df": 4.5,
                "iw_scale": [[2.0, 0.1], [0.1, 2.0]],
            },
            "engine": {"workers": 2, "segments": 6, "renorm_period": 4,
                       "precision": "float32"},
            "mcmc": {"iterations": 123, "thin": 3, "seed": 9,
                     "steps": {"gamma": 0.2, "p": 0.1, "mu": 0.01, "sigma": 0.02}},
            "forecast": {"horizon": 24, "sample_stride": 5, "max_draws": 10,
                         "seed": 2},
        })
        assert cfg.k == 3 and cfg.backend == "serial" and cfg.delta_mode == "uniform"
        assert cfg.prior.dirichlet_alpha == 0.5
        # moment matching: shape/rate with mean 0.2, variance 0.002
        assert cfg.prior.p_low == (20.0, 100.0)
        assert cfg.prior.p_high == (320.0, 400.0)
        assert cfg.prior.mu_bounds == (0.0, 1.0, 10.0, 11.0)
        assert cfg.prior.iw_df == 4.5
        assert np.array_equal(cfg.prior.iw_scale, [[2.0, 0.1], [0.1, 2.0]])
        assert cfg.engine.segments == 6 and cfg.engine.precision == "float32"
        assert cfg.mcmc.steps.gamma == 0.2
        assert cfg.forecast.horizon == 24

    def test_partial_steps(self):
        cfg = config_from_mapping({"mcmc": {"steps": {"mu": 0.5}}})
        assert cfg.mcmc.steps.mu == 0.5
        assert cfg.mcmc.steps.gamma == 0.25  # untouched default


class TestRejection:
    def test_unknown_top_level_key(self):
        with pytest.raises(ValueError, match="unknown keys"):
            config_from_mapping({"modle": 3})

    def test_unknown_section_key(self):
        with pytest.raises(ValueError, match="engine"):
            config_from_mapping({"engine": {"wrokers": 2}})
        with pytest.raises(ValueError, match="prior"):
            config_from_mapping({"prior": {"alpha": 0.1}})
        with pytest.raises(ValueError, match="mcmc.steps"):
            config_from_mapping({"mcmc": {"steps": {"tau": 0.1}}})

    def test_bad_values(self):
        with pytest.raises(ValueError):
            config_from_mapping({"k": 0})
        with pytest.raises(ValueError):
            config_from_mapping({"backend": "gpu"})
        with pytest.raises(ValueError):
            config_from_mapping({"delta": "fixed"})
        with pytest.raises(ValueError):
            config_from_mapping({"prior": {"mu_bounds": [0, 1, 2]}})


class TestLoadConfig:
    def test_yaml_file(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text("k: 4\nbackend: serial\nmcmc:\n  iterations: 77\n")
        cfg = load_config(p)
        assert cfg.k == 4 and cfg.backend == "serial"
        assert cfg.mcmc.iterations == 77

    def test_empty_file_is_defaults(self, tmp_path):
        p = tmp_path / "empty.yaml"
        p.write_text("")
        assert load_config(p).k == 2

    def test_non_mapping_rejected(self, tmp_path):
        p = tmp_path / "list.yaml"
        p.write_text("- 1\n- 2\n")
        with pytest.raises(ValueError):
            load_config(p)
