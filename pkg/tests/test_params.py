import numpy as np
import pytest

from devscore.params import HyperParams, PromptPair

from conftest import unit_rows


class TestHyperParams:
    def test_defaults(self):
        hp = HyperParams()
        assert hp.dev_weight == 1.0
        assert hp.margin == 5.0
        assert hp.k_percent == 10.0
        assert hp.tau == 0.07

    def test_with_returns_new_instance(self):
        hp = HyperParams()
        hp2 = hp.with_(margin=3.0)
        assert hp.margin == 5.0 and hp2.margin == 3.0
        assert hp2.k_percent == hp.k_percent

    def test_frozen(self):
        with pytest.raises(AttributeError):
            HyperParams().margin = 1.0

    def test_zero_lr_allowed(self):
        assert HyperParams(lr=0.0).lr == 0.0

    @pytest.mark.parametrize("kwargs", [
        {"k_percent": 0.0}, {"k_percent": 101.0}, {"margin": -1.0},
        {"dev_weight": -0.5}, {"tau": 0.0}, {"epochs": 0}, {"lr": -1e-3},
        {"sign_mode": "other"}, {"prior_mode": "other"},
        {"blur_sigma": -1.0}, {"pseudo_alpha": 2.0},
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            HyperParams(**kwargs)

    def test_to_dict_roundtrip(self):
        hp = HyperParams(margin=3.0, seed=7)
        assert HyperParams(**hp.to_dict()) == hp


class TestPromptPair:
    def test_bases_are_immutable(self, rng):
        base = unit_rows(rng.standard_normal((2, 4)))
        pp = PromptPair(base[0], base[1], np.zeros(4), np.zeros(4))
        with pytest.raises(ValueError):
            pp.base_normal[0] = 99.0

    def test_effective_is_unit_norm(self, rng):
        base = unit_rows(rng.standard_normal((2, 8)))
        pp = PromptPair(base[0], base[1],
                        rng.standard_normal(8), rng.standard_normal(8))
        assert np.linalg.norm(pp.effective_normal) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(pp.effective_abnormal) == pytest.approx(1.0, abs=1e-12)

    def test_zero_delta_effective_equals_base(self, rng):
        base = unit_rows(rng.standard_normal((2, 8)))
        pp = PromptPair(base[0], base[1], np.zeros(8), np.zeros(8))
        assert np.allclose(pp.effective_normal, base[0], atol=1e-12)

    def test_shared_delta_applies_to_both(self, rng):
        base = unit_rows(rng.standard_normal((2, 8)))
        shared = rng.standard_normal(8)
        pp = PromptPair(base[0], base[1], np.zeros(8), np.zeros(8), shared)
        assert np.allclose(pp.vector_normal, base[0] + shared)
        assert np.allclose(pp.vector_abnormal, base[1] + shared)

    def test_dim_mismatch_rejected(self, rng):
        base = unit_rows(rng.standard_normal((2, 8)))
        with pytest.raises(ValueError):
            PromptPair(base[0], base[1], np.zeros(8), np.zeros(6))

    def test_copy_is_independent(self, rng):
        base = unit_rows(rng.standard_normal((2, 4)))
        pp = PromptPair(base[0], base[1], np.zeros(4), np.zeros(4))
        cp = pp.copy()
        cp.delta_normal += 1.0
        assert not pp.delta_normal.any()
