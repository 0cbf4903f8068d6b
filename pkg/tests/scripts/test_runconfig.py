import json

import pytest

from scripts.errors import ConfigError
from scripts.runconfig import RunConfig, parse_config, parse_override

# ─── TEST COMMAND ──────────────────────────────────────────────────────────
# Run this test file with: pytest tests/scripts/test_runconfig.py


class TestDefaults:
    @pytest.mark.unit
    def test_default_values(self):
        cfg = parse_config()
        assert (cfg.K, cfg.d_slot, cfg.D_feature, cfg.T, cfg.n_iter) == (7, 64, 64, 5, 3)
        assert cfg.theta == pytest.approx(0.90)
        assert (cfg.p_b, cfg.p_d, cfg.mask_ratio) == (0.5, 0.5, 0.15)
        assert cfg.stage == "pretrain"
        assert cfg.num_patches == 64

    @pytest.mark.unit
    def test_tiny_is_valid(self, tiny_cfg):
        assert tiny_cfg.num_patches == 4
        assert tiny_cfg.model_dims().dtst.layers == 1


class TestOverrides:
    @pytest.mark.unit
    def test_slot_count_overrides(self):
        assert parse_config(overrides=["K=5"]).K == 5
        assert parse_config(overrides=["K=5", "K=11"]).K == 11

    @pytest.mark.unit
    def test_values_are_yaml_scalars(self):
        assert parse_override("use_dtst=false") == ("use_dtst", False)
        assert parse_override("shapes=[disc]") == ("shapes", ["disc"])
        assert parse_config(overrides=["adam_eps=1e-6"]).adam_eps == pytest.approx(1e-6)

    @pytest.mark.unit
    def test_threshold_out_of_range(self):
        with pytest.raises(ConfigError) as exc:
            parse_config(overrides=["theta=1.5"])
        assert exc.value.key == "theta"

    @pytest.mark.unit
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config(overrides=["slots=3"])

    @pytest.mark.unit
    def test_missing_equals(self):
        with pytest.raises(ConfigError):
            parse_override("K")

    @pytest.mark.unit
    def test_type_mismatch_names_the_key(self):
        with pytest.raises(ConfigError, match="'K'"):
            parse_config(overrides=["K=many"])

    @pytest.mark.unit
    def test_next_slot_init_needs_the_transformer(self):
        with pytest.raises(ConfigError, match="use_xslot"):
            parse_config(overrides=["use_dtst=false"])
        cfg = parse_config(overrides=["use_dtst=false", "use_xslot=false"])
        assert not cfg.use_dtst and not cfg.use_xslot

    @pytest.mark.unit
    def test_patch_size_must_divide_canvas(self):
        with pytest.raises(ConfigError, match="'P'"):
            parse_config(overrides=["P=7"])


class TestConfigFile:
    @pytest.mark.unit
    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"K": 4, "theta": 0.8}), encoding="utf-8")
        cfg = parse_config(path, overrides=["theta=0.85"])
        assert cfg.K == 4
        assert cfg.theta == pytest.approx(0.85)

    @pytest.mark.unit
    def test_base_is_applied_first(self, tmp_path):
        cfg = parse_config(overrides=["stage=stage2"], base={"K": 3, "stage": "pretrain"})
        assert (cfg.K, cfg.stage) == (3, "stage2")

    @pytest.mark.unit
    def test_round_trip_through_dict(self):
        cfg = RunConfig(K=6, theta=0.7)
        assert RunConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.unit
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "nope.json")

    @pytest.mark.unit
    def test_non_object_file(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigError, match="JSON object"):
            parse_config(path)
