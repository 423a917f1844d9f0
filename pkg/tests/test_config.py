import pytest

from objstereo.config import METHODS, PipelineConfig, describe, load_config, method_config, save_config, toy_config


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = method_config(8, toy_config(), selective_margin=2.5)
        save_config(tmp_path / "c.json", cfg)
        assert load_config(tmp_path / "c.json") == cfg

    def test_defaults_for_missing_keys(self, tmp_path):
        (tmp_path / "c.json").write_text('{"d_max": 32}')
        cfg = load_config(tmp_path / "c.json")
        assert cfg.d_max == 32
        assert cfg.replace(d_max=48) == PipelineConfig()

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.json").write_text('{"dmax": 32}')
        with pytest.raises(ValueError, match="c.json: unknown config keys: dmax"):
            load_config(tmp_path / "c.json")

    def test_bad_json_names_path(self, tmp_path):
        (tmp_path / "c.json").write_text("{")
        with pytest.raises(ValueError, match="c.json"):
            load_config(tmp_path / "c.json")

    def test_validation(self):
        with pytest.raises(ValueError, match="fusion"):
            PipelineConfig(fusion="4d")
        with pytest.raises(ValueError, match="rpn_on"):
            PipelineConfig(rpn_on=False)
        with pytest.raises(ValueError, match="multiple of 8"):
            PipelineConfig(roi_size=12)


class TestMethods:
    def test_full_model(self):
        cfg = method_config(5)
        assert (cfg.rpn_on, cfg.header_on, cfg.deep_sample_on, cfg.selective_on) == (True, True, True, True)
        assert cfg.sample_mode == "selective"

    def test_disparity_only(self):
        cfg = method_config(1)
        assert not (cfg.rpn_on or cfg.header_on)
        assert describe(cfg).startswith("disparity-only")

    def test_volume_and_fusion_rows(self):
        rows = {m: (method_config(m).input_volume, method_config(m).fusion) for m in (6, 7, 8, 9)}
        assert rows == {6: ("costV", "none"), 7: ("costA", "none"), 8: ("costV", "2d"), 9: ("costV", "3d")}

    def test_sampling_progression(self):
        assert [method_config(m).sample_mode for m in (3, 4, 5)] == ["trilinear", "deep", "selective"]

    def test_all_valid_and_distinct_flags(self):
        seen = set()
        for m in METHODS:
            c = method_config(m)
            seen.add((c.rpn_on, c.header_on, c.deep_sample_on, c.selective_on, c.fusion, c.input_volume))
        assert len(seen) == 8  # Method 9 repeats Method 5's flags as the 3d-fusion row

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown method"):
            method_config(10)
