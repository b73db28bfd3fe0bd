"""Config file format: round-trip fidelity and strict rejection."""

import dataclasses

import pytest

from rdgan.config import (
    RunConfig,
    build_model_configs,
    format_config,
    head_config,
    load_config,
    parse_config,
    synthetic_spec,
)
from rdgan.errors import ConfigError


class TestRoundTrip:
    def test_defaults_survive_format_parse(self):
        cfg = RunConfig()
        assert parse_config(format_config(cfg)) == cfg

    def test_modified_values_survive(self):
        cfg = RunConfig(
            seed=17,
            precision="single",
            shapes=("square", "circle", "triangle"),
            base_channels=(8, 4),
            base_size=8,
            frame_size=32,
            lr=0.0002,
            beta1=0.123456789,
            pretrain=False,
            g_loss="saturating",
            out_dir="runs/exp one",
        )
        assert parse_config(format_config(cfg)) == cfg

    def test_float_repr_is_exact(self):
        # repr() floats parse back to the identical bits
        cfg = RunConfig(lr=1.0000000001e-4, head_dropout=0.30000000000000004)
        again = parse_config(format_config(cfg))
        assert again.lr == cfg.lr
        assert again.head_dropout == cfg.head_dropout

    def test_every_field_present_in_output(self):
        text = format_config(RunConfig())
        keys = [line.split(" = ")[0] for line in text.splitlines()]
        assert keys == [f.name for f in dataclasses.fields(RunConfig)]
        assert text.endswith("\n")


class TestParsing:
    def test_overrides_apply_on_base(self):
        base = RunConfig(seed=3, steps=10)
        out = parse_config("steps = 20\nbatch_size = 2\n", base)
        assert out.seed == 3
        assert out.steps == 20
        assert out.batch_size == 2

    def test_comments_and_blanks_ignored(self):
        out = parse_config("# a comment\n\n   \nseed = 5\n# another\n")
        assert out.seed == 5

    def test_whitespace_around_assignment(self):
        assert parse_config("seed=9").seed == 9
        assert parse_config("  seed   =   9  ").seed == 9

    def test_string_tuple(self):
        out = parse_config("colors = red, green ,blue")
        assert out.colors == ("red", "green", "blue")

    def test_int_tuple(self):
        out = parse_config("d_channels = 4, 8,16")
        assert out.d_channels == (4, 8, 16)

    def test_empty_tuple(self):
        assert parse_config("colors =").colors == ()

    def test_bools(self):
        assert parse_config("pretrain = false").pretrain is False
        assert parse_config("pretrain = true").pretrain is True

    def test_unknown_key_rejected_with_line_number(self):
        with pytest.raises(ConfigError, match=r"line 2: unknown key 'leraning_rate'"):
            parse_config("seed = 1\nleraning_rate = 0.1\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match=r"line 3: duplicate key 'seed'"):
            parse_config("seed = 1\nsteps = 5\nseed = 2\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match=r"line 1: expected `key = value`"):
            parse_config("seed: 1")

    def test_bad_int_rejected(self):
        with pytest.raises(ConfigError, match="config key seed"):
            parse_config("seed = ten")

    def test_bad_bool_rejected(self):
        with pytest.raises(ConfigError, match="expected true or false"):
            parse_config("pretrain = yes")

    def test_bad_tuple_item_rejected(self):
        with pytest.raises(ConfigError, match="config key base_channels"):
            parse_config("base_channels = 8,four")


class TestValidation:
    def test_bad_precision(self):
        with pytest.raises(ConfigError, match="precision must be one of"):
            parse_config("precision = half")

    def test_bad_g_loss(self):
        with pytest.raises(ConfigError, match="g_loss must be one of"):
            parse_config("g_loss = wasserstein")

    @pytest.mark.parametrize("line", ["count = -1", "steps = -5", "pretrain_steps = -1", "checkpoint_every = -2"])
    def test_negative_counts_rejected(self, line):
        with pytest.raises(ConfigError, match="must be >= 0"):
            parse_config(line)

    @pytest.mark.parametrize("line", ["batch_size = 0", "head_steps = 0", "head_batch_size = 0"])
    def test_zero_batches_rejected(self, line):
        with pytest.raises(ConfigError, match="must be >= 1"):
            parse_config(line)


class TestLoadConfig:
    def test_reads_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 11\nsteps = 3\n", encoding="utf-8")
        out = load_config(path)
        assert (out.seed, out.steps) == (11, 3)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="config file not found"):
            load_config(tmp_path / "absent.cfg")


class TestDerivedConfigs:
    def test_model_configs_mirror_run(self):
        run = RunConfig()
        g, d = build_model_configs(run)
        assert g.levels == len(run.base_channels) == 3
        assert g.frame_size == run.frame_size == 32
        assert g.base_channels == run.base_channels
        assert d.blocks == len(run.d_channels) == 3
        assert d.channels == run.d_channels
        assert d.timesteps == run.timesteps
        assert g.cond_dim == d.cond_dim == run.cond_dim

    def test_depth_follows_channel_lists(self):
        run = RunConfig(base_channels=(8, 4), frame_size=16, d_channels=(4,))
        g, d = build_model_configs(run)
        assert g.levels == 2
        assert d.blocks == 1

    def test_geometry_mismatch_rejected(self):
        # 4 doubled twice is 16, not 32
        run = RunConfig(base_channels=(8, 4))
        with pytest.raises(ConfigError, match="frame_size"):
            build_model_configs(run)

    def test_synthetic_spec_mirrors_run(self):
        run = RunConfig(shapes=("square",), directions=("left", "right", "up"))
        spec = synthetic_spec(run)
        assert spec.shapes == run.shapes
        assert spec.class_count == 3
        assert spec.frame_size == run.frame_size
        assert spec.timesteps == run.timesteps

    def test_head_config_mirrors_run(self):
        run = RunConfig(head_steps=7, head_lr=0.01, head_dropout=0.25, holdout_fraction=0.3)
        cfg = head_config(run, "conv", 4, 0.5)
        assert cfg.variant == "conv"
        assert cfg.class_count == 4
        assert cfg.label_fraction == 0.5
        assert (cfg.steps, cfg.lr, cfg.dropout, cfg.holdout_fraction) == (7, 0.01, 0.25, 0.3)
