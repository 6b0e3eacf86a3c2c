"""Config parsing, checkpoints, random streams, the variance table and the oracle suite."""

from dataclasses import dataclass

import numpy as np
import pytest

from vod import oracle, rng
from vod.checkpoint import load_model, save_model
from vod.config import ConfigError, check_sections, fill_dataclass, parse_config
from vod.errors import InvalidArgument
from vod.scoring import DUAL, LINEAR, Corpus, FeatureSpace, ScoreModel
from vod.variance import rows_to_csv, variance_table


@dataclass(frozen=True)
class Demo:
    rate: float = 0.1
    steps: int = 3
    name: str = "x"
    flag: bool = False
    grid: tuple = (1, 2)


class TestConfig:
    def test_parse(self):
        sections = parse_config("# top\n[demo]\nrate = 0.5  # inline\nsteps=7\n\n[other]\n")
        assert sections["demo"]["rate"].value == "0.5"
        assert sections["demo"]["steps"].lineno == 4
        assert sections["other"] == {}

    def test_fill(self):
        sec = parse_config("[d]\nrate = 0.5\nflag = yes\ngrid = 3, 4 5\n")["d"]
        assert fill_dataclass(Demo, sec, "f") == Demo(rate=0.5, flag=True, grid=(3, 4, 5))

    def test_overrides_win(self):
        sec = parse_config("[d]\nsteps = 4\n")["d"]
        assert fill_dataclass(Demo, sec, "f", steps=9).steps == 9

    @pytest.mark.parametrize(
        "text, line",
        [("[d]\nrate 0.5\n", 2), ("rate = 1\n", 1), ("[d]\nrate = 1\nrate = 2\n", 3), ("[d\n", 1),
         ("[d]\n[d]\n", 2)],
    )
    def test_syntax_errors_name_the_line(self, text, line):
        with pytest.raises(ConfigError) as exc:
            parse_config(text, "cfg")
        assert exc.value.lineno == line
        assert str(exc.value).startswith(f"cfg:{line}:")

    def test_bad_value(self):
        sec = parse_config("[d]\n\nsteps = many\n")["d"]
        with pytest.raises(ConfigError, match="cfg:3:"):
            fill_dataclass(Demo, sec, "cfg")

    def test_unknown_key(self):
        sec = parse_config("[d]\nspeed = 1\n")["d"]
        with pytest.raises(ConfigError, match="cfg:2:"):
            fill_dataclass(Demo, sec, "cfg")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown section"):
            check_sections(parse_config("[zzz]\na = 1\n"), {"d": None}, "cfg")

    def test_is_invalid_argument(self):
        assert issubclass(ConfigError, InvalidArgument)


class TestCheckpoint:
    @pytest.mark.parametrize("kind", [LINEAR, DUAL])
    def test_round_trip(self, tmp_path, kind):
        space = FeatureSpace(Corpus.from_texts(["a b c", "b c d", "e"]), n_indicators=2)
        model = ScoreModel.random(space, kind, 4, dim=3, std=0.7, scale=1.5)
        save_model(tmp_path / "m.ckpt", model, space.indicator_terms)
        loaded, terms = load_model(tmp_path / "m.ckpt")
        assert loaded.kind == kind and loaded.dim == model.dim and loaded.scale == 1.5
        np.testing.assert_array_equal(loaded.params, model.params)
        assert terms == space.indicator_terms

    def test_rejects_other_files(self, tmp_path):
        (tmp_path / "x").write_text("hello\n")
        with pytest.raises(InvalidArgument):
            load_model(tmp_path / "x")

    def test_truncated(self, tmp_path):
        space = FeatureSpace(Corpus.from_texts(["a b"]), n_indicators=1)
        save_model(tmp_path / "m.ckpt", ScoreModel.zeros(space), space.indicator_terms)
        text = (tmp_path / "m.ckpt").read_text().splitlines()
        (tmp_path / "m.ckpt").write_text("\n".join(text[:-1]) + "\n")
        with pytest.raises(InvalidArgument):
            load_model(tmp_path / "m.ckpt")


class TestRng:
    def test_children_are_independent(self):
        a = rng.generator(rng.child(5, 0)).random(4)
        b = rng.generator(rng.child(5, 1)).random(4)
        assert not np.allclose(a, b)
        np.testing.assert_array_equal(a, rng.generator((5, 0)).random(4))

    def test_open_closed(self):
        u = rng.uniform_open_closed(rng.generator(0), 10_000)
        assert u.min() > 0 and u.max() <= 1

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            rng.generator(-1)

    def test_large_seed(self):
        rng.generator(2**64 - 1).random()


class TestVarianceTable:
    def test_exhaustive_row_is_zero(self):
        rows = variance_table(n=20, k_grid=(5, 20), replicates=200, seed=0)
        full = [r for r in rows if r.k == 20]
        assert len(full) == 2
        for r in full:
            assert r.priority == 0.0 and r.self_normalized == 0.0

    def test_deterministic_csv(self):
        a = rows_to_csv(variance_table(n=15, k_grid=(3, 6), replicates=100, seed=4))
        b = rows_to_csv(variance_table(n=15, k_grid=(3, 6), replicates=100, seed=4))
        assert a == b
        assert a.splitlines()[0] == "setting,K,mc_var,priority_var,self_normalized_var"
        assert len(a.splitlines()) == 5

    def test_bad_setting(self):
        with pytest.raises(InvalidArgument):
            variance_table(n=5, k_grid=(2,), replicates=10, settings=("other",))


class TestOracleSuite:
    def test_clean_suite_passes(self):
        results = oracle.run_suite(seed=1, quick=True)
        assert all(r.passed for r in results), [r.line() for r in results if not r.passed]
        names = [r.name for r in results]
        assert len(names) == len(set(names)) == 13

    def test_fault_is_detected(self):
        failed = {r.name for r in oracle.run_suite(seed=1, fault=0.1, quick=True) if not r.passed}
        assert {"vod-objective-consistency", "vod-gradient-consistency", "mcqa-objective-consistency"} <= failed

    def test_report_line(self):
        line = oracle.CheckResult("x", True, 1e-12, 1e-9).line()
        assert line == "PASS x max_error=1.000e-12 tolerance=1.0e-09"
