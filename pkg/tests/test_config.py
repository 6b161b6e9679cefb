"""Config loading: validation, path resolution, overrides."""

from __future__ import annotations

import json

import pytest

from driveforge.config import LlmSettings, Paths, PipelineConfig, load_config
from driveforge.errors import ConfigError

MINIMAL = {
    "paths": {"corpus": "corpus.jsonl", "output": "out"},
    "llm": {"mode": "replay", "replay": "replay.jsonl"},
}


def write_config(tmp_path, obj, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


class TestDefaults:
    def test_minimal_config_gets_documented_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path, MINIMAL))
        assert cfg.k == 3
        assert cfg.retrieval_mode == "text_only"
        assert cfg.conversation_ratio == 1.0
        assert cfg.max_len == 1024
        assert cfg.seed == 0
        assert cfg.embedding_dim == 64
        assert cfg.llm.max_concurrency == 4
        assert cfg.llm.max_retries == 2
        assert cfg.llm.model == "reference"

    def test_direct_construction_validates_too(self):
        with pytest.raises(ConfigError, match="k must be"):
            PipelineConfig(
                paths=Paths(corpus="c", output="o"),
                k=0,
                llm=LlmSettings(replay="r.jsonl"),
            )


class TestRejections:
    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key.*retreival_mode"):
            load_config(write_config(tmp_path, {**MINIMAL, "retreival_mode": "union"}))

    def test_unknown_paths_key(self, tmp_path):
        bad = {**MINIMAL, "paths": {**MINIMAL["paths"], "corpse": "x"}}
        with pytest.raises(ConfigError, match="unknown paths key.*corpse"):
            load_config(write_config(tmp_path, bad))

    def test_unknown_llm_key(self, tmp_path):
        bad = {**MINIMAL, "llm": {**MINIMAL["llm"], "api_key": "secret"}}
        with pytest.raises(ConfigError, match="unknown llm key.*api_key"):
            load_config(write_config(tmp_path, bad))

    def test_missing_paths_section(self, tmp_path):
        with pytest.raises(ConfigError, match="missing required 'paths'"):
            load_config(write_config(tmp_path, {"k": 3}))

    def test_missing_corpus(self, tmp_path):
        with pytest.raises(ConfigError, match="corpus"):
            load_config(write_config(tmp_path, {**MINIMAL, "paths": {"output": "out"}}))

    def test_missing_output(self, tmp_path):
        with pytest.raises(ConfigError, match="output"):
            load_config(write_config(tmp_path, {**MINIMAL, "paths": {"corpus": "c.jsonl"}}))

    @pytest.mark.parametrize(
        "patch, message",
        [
            ({"k": 0}, "k must be >= 1"),
            ({"retrieval_mode": "video_only"}, "retrieval_mode"),
            ({"conversation_ratio": 1.5}, "conversation_ratio"),
            ({"conversation_ratio": -0.1}, "conversation_ratio"),
            ({"max_len": 32}, "max_len"),
            ({"seed": -1}, "seed"),
            ({"seed": 2**64}, "seed"),
            ({"embedding_dim": 0}, "embedding_dim"),
        ],
    )
    def test_scalar_invariants(self, tmp_path, patch, message):
        with pytest.raises(ConfigError, match=message):
            load_config(write_config(tmp_path, {**MINIMAL, **patch}))

    def test_live_mode_requires_endpoint(self, tmp_path):
        bad = {**MINIMAL, "llm": {"mode": "live"}}
        with pytest.raises(ConfigError, match="endpoint"):
            load_config(write_config(tmp_path, bad))

    def test_replay_mode_requires_fixture_path(self, tmp_path):
        bad = {**MINIMAL, "llm": {"mode": "replay"}}
        with pytest.raises(ConfigError, match="replay"):
            load_config(write_config(tmp_path, bad))

    def test_unknown_llm_mode(self, tmp_path):
        bad = {**MINIMAL, "llm": {"mode": "cached", "replay": "r"}}
        with pytest.raises(ConfigError, match="llm.mode"):
            load_config(write_config(tmp_path, bad))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "nope.json")

    def test_non_object_root(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("[1, 2, 3]", encoding="utf-8")
        with pytest.raises(ConfigError, match="object"):
            load_config(path)

    def test_non_object_paths_section(self, tmp_path):
        with pytest.raises(ConfigError, match="paths must be an object"):
            load_config(write_config(tmp_path, {**MINIMAL, "paths": "corpus.jsonl"}))


class TestPathResolution:
    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        nested = tmp_path / "configs"
        nested.mkdir()
        cfg = load_config(write_config(nested, MINIMAL))
        assert cfg.paths.corpus == str(nested / "corpus.jsonl")
        assert cfg.paths.output == str(nested / "out")
        assert cfg.llm.replay == str(nested / "replay.jsonl")

    def test_absolute_paths_pass_through(self, tmp_path):
        obj = {
            "paths": {"corpus": "/data/corpus.jsonl", "output": "/data/out"},
            "llm": {"mode": "replay", "replay": "/data/replay.jsonl"},
        }
        cfg = load_config(write_config(tmp_path, obj))
        assert cfg.paths.corpus == "/data/corpus.jsonl"
        assert cfg.llm.replay == "/data/replay.jsonl"

    def test_empty_optional_paths_stay_empty(self, tmp_path):
        cfg = load_config(write_config(tmp_path, MINIMAL))
        assert cfg.paths.templates == ""
        assert cfg.paths.embeddings == ""
        assert cfg.paths.vqa == ""

    def test_resolution_is_cwd_independent(self, tmp_path, monkeypatch):
        path = write_config(tmp_path, MINIMAL)
        first = load_config(path)
        monkeypatch.chdir(tmp_path.parent)
        assert load_config(path) == first


class TestOverrides:
    def test_scalar_overrides_apply(self, tmp_path):
        cfg = load_config(
            write_config(tmp_path, MINIMAL),
            overrides={"seed": 99, "k": 1, "retrieval_mode": "union"},
        )
        assert (cfg.seed, cfg.k, cfg.retrieval_mode) == (99, 1, "union")

    def test_overrides_are_validated(self, tmp_path):
        with pytest.raises(ConfigError, match="k must be"):
            load_config(write_config(tmp_path, MINIMAL), overrides={"k": 0})

    def test_unknown_override_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown override.*kk"):
            load_config(write_config(tmp_path, MINIMAL), overrides={"kk": 5})

    def test_no_overrides_is_lossless(self, tmp_path):
        path = write_config(tmp_path, MINIMAL)
        assert load_config(path) == load_config(path, overrides=None)
