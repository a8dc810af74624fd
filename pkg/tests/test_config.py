from pathlib import Path

import pytest

from app.core.config import AuditConfig, Settings, derive_seed, load_audit_config
from app.core.errors import ConfigError
from app.core.logging import configure_logging


EXAMPLE_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "audit.example.yaml"


def _write(tmp_path, text, name="audit.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_example_config_loads():
    config = load_audit_config(EXAMPLE_CONFIG)
    assert config.seed == 7
    assert config.formats == ["online", "residential"]
    assert config.data.profile_overrides["online"]["gender_signal"] == 0.08
    assert config.data.profile_overrides["online"]["protected_effect"]["gender"] == -1.0
    assert len(config.grids.configs("GBT")) == 2 * 4 * 3 * 2


def test_defaults():
    config = AuditConfig(seed=1)
    assert config.algorithms == ["GBT", "LR"]
    assert config.test_cohort == 2018
    assert config.cv_folds == 5
    assert config.histogram_bins == 20
    assert config.ranking_bins == 40
    assert config.confidence_level == 0.95


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_audit_config(tmp_path / "absent.yaml")


def test_invalid_yaml(tmp_path):
    with pytest.raises(ConfigError):
        load_audit_config(_write(tmp_path, "seed: [1, 2\n"))


def test_config_must_be_a_mapping(tmp_path):
    with pytest.raises(ConfigError):
        load_audit_config(_write(tmp_path, "- 1\n- 2\n"))


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_audit_config(_write(tmp_path, "seed: 1\nlearning_rate: 0.1\n"))


def test_seed_is_required(tmp_path):
    with pytest.raises(ConfigError):
        load_audit_config(_write(tmp_path, "formats: [online]\n"))


def test_duplicate_formats_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_audit_config(_write(tmp_path, "seed: 1\nformats: [online, online]\n"))


def test_csv_source_needs_paths_for_every_format(tmp_path):
    text = "seed: 1\nformats: [online, residential]\ndata:\n  source: csv\n  csv:\n    online:\n      students: s.csv\n      courses: c.csv\n"
    with pytest.raises(ConfigError):
        load_audit_config(_write(tmp_path, text))


def test_csv_paths_resolve_against_config_file(tmp_path):
    text = "seed: 1\nformats: [online]\ndata:\n  source: csv\n  csv:\n    online:\n      students: data/s.csv\n      courses: data/c.csv\n"
    config = load_audit_config(_write(tmp_path, text))
    assert config.data.csv["online"].students == (tmp_path / "data" / "s.csv").resolve()


def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(7, "cv") == derive_seed(7, "cv")
    assert derive_seed(7, "cv") != derive_seed(7, "gbt")
    assert derive_seed(7, "cv") != derive_seed(8, "cv")
    assert 0 <= derive_seed(7, "cv") < 2**32
    assert AuditConfig(seed=7).stream_seed("cv") == derive_seed(7, "cv")


def test_settings_read_environment(monkeypatch):
    monkeypatch.setenv("FAIRDROP_WORKERS", "3")
    monkeypatch.setenv("FAIRDROP_LOG_LEVEL", "DEBUG")
    settings = Settings()
    assert settings.workers == 3
    assert settings.log_level == "DEBUG"
    assert (settings.template_dir / "summary.md.j2").exists()


def test_invalid_log_level():
    with pytest.raises(ConfigError):
        configure_logging("LOUD")
