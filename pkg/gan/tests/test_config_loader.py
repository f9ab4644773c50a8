#!/usr/bin/env python3
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from cgan.config_loader import (
    ENV_OUT_DIR,
    build_config,
    config_from_echo,
    load_config_file,
    load_default_config,
    parse_key_value_text,
)
from cgan.errors import UsageError
from cgan.training import TrainConfig, write_config_echo


@pytest.fixture(autouse=True)
def no_env_out(monkeypatch):
    monkeypatch.delenv(ENV_OUT_DIR, raising=False)


def test_defaults():
    config = build_config()
    assert config == TrainConfig()
    assert config.lr == 0.0002 and config.beta1 == 0.5 and config.z_dim == 100


def test_key_value_file(tmp_path):
    path = tmp_path / 'run.conf'
    path.write_text("# desk run\nepochs = 30\nbatch-size = 32\nout = 'runs/a'\n\nsnapshot_epochs = 1, 5, 30\n")
    values = load_config_file(path)
    config = build_config(values)
    assert config.epochs == 30 and config.batch_size == 32
    assert config.out == 'runs/a'
    assert config.snapshot_epochs == (1, 5, 30)


def test_yaml_file_with_section(tmp_path):
    path = tmp_path / 'config.yaml'
    path.write_text("training:\n  epochs: 12\n  lr: 0.001\n  g_widths: [16, 8, 4]\n  master_seed: 9\n")
    config = build_config(load_config_file(path))
    assert config.epochs == 12 and config.lr == 0.001
    assert config.g_widths == (16, 8, 4)
    assert config.seed == 9


def test_flags_beat_file_beat_env(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUT_DIR, 'from-env')
    assert build_config().out == 'from-env'
    assert build_config({'out': 'from-file'}).out == 'from-file'
    config = build_config({'out': 'from-file', 'epochs': 5}, {'out': 'from-flag', 'epochs': None})
    assert config.out == 'from-flag'
    assert config.epochs == 5


def test_unknown_key_is_usage_error():
    with pytest.raises(UsageError, match="unknown config key 'bogus'"):
        build_config({'bogus': 1})


@pytest.mark.parametrize('values', [{'epochs': 'many'}, {'epochs': 2.5}, {'g_widths': 'a,b'}, {'lr': -1}])
def test_bad_values_are_usage_errors(values):
    with pytest.raises(UsageError):
        build_config(values)


def test_malformed_line():
    with pytest.raises(UsageError, match=':2:'):
        parse_key_value_text("epochs = 3\njust words\n", 'x.conf')


def test_missing_files(tmp_path):
    with pytest.raises(UsageError):
        load_config_file(tmp_path / 'absent.yaml')
    assert load_default_config(tmp_path / 'absent.yaml') == {}


def test_invalid_yaml(tmp_path):
    path = tmp_path / 'bad.yaml'
    path.write_text("training: [unclosed\n")
    with pytest.raises(UsageError):
        load_config_file(path)


def test_echo_round_trip(tmp_path):
    config = build_config({'epochs': 7, 'g_widths': '8,4,2', 'lr': 0.001, 'data': 'data/manifest.tsv'})
    path = write_config_echo(config, tmp_path)
    restored = config_from_echo(path.read_text())
    assert restored.epochs == 7 and restored.g_widths == (8, 4, 2)
    assert restored.lr == 0.001 and restored.data == 'data/manifest.tsv'
    assert restored.snapshots() == config.snapshots()
