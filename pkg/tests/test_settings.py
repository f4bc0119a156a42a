import logging

import pytest

from app import create_app
from avgzsl.errors import ConfigError
from avgzsl.settings import DEFAULTS, coerce, load_config_file, log_level, resolve_settings


def test_defaults_cover_training_and_generator_keys():
    for key in ('epochs', 'batch_size', 'learning_rate', 'optimizer', 'seed', 'margin',
                'seen', 'unseen', 'per_class', 'noise', 'log_level'):
        assert key in DEFAULTS
    assert DEFAULTS['optimizer'] == 'adaptive-moment'
    assert DEFAULTS['learning_rate'] == 1e-3


def test_coerce_follows_default_type():
    assert coerce('epochs', ' 12 ') == 12
    assert coerce('learning_rate', '0.5') == 0.5
    assert coerce('optimizer', 'plain-sgd') == 'plain-sgd'
    with pytest.raises(ConfigError):
        coerce('epochs', 'many')
    with pytest.raises(ConfigError):
        coerce('colour', 'blue')


def test_config_file_parsing(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('# toy run\nepochs = 3\n\nbatch-size=16  # small\nmargin=0.5\n', encoding='utf-8')
    assert load_config_file(path) == {'epochs': 3, 'batch_size': 16, 'margin': 0.5}


def test_config_file_unknown_key_names_line(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('epochs=3\nwarp=9\n', encoding='utf-8')
    with pytest.raises(ConfigError, match=':2:'):
        load_config_file(path)


def test_config_file_malformed_line(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('epochs\n', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_config_file(path)


def test_config_file_invalid_utf8(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_bytes(b'epochs=3\n# \xff\xfe\n')
    with pytest.raises(ConfigError, match='UTF-8'):
        load_config_file(path)


def test_holdout_defaults_off(tmp_path):
    assert DEFAULTS['holdout_classes'] == 0
    path = tmp_path / 'run.cfg'
    path.write_text('holdout-classes = 2\n', encoding='utf-8')
    assert load_config_file(path) == {'holdout_classes': 2}


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config_file(tmp_path / 'absent.cfg')


def test_precedence_flags_over_file_over_defaults(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('epochs=3\nseed=9\n', encoding='utf-8')
    settings = resolve_settings({'seed': 4, 'margin': None}, path)
    assert settings['seed'] == 4
    assert settings['epochs'] == 3
    assert settings['margin'] == DEFAULTS['margin']


@pytest.mark.parametrize('name,level', [('quiet', logging.WARNING), ('info', logging.INFO), ('DEBUG', logging.DEBUG)])
def test_log_levels(name, level):
    assert log_level(name) == level


def test_bad_log_level():
    with pytest.raises(ConfigError):
        log_level('loud')


def test_app_reads_log_level_from_environment(monkeypatch):
    monkeypatch.setenv('AVGZSL_LOG', 'debug')
    app = create_app()
    assert app.logger.level == logging.DEBUG


def test_app_defaults_on_config(monkeypatch):
    monkeypatch.delenv('AVGZSL_LOG', raising=False)
    app = create_app({'TESTING': True})
    assert app.name == 'avgzsl'
    assert app.config['EPOCHS'] == DEFAULTS['epochs']
    assert app.logger.level == logging.INFO
