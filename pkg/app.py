#!/usr/bin/env python3
"""
Application factory and command-line entry point for the AVGZSL lab
"""

import sys

import click
from flask import Flask

from avgzsl.commands.datasets import bp as datasets_bp
from avgzsl.commands.diagnostics import bp as diagnostics_bp
from avgzsl.commands.evaluation import bp as evaluation_bp
from avgzsl.commands.training import bp as training_bp
from avgzsl.errors import (
    AvgzslError,
    CheckpointError,
    ConfigError,
    DatasetError,
    NonFiniteError,
)
from avgzsl.settings import DEFAULTS, log_level

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_INVALID_INPUT = 4
EXIT_NON_FINITE = 5
EXIT_CONFIG = 6

# checked in order; the first matching class wins
EXIT_CODES = [
    (click.UsageError, EXIT_USAGE),
    (FileNotFoundError, EXIT_MISSING_FILE),
    (DatasetError, EXIT_INVALID_INPUT),
    (CheckpointError, EXIT_INVALID_INPUT),
    (NonFiniteError, EXIT_NON_FINITE),
    (ConfigError, EXIT_CONFIG),
    (AvgzslError, EXIT_ERROR),
    (click.ClickException, EXIT_ERROR),
]


def create_app(overrides=None):
    """Application factory"""
    app = Flask('avgzsl')

    # Configuration: defaults, then AVGZSL_* environment, then explicit overrides
    app.config.from_mapping({key.upper(): value for key, value in DEFAULTS.items()})
    app.config.from_prefixed_env('AVGZSL')
    if overrides:
        app.config.update(overrides)

    app.logger.setLevel(log_level(app.config.get('LOG', app.config['LOG_LEVEL'])))

    # Register commands
    app.register_blueprint(datasets_bp)
    app.register_blueprint(training_bp)
    app.register_blueprint(evaluation_bp)
    app.register_blueprint(diagnostics_bp)

    return app


def exit_code_for(exc: BaseException) -> int:
    for exc_type, code in EXIT_CODES:
        if isinstance(exc, exc_type):
            return code
    return EXIT_ERROR


def _message(exc: BaseException) -> str:
    if isinstance(exc, click.ClickException):
        return exc.format_message()
    return str(exc) or exc.__class__.__name__


def run(argv=None) -> int:
    """Run one command; returns the process exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        app = create_app()
        with app.app_context():
            result = app.cli.main(args=argv, prog_name='avgzsl', standalone_mode=False)
    except (AvgzslError, click.ClickException, FileNotFoundError) as exc:
        click.echo(f'error: {_message(exc)}', err=True)
        return exit_code_for(exc)
    except click.Abort:
        click.echo('error: aborted', err=True)
        return EXIT_ERROR
    except OSError as exc:
        click.echo(f'error: {exc}', err=True)
        return EXIT_ERROR
    return result if isinstance(result, int) else EXIT_OK


if __name__ == '__main__':
    sys.exit(run())
