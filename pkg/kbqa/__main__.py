#!/usr/bin/env python

# Copyright (c) 2024 kbqa-answerability contributors
# SPDX-License-Identifier: Apache-2.0

import logging
import os
import sys
import typer

from pathlib import Path
from typing import Annotated, List, Optional

from kbqa import env
from kbqa.commands import (
    ablate, compare, evaluate, generate, kb_validate, perturb, predict, train, tune_threshold_command,
)

# click exceptions as raised by typer, which may bundle its own click
click_exceptions = sys.modules[typer.BadParameter.__module__]

app = typer.Typer(no_args_is_help=True, add_completion=False)

kb_app = typer.Typer(no_args_is_help=True, help="Knowledge base maintenance.")
kb_app.command("validate")(kb_validate)
app.add_typer(kb_app, name="kb")

app.command()(perturb)

app.command()(generate)

app.command()(train)

app.command("tune-threshold")(tune_threshold_command)

app.command()(predict)

app.command()(evaluate)

app.command()(ablate)

app.command()(compare)


@app.callback()
def set_logging(log_level: Optional[str] = None,
                config: Annotated[Optional[Path], typer.Option(
                    help="YAML file mapping dotted keys to values, e.g. 'retriever.top_k: 10'")] = None,
                overrides: Annotated[Optional[List[str]], typer.Option(
                    "--set", help="key=value override, value read as YAML; repeatable, last wins")] = None):
    """
    Configuration is applied as defaults, then the --config YAML file, then --set overrides,
    then the RETINA_SEED environment variable.
    """
    if not log_level:
        log_level = os.environ.get('LOGLEVEL', 'INFO').upper()
    logging.basicConfig(level=log_level, format="%(levelname)s:KBQA: %(message)s")
    env.configure(config, overrides or [])


def main():
    logging.addLevelName(logging.INFO, "\033[1;34m%s\033[1;0m" % logging.getLevelName(logging.INFO))
    logging.addLevelName(logging.WARNING, "\033[1;33m%s\033[1;0m" % logging.getLevelName(logging.WARNING))
    logging.addLevelName(logging.ERROR, "\033[1;31m%s\033[1;0m" % logging.getLevelName(logging.ERROR))

    try:
        app(standalone_mode=False)
    except click_exceptions.UsageError as e:
        e.show()
        sys.exit(1)
    except click_exceptions.ClickException as e:
        e.show()
        sys.exit(e.exit_code)
    except click_exceptions.Abort:
        sys.exit(1)


if __name__ == "__main__":
    main()
