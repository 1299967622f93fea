# file_locations.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Where surrogate_kit keeps run artifacts and user-supplied templates."""

from os import PathLike
from pathlib import Path

from xdg_base_dirs import xdg_data_home

SYSTEM_DATA_HOME = Path("/var/lib")


def get_surrogate_kit_data_home(system: bool = False) -> Path:
    """~/.local/share/surrogate_kit, or /var/lib/surrogate_kit with system=True."""
    base = SYSTEM_DATA_HOME if system else xdg_data_home()
    return base / "surrogate_kit"


def get_default_run_dir(run_name: str) -> Path:
    """Output directory of a run that wasn't given one: <data home>/runs/<run_name>."""
    return get_surrogate_kit_data_home() / "runs" / run_name


def get_search_list(resource: PathLike | str) -> list[Path]:
    """User-level then system-level directories holding a resource type like "templates".

    The copy inside the package is the last resort; load_resources.py adds it.
    """
    resource = Path(resource)
    assert not resource.is_absolute()
    return [get_surrogate_kit_data_home(system=flag) / resource for flag in (False, True)]
