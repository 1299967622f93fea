# load_resources.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Jinja2 templates for the run report.

A report.html in ~/.local/share/surrogate_kit/templates (see file_locations.py)
wins over the one shipped in the package.

render_template(name, **params) -> str
"""

import math

from jinja2 import ChoiceLoader, Environment, FileSystemLoader, PackageLoader, select_autoescape

from surrogate_kit.file_locations import get_search_list


def significant(value, digits: int = 6) -> str:
    """Template filter: a number to `digits` significant digits; NaN as 'n/a'."""
    value = float(value)
    if math.isnan(value):
        return "n/a"
    return f"{value:.{digits}g}"


report_environment = Environment(
    loader=ChoiceLoader(
        [
            FileSystemLoader(get_search_list("templates")),
            PackageLoader("surrogate_kit", package_path="templates"),
        ]
    ),
    # Report contents are run data, never markup
    autoescape=select_autoescape(["html"]),
    trim_blocks=True,
    lstrip_blocks=True,
)
report_environment.filters["sig"] = significant


def render_template(name: str, **params) -> str:
    return report_environment.get_template(name).render(**params)
