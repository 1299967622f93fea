# __init__.py
# Init file for surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
