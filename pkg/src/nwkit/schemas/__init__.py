"""Shipped JSON Schemas for every machine-readable output format."""

import json
from importlib import resources

NAMES = (
    "manifest",
    "eval_report",
    "sweep_report",
    "influence_report",
    "calibrate_report",
    "reliability",
)


def load_schema(name: str) -> dict:
    """Load one of the shipped schemas by short name (e.g. ``"eval_report"``)."""
    if name not in NAMES:
        raise KeyError(f"unknown schema {name!r}; available: {NAMES}")
    path = resources.files(__package__).joinpath(f"{name}.schema.json")
    return json.loads(path.read_text(encoding="utf-8"))
