"""Boundary benchmark with distance-tolerant pixel matching, edge-map
preparation utilities and forward kernels of a sub-pixel refinement pathway."""

import json
from importlib import resources

__version__ = "0.1.0"


def load_schema(name: str) -> dict:
    """Published JSON schema: ``"report"`` or ``"sweep"``."""
    return json.loads(resources.files(__package__).joinpath("schemas", f"{name}.schema.json").read_text())
