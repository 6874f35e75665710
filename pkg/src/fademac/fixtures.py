"""Bundled example networks.

Four ready-made network files ship with the package:

* ``single_path``: source -> relay -> destination, unit channel parameters.
* ``diamond``: two parallel two-hop paths to one destination.
* ``butterfly``: the classic two-destination network-coding butterfly
  (nine links; the center path is shared by both destinations).
* ``mesh12``: a 12-node, 20-link mesh with four destinations and
  channel parameter 0.05 on every link.

All four carry multicast rate 2 bits.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .errors import InputError
from .network import NetworkSpec, network_from_dict

FIXTURES = ("single_path", "diamond", "butterfly", "mesh12")


def _resource(name: str):
    if name not in FIXTURES:
        raise InputError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    return resources.files(__package__) / "data" / f"{name}.json"


def load_fixture(name: str) -> NetworkSpec:
    """Load one of the bundled networks by name."""
    return network_from_dict(json.loads(_resource(name).read_text()))


def fixture_path(name: str) -> Path:
    """Filesystem path of a bundled network file (for CLI use)."""
    return Path(str(_resource(name)))
