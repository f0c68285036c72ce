"""The bundled synthetic testbed and its JSON format.

A testbed file is a JSON list of objects::

    {"id": "V", "closed": false, "vertices": [[5, 16], [12, 7], [19, 16]], "max_segments": 2}

Coordinates are millimetres in the sheet's rest frame.
"""
from __future__ import annotations

import json
from pathlib import Path

from .contour import Contour, load_contours

# Shapes sized for the default 25x25 sheet, kept clear of the clamped frame.
SYNTHETIC = (
    {"id": "arc", "closed": False, "max_segments": 1,
     "vertices": [[6, 8], [8, 12], [11, 15], [15, 17], [19, 18]]},
    {"id": "V", "closed": False, "max_segments": 2,
     "vertices": [[5, 16], [12, 7], [19, 16]]},
    {"id": "Z", "closed": False, "max_segments": 3,
     "vertices": [[6, 18], [18, 18], [6, 6], [18, 6]]},
    {"id": "tri", "closed": True, "max_segments": 3,
     "vertices": [[6, 6], [18, 6], [12, 18]]},
    {"id": "angle", "closed": False, "max_segments": 2,
     "vertices": [[18, 5], [6, 12], [18, 19]]},
    {"id": "W", "closed": False, "max_segments": 3,
     "vertices": [[5, 8], [9, 17], [13, 9], [17, 17], [20, 8]]},
)


def synthetic_entries() -> list[dict]:
    return [dict(e, vertices=[list(v) for v in e["vertices"]]) for e in SYNTHETIC]


def synthetic_testbed() -> list[tuple[Contour, int]]:
    return load_contours(synthetic_entries())


def dumps_testbed(entries) -> str:
    return json.dumps(list(entries), indent=2) + "\n"


def write_testbed(path, entries=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_testbed(synthetic_entries() if entries is None else entries))
    return path


def read_testbed(path) -> list[tuple[Contour, int]]:
    """Load a testbed file; JSON errors carry the line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"testbed file not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(doc, list):
        raise ValueError(f"{path}: expected a JSON list of contour entries")
    try:
        return load_contours(doc)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
