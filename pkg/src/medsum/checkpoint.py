"""JSON checkpoint format for named parameter arrays.

Layout::

    {"format": "medsum-checkpoint", "version": 1, "header": {...},
     "params": [{"name": ..., "shape": [...], "values": [...]}, ...]}

Values are written with ``repr`` precision so a save/load round trip is bit
exact.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

FORMAT = "medsum-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: Dict[str, np.ndarray], header: Dict[str, Any] | None = None) -> str:
    entries = []
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape),
                        "values": [float(v) for v in arr.reshape(-1)]})
    doc = {"format": FORMAT, "version": VERSION, "header": header or {}, "params": entries}
    return json.dumps(doc, sort_keys=True)


def loads(text: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from exc
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    params = {}
    for entry in doc["params"]:
        shape = tuple(entry["shape"])
        values = np.array(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(
                f"{entry['name']}: {values.size} values do not fill shape {list(shape)}"
            )
        params[entry["name"]] = values.reshape(shape)
    return params, doc.get("header", {})


def save(path, params, header=None) -> None:
    Path(path).write_text(dumps(params, header), encoding="utf-8")


def load(path):
    return loads(Path(path).read_text(encoding="utf-8"))
