"""Plain-text score-model checkpoints.

Layout::

    vod-checkpoint 1
    kind linear-features
    dim 35
    scale 1.0
    indicators tok1 tok2 ...
    params 35
    <one parameter per line>
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .scoring import ScoreModel

MAGIC = "vod-checkpoint"
VERSION = 1


def save_model(path: str | Path, model: ScoreModel, indicator_terms=()) -> None:
    lines = [
        f"{MAGIC} {VERSION}",
        f"kind {model.kind}",
        f"dim {model.dim}",
        f"scale {model.scale!r}",
        "indicators " + " ".join(indicator_terms),
        f"params {model.params.size}",
    ]
    lines += [repr(float(x)) for x in model.params]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> tuple[ScoreModel, tuple[str, ...]]:
    """Return the model and the indicator vocabulary of the feature space it was trained on."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split() != [MAGIC, str(VERSION)]:
        raise InvalidArgument(f"{path}: not a version-{VERSION} checkpoint")
    header = {}
    for lineno, line in enumerate(lines[1:6], 2):
        key, _, value = line.partition(" ")
        header[key] = value
    missing = {"kind", "dim", "scale", "indicators", "params"} - header.keys()
    if missing:
        raise InvalidArgument(f"{path}: missing header fields {sorted(missing)}")
    n = int(header["params"])
    body = lines[6:]
    if len(body) != n:
        raise InvalidArgument(f"{path}: expected {n} parameters, found {len(body)}")
    params = np.array([float(x) for x in body], dtype=np.float64)
    model = ScoreModel(header["kind"], params, int(header["dim"]), float(header["scale"]))
    return model, tuple(header["indicators"].split())
