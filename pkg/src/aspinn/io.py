"""Run artifacts: CSV/JSON writers and readers.

Floats are written with ``repr`` so every value parses back bit-exactly.
All writes go through a temporary file and an atomic rename.
"""

from __future__ import annotations

import json
import math
import os
import platform
import tempfile

import numpy as np
import scipy

from . import __version__
from .model import ModelParams, zone_of_influence

ORDERING = "per node: weight, center[0..d-1], factor lower triangle row-major (l11, l21, l22, ...)"


class ArtifactError(ValueError):
    pass


def fmt(value) -> str:
    value = float(value)
    if math.isnan(value):
        return "nan"
    return repr(value)


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2) + "\n")


def write_csv(path: str, header: list[str], rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in rows)
    atomic_write(path, "\n".join(lines) + "\n")


def read_csv(path: str) -> tuple[list[str], np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(tok) for tok in line.strip().split(",")] for line in fh if line.strip()]
    return header, np.asarray(rows, dtype=np.float64).reshape(-1, len(header))


# -- params / centers --------------------------------------------------------------


def params_to_dict(params: ModelParams) -> dict:
    return {
        "kernel": params.kernel,
        "scale": params.scale,
        "dim": params.dim,
        "n_nodes": params.n_nodes,
        "ordering": ORDERING,
        "layout": params.layout(),
        "values": [float(v) for v in params.flatten()],
    }


def params_from_dict(data: dict) -> ModelParams:
    try:
        dim, n = int(data["dim"]), int(data["n_nodes"])
        values = np.asarray(data["values"], dtype=np.float64)
        scale = float(data["scale"])
        kernel = data.get("kernel", "gaussian")
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"malformed params document: {exc}") from None
    per = 1 + dim + dim * (dim + 1) // 2
    if values.size != n * per:
        raise ArtifactError(f"params lists {values.size} values, expected {n * per}")
    block = values.reshape(n, per)
    return ModelParams(block[:, 0], block[:, 1 : 1 + dim], block[:, 1 + dim :], scale, kernel)


def write_params(path: str, params: ModelParams) -> None:
    write_json(path, params_to_dict(params))


def read_params(path: str) -> ModelParams:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"{path}: not valid JSON ({exc})") from None
    return params_from_dict(data)


def centers_document(params: ModelParams) -> list[dict]:
    out = []
    for i in range(params.n_nodes):
        ell = zone_of_influence(params.node(i), params.scale)
        out.append(
            {
                "center": [float(c) for c in ell.center],
                "weight": float(params.weights[i]),
                "semi_axes": [float(a) for a in ell.semi_axes],
                "axes": [[float(c) for c in axis] for axis in ell.axes],
            }
        )
    return out


def write_centers(path: str, params: ModelParams) -> None:
    write_json(path, centers_document(params))


def read_centers(path: str) -> list[dict]:
    with open(path) as fh:
        return json.load(fh)


def versions() -> dict:
    return {
        "aspinn": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
