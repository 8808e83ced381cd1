"""Model checkpoints: a versioned text format holding a named parameter table.

Layout:
    canids-checkpoint v1
    model <kind> <config as one-line JSON>
    param <name> <d0> [<d1> ...]        (bare "param <name>" for scalars)
    <one line of repr() floats per leading row>
    ...
    end

repr() round-trips float64 exactly, so save/load is lossless.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ParseError, StateError

MAGIC = "canids-checkpoint v1"


def save_checkpoint(path, kind: str, config: dict, params: dict[str, np.ndarray]):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(MAGIC + "\n")
        fh.write(f"model {kind} {json.dumps(config, sort_keys=True)}\n")
        for name, arr in params.items():
            arr = np.asarray(arr, dtype=np.float64)
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"param {name} {dims}".rstrip() + "\n")
            rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
            for row in rows:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        fh.write("end\n")


def load_checkpoint(path):
    """Returns (kind, config dict, ordered {name: float64 array})."""
    with open(path, "r", encoding="ascii") as fh:
        if fh.readline().strip() != MAGIC:
            raise ParseError(f"{path}: not a canids checkpoint")
        model_line = fh.readline().split(maxsplit=2)
        if len(model_line) != 3 or model_line[0] != "model":
            raise ParseError(f"{path}: missing model header")
        kind, config = model_line[1], json.loads(model_line[2])
        params: dict[str, np.ndarray] = {}
        line = fh.readline()
        while line:
            parts = line.split()
            if parts == ["end"]:
                break
            if parts[0] != "param":
                raise ParseError(f"{path}: expected param record, got {line.strip()!r}")
            name = parts[1]
            shape = tuple(int(d) for d in parts[2:])
            n_lines = shape[0] if len(shape) > 1 else 1
            rows = []
            for _ in range(n_lines):
                rows.append([float(v) for v in fh.readline().split()])
            arr = np.array(rows, dtype=np.float64).reshape(shape)
            params[name] = arr
            line = fh.readline()
        else:
            raise ParseError(f"{path}: truncated checkpoint (no end marker)")
    return kind, config, params


def validate_params(params: dict[str, np.ndarray], expected: dict[str, tuple], kind: str):
    """Exact name and shape agreement between a checkpoint and a model config."""
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise StateError(f"{kind} checkpoint mismatch: missing={missing} unexpected={extra}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != tuple(shape):
            raise StateError(
                f"{kind} checkpoint: param {name} has shape {params[name].shape}, "
                f"expected {tuple(shape)}"
            )
