"""Model checkpoints as ``.npz`` containers.

Layout: ``meta`` holds a JSON document (model kind, config, full schema,
schema fingerprint, format version); ``param/<name>`` and ``buffer/<name>``
hold float64 arrays. Loading never unpickles.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import Feature, FeatureSchema
from .nnmlp import NnMlpConfig, NnMlpModel
from .trace import TraceConfig, TraceModel

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def schema_from_dict(d: dict) -> FeatureSchema:
    feats = tuple(Feature(f["name"], f["kind"], int(f.get("cardinality", 1)),
                          tuple(f.get("categories", ())), tuple(f.get("members", ())))
                  for f in d["features"])
    return FeatureSchema(feats, d["label"])


def save_checkpoint(model, path, extra: dict | None = None) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "model": model.kind,
        "config": model.meta()["config"],
        "schema": model.schema.to_dict(),
        "schema_fingerprint": model.schema.fingerprint(),
        "extra": extra or {},
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for name, t in model.parameters().items():
        arrays[f"param/{name}"] = t.data
    for name, arr in model.buffers().items():
        arrays[f"buffer/{name}"] = np.asarray(arr, dtype=np.float64)
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)


def read_meta(path) -> dict:
    with np.load(Path(path), allow_pickle=False) as z:
        return json.loads(str(z["meta"]))


def load_checkpoint(path):
    """Rebuild the model stored at ``path``.

    nnMLP checkpoints are rejected if any sign constraint is violated.
    """
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        arrays = {k: z[k] for k in z.files if k != "meta"}
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
    schema = schema_from_dict(meta["schema"])
    if schema.fingerprint() != meta["schema_fingerprint"]:
        raise CheckpointError(f"{path}: schema fingerprint does not match stored schema")
    if meta["model"] == "trace":
        model = TraceModel(schema, TraceConfig(**meta["config"]), seed=0)
    elif meta["model"] == "nnmlp":
        model = NnMlpModel(schema, NnMlpConfig(**meta["config"]), seed=0)
    else:
        raise CheckpointError(f"{path}: unknown model kind {meta['model']!r}")
    params = model.parameters()
    names = {k[len("param/"):] for k in arrays if k.startswith("param/")}
    if names != set(params):
        raise CheckpointError(f"{path}: parameter set does not match the model layout")
    for name, t in params.items():
        arr = arrays[f"param/{name}"]
        if arr.shape != t.shape:
            raise CheckpointError(f"{path}: parameter {name!r} has shape {arr.shape}, expected {t.shape}")
        t.data[...] = arr
    for name in model.buffers():
        setattr(model, name, np.array(arrays[f"buffer/{name}"]))
    if model.kind == "nnmlp" and not model.constraints_hold():
        raise CheckpointError(f"{path}: nnMLP parameters violate the sign constraints")
    return model
