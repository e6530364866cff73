"""Attention-map views over the captured encoder attention."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TabularDataset, as_rng


class AttentionError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureAttentionMatrix:
    """Rows are samples (``by_sample``) or query features (``by_feature``);
    columns are key features in canonical token order."""

    view: str
    row_labels: list[str]
    col_labels: list[str]
    matrix: np.ndarray


def _require_attention(model):
    if getattr(model, "kind", None) != "trace":
        raise AttentionError("model has no attention")


def capture_attention(model, dataset: TabularDataset, layer: int = -1, chunk: int = 256) -> np.ndarray:
    """(n, H, N, N) attention of one encoder layer for every sample."""
    _require_attention(model)
    if len(dataset) == 0:
        raise AttentionError("no samples to explain")
    n_layers = len(model.layers)
    if not -n_layers <= layer < n_layers:
        raise AttentionError(f"layer {layer} out of range for {n_layers} encoder layers")
    ds = model.prepare(dataset)
    out = []
    for s in range(0, len(ds), chunk):
        model.forward(ds.take(np.arange(s, min(s + chunk, len(ds)))), capture=True)
        out.append(model.attention[layer])
    return np.concatenate(out, axis=0)


def attention_by_sample(model, dataset: TabularDataset, layer: int = -1,
                        sample_ids=None) -> FeatureAttentionMatrix:
    """Per sample: head-averaged attention, then averaged over queries."""
    attn = capture_attention(model, dataset, layer)
    mat = attn.mean(axis=1).mean(axis=1)
    ids = [str(i) for i in (sample_ids if sample_ids is not None else range(len(dataset)))]
    return FeatureAttentionMatrix("by_sample", ids, list(model.token_names), mat)


def attention_by_feature(model, dataset: TabularDataset, layer: int = -1) -> FeatureAttentionMatrix:
    """Query x key attention averaged over heads and samples."""
    attn = capture_attention(model, dataset, layer)
    mat = attn.mean(axis=1).mean(axis=0)
    names = list(model.token_names)
    return FeatureAttentionMatrix("by_feature", names, names, mat)


def select_samples(dataset: TabularDataset, n: int, seed) -> np.ndarray:
    """Sorted indices of ``min(n, len)`` samples drawn without replacement."""
    k = min(n, len(dataset))
    return np.sort(as_rng(seed).choice(len(dataset), size=k, replace=False))


def export_matrix_csv(matrix: FeatureAttentionMatrix, path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id"] + matrix.col_labels)
            for label, row in zip(matrix.row_labels, matrix.matrix):
                w.writerow([label] + [f"{v:.6f}" for v in row])
    except OSError as exc:
        raise OSError(f"cannot write attention matrix to {path}: {exc}") from exc


def read_matrix_csv(path) -> FeatureAttentionMatrix:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    mat = np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(header) - 1)
    return FeatureAttentionMatrix("unknown", [r[0] for r in body], header[1:], mat)
