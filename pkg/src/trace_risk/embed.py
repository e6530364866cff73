"""Modality-specific feature embedders producing one token per feature."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ContractError, Tensor


def uniform_init(rng, shape, fan_in) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def embedding_init(rng, shape) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=shape)


class ContinuousEmbedder:
    """Per-feature two-layer MLP (1 -> E -> E, SELU between) with output masking.

    With ``shared=True`` all continuous features use one MLP.
    """

    def __init__(self, n_features: int, dim: int, rng, shared: bool = False):
        self.n_features = n_features
        self.dim = dim
        self.shared = shared
        lead = () if shared else (n_features,)
        self.w1 = Tensor(uniform_init(rng, lead + (dim,), 1), trainable=True, name="cont.w1")
        self.b1 = Tensor(uniform_init(rng, lead + (dim,), 1), trainable=True, name="cont.b1")
        self.w2 = Tensor(uniform_init(rng, lead + (dim, dim), dim), trainable=True, name="cont.w2")
        self.b2 = Tensor(uniform_init(rng, lead + (dim,), dim), trainable=True, name="cont.b2")

    def parameters(self) -> dict[str, Tensor]:
        if self.n_features == 0:
            return {}
        return {t.name: t for t in (self.w1, self.b1, self.w2, self.b2)}

    def __call__(self, values, missing) -> Tensor:
        return embed_continuous(values, missing, self)


def embed_continuous(values, missing, params: ContinuousEmbedder) -> Tensor:
    values = np.asarray(values, dtype=np.float64)
    missing = np.asarray(missing, dtype=bool)
    if values.ndim != 2 or values.shape[1] != params.n_features or missing.shape != values.shape:
        raise ContractError(f"continuous inputs must be (B, {params.n_features}); got "
                            f"{values.shape} values and {missing.shape} mask")
    keep = ~missing
    # masked raw values never enter the graph
    x = Tensor._wrap(np.where(keep, values, 0.0)[:, :, None])
    h = T.selu(x * params.w1 + params.b1)
    if params.shared:
        out = T.einsum("bne,ef->bnf", h, params.w2) + params.b2
    else:
        out = T.einsum("bne,nef->bnf", h, params.w2) + params.b2
    return T.where_keep(out, keep[:, :, None])


class CategoricalEmbedder:
    """One embedding table per categorical feature; row 0 is the missing token.

    The tables are stored stacked in a single tensor with per-feature row
    offsets.
    """

    def __init__(self, cardinalities, dim: int, rng):
        self.cardinalities = [int(c) for c in cardinalities]
        self.dim = dim
        sizes = [c + 1 for c in self.cardinalities]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64) \
            if sizes else np.zeros(0, dtype=np.int64)
        self.table = Tensor(embedding_init(rng, (int(sum(sizes)), dim)),
                            trainable=True, name="cat.table")

    def parameters(self) -> dict[str, Tensor]:
        return {self.table.name: self.table} if self.cardinalities else {}

    def feature_table(self, j: int) -> np.ndarray:
        start = self.offsets[j]
        return self.table.data[start:start + self.cardinalities[j] + 1]

    def __call__(self, indices) -> Tensor:
        return embed_categorical(indices, self)


def embed_categorical(indices, params: CategoricalEmbedder) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    n = len(params.cardinalities)
    if idx.ndim != 2 or idx.shape[1] != n:
        raise ContractError(f"categorical indices must be (B, {n}); got {idx.shape}")
    card = np.asarray(params.cardinalities)
    if idx.size and (np.any(idx < 0) or np.any(idx > card)):
        raise ContractError("categorical index outside [0, cardinality]")
    return T.take_rows(params.table, idx + params.offsets)


class CheckboxEmbedder:
    """Per checkbox feature: C_i category rows plus a final missing-token row."""

    def __init__(self, cardinalities, dim: int, rng):
        self.cardinalities = [int(c) for c in cardinalities]
        self.dim = dim
        self.tables = [Tensor(embedding_init(rng, (c + 1, dim)), trainable=True, name=f"check.{i}.table")
                       for i, c in enumerate(self.cardinalities)]

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in self.tables}

    def __call__(self, bits, feature_missing) -> Tensor:
        return embed_checkbox(bits, feature_missing, self)


def embed_checkbox(bits, feature_missing, params: CheckboxEmbedder) -> Tensor:
    """Sum of active category embeddings, or the missing row when absent."""
    feature_missing = np.asarray(feature_missing, dtype=bool)
    if len(bits) != len(params.tables):
        raise ContractError(f"expected {len(params.tables)} checkbox features, got {len(bits)}")
    tokens = []
    for i, (b, table) in enumerate(zip(bits, params.tables)):
        b = np.asarray(b)
        if b.ndim != 2 or b.shape[1] != params.cardinalities[i]:
            raise ContractError(f"checkbox feature {i} bits must be (B, {params.cardinalities[i]})")
        if not np.all((b == 0) | (b == 1)):
            raise ContractError(f"checkbox feature {i} has non-binary bits")
        miss = feature_missing[:, i:i + 1]
        mask = np.concatenate([np.where(miss, 0.0, b.astype(np.float64)),
                               miss.astype(np.float64)], axis=1)
        tok = T.matmul(Tensor._wrap(mask), table)
        tokens.append(tok.reshape(b.shape[0], 1, params.dim))
    return T.concat(tokens, axis=1)


def concat_tokens(cont, check, cat) -> Tensor:
    """Join token groups along the feature axis: continuous, checkbox, categorical."""
    parts = [p for p in (cont, check, cat) if p is not None and p.shape[1] > 0]
    if not parts:
        raise ContractError("no feature tokens to concatenate")
    b, e = parts[0].shape[0], parts[0].shape[2]
    for p in parts:
        if p.ndim != 3 or p.shape[0] != b or p.shape[2] != e:
            raise ContractError(f"token groups disagree on (B, E): {[q.shape for q in parts]}")
    return parts[0] if len(parts) == 1 else T.concat(parts, axis=1)
