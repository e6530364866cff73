"""Non-negative three-layer MLP baseline.

Hidden weights and the output weights are kept >= 0 and hidden biases <= 0 by
projection after every optimizer step, so the logit is non-decreasing in
every (non-negative) input. The output bias is free; ``sigmoid(b3)`` is the
risk of someone with no exposures.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .data import (FeatureSchema, TabularDataset, apply_standardization, design_width,
                   one_hot_encode, standardize)
from .tensor import ContractError, Tensor

WEIGHTS = ("W1", "W2", "W3")
HIDDEN_BIASES = ("b1", "b2")


@dataclass(frozen=True)
class NnMlpConfig:
    hidden1: int = 64
    hidden2: int = 64
    standardize: bool = True


def init_params(d: int, h1: int, h2: int, rng, base_rate: float = 0.5) -> dict[str, Tensor]:
    base_rate = min(max(base_rate, 1e-6), 1 - 1e-6)

    def w(shape, fan_in):
        return rng.uniform(0.0, 1.0 / np.sqrt(fan_in), size=shape)

    arrays = {
        "W1": w((d, h1), max(d, 1)), "b1": rng.uniform(-0.1, 0.0, size=h1),
        "W2": w((h1, h2), h1), "b2": rng.uniform(-0.1, 0.0, size=h2),
        "W3": w((h2, 1), h2), "b3": np.array([np.log(base_rate / (1 - base_rate))]),
    }
    return {k: Tensor(v, trainable=True, name=k) for k, v in arrays.items()}


def nnmlp_forward(x, params: dict[str, Tensor]) -> Tensor:
    """Logits (B,) for a non-negative design matrix x (B, d)."""
    x = T.as_tensor(x)
    if np.any(x.data < 0):
        raise ContractError("nnMLP inputs must be non-negative exposures")
    z1 = T.relu(x @ params["W1"] + params["b1"])
    z2 = T.relu(z1 @ params["W2"] + params["b2"])
    return (z2 @ params["W3"] + params["b3"]).reshape(-1)


def project_constraints(params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Clamp weights to >= 0 and hidden biases to <= 0, in place."""
    for k in WEIGHTS:
        np.maximum(params[k].data, 0.0, out=params[k].data)
    for k in HIDDEN_BIASES:
        np.minimum(params[k].data, 0.0, out=params[k].data)
    return params


def constraints_hold(params: dict[str, Tensor]) -> bool:
    return (all(params[k].data.min() >= 0.0 for k in WEIGHTS)
            and all(params[k].data.max() <= 0.0 for k in HIDDEN_BIASES))


def baseline_risk(params: dict[str, Tensor]) -> float:
    return float(T.sigmoid(params["b3"]).data[0])


class NnMlpModel:
    """nnMLP bound to a schema, with its own input encoding.

    Inputs are the one-hot design matrix; standardized continuous columns are
    shifted by their training minimum and clipped at zero so every entry is a
    non-negative exposure.
    """

    kind = "nnmlp"

    def __init__(self, schema: FeatureSchema, config: NnMlpConfig = NnMlpConfig(), seed=0):
        self.schema = schema
        self.config = config
        self.input_schema = schema
        self.d = design_width(schema)
        rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        self.params = init_params(self.d, config.hidden1, config.hidden2, rng)
        self.means = np.zeros(schema.n_num)
        self.stds = np.ones(schema.n_num)
        self.shift = np.zeros(schema.n_num)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def buffers(self) -> dict[str, np.ndarray]:
        return {"means": self.means, "stds": self.stds, "shift": self.shift}

    def fit_preprocessing(self, train: TabularDataset) -> None:
        if train.schema != self.schema:
            raise ContractError("dataset schema does not match the model schema")
        if self.config.standardize:
            self.means, self.stds = standardize(train)
        prepared = self.prepare(train)
        shift = np.zeros(self.schema.n_num)
        for j in range(self.schema.n_num):
            vals = prepared.cont[~prepared.cont_missing[:, j], j]
            shift[j] = vals.min() if vals.size else 0.0
        self.shift = shift
        b3 = np.log(max(train.positive_ratio, 1e-6) / max(1 - train.positive_ratio, 1e-6))
        self.params["b3"].data[...] = b3

    def prepare(self, dataset: TabularDataset) -> TabularDataset:
        if dataset.schema != self.schema:
            raise ContractError("dataset schema does not match the model schema")
        if self.config.standardize:
            return apply_standardization(dataset, self.means, self.stds)
        return dataset

    def encode(self, batch: TabularDataset) -> np.ndarray:
        return one_hot_encode(batch, shift=self.shift)

    def forward(self, batch: TabularDataset, capture: bool = False, rng=None) -> Tensor:
        if capture:
            raise ContractError("model has no attention")
        return nnmlp_forward(Tensor._wrap(self.encode(batch)), self.params)

    __call__ = forward

    def project(self) -> None:
        project_constraints(self.params)

    def constraints_hold(self) -> bool:
        return constraints_hold(self.params)

    def baseline_risk(self) -> float:
        return baseline_risk(self.params)

    def count_params(self) -> dict[str, int]:
        counts = {k: int(t.data.size) for k, t in self.params.items()}
        counts["total"] = sum(counts.values())
        return counts

    def meta(self) -> dict:
        return {"config": asdict(self.config)}
