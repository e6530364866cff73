"""TRACE: feature tokens -> transformer encoder -> mean pooling -> linear risk head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .data import (FeatureSchema, TabularDataset, apply_standardization, expand_checkboxes,
                   expanded_schema, standardize)
from .embed import (CategoricalEmbedder, CheckboxEmbedder, ContinuousEmbedder, concat_tokens,
                    uniform_init)
from .tensor import ConfigError, ContractError, Tensor


@dataclass(frozen=True)
class TraceConfig:
    model_size: int = 128
    n_encoder_layers: int = 1
    n_heads: int = 2
    mlp_ratio: int = 4
    final_representation: str = "GAP"
    dropout: float = 0.0
    ffn_activation: str = "relu"
    shared_continuous_mlp: bool = False
    checkbox_embeddings: bool = True
    standardize: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.model_size % self.n_heads:
            raise ConfigError(f"model_size {self.model_size} not divisible by n_heads {self.n_heads}")
        if self.mlp_ratio < 1 or self.n_encoder_layers < 1 or self.n_heads < 1:
            raise ConfigError("mlp_ratio, n_encoder_layers and n_heads must be >= 1")
        if self.final_representation != "GAP":
            raise ConfigError("only GAP pooling is supported")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.ffn_activation not in ("relu", "selu", "sigmoid"):
            raise ConfigError(f"unknown ffn activation {self.ffn_activation!r}")


class EncoderLayer:
    """Post-norm encoder block: LN(x + MHA(x)) then LN(. + FFN(.))."""

    def __init__(self, index: int, dim: int, n_heads: int, mlp_ratio: int, rng):
        self.dim = dim
        self.n_heads = n_heads
        hidden = dim * mlp_ratio
        p = f"enc.{index}."

        def lin(name, fan_in, shape):
            return Tensor(uniform_init(rng, shape, fan_in), trainable=True, name=p + name)

        self.wq, self.bq = lin("wq", dim, (dim, dim)), lin("bq", dim, (dim,))
        self.wk, self.bk = lin("wk", dim, (dim, dim)), lin("bk", dim, (dim,))
        self.wv, self.bv = lin("wv", dim, (dim, dim)), lin("bv", dim, (dim,))
        self.wo, self.bo = lin("wo", dim, (dim, dim)), lin("bo", dim, (dim,))
        self.ln1_g = Tensor(np.ones(dim), trainable=True, name=p + "ln1.gain")
        self.ln1_b = Tensor(np.zeros(dim), trainable=True, name=p + "ln1.bias")
        self.w_ff1, self.b_ff1 = lin("ff1.w", dim, (dim, hidden)), lin("ff1.b", dim, (hidden,))
        self.w_ff2, self.b_ff2 = lin("ff2.w", hidden, (hidden, dim)), lin("ff2.b", hidden, (dim,))
        self.ln2_g = Tensor(np.ones(dim), trainable=True, name=p + "ln2.gain")
        self.ln2_b = Tensor(np.zeros(dim), trainable=True, name=p + "ln2.bias")

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.ln1_g, self.ln1_b, self.w_ff1, self.b_ff1, self.w_ff2, self.b_ff2,
            self.ln2_g, self.ln2_b)}


def multi_head_attention(x: Tensor, layer: EncoderLayer, capture: bool = False):
    """Scaled dot-product self-attention over the token axis.

    Returns ``(output, weights)`` where ``weights`` is the (B, H, N, N)
    post-softmax array when ``capture`` is set, else ``None``.
    """
    b, n, e = x.shape
    h = layer.n_heads
    d = e // h

    def heads(t):
        return t.reshape(b, n, h, d).transpose(0, 2, 1, 3)

    q = heads(x @ layer.wq + layer.bq)
    k = heads(x @ layer.wk + layer.bk)
    v = heads(x @ layer.wv + layer.bv)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d))
    attn = T.softmax_rows(scores)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, e)
    out = ctx @ layer.wo + layer.bo
    return out, (attn.data.copy() if capture else None)


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


def encoder_layer(x: Tensor, layer: EncoderLayer, config: TraceConfig,
                  capture: bool = False, rng=None):
    attn_out, weights = multi_head_attention(x, layer, capture)
    x = T.layer_norm(x + _dropout(attn_out, config.dropout, rng), layer.ln1_g, layer.ln1_b, config.ln_eps)
    hid = T.activation(x @ layer.w_ff1 + layer.b_ff1, config.ffn_activation)
    ff = hid @ layer.w_ff2 + layer.b_ff2
    x = T.layer_norm(x + _dropout(ff, config.dropout, rng), layer.ln2_g, layer.ln2_b, config.ln_eps)
    return x, weights


class TraceModel:
    """The TRACE risk model bound to a feature schema.

    ``prepare`` turns raw datasets into model inputs (checkbox expansion when
    checkbox embeddings are disabled, then standardization with statistics
    fitted by ``fit_preprocessing``). ``forward`` maps a prepared batch to one
    logit per sample; with ``capture=True`` the per-layer attention weights
    land in ``self.attention``.
    """

    kind = "trace"

    def __init__(self, schema: FeatureSchema, config: TraceConfig = TraceConfig(), seed=0):
        self.schema = schema
        self.config = config
        self.input_schema = self._input_schema(schema, config)
        rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        e = config.model_size
        s = self.input_schema
        self.cont = ContinuousEmbedder(s.n_num, e, rng, shared=config.shared_continuous_mlp)
        self.check = CheckboxEmbedder([f.cardinality for f in s.checkbox], e, rng)
        self.cat = CategoricalEmbedder([f.cardinality for f in s.categorical], e, rng)
        self.layers = [EncoderLayer(i, e, config.n_heads, config.mlp_ratio, rng)
                       for i in range(config.n_encoder_layers)]
        self.head_w = Tensor(uniform_init(rng, (e, 1), e), trainable=True, name="head.w")
        self.head_b = Tensor(uniform_init(rng, (1,), e), trainable=True, name="head.b")
        self.means = np.zeros(s.n_num)
        self.stds = np.ones(s.n_num)
        self.attention: list[np.ndarray] = []

    @staticmethod
    def _input_schema(schema, config):
        return schema if config.checkbox_embeddings else expanded_schema(schema)

    @property
    def token_names(self) -> list[str]:
        return self.input_schema.token_names

    @property
    def n_tokens(self) -> int:
        return len(self.token_names)

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        params.update(self.cont.parameters())
        params.update(self.check.parameters())
        params.update(self.cat.parameters())
        for layer in self.layers:
            params.update(layer.parameters())
        params[self.head_w.name] = self.head_w
        params[self.head_b.name] = self.head_b
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        return {"means": self.means, "stds": self.stds}

    def fit_preprocessing(self, train: TabularDataset) -> None:
        ds = self._expand(train)
        if self.config.standardize:
            self.means, self.stds = standardize(ds)

    def _expand(self, ds: TabularDataset) -> TabularDataset:
        if ds.schema != self.schema:
            raise ContractError("dataset schema does not match the model schema")
        return ds if self.input_schema is self.schema else expand_checkboxes(ds)

    def prepare(self, dataset: TabularDataset) -> TabularDataset:
        ds = self._expand(dataset)
        if self.config.standardize:
            ds = apply_standardization(ds, self.means, self.stds)
        return ds

    def embed(self, batch: TabularDataset) -> Tensor:
        if batch.schema != self.input_schema:
            raise ContractError("batch does not conform to the model's input schema")
        cont = self.cont(batch.cont, batch.cont_missing) if self.cont.n_features else None
        check = self.check(batch.check, batch.check_missing) if self.check.tables else None
        cat = self.cat(batch.cat) if self.cat.cardinalities else None
        return concat_tokens(cont, check, cat)

    def forward(self, batch: TabularDataset, capture: bool = False, rng=None) -> Tensor:
        x = self.embed(batch)
        captured = []
        for layer in self.layers:
            x, w = encoder_layer(x, layer, self.config, capture, rng)
            if capture:
                captured.append(w)
        if capture:
            self.attention = captured
        pooled = x.mean(axis=1)
        return (pooled @ self.head_w + self.head_b).reshape(-1)

    __call__ = forward

    def count_params(self) -> dict[str, int]:
        """Learnable scalar counts per block plus ``total``."""
        groups: dict[str, int] = {}
        for name, t in self.parameters().items():
            key = name.split(".")[0]
            if key == "enc":
                key = ".".join(name.split(".")[:2])
            groups[key] = groups.get(key, 0) + t.data.size
        groups["total"] = sum(groups.values())
        return groups

    def meta(self) -> dict:
        return {"config": asdict(self.config)}


def trace_forward(batch: TabularDataset, model: TraceModel, capture: bool = False):
    """Logits for a prepared batch, plus captured attention when requested."""
    logits = model.forward(batch, capture=capture)
    return (logits, model.attention) if capture else logits


def encoder_layer_param_count(dim: int, mlp_ratio: int = 4) -> int:
    """Closed-form scalar count of one encoder layer."""
    hidden = dim * mlp_ratio
    return 4 * (dim * dim + dim) + (dim * hidden + hidden + hidden * dim + dim) + 2 * (dim + dim)
