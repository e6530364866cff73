"""Feature schemas, CSV ingestion with explicit missingness, and sampling."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

KINDS = ("continuous", "categorical", "checkbox")


class SchemaError(ValueError):
    pass


class IngestionError(ValueError):
    pass


class SplitError(ValueError):
    pass


class DatasetError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# schema -------------------------------------------------------------------
@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    cardinality: int = 1
    categories: tuple[str, ...] = ()
    members: tuple[str, ...] = ()

    @property
    def columns(self) -> tuple[str, ...]:
        return self.members if self.kind == "checkbox" else (self.name,)

    def category_index(self) -> dict[str, int]:
        """Label -> index map (1-based; 0 is reserved for missing)."""
        return {label: i + 1 for i, label in enumerate(self.categories)}

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "cardinality": self.cardinality}
        if self.kind == "categorical":
            d["categories"] = list(self.categories)
        if self.kind == "checkbox":
            d["members"] = list(self.members)
        return d


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]
    label: str

    def __post_init__(self):
        if not self.features:
            raise SchemaError("schema declares no features")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if self.label in names:
            raise SchemaError(f"label column {self.label!r} is also listed as a feature")

    def _of(self, kind):
        return tuple(f for f in self.features if f.kind == kind)

    @property
    def continuous(self) -> tuple[Feature, ...]:
        return self._of("continuous")

    @property
    def categorical(self) -> tuple[Feature, ...]:
        return self._of("categorical")

    @property
    def checkbox(self) -> tuple[Feature, ...]:
        return self._of("checkbox")

    @property
    def n_num(self) -> int:
        return len(self.continuous)

    @property
    def n_cat(self) -> int:
        return len(self.categorical)

    @property
    def n_check(self) -> int:
        return len(self.checkbox)

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def token_names(self) -> list[str]:
        """Canonical token order: continuous, then checkbox, then categorical."""
        return [f.name for f in self.continuous + self.checkbox + self.categorical]

    def to_dict(self) -> dict:
        return {"label": self.label, "features": [f.to_dict() for f in self.features]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def fingerprint(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _feature_from_mapping(item, line: int) -> Feature:
    def fail(msg):
        raise SchemaError(f"line {line}: {msg}")

    if not isinstance(item, dict):
        fail("feature entry must be a mapping")
    name = item.get("name")
    if not isinstance(name, str) or not name:
        fail("feature needs a non-empty 'name'")
    kind = item.get("kind")
    if kind not in KINDS:
        fail(f"feature {name!r}: unknown kind {kind!r}")
    if kind == "continuous":
        return Feature(name, kind)

    categories = tuple(str(c) for c in item.get("categories") or ())
    members = tuple(str(m) for m in item.get("members") or ())
    card = item.get("cardinality")
    if card is None:
        card = len(categories) if kind == "categorical" else len(members)
    if isinstance(card, bool) or not isinstance(card, int):
        fail(f"feature {name!r}: cardinality must be an integer")
    if card < 2:
        fail(f"feature {name!r}: cardinality must be >= 2 for {kind} features, got {card}")
    if kind == "categorical":
        if categories and len(categories) != card:
            fail(f"feature {name!r}: {len(categories)} category labels for cardinality {card}")
        if not categories:
            categories = tuple(str(i) for i in range(1, card + 1))
        if len(set(categories)) != len(categories):
            fail(f"feature {name!r}: duplicate category labels")
        return Feature(name, kind, card, categories=categories)
    if members and len(members) != card:
        fail(f"feature {name!r}: {len(members)} member columns for cardinality {card}")
    if not members:
        members = tuple(f"{name}.{k}" for k in range(1, card + 1))
    return Feature(name, kind, card, members=members)


def parse_schema(text: str) -> FeatureSchema:
    """Parse a JSON or YAML schema document.

    Top-level keys are ``label`` and ``features``; each feature is a mapping
    with ``name``, ``kind`` and (for categorical/checkbox) ``cardinality``,
    optionally ``categories`` or ``members``. Errors carry the line number of
    the offending feature.
    """
    try:
        root = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SchemaError(f"unparseable schema: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("line 1: schema must be a mapping with 'label' and 'features'")
    label = doc.get("label")
    if not isinstance(label, str) or not label:
        raise SchemaError("line 1: schema needs a 'label' column name")
    items = doc.get("features")
    if not isinstance(items, list) or not items:
        raise SchemaError("line 1: schema declares no features")

    feat_nodes = []
    for key, value in root.value:
        if key.value == "features":
            feat_nodes = value.value
    features = []
    seen: dict[str, int] = {}
    for i, item in enumerate(items):
        line = feat_nodes[i].start_mark.line + 1 if i < len(feat_nodes) else 0
        feat = _feature_from_mapping(item, line)
        if feat.name in seen:
            raise SchemaError(f"line {line}: duplicate feature name {feat.name!r} "
                              f"(first declared on line {seen[feat.name]})")
        if feat.name == label:
            raise SchemaError(f"line {line}: label column {label!r} listed as a feature")
        seen[feat.name] = line
        features.append(feat)
    return FeatureSchema(tuple(features), label)


def load_schema(path) -> FeatureSchema:
    return parse_schema(Path(path).read_text(encoding="utf-8"))


# dataset ------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TabularDataset:
    """Column-typed samples with per-cell missing masks.

    Continuous cells flagged missing hold 0.0; categorical indices are
    1..cardinality with 0 meaning missing; checkbox features carry a 0/1 bit
    vector each plus a feature-level missing flag.
    """

    schema: FeatureSchema
    cont: np.ndarray            # (n, n_num) float64
    cont_missing: np.ndarray    # (n, n_num) bool
    cat: np.ndarray             # (n, n_cat) int64
    check: tuple = field(default=())   # per checkbox feature: (n, C_i) int8
    check_missing: np.ndarray = None   # (n, n_check) bool
    labels: np.ndarray = None          # (n,) int64

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def positive_ratio(self) -> float:
        return self.n_positive / len(self) if len(self) else 0.0

    def take(self, indices) -> "TabularDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return TabularDataset(
            self.schema, self.cont[idx], self.cont_missing[idx], self.cat[idx],
            tuple(c[idx] for c in self.check), self.check_missing[idx], self.labels[idx])

    def missing_matrix(self) -> np.ndarray:
        """(n, n_features) bool, columns in canonical token order."""
        return np.concatenate(
            [self.cont_missing, self.check_missing, self.cat == 0], axis=1)

    def equals(self, other: "TabularDataset") -> bool:
        if self.schema != other.schema or len(self) != len(other):
            return False
        pairs = [(self.cont, other.cont), (self.cont_missing, other.cont_missing),
                 (self.cat, other.cat), (self.check_missing, other.check_missing),
                 (self.labels, other.labels)]
        pairs += list(zip(self.check, other.check))
        return all(np.array_equal(a, b) for a, b in pairs)

    def content_hash(self) -> str:
        h = hashlib.sha256(self.schema.fingerprint().encode())
        for arr in (self.cont, self.cont_missing, self.cat, self.check_missing,
                    self.labels, *self.check):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def make_dataset(schema, cont, cont_missing, cat, check, check_missing, labels) -> TabularDataset:
    n = len(labels)
    ds = TabularDataset(
        schema,
        np.asarray(cont, dtype=np.float64).reshape(n, schema.n_num),
        np.asarray(cont_missing, dtype=bool).reshape(n, schema.n_num),
        np.asarray(cat, dtype=np.int64).reshape(n, schema.n_cat),
        tuple(np.asarray(c, dtype=np.int8).reshape(n, f.cardinality)
              for c, f in zip(check, schema.checkbox)),
        np.asarray(check_missing, dtype=bool).reshape(n, schema.n_check),
        np.asarray(labels, dtype=np.int64).reshape(n),
    )
    _validate(ds)
    return ds


def _validate(ds: TabularDataset) -> None:
    s = ds.schema
    if not np.all(np.isin(ds.labels, (0, 1))):
        raise DatasetError("labels must be 0/1")
    for j, f in enumerate(s.categorical):
        col = ds.cat[:, j]
        if col.size and (col.min() < 0 or col.max() > f.cardinality):
            raise DatasetError(f"categorical {f.name!r} index outside [0, {f.cardinality}]")
    for bits in ds.check:
        if not np.all((bits == 0) | (bits == 1)):
            raise DatasetError("checkbox bits must be 0/1")
    if not np.all(ds.cont[ds.cont_missing] == 0.0):
        raise DatasetError("missing continuous cells must hold 0.0")


def load_csv(path, schema: FeatureSchema) -> TabularDataset:
    """Read a CSV; empty cells are missing."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        pos = {h: i for i, h in enumerate(header)}
        needed = [c for f in schema.features for c in f.columns] + [schema.label]
        absent = [c for c in needed if c not in pos]
        if absent:
            raise IngestionError(f"{path}: header lacks columns {absent}")

        cat_maps = [f.category_index() for f in schema.categorical]
        cont, cont_miss, cat, labels = [], [], [], []
        check = [[] for _ in schema.checkbox]
        check_miss = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue

            def cell(col):
                i = pos[col]
                return row[i].strip() if i < len(row) else ""

            vals, miss = [], []
            for f in schema.continuous:
                raw = cell(f.name)
                if raw == "":
                    vals.append(0.0)
                    miss.append(True)
                    continue
                try:
                    v = float(raw)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {line_no}, column {f.name!r}: non-numeric value {raw!r}") from None
                if not math.isfinite(v):
                    raise IngestionError(f"{path}: row {line_no}, column {f.name!r}: non-finite value")
                vals.append(v)
                miss.append(False)
            cont.append(vals)
            cont_miss.append(miss)

            idxs = []
            for f, cmap in zip(schema.categorical, cat_maps):
                raw = cell(f.name)
                if raw == "":
                    idxs.append(0)
                    continue
                idx = cmap.get(raw)
                if idx is None:
                    raise IngestionError(
                        f"{path}: row {line_no}, column {f.name!r}: unknown category {raw!r}")
                idxs.append(idx)
            cat.append(idxs)

            cm = []
            for k, f in enumerate(schema.checkbox):
                raws = [cell(m) for m in f.members]
                if all(r == "" for r in raws):
                    check[k].append([0] * f.cardinality)
                    cm.append(True)
                    continue
                bits = []
                for m, r in zip(f.members, raws):
                    if r == "":
                        bits.append(0)
                    elif r in ("0", "1", "0.0", "1.0"):
                        bits.append(int(float(r)))
                    else:
                        raise IngestionError(
                            f"{path}: row {line_no}, column {m!r}: checkbox value {r!r} is not 0/1")
                check[k].append(bits)
                cm.append(False)
            check_miss.append(cm)

            raw = cell(schema.label)
            if raw not in ("0", "1", "0.0", "1.0"):
                raise IngestionError(
                    f"{path}: row {line_no}, column {schema.label!r}: label {raw!r} is not 0/1")
            labels.append(int(float(raw)))

    n = len(labels)
    return make_dataset(
        schema,
        np.array(cont, dtype=np.float64).reshape(n, schema.n_num),
        np.array(cont_miss, dtype=bool).reshape(n, schema.n_num),
        np.array(cat, dtype=np.int64).reshape(n, schema.n_cat),
        [np.array(c, dtype=np.int8).reshape(n, f.cardinality) for c, f in zip(check, schema.checkbox)],
        np.array(check_miss, dtype=bool).reshape(n, schema.n_check),
        np.array(labels, dtype=np.int64),
    )


def write_csv(dataset: TabularDataset, path) -> None:
    s = dataset.schema
    header = [c for f in s.features for c in f.columns] + [s.label]
    cont_pos = {f.name: i for i, f in enumerate(s.continuous)}
    cat_pos = {f.name: i for i, f in enumerate(s.categorical)}
    chk_pos = {f.name: i for i, f in enumerate(s.checkbox)}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in range(len(dataset)):
            row = []
            for f in s.features:
                if f.kind == "continuous":
                    j = cont_pos[f.name]
                    row.append("" if dataset.cont_missing[r, j] else repr(float(dataset.cont[r, j])))
                elif f.kind == "categorical":
                    idx = int(dataset.cat[r, cat_pos[f.name]])
                    row.append("" if idx == 0 else f.categories[idx - 1])
                else:
                    k = chk_pos[f.name]
                    if dataset.check_missing[r, k]:
                        row.extend([""] * f.cardinality)
                    else:
                        row.extend(str(int(b)) for b in dataset.check[k][r])
            row.append(str(int(dataset.labels[r])))
            w.writerow(row)


# preprocessing ------------------------------------------------------------
def standardize(train: TabularDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population std over non-missing training cells."""
    n_num = train.schema.n_num
    means = np.zeros(n_num)
    stds = np.ones(n_num)
    for j in range(n_num):
        vals = train.cont[~train.cont_missing[:, j], j]
        if vals.size == 0:
            continue
        means[j] = vals.mean()
        sd = vals.std()
        stds[j] = sd if sd > 0 else 1.0
    return means, stds


def apply_standardization(dataset: TabularDataset, means, stds) -> TabularDataset:
    cont = np.where(dataset.cont_missing, 0.0, (dataset.cont - means) / stds)
    return TabularDataset(dataset.schema, cont, dataset.cont_missing, dataset.cat,
                          dataset.check, dataset.check_missing, dataset.labels)


def one_hot_encode(dataset: TabularDataset, shift=None) -> np.ndarray:
    """Design matrix: continuous ⊕ one-hot categoricals ⊕ raw checkbox bits.

    ``shift`` is subtracted from non-missing continuous values and the result
    clipped at 0, which keeps every entry non-negative. Missing cells of any
    kind encode as zeros.
    """
    s = dataset.schema
    n = len(dataset)
    cont = dataset.cont
    if shift is not None:
        cont = np.maximum(cont - np.asarray(shift), 0.0)
    blocks = [np.where(dataset.cont_missing, 0.0, cont)]
    for j, f in enumerate(s.categorical):
        block = np.zeros((n, f.cardinality))
        idx = dataset.cat[:, j]
        rows = np.nonzero(idx > 0)[0]
        block[rows, idx[rows] - 1] = 1.0
        blocks.append(block)
    for bits, miss in zip(dataset.check, dataset.check_missing.T):
        blocks.append(np.where(miss[:, None], 0.0, bits.astype(np.float64)))
    return np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))


def design_width(schema: FeatureSchema) -> int:
    return (schema.n_num + sum(f.cardinality for f in schema.categorical)
            + sum(f.cardinality for f in schema.checkbox))


def expanded_schema(schema: FeatureSchema) -> FeatureSchema:
    """Schema with each checkbox member turned into a binary categorical."""
    if not schema.checkbox:
        return schema
    feats = []
    for f in schema.features:
        if f.kind == "checkbox":
            feats.extend(Feature(m, "categorical", 2, categories=("0", "1")) for m in f.members)
        else:
            feats.append(f)
    return FeatureSchema(tuple(feats), schema.label)


def expand_checkboxes(dataset: TabularDataset) -> TabularDataset:
    """Re-express every checkbox member as an independent binary categorical.

    Bits 0/1 map to indices 1/2; a missing checkbox feature makes all its
    member categoricals missing.
    """
    s = dataset.schema
    if not s.checkbox:
        return dataset
    cat_cols = []
    cat_src = {f.name: j for j, f in enumerate(s.categorical)}
    chk_src = {f.name: k for k, f in enumerate(s.checkbox)}
    for f in s.features:
        if f.kind == "checkbox":
            k = chk_src[f.name]
            for m in range(f.cardinality):
                col = dataset.check[k][:, m].astype(np.int64) + 1
                cat_cols.append(np.where(dataset.check_missing[:, k], 0, col))
        elif f.kind == "categorical":
            cat_cols.append(dataset.cat[:, cat_src[f.name]])
    n = len(dataset)
    cat = np.stack(cat_cols, axis=1) if cat_cols else np.zeros((n, 0), dtype=np.int64)
    return TabularDataset(expanded_schema(s), dataset.cont, dataset.cont_missing, cat, (),
                          np.zeros((n, 0), dtype=bool), dataset.labels)


# splitting and batching ---------------------------------------------------
def stratified_split_indices(labels, val_fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < val_fraction < 1.0:
        raise SplitError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    labels = np.asarray(labels)
    rng = as_rng(seed)
    train_idx, val_idx = [], []
    for cls in (0, 1):
        idx = np.nonzero(labels == cls)[0]
        idx = idx[rng.permutation(idx.size)]
        n_val = round_half_up(idx.size * val_fraction)
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    tr = np.sort(np.concatenate(train_idx))
    va = np.sort(np.concatenate(val_idx))
    for name, part in (("train", tr), ("validation", va)):
        pos = int(labels[part].sum())
        if pos == 0 or pos == part.size:
            raise SplitError(f"{name} split lacks one of the classes "
                             f"({pos} positives of {part.size})")
    return tr, va


def stratified_split(dataset: TabularDataset, val_fraction: float, seed):
    tr, va = stratified_split_indices(dataset.labels, val_fraction, seed)
    return dataset.take(tr), dataset.take(va)


def stratified_batches(dataset_or_labels, batch_size: int, seed) -> list[np.ndarray]:
    """Partition sample indices into batches that keep the class ratio.

    Positives are apportioned by cumulative rounding of
    ``batch_end * ratio``, so each full batch holds floor or ceil of
    ``batch_size * ratio`` positives and every index appears exactly once.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    labels = (dataset_or_labels.labels if isinstance(dataset_or_labels, TabularDataset)
              else np.asarray(dataset_or_labels))
    n = labels.size
    rng = as_rng(seed)
    pos = np.nonzero(labels == 1)[0]
    neg = np.nonzero(labels == 0)[0]
    pos = pos[rng.permutation(pos.size)]
    neg = neg[rng.permutation(neg.size)]
    if batch_size >= n:
        return [np.concatenate([pos, neg])]
    ratio = pos.size / n
    batches = []
    start = 0
    p_used = 0
    while start < n:
        end = min(start + batch_size, n)
        p_end = min(round_half_up(end * ratio), pos.size)
        p_end = max(p_end, pos.size - (n - end)) if end == n else p_end
        n_pos = p_end - p_used
        n_neg = (end - start) - n_pos
        b_neg_start = start - p_used
        batches.append(np.concatenate([pos[p_used:p_end], neg[b_neg_start:b_neg_start + n_neg]]))
        p_used = p_end
        start = end
    return batches


# missingness --------------------------------------------------------------
def simulate_missing(dataset: TabularDataset, ratio: float, seed) -> TabularDataset:
    """Mask ``round(ratio * n * n_features)`` uniformly chosen feature cells."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"missing ratio must lie in [0, 1], got {ratio}")
    s = dataset.schema
    n, nf = len(dataset), s.n_num + s.n_check + s.n_cat
    k = round_half_up(ratio * n * nf)
    rng = as_rng(seed)
    chosen = rng.choice(n * nf, size=k, replace=False)
    mask = np.zeros(n * nf, dtype=bool)
    mask[chosen] = True
    mask = mask.reshape(n, nf)
    m_cont = mask[:, :s.n_num]
    m_chk = mask[:, s.n_num:s.n_num + s.n_check]
    m_cat = mask[:, s.n_num + s.n_check:]
    cont_missing = dataset.cont_missing | m_cont
    cont = np.where(cont_missing, 0.0, dataset.cont)
    cat = np.where(m_cat, 0, dataset.cat)
    check_missing = dataset.check_missing | m_chk
    check = tuple(np.where(check_missing[:, k2:k2 + 1], 0, bits).astype(np.int8)
                  for k2, bits in enumerate(dataset.check))
    return TabularDataset(s, cont, cont_missing, cat, check, check_missing, dataset.labels)


def drop_incomplete(dataset: TabularDataset) -> TabularDataset:
    keep = ~dataset.missing_matrix().any(axis=1)
    if not keep.any():
        raise DatasetError("no complete samples remain after dropping incomplete rows")
    return dataset.take(np.nonzero(keep)[0])


# synthetic data -----------------------------------------------------------
@dataclass(frozen=True)
class SyntheticTruth:
    """Non-negative score coefficients used to label a synthetic dataset."""

    cont_coef: np.ndarray
    cat_coef: np.ndarray
    check_coef: tuple
    threshold: float


def default_synthetic_schema() -> FeatureSchema:
    return FeatureSchema((
        Feature("age", "continuous"),
        Feature("bmi", "continuous"),
        Feature("sleep", "continuous"),
        Feature("ancestry", "checkbox", 4, members=tuple(f"ancestry.{k}" for k in range(1, 5))),
        Feature("smoker", "categorical", 3, categories=("never", "former", "current")),
        Feature("sunburns", "categorical", 4, categories=("0", "1-2", "3-5", "6+")),
        Feature("sex", "categorical", 2, categories=("F", "M")),
    ), label="outcome")


def generate_synthetic(schema: FeatureSchema, n_samples: int, positive_ratio: float,
                       seed, noise: float = 0.05):
    """Draw a learnable dataset with a monotone ground-truth score.

    Continuous features are normal, categoricals uniform over their levels,
    checkbox members Bernoulli(0.3). Roughly half of each kind (the earlier
    ones in schema order) enter a linear score with non-negative weights; the
    top ``round(n * positive_ratio)`` noisy scores are labelled positive.
    Returns ``(dataset, truth)``.
    """
    if not 0.0 < positive_ratio < 1.0:
        raise ValueError("positive_ratio must lie in (0, 1)")
    rng = as_rng(seed)
    n = n_samples

    def informative(m):
        return np.array([1.0 if i < max(1, (m + 1) // 2) else 0.0 for i in range(m)])

    locs = rng.uniform(-20, 60, size=schema.n_num)
    scales = rng.uniform(1, 15, size=schema.n_num)
    z = rng.standard_normal((n, schema.n_num))
    cont = locs + scales * z
    cont_coef = informative(schema.n_num) * rng.uniform(0.5, 1.5, size=schema.n_num)
    score = z @ cont_coef

    cat = np.stack([rng.integers(1, f.cardinality + 1, size=n) for f in schema.categorical], axis=1) \
        if schema.n_cat else np.zeros((n, 0), dtype=np.int64)
    cat_coef = informative(schema.n_cat) * rng.uniform(1.0, 2.0, size=schema.n_cat)
    for j, f in enumerate(schema.categorical):
        score = score + cat_coef[j] * (cat[:, j] - 1) / (f.cardinality - 1)

    check, check_coef = [], []
    inf_chk = informative(schema.n_check)
    for k, f in enumerate(schema.checkbox):
        bits = (rng.random((n, f.cardinality)) < 0.3).astype(np.int8)
        coef = np.zeros(f.cardinality)
        coef[: max(1, f.cardinality // 2)] = inf_chk[k] * rng.uniform(0.5, 1.5)
        score = score + bits @ coef
        check.append(bits)
        check_coef.append(coef)

    score = score + noise * (score.std() or 1.0) * rng.standard_normal(n)
    k_pos = round_half_up(n * positive_ratio)
    order = np.argsort(-score, kind="stable")
    labels = np.zeros(n, dtype=np.int64)
    labels[order[:k_pos]] = 1
    threshold = float(score[order[k_pos - 1]]) if k_pos else float("inf")

    ds = make_dataset(schema, cont, np.zeros_like(cont, dtype=bool), cat, check,
                      np.zeros((n, schema.n_check), dtype=bool), labels)
    return ds, SyntheticTruth(cont_coef, cat_coef, tuple(check_coef), threshold)
