"""Randomized decision forest over patch feature vectors.

Trees split on randomly sampled (feature, threshold) candidates scored by
Shannon information gain; leaves store the empirical label histogram of
the training samples that reached them. Prediction averages the leaf
distributions over all trees. There is no bagging: randomness comes only
from the split sampling, each tree drawing from its own derived stream.

Training sorts samples lexicographically first, so sample order never
affects the model. Models serialize to a versioned JSON file whose bytes
are deterministic for a given (data, params) pair.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ModelFormatError, PredictionError, TrainingError
from .features import FEATURE_CONTRACT_VERSION, FEATURE_DIM
from .labels import LABEL_NAMES, NUM_TRAINABLE, Label

FORMAT_VERSION = 1

KIND_SPLIT = 0
KIND_LEAF = 1


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = 8
    max_depth: int = 8
    candidates_per_node: int = 4
    thresholds_per_candidate: int = 10
    min_samples_split: int = 2
    seed: int = 0
    class_balanced: bool = False

    def __post_init__(self):
        if self.num_trees < 1 or self.max_depth < 0:
            raise TrainingError("num_trees must be >= 1 and max_depth >= 0")
        if self.candidates_per_node < 1 or self.thresholds_per_candidate < 1:
            raise TrainingError("candidate counts must be >= 1")
        if self.min_samples_split < 2:
            raise TrainingError("min_samples_split must be >= 2")


@dataclass(frozen=True)
class TrainingSet:
    features: np.ndarray  # (N, 14) float64
    labels: np.ndarray    # (N,) int, never `unknown`

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or features.shape[1] != FEATURE_DIM:
            raise TrainingError(f"features must be (N, {FEATURE_DIM}), got {features.shape}")
        if features.shape[0] == 0:
            raise TrainingError("training set is empty")
        if labels.shape != (features.shape[0],):
            raise TrainingError("labels shape does not match features")
        if not np.isfinite(features).all():
            raise TrainingError("features contain non-finite values")
        if labels.min() < 0 or labels.max() >= NUM_TRAINABLE:
            raise TrainingError(
                f"labels must be in 0..{NUM_TRAINABLE - 1} (no `unknown` targets)")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class FlatTree:
    """One tree as parallel node arrays; node 0 is the root."""

    kind: np.ndarray          # (n,) uint8, KIND_SPLIT or KIND_LEAF
    feature: np.ndarray       # (n,) int16, valid for splits
    threshold: np.ndarray     # (n,) float64, valid for splits
    left: np.ndarray          # (n,) int32
    right: np.ndarray         # (n,) int32
    distribution: np.ndarray  # (n, 7) float64, valid for leaves
    support: np.ndarray       # (n,) int64, valid for leaves

    def depth(self) -> int:
        depths = np.zeros(self.kind.shape[0], dtype=np.int32)
        for i in range(self.kind.shape[0]):
            if self.kind[i] == KIND_SPLIT:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max(initial=0))


@dataclass
class ForestModel:
    trees: list[FlatTree]
    params: ForestParams
    label_names: tuple[str, ...] = tuple(LABEL_NAMES[:NUM_TRAINABLE])
    feature_contract_version: int = FEATURE_CONTRACT_VERSION
    training_meta: dict = field(default_factory=dict)

    @property
    def num_trees(self) -> int:
        return len(self.trees)


class _TreeBuilder:
    def __init__(self, x: np.ndarray, y: np.ndarray, params: ForestParams,
                 rng: np.random.Generator, class_weights: Optional[np.ndarray]):
        self.x = x
        self.y = y
        self.params = params
        self.rng = rng
        self.class_weights = class_weights
        self.kind: list[int] = []
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.distribution: list[np.ndarray] = []
        self.support: list[int] = []

    def _add_node(self) -> int:
        self.kind.append(KIND_LEAF)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.distribution.append(np.zeros(NUM_TRAINABLE))
        self.support.append(0)
        return len(self.kind) - 1

    def _entropy(self, hist: np.ndarray) -> float:
        total = hist.sum()
        if total <= 0:
            return 0.0
        p = hist[hist > 0] / total
        return float(-(p * np.log2(p)).sum())

    def _weighted_hist(self, labels: np.ndarray) -> np.ndarray:
        hist = np.bincount(labels, minlength=NUM_TRAINABLE).astype(np.float64)
        if self.class_weights is not None:
            hist *= self.class_weights
        return hist

    def grow(self, indices: np.ndarray, depth: int) -> int:
        node = self._add_node()
        labels = self.y[indices]
        n = indices.shape[0]

        split = None
        if depth < self.params.max_depth and n >= self.params.min_samples_split \
                and labels.min() != labels.max():
            split = self._best_split(indices, labels)

        if split is None:
            hist = np.bincount(labels, minlength=NUM_TRAINABLE).astype(np.float64)
            self.distribution[node] = hist / hist.sum()
            self.support[node] = n
            return node

        feat, thr = split
        go_left = self.x[indices, feat] < thr
        self.kind[node] = KIND_SPLIT
        self.feature[node] = feat
        self.threshold[node] = thr
        self.left[node] = self.grow(indices[go_left], depth + 1)
        self.right[node] = self.grow(indices[~go_left], depth + 1)
        return node

    def _best_split(self, indices: np.ndarray, labels: np.ndarray):
        params = self.params
        n_feat = self.x.shape[1]
        cand_feats = np.sort(self.rng.choice(
            n_feat, size=min(params.candidates_per_node, n_feat), replace=False))

        parent_hist = self._weighted_hist(labels)
        parent_total = parent_hist.sum()
        parent_entropy = self._entropy(parent_hist)

        # per-sample weighted one-hot rows, cumulated along each sort order,
        # so every threshold costs one searchsorted instead of one bincount
        onehot = np.zeros((labels.shape[0], NUM_TRAINABLE))
        onehot[np.arange(labels.shape[0]), labels] = 1.0
        if self.class_weights is not None:
            onehot *= self.class_weights[labels][:, None]

        best = None  # (gain, feature, threshold); ties keep the earliest
        for feat in cand_feats:
            values = self.x[indices, feat]
            lo, hi = values.min(), values.max()
            if not hi > lo:
                continue
            thresholds = np.sort(self.rng.uniform(lo, hi, size=params.thresholds_per_candidate))
            order = np.argsort(values, kind="stable")
            cum = np.cumsum(onehot[order], axis=0)
            positions = np.searchsorted(values[order], thresholds, side="left")
            for thr, p in zip(thresholds, positions):
                if p <= 0 or p >= values.shape[0]:
                    continue
                left_hist = cum[p - 1]
                right_hist = parent_hist - left_hist
                gain = parent_entropy - (
                    left_hist.sum() * self._entropy(left_hist)
                    + right_hist.sum() * self._entropy(right_hist)
                ) / parent_total
                if gain > 1e-12 and (best is None or gain > best[0] + 1e-15):
                    best = (gain, int(feat), float(thr))
        if best is None:
            return None
        return best[1], best[2]

    def finish(self) -> FlatTree:
        return FlatTree(
            kind=np.array(self.kind, dtype=np.uint8),
            feature=np.array(self.feature, dtype=np.int16),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            distribution=np.stack(self.distribution),
            support=np.array(self.support, dtype=np.int64),
        )


def train_forest(data: TrainingSet, params: ForestParams = ForestParams()) -> ForestModel:
    """Grow the forest; deterministic for a given (data, params)."""
    order = np.lexsort(tuple(data.features[:, c] for c in range(FEATURE_DIM - 1, -1, -1))
                       + (data.labels,))
    x = data.features[order]
    y = data.labels[order]

    class_weights = None
    if params.class_balanced:
        counts = np.bincount(y, minlength=NUM_TRAINABLE).astype(np.float64)
        class_weights = np.where(counts > 0, counts.sum() / np.maximum(counts, 1.0), 0.0)

    streams = np.random.SeedSequence(params.seed).spawn(params.num_trees)
    trees = []
    for t in range(params.num_trees):
        builder = _TreeBuilder(x, y, params, np.random.default_rng(streams[t]), class_weights)
        builder.grow(np.arange(x.shape[0]), depth=0)
        trees.append(builder.finish())

    digest = hashlib.sha256()
    digest.update(x.tobytes())
    digest.update(y.tobytes())
    meta = {"seed": params.seed, "num_samples": int(len(data)),
            "dataset_hash": digest.hexdigest()}
    return ForestModel(trees=trees, params=params, training_meta=meta)


def _check_vector(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (FEATURE_DIM,):
        raise PredictionError(f"feature vector must have shape ({FEATURE_DIM},), got {x.shape}")
    if not np.isfinite(x).all():
        raise PredictionError("feature vector contains non-finite values")
    return x


def predict(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Label distribution for one feature vector: mean of reached leaves."""
    if model.feature_contract_version != FEATURE_CONTRACT_VERSION:
        raise PredictionError(
            f"model feature contract v{model.feature_contract_version} != "
            f"v{FEATURE_CONTRACT_VERSION}")
    x = _check_vector(x)
    acc = np.zeros(NUM_TRAINABLE)
    for tree in model.trees:
        node = 0
        while tree.kind[node] == KIND_SPLIT:
            node = tree.left[node] if x[tree.feature[node]] < tree.threshold[node] \
                else tree.right[node]
        acc += tree.distribution[node]
    return acc / len(model.trees)


def predict_batch(model: ForestModel, xs: np.ndarray) -> np.ndarray:
    """(M, 7) distributions for M feature vectors (vectorized routing)."""
    if model.feature_contract_version != FEATURE_CONTRACT_VERSION:
        raise PredictionError(
            f"model feature contract v{model.feature_contract_version} != "
            f"v{FEATURE_CONTRACT_VERSION}")
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != FEATURE_DIM:
        raise PredictionError(f"feature matrix must be (M, {FEATURE_DIM}), got {xs.shape}")
    if not np.isfinite(xs).all():
        raise PredictionError("feature matrix contains non-finite values")
    m = xs.shape[0]
    acc = np.zeros((m, NUM_TRAINABLE))
    rows = np.arange(m)
    for tree in model.trees:
        node = np.zeros(m, dtype=np.int32)
        for _ in range(model.params.max_depth + 1):
            at_split = tree.kind[node] == KIND_SPLIT
            if not at_split.any():
                break
            r = rows[at_split]
            n = node[at_split]
            vals = xs[r, tree.feature[n]]
            node[at_split] = np.where(vals < tree.threshold[n], tree.left[n], tree.right[n])
        acc += tree.distribution[node]
    return acc / len(model.trees)


def save_model(model: ForestModel, path: str | Path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "feature_contract_version": model.feature_contract_version,
        "labels": list(model.label_names),
        "params": {
            "num_trees": model.params.num_trees,
            "max_depth": model.params.max_depth,
            "candidates_per_node": model.params.candidates_per_node,
            "thresholds_per_candidate": model.params.thresholds_per_candidate,
            "min_samples_split": model.params.min_samples_split,
            "seed": model.params.seed,
            "class_balanced": model.params.class_balanced,
        },
        "training_meta": model.training_meta,
        "trees": [_tree_to_doc(t) for t in model.trees],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def _tree_to_doc(tree: FlatTree) -> dict:
    nodes = []
    for i in range(tree.kind.shape[0]):
        if tree.kind[i] == KIND_SPLIT:
            nodes.append({"kind": "split", "feature": int(tree.feature[i]),
                          "threshold": float(tree.threshold[i]),
                          "left": int(tree.left[i]), "right": int(tree.right[i])})
        else:
            nodes.append({"kind": "leaf",
                          "distribution": [float(v) for v in tree.distribution[i]],
                          "support": int(tree.support[i])})
    return {"nodes": nodes}


def load_model(path: str | Path) -> ForestModel:
    """Parse and validate a model file; raises ModelFormatError on any defect."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"{path}: invalid JSON at position {e.pos}: {e.msg}") from None

    def need(mapping, key, where):
        if not isinstance(mapping, dict) or key not in mapping:
            raise ModelFormatError(f"{path}: missing field {key!r} in {where}")
        return mapping[key]

    fmt = need(doc, "format_version", "document")
    if fmt != FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: field 'format_version' is {fmt}, expected {FORMAT_VERSION}")
    contract = need(doc, "feature_contract_version", "document")
    if contract != FEATURE_CONTRACT_VERSION:
        raise ModelFormatError(
            f"{path}: field 'feature_contract_version' is {contract}, "
            f"expected {FEATURE_CONTRACT_VERSION}")
    labels = need(doc, "labels", "document")
    if list(labels) != list(LABEL_NAMES[:NUM_TRAINABLE]):
        raise ModelFormatError(f"{path}: field 'labels' does not match {LABEL_NAMES[:NUM_TRAINABLE]}")

    pdoc = need(doc, "params", "document")
    params = ForestParams(
        num_trees=int(need(pdoc, "num_trees", "params")),
        max_depth=int(need(pdoc, "max_depth", "params")),
        candidates_per_node=int(need(pdoc, "candidates_per_node", "params")),
        thresholds_per_candidate=int(need(pdoc, "thresholds_per_candidate", "params")),
        min_samples_split=int(need(pdoc, "min_samples_split", "params")),
        seed=int(need(pdoc, "seed", "params")),
        class_balanced=bool(need(pdoc, "class_balanced", "params")),
    )

    trees_doc = need(doc, "trees", "document")
    if len(trees_doc) != params.num_trees:
        raise ModelFormatError(
            f"{path}: field 'trees' has {len(trees_doc)} entries, params say "
            f"{params.num_trees}")
    trees = [_tree_from_doc(tdoc, i, path) for i, tdoc in enumerate(trees_doc)]
    model = ForestModel(trees=trees, params=params,
                        training_meta=doc.get("training_meta", {}))
    for i, tree in enumerate(trees):
        if tree.depth() > params.max_depth:
            raise ModelFormatError(f"{path}: tree {i} deeper than max_depth")
    return model


def _tree_from_doc(tdoc: dict, tree_index: int, path) -> FlatTree:
    where = f"tree {tree_index}"
    if "nodes" not in tdoc or not tdoc["nodes"]:
        raise ModelFormatError(f"{path}: missing or empty field 'nodes' in {where}")
    nodes = tdoc["nodes"]
    n = len(nodes)
    kind = np.zeros(n, dtype=np.uint8)
    feature = np.full(n, -1, dtype=np.int16)
    threshold = np.zeros(n, dtype=np.float64)
    left = np.full(n, -1, dtype=np.int32)
    right = np.full(n, -1, dtype=np.int32)
    distribution = np.zeros((n, NUM_TRAINABLE))
    support = np.zeros(n, dtype=np.int64)
    for i, node in enumerate(nodes):
        where_n = f"{where} node {i}"
        k = node.get("kind")
        if k == "split":
            kind[i] = KIND_SPLIT
            feature[i] = node.get("feature", -1)
            if not 0 <= feature[i] < FEATURE_DIM:
                raise ModelFormatError(f"{path}: field 'feature' out of range in {where_n}")
            threshold[i] = node.get("threshold", np.nan)
            if not np.isfinite(threshold[i]):
                raise ModelFormatError(f"{path}: field 'threshold' invalid in {where_n}")
            left[i] = node.get("left", -1)
            right[i] = node.get("right", -1)
            if not (0 <= left[i] < n and 0 <= right[i] < n):
                raise ModelFormatError(f"{path}: child index out of range in {where_n}")
        elif k == "leaf":
            kind[i] = KIND_LEAF
            dist = np.asarray(node.get("distribution", []), dtype=np.float64)
            if dist.shape != (NUM_TRAINABLE,):
                raise ModelFormatError(f"{path}: field 'distribution' invalid in {where_n}")
            if dist.min() < 0 or abs(dist.sum() - 1.0) > 1e-9:
                raise ModelFormatError(
                    f"{path}: field 'distribution' not a probability vector in {where_n}")
            distribution[i] = dist
            support[i] = int(node.get("support", 0))
            if support[i] < 1:
                raise ModelFormatError(f"{path}: field 'support' must be >= 1 in {where_n}")
        else:
            raise ModelFormatError(f"{path}: field 'kind' invalid in {where_n}")
    return FlatTree(kind=kind, feature=feature, threshold=threshold, left=left,
                    right=right, distribution=distribution, support=support)
