"""Random-forest tearing-probability model over step-level (state, action) features.

Bootstrap-sampled axis-aligned trees with sqrt(d) feature subsetting per
split; a leaf stores its positive-class fraction and the forest prediction is
the mean over trees, so outputs always lie in [0, 1].
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError, SingleClassWarning


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 8
    min_samples_split: int = 4
    min_samples_leaf: int = 2
    max_thresholds: int = 64   # candidate split positions evaluated per feature


@dataclass
class _Tree:
    """Flat node arrays; feature < 0 marks a leaf (children self-loop)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray


@dataclass
class ForestModel:
    feature_names: list[str]
    config: ForestConfig
    trees: list[_Tree]
    tree_seeds: list[int]
    _compiled: dict | None = field(default=None, repr=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict_prob(self, s, a) -> float:
        x = _features(self, s, a)
        return float(self._predict_matrix(x[None, :])[0])

    def predict_prob_batch(self, s, a) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        a = np.atleast_2d(np.asarray(a, dtype=float))
        x = np.concatenate([s, a], axis=1)
        if x.shape[1] != self.n_features:
            raise SchemaError(f"feature dim {x.shape[1]} != {self.n_features}")
        return self._predict_matrix(x)

    def _predict_matrix(self, x: np.ndarray) -> np.ndarray:
        comp = self._compile()
        bsz = x.shape[0]
        n_trees = len(self.trees)
        idx = np.zeros((bsz, n_trees), dtype=np.int64)
        rows = np.arange(bsz)[:, None]
        tcol = np.arange(n_trees)[None, :]
        for _ in range(self.config.max_depth + 1):
            feat = comp["feature"][tcol, idx]
            at_leaf = feat < 0
            vals = x[rows, np.maximum(feat, 0)]
            go_left = vals <= comp["threshold"][tcol, idx]
            nxt = np.where(go_left, comp["left"][tcol, idx], comp["right"][tcol, idx])
            idx = np.where(at_leaf, idx, nxt)
        return comp["value"][tcol, idx].mean(axis=1)

    def _compile(self) -> dict:
        if self._compiled is None:
            max_nodes = max(t.feature.size for t in self.trees)

            def pad(key, fill, dtype):
                out = np.full((len(self.trees), max_nodes), fill, dtype=dtype)
                for i, t in enumerate(self.trees):
                    out[i, : t.feature.size] = getattr(t, key)
                return out

            self._compiled = {
                "feature": pad("feature", -1, np.int64),
                "threshold": pad("threshold", 0.0, float),
                "left": pad("left", 0, np.int64),
                "right": pad("right", 0, np.int64),
                "value": pad("value", 0.0, float),
            }
        return self._compiled

    # -- serialization (nested split records) ---------------------------------

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "feature_names": self.feature_names,
            "config": {k: getattr(self.config, k) for k in self.config.__dataclass_fields__},
            "tree_seeds": self.tree_seeds,
            "trees": [_tree_to_nested(t, 0) for t in self.trees],
        }
        path.write_text(json.dumps(doc, indent=1))
        return path

    @staticmethod
    def load(path: str | Path) -> "ForestModel":
        doc = json.loads(Path(path).read_text())
        trees = [_tree_from_nested(node) for node in doc["trees"]]
        return ForestModel(
            feature_names=doc["feature_names"],
            config=ForestConfig(**doc["config"]),
            trees=trees,
            tree_seeds=doc["tree_seeds"],
        )


def _features(model: ForestModel, s, a) -> np.ndarray:
    s = np.asarray(s, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    x = np.concatenate([s, a])
    if x.size != model.n_features:
        raise SchemaError(f"feature dim {x.size} != {model.n_features}")
    return x


def _tree_to_nested(tree: _Tree, i: int) -> dict:
    if tree.feature[i] < 0:
        return {"value": float(tree.value[i])}
    return {
        "feature": int(tree.feature[i]),
        "threshold": float(tree.threshold[i]),
        "left": _tree_to_nested(tree, int(tree.left[i])),
        "right": _tree_to_nested(tree, int(tree.right[i])),
    }


def _tree_from_nested(node: dict) -> _Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def add(n) -> int:
        i = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(i)
        right.append(i)
        value.append(0.0)
        if "value" in n:
            value[i] = float(n["value"])
        else:
            feature[i] = int(n["feature"])
            threshold[i] = float(n["threshold"])
            left[i] = add(n["left"])
            right[i] = add(n["right"])
        return i

    add(node)
    return _Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value),
    )


def _gini_split_scores(col: np.ndarray, y: np.ndarray, cfg: ForestConfig):
    """Best (weighted child Gini, threshold) over candidate splits of one feature."""
    order = np.argsort(col, kind="stable")
    sv = col[order]
    sy = y[order]
    n = sv.size
    change = np.nonzero(np.diff(sv))[0]          # split after position i
    if change.size == 0:
        return None
    if change.size > cfg.max_thresholds:
        pick = np.linspace(0, change.size - 1, cfg.max_thresholds).astype(int)
        change = change[np.unique(pick)]
    cum_pos = np.cumsum(sy)
    nl = change + 1.0
    nr = n - nl
    keep = (nl >= cfg.min_samples_leaf) & (nr >= cfg.min_samples_leaf)
    if not np.any(keep):
        return None
    change, nl, nr = change[keep], nl[keep], nr[keep]
    pos_l = cum_pos[change]
    pos_r = cum_pos[-1] - pos_l
    pl = pos_l / nl
    pr = pos_r / nr
    score = (nl * (2 * pl * (1 - pl)) + nr * (2 * pr * (1 - pr))) / n
    j = int(np.argmin(score))
    thr = 0.5 * (sv[change[j]] + sv[change[j] + 1])
    return float(score[j]), thr


def _grow_tree(x: np.ndarray, y: np.ndarray, cfg: ForestConfig, rng: np.random.Generator) -> _Tree:
    feature, threshold, left, right, value = [], [], [], [], []
    n_sub = max(1, int(np.sqrt(x.shape[1])))

    def build(idx: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(node)
        right.append(node)
        value.append(float(y[idx].mean()))
        if depth >= cfg.max_depth or idx.size < cfg.min_samples_split or value[node] in (0.0, 1.0):
            return node
        feats = rng.choice(x.shape[1], size=n_sub, replace=False)
        best = None
        for f in feats:
            res = _gini_split_scores(x[idx, f], y[idx], cfg)
            if res is not None and (best is None or res[0] < best[0]):
                best = (res[0], int(f), res[1])
        if best is None:
            return node
        _, f, thr = best
        go_left = x[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = build(idx[go_left], depth + 1)
        right[node] = build(idx[~go_left], depth + 1)
        return node

    build(np.arange(x.shape[0]), 0)
    return _Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value),
    )


def train_forest(states, actions, labels, cfg: ForestConfig | None = None, seed: int = 0,
                 feature_names: list[str] | None = None) -> ForestModel:
    """Fit the forest on pooled step rows; deterministic under the seed.

    Single-class data produces a constant predictor with a warning rather
    than an error.
    """
    cfg = cfg or ForestConfig()
    states = np.atleast_2d(np.asarray(states, dtype=float))
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    y = np.asarray(labels, dtype=float).ravel()
    x = np.concatenate([states, actions], axis=1)
    if x.shape[0] != y.size:
        raise SchemaError(f"{x.shape[0]} rows vs {y.size} labels")
    if feature_names is None:
        feature_names = [f"f{i}" for i in range(x.shape[1])]
    if len(feature_names) != x.shape[1]:
        raise SchemaError("feature name count does not match feature dim")

    classes = np.unique(y)
    if classes.size < 2:
        warnings.warn("training labels contain a single class; returning a constant model",
                      SingleClassWarning, stacklevel=2)
        const = float(classes[0]) if classes.size else 0.0
        tree = _Tree(feature=np.array([-1]), threshold=np.array([0.0]),
                     left=np.array([0]), right=np.array([0]), value=np.array([const]))
        return ForestModel(feature_names=feature_names, config=cfg, trees=[tree], tree_seeds=[seed])

    root = np.random.SeedSequence(seed)
    tree_seeds = [int(s.generate_state(1)[0]) for s in root.spawn(cfg.n_trees)]
    trees = []
    for ts in tree_seeds:
        rng = np.random.default_rng(ts)
        boot = rng.integers(0, x.shape[0], size=x.shape[0])
        trees.append(_grow_tree(x[boot], y[boot], cfg, rng))
    return ForestModel(feature_names=feature_names, config=cfg, trees=trees, tree_seeds=tree_seeds)


@dataclass(frozen=True)
class ConstantClassifier:
    """Fixed-probability stand-in used by tests and rollout plumbing."""

    p: float

    def predict_prob(self, s, a) -> float:
        return self.p

    def predict_prob_batch(self, s, a) -> np.ndarray:
        return np.full(np.atleast_2d(s).shape[0], self.p)
