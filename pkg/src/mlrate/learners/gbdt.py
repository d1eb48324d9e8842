"""Gradient-boosted regression trees for squared error, built from scratch.

Trees grow level by level. At each level every open node is searched at once:
for each feature the rows are visited in presorted order and per-node running
sums give the exact best threshold (midpoint between consecutive distinct
values) in a single pass. Ties keep the first candidate found, which means the
lowest feature index and then the lowest threshold.
"""

from __future__ import annotations

import numba
import numpy as np

from ..exceptions import InvalidArgumentError

# A split must improve the node's sum of squares by more than this fraction
# of sum(residual^2) in the node; keeps rounding noise from creating splits.
_MIN_REL_GAIN = 1e-12


@numba.njit(cache=True, nogil=True)
def _grow_tree(X, sorted_vals, order, resid, max_depth, min_leaf, node_of_row,
               feat, thr, left, right, value):
    """Grow one tree; on return ``node_of_row`` maps each training row to its leaf."""
    n = resid.shape[0]
    d = sorted_vals.shape[0]
    max_nodes = feat.shape[0]
    node_sum = np.zeros(max_nodes)
    node_sq = np.zeros(max_nodes)
    node_cnt = np.zeros(max_nodes, dtype=np.int64)
    slot = np.full(max_nodes, -1, dtype=np.int64)
    for i in range(n):
        node_of_row[i] = 0
        node_sum[0] += resid[i]
        node_sq[0] += resid[i] * resid[i]
    node_cnt[0] = n
    n_nodes = 1
    level_start = 0
    level_end = 1

    for _depth in range(max_depth):
        act_nodes = np.empty(level_end - level_start, dtype=np.int64)
        n_active = 0
        for nd in range(level_start, level_end):
            if node_cnt[nd] >= 2 * min_leaf:
                slot[nd] = n_active
                act_nodes[n_active] = nd
                n_active += 1
        if n_active == 0:
            break
        best_score = np.empty(n_active)
        best_feat = np.full(n_active, -1, dtype=np.int64)
        best_thr = np.zeros(n_active)
        for s in range(n_active):
            nd = act_nodes[s]
            base = node_sum[nd] * node_sum[nd] / node_cnt[nd]
            best_score[s] = base + _MIN_REL_GAIN * node_sq[nd]
        left_sum = np.empty(n_active)
        left_cnt = np.empty(n_active, dtype=np.int64)
        last = np.empty(n_active)

        # one pass per feature serves every open node of this level
        for j in range(d):
            left_sum[:] = 0.0
            left_cnt[:] = 0
            for pos in range(n):
                idx = order[j, pos]
                s = slot[node_of_row[idx]]
                if s < 0:
                    continue
                v = sorted_vals[j, pos]
                c = left_cnt[s]
                if c >= min_leaf and v > last[s]:
                    nd = act_nodes[s]
                    nr = node_cnt[nd] - c
                    if nr >= min_leaf:
                        sl = left_sum[s]
                        sr = node_sum[nd] - sl
                        score = sl * sl / c + sr * sr / nr
                        if score > best_score[s]:
                            best_score[s] = score
                            best_feat[s] = j
                            t = 0.5 * (last[s] + v)
                            if t >= v:
                                t = last[s]
                            best_thr[s] = t
                left_sum[s] += resid[idx]
                left_cnt[s] = c + 1
                last[s] = v

        new_start = n_nodes
        for s in range(n_active):
            if best_feat[s] >= 0:
                nd = act_nodes[s]
                feat[nd] = best_feat[s]
                thr[nd] = best_thr[s]
                left[nd] = n_nodes
                right[nd] = n_nodes + 1
                n_nodes += 2
        for i in range(n):
            nd = node_of_row[i]
            if slot[nd] >= 0 and feat[nd] >= 0:
                if X[i, feat[nd]] <= thr[nd]:
                    child = left[nd]
                else:
                    child = right[nd]
                node_of_row[i] = child
                node_sum[child] += resid[i]
                node_sq[child] += resid[i] * resid[i]
                node_cnt[child] += 1
        for s in range(n_active):
            slot[act_nodes[s]] = -1
        level_start = new_start
        level_end = n_nodes
        if level_start == level_end:
            break

    for nd in range(n_nodes):
        if node_cnt[nd] > 0:
            value[nd] = node_sum[nd] / node_cnt[nd]
    return n_nodes


@numba.njit(cache=True, nogil=True)
def _boost(X, y, sorted_vals, order, f0, lr, max_depth, min_leaf,
           feat, thr, left, right, value, n_nodes, train_mse):
    n = y.shape[0]
    n_trees = feat.shape[0]
    F = np.full(n, f0)
    resid = y - F
    node_of_row = np.empty(n, dtype=np.int64)
    for m in range(n_trees):
        n_nodes[m] = _grow_tree(X, sorted_vals, order, resid, max_depth, min_leaf, node_of_row,
                                feat[m], thr[m], left[m], right[m], value[m])
        sse = 0.0
        for i in range(n):
            F[i] += lr * value[m, node_of_row[i]]
            resid[i] = y[i] - F[i]
            sse += resid[i] * resid[i]
        train_mse[m] = sse / n


@numba.njit(cache=True, nogil=True)
def _predict(X, f0, lr, feat, thr, left, right, value):
    n = X.shape[0]
    out = np.full(n, f0)
    for m in range(feat.shape[0]):
        for i in range(n):
            nd = 0
            while feat[m, nd] >= 0:
                if X[i, feat[m, nd]] <= thr[m, nd]:
                    nd = left[m, nd]
                else:
                    nd = right[m, nd]
            out[i] += lr * value[m, nd]
    return out


class GbdtModel:
    """A trained boosted ensemble stored as flat per-tree node arrays.

    Node 0 of each tree is its root. ``feature[m, j] == -1`` marks a leaf; a row
    goes left when ``x[feature] <= threshold``.
    """

    kind = "gbdt"

    def __init__(self, initial_prediction, learning_rate, max_depth, n_features,
                 feature, threshold, left, right, value, n_nodes=None, train_mse=()):
        self.initial_prediction = float(initial_prediction)
        self.learning_rate = float(learning_rate)
        self.max_depth = int(max_depth)
        self._n_features = int(n_features)
        self.feature = np.ascontiguousarray(feature, dtype=np.int64)
        self.threshold = np.ascontiguousarray(threshold, dtype=np.float64)
        self.left = np.ascontiguousarray(left, dtype=np.int64)
        self.right = np.ascontiguousarray(right, dtype=np.int64)
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        if n_nodes is None:
            n_nodes = np.full(self.feature.shape[0], self.feature.shape[1], dtype=np.int64)
        self.n_nodes = np.asarray(n_nodes, dtype=np.int64)
        self.train_mse = np.asarray(train_mse, dtype=np.float64)

    @property
    def n_trees(self) -> int:
        return self.feature.shape[0]

    @property
    def n_features(self) -> int:
        return self._n_features

    def n_leaves(self, tree: int) -> int:
        used = self.n_nodes[tree]
        return int(np.count_nonzero(self.feature[tree, :used] < 0))

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict(X, self.initial_prediction, self.learning_rate, self.feature,
                        self.threshold, self.left, self.right, self.value)

    def to_dict(self) -> dict:
        trees = []
        for m in range(self.n_trees):
            used = int(self.n_nodes[m])
            trees.append({
                "feature": self.feature[m, :used].tolist(),
                "threshold": self.threshold[m, :used].tolist(),
                "left": self.left[m, :used].tolist(),
                "right": self.right[m, :used].tolist(),
                "value": self.value[m, :used].tolist(),
            })
        return {
            "initial_prediction": self.initial_prediction,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "n_features": self.n_features,
            "trees": trees,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "GbdtModel":
        max_depth = int(blob["max_depth"])
        width = 2 ** (max_depth + 1) - 1
        trees = blob["trees"]
        m = len(trees)
        feature = np.full((m, width), -1, dtype=np.int64)
        threshold = np.zeros((m, width))
        left = np.full((m, width), -1, dtype=np.int64)
        right = np.full((m, width), -1, dtype=np.int64)
        value = np.zeros((m, width))
        n_nodes = np.zeros(m, dtype=np.int64)
        for i, tree in enumerate(trees):
            used = len(tree["feature"])
            n_nodes[i] = used
            feature[i, :used] = tree["feature"]
            threshold[i, :used] = tree["threshold"]
            left[i, :used] = tree["left"]
            right[i, :used] = tree["right"]
            value[i, :used] = tree["value"]
        return cls(blob["initial_prediction"], blob["learning_rate"], max_depth,
                   blob["n_features"], feature, threshold, left, right, value, n_nodes)


def gbdt_fit(X, y, n_trees: int = 100, learning_rate: float = 0.1, max_depth: int = 3,
             min_samples_leaf: int = 1) -> GbdtModel:
    """Squared-error gradient boosting with exact greedy regression trees.

    Starts from the training mean; each round fits a depth-limited tree to the
    current residuals (leaves hold residual means) and adds it scaled by
    ``learning_rate``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 2:
        raise InvalidArgumentError("gbdt needs features (n, d) and n >= 2 targets")
    if n_trees < 0 or not 0.0 < learning_rate <= 1.0 or max_depth < 1 or min_samples_leaf < 1:
        raise InvalidArgumentError("gbdt hyperparameters out of range")
    n, d = X.shape
    # canonical row order: sums, and hence near-tied split choices, must not
    # depend on how the caller happened to order the rows
    canon = np.lexsort(np.vstack([y, X.T[::-1]]))
    X = np.ascontiguousarray(X[canon])
    y = np.ascontiguousarray(y[canon])
    # exact constant for constant targets, so every tree is identically zero
    f0 = float(y[0]) if np.all(y == y[0]) else float(y.mean())
    width = 2 ** (max_depth + 1) - 1
    feature = np.full((n_trees, width), -1, dtype=np.int64)
    threshold = np.zeros((n_trees, width))
    left = np.full((n_trees, width), -1, dtype=np.int64)
    right = np.full((n_trees, width), -1, dtype=np.int64)
    value = np.zeros((n_trees, width))
    n_nodes = np.zeros(n_trees, dtype=np.int64)
    train_mse = np.zeros(n_trees)
    if n_trees > 0 and d > 0:
        order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
        sorted_vals = np.ascontiguousarray(np.take_along_axis(X, order.T, axis=0).T)
        _boost(X, y, sorted_vals, order, f0, float(learning_rate), int(max_depth),
               int(min_samples_leaf), feature, threshold, left, right, value, n_nodes,
               train_mse)
    elif n_trees > 0:
        # no features: every tree is a single zero-valued leaf
        resid = y - f0
        n_nodes[:] = 1
        train_mse[:] = float(resid @ resid) / n
    return GbdtModel(f0, learning_rate, max_depth, d, feature, threshold, left, right, value,
                     n_nodes, train_mse)
