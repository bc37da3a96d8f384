"""Squared-error gradient boosting with exact greedy regression trees.

Trees are grown level by level. Every feature is presorted once per fit; a
single pass over that order per level finds, for every open node at once,
the split with the largest variance reduction among thresholds placed
between consecutive distinct values. Multi-output targets get one
independent ensemble per column.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import TooFewSamples
from .base import FitContext, ModelSpec, TrainedModel, TrainingReport, register_model


@njit(cache=True)
def _grow_tree(XT, order, r, max_depth, min_leaf):
    # XT and order are feature-major (n_feat, n) so the scans below are sequential
    n_feat, n = XT.shape
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    value = np.zeros(max_nodes)
    node_of = np.zeros(n, np.int64)
    n_nodes = 1
    level = np.zeros(1, np.int64)

    for depth in range(max_depth + 1):
        tot = np.zeros(max_nodes)
        sq = np.zeros(max_nodes)
        cnt = np.zeros(max_nodes, np.int64)
        for i in range(n):
            nid = node_of[i]
            if nid >= 0:
                tot[nid] += r[i]
                sq[nid] += r[i] * r[i]
                cnt[nid] += 1
        for nid in level:
            value[nid] = tot[nid] / cnt[nid]
        if depth == max_depth:
            break

        best_gain = np.zeros(max_nodes)
        best_feat = np.full(max_nodes, -1, np.int64)
        best_thr = np.zeros(max_nodes)
        base = np.zeros(max_nodes)
        for nid in level:
            base[nid] = tot[nid] * tot[nid] / cnt[nid]
        run_sum = np.zeros(max_nodes)
        run_cnt = np.zeros(max_nodes, np.int64)
        last = np.zeros(max_nodes)
        for f in range(n_feat):
            for nid in level:
                run_sum[nid] = 0.0
                run_cnt[nid] = 0
                last[nid] = -np.inf
            for p in range(n):
                i = order[f, p]
                nid = node_of[i]
                if nid < 0:
                    continue
                v = XT[f, i]
                c = run_cnt[nid]
                if v > last[nid] and c >= min_leaf and cnt[nid] - c >= min_leaf:
                    sl = run_sum[nid]
                    sr = tot[nid] - sl
                    gain = sl * sl / c + sr * sr / (cnt[nid] - c) - base[nid]
                    if gain > best_gain[nid]:
                        a = last[nid]
                        thr = a + (v - a) / 2.0
                        if not thr < v:
                            thr = a
                        best_gain[nid] = gain
                        best_feat[nid] = f
                        best_thr[nid] = thr
                run_sum[nid] += r[i]
                run_cnt[nid] += 1
                last[nid] = v

        nxt = np.zeros(2 * len(level), np.int64)
        k = 0
        for nid in level:
            if best_feat[nid] >= 0 and best_gain[nid] > 1e-12 * sq[nid]:
                feature[nid] = best_feat[nid]
                threshold[nid] = best_thr[nid]
                left[nid] = n_nodes
                right[nid] = n_nodes + 1
                nxt[k] = n_nodes
                nxt[k + 1] = n_nodes + 1
                k += 2
                n_nodes += 2
        for i in range(n):
            nid = node_of[i]
            if nid < 0:
                continue
            if feature[nid] >= 0:
                if XT[feature[nid], i] <= threshold[nid]:
                    node_of[i] = left[nid]
                else:
                    node_of[i] = right[nid]
            else:
                node_of[i] = -1
        level = nxt[:k]
        if k == 0:
            break
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True)
def _add_tree(X, feature, threshold, left, right, value, scale, out):
    for i in range(X.shape[0]):
        nid = 0
        while feature[nid] >= 0:
            if X[i, feature[nid]] <= threshold[nid]:
                nid = left[nid]
            else:
                nid = right[nid]
        out[i] += scale * value[nid]


class Tree:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def add_to(self, X, scale, out):
        _add_tree(X, self.feature, self.threshold, self.left, self.right, self.value, scale, out)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in self.__slots__}


class GBDTModel(TrainedModel):
    def __init__(self, spec, n_features, n_outputs, base: np.ndarray, ensembles: list[list[Tree]], report=None):
        super().__init__(spec, n_features, n_outputs, report)
        self.base = base
        self.ensembles = ensembles

    @property
    def learning_rate(self) -> float:
        return float(self.spec.params["learning_rate"])

    def _predict(self, X):
        X = np.ascontiguousarray(X)
        out = np.empty((X.shape[0], self.n_outputs))
        for m, trees in enumerate(self.ensembles):
            col = np.full(X.shape[0], self.base[m])
            for t in trees:
                t.add_to(X, self.learning_rate, col)
            out[:, m] = col
        return out

    def _state(self):
        return {"base": self.base.tolist(), "ensembles": [[t.to_dict() for t in ens] for ens in self.ensembles]}

    @classmethod
    def _from_state(cls, spec, n_features, n_outputs, report, state):
        ensembles = [[Tree(**t) for t in ens] for ens in state["ensembles"]]
        return cls(spec, n_features, n_outputs, np.asarray(state["base"], dtype=float), ensembles, report)


def _mse(a, b) -> float:
    d = a - b
    return float(np.mean(d * d))


def _boost_column(X, XT, order, y, spec: ModelSpec, Xv=None, yv=None):
    p = spec.params
    lr = float(p["learning_rate"])
    esr = p["early_stopping_rounds"]
    f0 = float(np.mean(y))
    pred = np.full(len(y), f0)
    losses = [_mse(pred, y)]
    val_pred = np.full(len(yv), f0) if yv is not None else None
    val_losses = [_mse(val_pred, yv)] if yv is not None else []
    best_round, best_val = 0, val_losses[0] if yv is not None else None
    trees: list[Tree] = []
    for _ in range(p["n_trees"]):
        tree = Tree(*_grow_tree(XT, order, y - pred, p["max_depth"], p["min_samples_leaf"]))
        new_pred = pred.copy()
        tree.add_to(X, lr, new_pred)
        loss = _mse(new_pred, y)
        if not loss < losses[-1]:
            break  # converged: the tree no longer reduces training error
        trees.append(tree)
        pred = new_pred
        losses.append(loss)
        if yv is not None:
            tree.add_to(Xv, lr, val_pred)
            vl = _mse(val_pred, yv)
            val_losses.append(vl)
            if vl < best_val:
                best_val, best_round = vl, len(trees)
            elif esr is not None and len(trees) - best_round >= esr:
                break
    stopped_at = len(trees)
    if yv is not None:
        trees = trees[:best_round]
    else:
        best_round = stopped_at
    return f0, trees, losses, val_losses, stopped_at, best_round


def fit_gbdt(X, y, spec: ModelSpec | None = None, validation: tuple | None = None) -> GBDTModel:
    """Boost one ensemble per target column.

    With ``validation=(Xv, yv)`` training stops once validation MSE has not
    improved for ``early_stopping_rounds`` rounds, and the ensemble is cut
    back to its best round. Boosting also stops as soon as a new tree fails
    to lower training MSE, so the recorded training loss is strictly
    decreasing.
    """
    spec = spec or ModelSpec("gbdt")
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    Y = np.asarray(y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = X.shape[0]
    if n < 2 * spec.params["min_samples_leaf"]:
        raise TooFewSamples(f"gbdt needs at least {2 * spec.params['min_samples_leaf']} samples, got {n}")
    XT = np.ascontiguousarray(X.T)
    order = np.argsort(XT, axis=1, kind="stable").astype(np.int64)
    Xv = Yv = None
    if validation is not None:
        Xv = np.ascontiguousarray(np.asarray(validation[0], dtype=float))
        Yv = np.asarray(validation[1], dtype=float)
        if Yv.ndim == 1:
            Yv = Yv[:, None]
        if len(Xv) == 0:
            Xv = Yv = None
    base, ensembles = [], []
    report = TrainingReport()
    for m in range(Y.shape[1]):
        f0, trees, losses, vls, stopped, best = _boost_column(
            X, XT, order, Y[:, m], spec, Xv, None if Yv is None else Yv[:, m])
        base.append(f0)
        ensembles.append(trees)
        report.losses.append(losses)
        report.val_losses.append(vls)
        report.stopped_at.append(stopped)
        report.best_round.append(best)
    return GBDTModel(spec, X.shape[1], Y.shape[1], np.array(base), ensembles, report)


@register_model("gbdt", GBDTModel)
def _fit(spec: ModelSpec, X, Y, context: FitContext, validation=None):
    return fit_gbdt(X, Y, spec, validation)
