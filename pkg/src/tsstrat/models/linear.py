"""Multi-output ridge regression via the regularized normal equations."""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..errors import SingularSystem, TooFewSamples
from .base import FitContext, ModelSpec, TrainedModel, TrainingReport, register_model


class RidgeModel(TrainedModel):
    """``coef`` has shape ``(F + 1, M)``; row 0 is the (unpenalized) intercept."""

    def __init__(self, spec, n_features, n_outputs, coef: np.ndarray, report=None):
        super().__init__(spec, n_features, n_outputs, report)
        self.coef = coef

    @property
    def intercept(self) -> np.ndarray:
        return self.coef[0]

    @property
    def weights(self) -> np.ndarray:
        return self.coef[1:]

    def _predict(self, X):
        return X @ self.coef[1:] + self.coef[0]

    def _state(self):
        return {"coef": self.coef.tolist()}

    @classmethod
    def _from_state(cls, spec, n_features, n_outputs, report, state):
        coef = np.asarray(state["coef"], dtype=float).reshape(n_features + 1, n_outputs)
        return cls(spec, n_features, n_outputs, coef, report)


def fit_ridge(X, Y, lam: float = 1.0, spec: ModelSpec | None = None) -> RidgeModel:
    """Minimize ``||XW + b - Y||^2 + lam * ||W||^2`` for every output column.

    The intercept ``b`` is not penalized: the problem is solved on centered
    data and ``b`` recovered from the means. All outputs share one Cholesky
    factorization of ``Xc'Xc + lam*I``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, f = X.shape
    if n < 1:
        raise TooFewSamples("ridge needs at least one sample")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("ridge: X and Y must be finite")
    spec = spec or ModelSpec("ridge", {"lambda": lam})
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean
    if f == 0:
        W = np.zeros((0, Y.shape[1]))
    else:
        if lam == 0 and np.linalg.matrix_rank(Xc) < f:
            raise SingularSystem(
                "X is rank-deficient and lambda=0; the normal equations have no unique solution "
                "(use lambda > 0)"
            )
        A = Xc.T @ Xc
        A[np.diag_indices_from(A)] += lam
        try:
            W = cho_solve(cho_factor(A), Xc.T @ Yc)
        except LinAlgError as exc:
            raise SingularSystem(f"normal equations are not positive definite ({exc}); use lambda > 0") from None
    b = y_mean - x_mean @ W
    coef = np.vstack([b[None, :], W])
    return RidgeModel(spec, f, Y.shape[1], coef, TrainingReport())


@register_model("ridge", RidgeModel)
def _fit(spec: ModelSpec, X, Y, context: FitContext, validation=None):
    return fit_ridge(X, Y, spec.params["lambda"], spec)
