"""Data model for change-plane regression.

The regression function is piecewise linear along the scalar index
W = z' theta: crossing the j-th threshold a_j adds the increment delta_j to the
coefficient vector (cumulative coding), so a subject with label
L = #{j : W > a_j} has mean x' (beta + delta_1 + ... + delta_L).
Points sitting exactly on a threshold belong to the lower group.
"""
from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent with the model."""


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Response ``y`` (n,), regressors ``x`` (n, p), grouping covariates ``z`` (n, d).

    ``x`` may include a constant column; for the single-plane (SCPL) mode ``z``
    must carry a leading constant-1 column.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        y = _freeze(np.asarray(self.y, dtype=float).reshape(-1))
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if z.ndim == 1:
            z = z[:, None]
        x, z = _freeze(x), _freeze(z)
        if y.size < 1:
            raise DimensionError("need at least one observation")
        if x.shape[0] != y.size or z.shape[0] != y.size:
            raise DimensionError("row counts of y, x, z disagree")
        for name, arr in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def n(self):
        return self.y.size

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def d(self):
        return self.z.shape[1]


@dataclass(frozen=True)
class ThetaVector:
    """Unit-norm plane direction with a positively signed coordinate ``r``."""

    values: np.ndarray
    r: int = 0

    def __post_init__(self):
        v = _freeze(np.asarray(self.values, dtype=float).reshape(-1))
        if abs(np.linalg.norm(v) - 1.0) > 1e-10:
            raise ValueError("theta must have unit Euclidean norm (within 1e-10)")
        if not 0 <= self.r < v.size:
            raise ValueError("identifiability index out of range")
        if not v[self.r] > 0:
            raise ValueError("theta[r] must be strictly positive")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_array(cls, v, r=None):
        """Normalize ``v`` and fix the sign at coordinate ``r`` (largest |v_j| if None)."""
        v = np.asarray(v, dtype=float).reshape(-1)
        nrm = np.linalg.norm(v)
        if nrm == 0:
            raise ValueError("cannot normalize the zero vector")
        v = v / nrm
        if r is None:
            r = int(np.argmax(np.abs(v)))
        if v[r] < 0:
            v = -v
        elif v[r] == 0:
            raise ValueError("theta[r] is zero; pick another identifiability index")
        return cls(v, int(r))

    @property
    def d(self):
        return self.values.size


@dataclass(frozen=True)
class Thresholds:
    """Strictly increasing threshold locations; empty when there is no subgroup."""

    a: np.ndarray

    def __post_init__(self):
        a = _freeze(np.asarray(self.a, dtype=float).reshape(-1))
        if a.size and not np.all(np.diff(a) > 0):
            raise ValueError("thresholds must be strictly increasing")
        object.__setattr__(self, "a", a)

    @classmethod
    def none(cls):
        return cls(np.empty(0))

    @property
    def s(self):
        return self.a.size


@dataclass(frozen=True)
class CoefficientSet:
    """Baseline coefficients plus one increment vector per threshold."""

    beta: np.ndarray
    deltas: np.ndarray  # (s, p); empty (0, p) when s = 0

    def __post_init__(self):
        beta = _freeze(np.asarray(self.beta, dtype=float).reshape(-1))
        deltas = np.asarray(self.deltas, dtype=float)
        if deltas.size == 0:
            deltas = np.empty((0, beta.size))
        if deltas.ndim == 1:
            deltas = deltas[None, :]
        deltas = _freeze(deltas)
        if deltas.shape[1] != beta.size:
            raise DimensionError("delta length differs from beta length")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "deltas", deltas)

    @property
    def s(self):
        return self.deltas.shape[0]

    @property
    def p(self):
        return self.beta.size

    def flat(self):
        """Concatenated (beta, delta_1, ..., delta_s)."""
        return np.concatenate([self.beta, self.deltas.reshape(-1)])

    @classmethod
    def from_flat(cls, gamma, p, s):
        gamma = np.asarray(gamma, dtype=float).reshape(-1)
        if gamma.size != (s + 1) * p:
            raise DimensionError("flat coefficient length mismatch")
        return cls(gamma[:p], gamma[p:].reshape(s, p))


@dataclass(frozen=True)
class ModelFit:
    """Fitted change-plane model plus convergence diagnostics."""

    coeffs: CoefficientSet
    thresholds: Thresholds
    theta: ThetaVector
    labels: np.ndarray
    rss: float
    objective: float
    converged: bool
    iterations: int
    lambda_used: float = 0.0
    bandwidth: float = 0.0
    mode: str = "mcpl"
    theta_identified: bool = True

    def __post_init__(self):
        object.__setattr__(self, "labels", _freeze(self.labels).astype(int))

    @property
    def s(self):
        return self.thresholds.s


def index_values(data, theta):
    """W_i = z_i' theta for a ThetaVector or a plain array."""
    v = theta.values if isinstance(theta, ThetaVector) else np.asarray(theta, float)
    if v.size != data.d:
        raise DimensionError("theta length differs from the z column count")
    return data.z @ v


def group_labels(data, theta, thresholds):
    """Label each row by the number of thresholds strictly below its index value."""
    w = index_values(data, theta)
    a = thresholds.a if isinstance(thresholds, Thresholds) else np.asarray(thresholds, float)
    if a.size == 0:
        return np.zeros(data.n, dtype=int)
    # #{j : a_j < w} == insertion point of w in the sorted thresholds
    return np.searchsorted(a, w, side="left").astype(int)


def design_expand(data, theta, thresholds):
    """Column blocks [X, X*1(W > a_1), ..., X*1(W > a_s)] (cumulative coding)."""
    a = thresholds.a if isinstance(thresholds, Thresholds) else np.asarray(thresholds, float)
    if a.size == 0:
        return np.array(data.x)
    w = index_values(data, theta)
    blocks = [data.x]
    for aj in a:
        blocks.append(data.x * (w > aj)[:, None])
    return np.hstack(blocks)


def _cumulative_coefs(coeffs):
    # row L holds beta + delta_1 + ... + delta_L
    out = np.empty((coeffs.s + 1, coeffs.p))
    out[0] = coeffs.beta
    if coeffs.s:
        out[1:] = coeffs.beta + np.cumsum(coeffs.deltas, axis=0)
    return out


def fitted_values(data, coeffs, theta, thresholds):
    labels = group_labels(data, theta, thresholds)
    bylab = _cumulative_coefs(coeffs)
    return np.einsum("ij,ij->i", data.x, bylab[labels]), labels


def exact_objective(data, coeffs, theta, thresholds):
    """Mean squared residual of the hard-indicator model (objective L_n)."""
    yhat, _ = fitted_values(data, coeffs, theta, thresholds)
    r = data.y - yhat
    return float(np.dot(r, r)) / data.n


def predict(fit, newdata):
    """Fitted values x_i'(beta + sum of increments below the row's label)."""
    if newdata.p != fit.coeffs.p:
        raise DimensionError("newdata x column count differs from the fit")
    if newdata.d != fit.theta.d:
        raise DimensionError("newdata z column count differs from the fit")
    yhat, _ = fitted_values(newdata, fit.coeffs, fit.theta, fit.thresholds)
    return yhat


def flip_representation(beta, deltas, a, theta):
    """Equivalent parameterization with the plane direction negated.

    Reversing theta reverses the group order, so the top group becomes the
    baseline and the increments change sign in reverse order.  Used to enforce
    the sign convention theta_r > 0 without changing the regression function.
    """
    beta = np.asarray(beta, float)
    deltas = np.asarray(deltas, float)
    a = np.asarray(a, float)
    theta = np.asarray(theta, float)
    s = deltas.shape[0] if deltas.ndim == 2 else 0
    if s == 0:
        return beta.copy(), deltas.copy(), a.copy(), -theta
    new_beta = beta + deltas.sum(axis=0)
    new_deltas = -deltas[::-1]
    new_a = -a[::-1]
    return new_beta, new_deltas, new_a, -theta


def make_fit(data, beta, deltas, a, theta, *, objective, converged, iterations,
             lambda_used=0.0, bandwidth=0.0, mode="mcpl", theta_identified=True,
             r=None):
    """Assemble a ModelFit, enforcing the theta_r > 0 convention by flipping."""
    theta = np.asarray(theta, float)
    deltas = np.asarray(deltas, float).reshape(-1, len(np.atleast_1d(beta)))
    a = np.asarray(a, float).reshape(-1)
    if r is None:
        r = int(np.argmax(np.abs(theta)))
    if theta[r] < 0:
        beta, deltas, a, theta = flip_representation(beta, deltas, a, theta)
    coeffs = CoefficientSet(beta, deltas)
    thresholds = Thresholds(a)
    tv = ThetaVector(theta / np.linalg.norm(theta), int(r))
    yhat, labels = fitted_values(data, coeffs, tv, thresholds)
    resid = data.y - yhat
    rss = float(np.dot(resid, resid))
    return ModelFit(coeffs, thresholds, tv, labels, rss, float(objective),
                    bool(converged), int(iterations), float(lambda_used),
                    float(bandwidth), mode, bool(theta_identified))
