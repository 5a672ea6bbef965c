"""Simulation designs, the NMI grouping metric, and the Monte Carlo runner.

Four designs are built in.  All draw regressors with a leading constant
column and N(0, Sigma) covariates, with noise standard deviation 0.5:

1. single threshold at zero, plane over (1, X2, X3);
2. two thresholds (-0.524, 0.253) on the plane (0.75, -0.25, 0.612) over
   (X2, X3, X4), giving roughly 30/30/40 percent groups;
3. no subgroup (a sparse plain linear model);
4. as design 2 with thresholds at (-sqrt(2)/2, +sqrt(2)/2), giving unequal
   groups.

For designs 2-4 the stated ``p`` counts the non-intercept covariates in the
published coefficient menu, so the design matrix has p + 1 columns.
"""
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from changeplane import model as cpmodel
from changeplane.mcpl import McplConfig, fit_mcpl
from changeplane.scpl import ScplConfig, fit_scpl

IDENTITY = "identity"
TOEPLITZ = "toeplitz"
EQUICORR = "equicorrelation"
_SIGMA_KINDS = (IDENTITY, TOEPLITZ, EQUICORR)

NOISE_SD = 0.5  # noise variance 0.25 in every design


@dataclass(frozen=True)
class SimDesign:
    example: int
    n: int
    p: int = None  # defaults: 6 for example 1, 5 for examples 2-4
    sigma_kind: str = IDENTITY
    seed: int = 0

    def __post_init__(self):
        if self.example not in (1, 2, 3, 4):
            raise ValueError("example must be 1, 2, 3 or 4")
        if self.sigma_kind not in _SIGMA_KINDS:
            raise ValueError(f"sigma_kind must be one of {_SIGMA_KINDS}")
        if self.p is None:
            object.__setattr__(self, "p", 6 if self.example == 1 else 5)
        if self.example == 1 and self.p != 6:
            raise ValueError("example 1 uses p = 6")
        if self.example != 1 and self.p not in (5, 20):
            raise ValueError("examples 2-4 use p in {5, 20}")
        if self.n < 1:
            raise ValueError("n must be positive")


@dataclass(frozen=True)
class Truth:
    """True parameters of a design, with theta stored renormalized."""

    beta: np.ndarray
    deltas: np.ndarray
    a: np.ndarray
    theta: np.ndarray
    theta_raw: np.ndarray
    sigma: float = NOISE_SD
    free_thresholds: bool = True  # False when the threshold is fixed at zero

    @property
    def s(self):
        return self.a.size

    @property
    def gamma(self):
        return np.concatenate([self.beta, self.deltas.reshape(-1)])

    @property
    def r(self):
        return int(np.argmax(np.abs(self.theta)))

    def param_table(self):
        """Ordered (name, true value) pairs covering gamma, a and theta."""
        rows = [(f"beta{k}", float(v)) for k, v in enumerate(self.beta)]
        for j in range(self.s):
            rows += [(f"delta{j + 1}_{k}", float(v))
                     for k, v in enumerate(self.deltas[j])]
        if self.free_thresholds:
            rows += [(f"a{j + 1}", float(v)) for j, v in enumerate(self.a)]
        rows += [(f"theta{j + 1}", float(v)) for j, v in enumerate(self.theta)]
        return rows


def gen_covariance(kind, p):
    """Covariate covariance menu: identity, 0.5^|i-j| Toeplitz, 0.5 equicorrelation."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if kind == IDENTITY:
        return np.eye(p)
    if kind == TOEPLITZ:
        idx = np.arange(p)
        return 0.5 ** np.abs(idx[:, None] - idx[None, :])
    if kind == EQUICORR:
        return np.full((p, p), 0.5) + 0.5 * np.eye(p)
    raise ValueError(f"unknown covariance kind {kind!r}")


def _pad(v, length):
    out = np.zeros(length)
    out[: len(v)] = v
    return out


def design_truth(design):
    """True parameter set of a simulation design."""
    if design.example == 1:
        beta = np.array([2.0, 1, 1, 1, 1, 1])
        deltas = np.array([[-1.0, 0, 0, -1, -1, -1]])
        a = np.empty(0)  # plane offset is inside theta; threshold fixed at 0
        theta_raw = np.array([-0.15, 0.3, 0.942])
    else:
        ncol = design.p + 1
        theta_raw = np.array([0.75, -0.25, 0.612])
        if design.example == 3:
            beta = _pad([1.0, 0, 2, 0, 0, 0], ncol)
            deltas = np.empty((0, ncol))
            a = np.empty(0)
        else:
            beta = _pad([2.0, 1, 1, 1, 1, 1], ncol)
            deltas = np.vstack([
                _pad([-1.0, 0, 0, -1, -1, -1], ncol),
                _pad([0.0, -1, 1, 0, 0, 0], ncol),
            ])
            if design.example == 2:
                a = np.array([-0.524, 0.253])
            else:
                a = np.array([-math.sqrt(2) / 2, math.sqrt(2) / 2])
    theta = theta_raw / np.linalg.norm(theta_raw)
    return Truth(beta, deltas, a, theta, theta_raw)


def simulate_dataset(design, rng=None, noise_sd=None):
    """Draw one dataset; deterministic given the design seed (or the rng).

    Returns ``(Dataset, Truth, labels)`` with the true group labels of the
    draw.
    """
    rng = np.random.default_rng(design.seed) if rng is None else rng
    truth = design_truth(design)
    sd = NOISE_SD if noise_sd is None else float(noise_sd)
    n = design.n

    if design.example == 1:
        ncov = 5
    else:
        ncov = design.p
    sigma = gen_covariance(design.sigma_kind, ncov)
    chol = np.linalg.cholesky(sigma)
    covars = rng.standard_normal((n, ncov)) @ chol.T
    x = np.column_stack([np.ones(n), covars])

    if design.example == 1:
        z = np.column_stack([np.ones(n), covars[:, 0], covars[:, 1]])
        w = z @ truth.theta
        labels = (w > 0).astype(int)
        mean = x @ truth.beta + (x @ truth.deltas[0]) * labels
    else:
        z = covars[:, 0:3]
        w = z @ truth.theta
        labels = np.searchsorted(truth.a, w, side="left").astype(int)
        mean = x @ truth.beta
        for j in range(truth.s):
            mean = mean + (x @ truth.deltas[j]) * (w > truth.a[j])
    y = mean + sd * rng.standard_normal(n)
    return cpmodel.Dataset(y, x, z), truth, labels


def nmi(labels_a, labels_b):
    """Normalized mutual information between two partitions, in [0, 1].

    Natural logarithms; two single-cluster partitions score 1 by convention.
    """
    a = np.asarray(labels_a).reshape(-1)
    b = np.asarray(labels_b).reshape(-1)
    if a.size != b.size:
        raise cpmodel.DimensionError("label vectors differ in length")
    if a.size == 0:
        raise cpmodel.DimensionError("need at least one label")
    n = a.size
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1.0)
    pa = table.sum(axis=1) / n
    pb = table.sum(axis=0) / n
    ha = float(-np.sum(pa * np.log(pa, where=pa > 0, out=np.zeros_like(pa))))
    hb = float(-np.sum(pb * np.log(pb, where=pb > 0, out=np.zeros_like(pb))))
    mask = table > 0
    pj = table[mask] / n
    outer = np.outer(pa, pb)[mask]
    info = float(np.sum(pj * np.log(pj / outer)))
    denom = 0.5 * (ha + hb)
    if denom <= 0:
        return 1.0
    return float(min(max(info / denom, 0.0), 1.0))


def _align_to_truth(fit, truth):
    """Flip the fitted representation so theta matches the truth's sign slot."""
    r = truth.r
    theta = fit.theta.values
    if theta.size != truth.theta.size or theta[r] >= 0:
        return fit.coeffs.beta, fit.coeffs.deltas, fit.thresholds.a, theta
    return cpmodel.flip_representation(
        fit.coeffs.beta, fit.coeffs.deltas, fit.thresholds.a, theta)


def _mc_one(args):
    design, rep, fit_kind, fit_config, noise_sd = args
    rng = np.random.default_rng([design.seed, rep])
    data, truth, labels = simulate_dataset(design, rng, noise_sd=noise_sd)
    try:
        if fit_kind == "scpl":
            fit = fit_scpl(data, fit_config)
        else:
            fit = fit_mcpl(data, fit_config)
    except Exception as exc:  # noqa: BLE001 - failures are counted, not fatal
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
    out = {"ok": True, "s_hat": int(fit.s),
           "nmi": nmi(fit.labels, labels)}
    if fit.s == truth.s:
        beta, deltas, a, theta = _align_to_truth(fit, truth)
        gamma = np.concatenate([beta, deltas.reshape(-1)])
        out["params"] = np.concatenate([gamma, a, theta])
        gtrue = truth.gamma
        out["correct_zeros"] = int(np.sum((gamma == 0) & (gtrue == 0)))
        out["incorrect_zeros"] = int(np.sum((gamma == 0) & (gtrue != 0)))
    return out


def _summary(values):
    v = np.sort(np.asarray(values, float))
    return {"min": float(v[0]), "q25": float(np.quantile(v, 0.25)),
            "median": float(np.median(v)), "mean": float(np.mean(v)),
            "q75": float(np.quantile(v, 0.75)), "max": float(v[-1])}


@dataclass(frozen=True)
class MCReport:
    """Monte Carlo summary in the layout of the published tables."""

    design: SimDesign
    replicates: int
    conditioned: int               # replicates with s_hat equal to the truth
    params: dict                   # name -> {truth, bias, sd, rmse}
    s_hat_frequencies: dict
    nmi_summary: dict
    zero_selection: dict
    failures: int
    errors: tuple = ()

    def to_jsonable(self):
        return {
            "design": {"example": self.design.example, "n": self.design.n,
                       "p": self.design.p, "sigma_kind": self.design.sigma_kind,
                       "seed": self.design.seed},
            "replicates": self.replicates,
            "conditioned": self.conditioned,
            "s_hat_frequencies": {str(k): v for k, v in
                                  sorted(self.s_hat_frequencies.items())},
            "params": self.params,
            "nmi": self.nmi_summary,
            "zero_selection": self.zero_selection,
            "failures": self.failures,
        }

    def csv_rows(self):
        """Per-parameter rows: name, truth, bias, sd, rmse."""
        rows = [("parameter", "truth", "bias", "sd", "rmse")]
        for name, st in self.params.items():
            rows.append((name, st["truth"], st["bias"], st["sd"], st["rmse"]))
        return rows


def default_threads():
    env = os.environ.get("CHANGEPLANE_THREADS")
    if env:
        return max(1, int(env))
    return 1


def run_monte_carlo(design, replicates, fit_config=None, n_jobs=None,
                    noise_sd=None):
    """Repeat simulate-and-fit and aggregate the paper's table quantities.

    Parameter summaries (bias, SD, RMSE) condition on replicates whose
    estimated threshold count matches the truth; the s_hat histogram and the
    NMI summary cover every successful replicate.  Deterministic for a fixed
    design seed, independent of ``n_jobs``.
    """
    if replicates < 1:
        raise ValueError("need at least one replicate")
    fit_kind = "scpl" if design.example == 1 else "mcpl"
    if fit_config is None:
        fit_config = ScplConfig() if fit_kind == "scpl" else McplConfig()
    n_jobs = default_threads() if n_jobs is None else max(1, int(n_jobs))

    jobs = [(design, rep, fit_kind, fit_config, noise_sd)
            for rep in range(replicates)]
    if n_jobs == 1 or replicates == 1:
        results = [_mc_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_mc_one, jobs, chunksize=1))

    truth = design_truth(design)
    ok = [r for r in results if r["ok"]]
    errors = tuple(r["error"] for r in results if not r["ok"])[:10]
    freqs = {}
    for r in ok:
        freqs[r["s_hat"]] = freqs.get(r["s_hat"], 0) + 1
    hits = [r for r in ok if "params" in r]

    params = {}
    names = truth.param_table()
    if hits:
        mat = np.vstack([r["params"] for r in hits])
        for j, (name, tval) in enumerate(names):
            col = mat[:, j]
            nrep = col.size
            mean = math.fsum(col) / nrep
            bias = mean - tval
            mse = math.fsum((col - tval) ** 2) / nrep
            var = math.fsum((col - mean) ** 2) / (nrep - 1) if nrep > 1 else 0.0
            params[name] = {"truth": tval, "bias": bias,
                            "sd": math.sqrt(var), "rmse": math.sqrt(mse)}
    zero = {"correct": math.nan, "incorrect": math.nan,
            "true_zeros": int(np.sum(truth.gamma == 0))}
    if hits:
        zero["correct"] = math.fsum(r["correct_zeros"] for r in hits) / len(hits)
        zero["incorrect"] = math.fsum(r["incorrect_zeros"] for r in hits) / len(hits)
    nmis = [r["nmi"] for r in ok]
    return MCReport(design, replicates, len(hits), params, freqs,
                    _summary(nmis) if nmis else {}, zero,
                    len(results) - len(ok), errors)
