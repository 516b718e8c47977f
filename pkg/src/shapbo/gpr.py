"""Gaussian-process surrogate and expected-improvement acquisition.

Inputs are min-max normalized with the run's *original* domain so the model
geometry does not move when the search box is tightened.  Targets are
standardized before fitting.  Hyperparameters (lengthscale, signal variance,
noise variance) are searched in log10 space: seeded multistart coordinate
pattern search on the log marginal likelihood, polished by L-BFGS-B.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.linalg.lapack import dpotri
from scipy.optimize import minimize
from scipy.special import ndtr

from .core import Dataset, DimensionError, RngStream, SearchDomain, clip

# exact factorization first; escalate only when Cholesky fails
JITTERS = (0.0, 1e-9, 1e-8, 1e-7, 1e-6)
# the coarse hyperparameter scan always uses a small jitter so it never stalls
_COARSE_JITTERS = (1e-9,)

# log10 bounds for (lengthscale, signal variance, noise variance)
LOG10_BOUNDS = np.array([[-4.0, 2.0], [-6.0, 4.0], [-12.0, 0.0]])

_LOG_2PI = math.log(2.0 * math.pi)
_LN10 = math.log(10.0)


class ModelFitError(RuntimeError):
    """The covariance matrix could not be factorized even with maximal jitter."""


@dataclass(frozen=True)
class KernelParams:
    lengthscale: float
    signal_variance: float
    noise_variance: float

    def __post_init__(self) -> None:
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be > 0, got {self.lengthscale}")
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be > 0, got {self.signal_variance}")
        if not self.noise_variance >= 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")

    @classmethod
    def from_log10(cls, theta) -> "KernelParams":
        return cls(*(10.0 ** np.asarray(theta, dtype=float)).tolist())

    def to_dict(self) -> dict:
        return {
            "lengthscale": self.lengthscale,
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
        }


def kernel(x, x_prime, params: KernelParams) -> float:
    """Squared-exponential covariance between two normalized inputs."""
    x = np.asarray(x, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    if x.shape != x_prime.shape:
        raise DimensionError(f"kernel inputs differ in shape: {x.shape} vs {x_prime.shape}")
    d2 = float(np.sum((x - x_prime) ** 2))
    return params.signal_variance * math.exp(-d2 / (2.0 * params.lengthscale**2))


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d2 = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d2, 0.0)


def _exact_sq_dists(A: np.ndarray) -> np.ndarray:
    # the expanded form above leaves ~1e-16 residue on the diagonal
    diff = A[:, None, :] - A[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _factorize(d2: np.ndarray, params: KernelParams, jitters=JITTERS):
    n = d2.shape[0]
    K = params.signal_variance * np.exp(-d2 / (2.0 * params.lengthscale**2))
    for jitter in jitters:
        Kj = K.copy()
        Kj[np.diag_indices(n)] += params.noise_variance + jitter
        try:
            L = cholesky(Kj, lower=True, check_finite=False)
        except LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return L, jitter
    raise ModelFitError(
        f"covariance not positive definite for {params} even with jitter {jitters[-1]:g}"
    )


def _lml_from_factor(L: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    alpha = solve_triangular(L.T, solve_triangular(L, y, lower=True, check_finite=False),
                             lower=False, check_finite=False)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * y.size * _LOG_2PI
    return lml, alpha


def log_marginal_likelihood(params: KernelParams, X_norm: np.ndarray, y_std: np.ndarray,
                            jitter: float | None = None) -> float:
    """Log evidence of standardized targets under ``params``.

    With ``jitter=None`` the escalation schedule is used; otherwise exactly
    ``jitter`` is added and a failed factorization raises.
    """
    d2 = _exact_sq_dists(np.atleast_2d(X_norm))
    L, _ = _factorize(d2, params, JITTERS if jitter is None else (jitter,))
    return _lml_from_factor(L, np.asarray(y_std, dtype=float))[0]


@dataclass(frozen=True)
class GprModel:
    params: KernelParams
    train_inputs: np.ndarray
    train_targets: np.ndarray
    factor: np.ndarray
    alpha: np.ndarray
    y_mean: float
    y_std: float
    input_domain: SearchDomain
    jitter: float
    log_marginal_likelihood: float
    start_points: tuple = ()
    start_lml: tuple = ()

    def normalize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.input_domain.dim:
            raise DimensionError(
                f"expected {self.input_domain.dim} features, got shape {X.shape}"
            )
        return (X - self.input_domain.lower) / self.input_domain.width

    def predict_many(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and latent variance in objective units for rows of ``X``."""
        Z = np.atleast_2d(self.normalize(X))
        p = self.params
        Ks = p.signal_variance * np.exp(-_sq_dists(Z, self.train_inputs) / (2.0 * p.lengthscale**2))
        mean = Ks @ self.alpha
        v = solve_triangular(self.factor, Ks.T, lower=True, check_finite=False)
        var = np.maximum(p.signal_variance - np.sum(v * v, axis=0), 0.0)
        return self.y_mean + self.y_std * mean, var * self.y_std**2


def predict(model: GprModel, x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.input_domain.dim,):
        raise DimensionError(f"expected a vector of length {model.input_domain.dim}, got {x.shape}")
    mean, var = model.predict_many(x[None, :])
    return float(mean[0]), float(var[0])


def _score(theta, d2, y, jitters=JITTERS) -> float:
    try:
        L, _ = _factorize(d2, KernelParams.from_log10(theta), jitters)
    except ModelFitError:
        return -math.inf
    return _lml_from_factor(L, y)[0]


def _neg_lml_and_grad(theta, d2, y):
    p = KernelParams.from_log10(theta)
    try:
        L, _ = _factorize(d2, p)
    except ModelFitError:
        return 1e300, np.zeros(3)
    lml, alpha = _lml_from_factor(L, y)
    Kf = p.signal_variance * np.exp(-d2 / (2.0 * p.lengthscale**2))
    Kinv, info = dpotri(L, lower=1)
    if info != 0:
        return 1e300, np.zeros(3)
    Kinv = np.tril(Kinv) + np.tril(Kinv, -1).T
    W = np.outer(alpha, alpha) - Kinv
    WK = W * Kf
    grad = 0.5 * _LN10 * np.array([
        np.sum(WK * d2) / p.lengthscale**2,
        np.sum(WK),
        np.trace(W) * p.noise_variance,
    ])
    return -lml, -grad


def _pattern_search_lml(theta0: np.ndarray, d2: np.ndarray, y: np.ndarray,
                        step0: float = 1.0, min_step: float = 0.5, max_moves: int = 8):
    # large steps hop across the flat small-lengthscale plateau where gradients vanish
    lo, hi = LOG10_BOUNDS[:, 0], LOG10_BOUNDS[:, 1]
    theta = np.clip(theta0, lo, hi)
    best = _score(theta, d2, y, _COARSE_JITTERS)
    step = step0
    while step >= min_step:
        for _ in range(max_moves):
            cand_best, cand_theta = best, None
            for j in range(theta.size):
                for sign in (1.0, -1.0):
                    t = theta.copy()
                    t[j] = min(max(t[j] + sign * step, lo[j]), hi[j])
                    if t[j] == theta[j]:
                        continue
                    s = _score(t, d2, y, _COARSE_JITTERS)
                    if s > cand_best:
                        cand_best, cand_theta = s, t
            if cand_theta is None:
                break
            theta, best = cand_theta, cand_best
        step /= 2.0
    return theta, best


def fit(data: Dataset, rng: RngStream, params: KernelParams | None = None,
        n_starts: int = 8, n_polish: int = 2) -> GprModel:
    """Fit a GP to ``data``.

    If ``params`` is given the hyperparameter search is skipped (and a single
    sample suffices).  Otherwise ``n_starts`` seeded points in the log10 box
    are improved by a coarse pattern search, the best ``n_polish`` of those
    are refined with bounded L-BFGS-B on the analytic gradient, and the
    candidate with the highest log marginal likelihood wins.
    """
    n = len(data)
    if n < 1 or (params is None and n < 2):
        raise ValueError(f"need at least {1 if params else 2} samples to fit, got {n}")
    domain = data.domain
    Z = (data.X - domain.lower) / domain.width
    y_raw = data.y
    y_mean = float(np.mean(y_raw))
    y_std = float(np.std(y_raw))
    if not y_std > 1e-12 * max(1.0, abs(y_mean)):
        y_std = 1.0
    y = (y_raw - y_mean) / y_std
    d2 = _exact_sq_dists(Z)

    starts: list = []
    start_lml: list = []
    if params is None:
        lo, hi = LOG10_BOUNDS[:, 0], LOG10_BOUNDS[:, 1]
        candidates = []
        coarse = []
        for _ in range(n_starts):
            theta0 = lo + rng.uniform(0.0, 1.0, size=3) * (hi - lo)
            starts.append(tuple(theta0.tolist()))
            candidates.append(theta0)
            theta, score = _pattern_search_lml(theta0, d2, y)
            coarse.append((score, len(coarse), theta))
        coarse.sort(key=lambda c: (-c[0], c[1]))
        for score, _, theta in coarse[:n_polish]:
            candidates.append(theta)
            if not math.isfinite(score):
                continue
            res = minimize(_neg_lml_and_grad, theta, args=(d2, y), jac=True,
                           bounds=LOG10_BOUNDS, method="L-BFGS-B")
            candidates.append(np.clip(res.x, lo, hi))
        candidates.extend(c[2] for c in coarse[n_polish:])
        scores = [_score(t, d2, y) for t in candidates]
        start_lml = scores[:n_starts]
        i = int(np.argmax(scores))
        if not math.isfinite(scores[i]):
            raise ModelFitError("no hyperparameter candidate produced a finite likelihood")
        params = KernelParams.from_log10(candidates[i])

    L, jitter = _factorize(d2, params)
    lml, alpha = _lml_from_factor(L, y)
    return GprModel(
        params=params,
        train_inputs=Z,
        train_targets=y,
        factor=L,
        alpha=alpha,
        y_mean=y_mean,
        y_std=y_std,
        input_domain=domain,
        jitter=jitter,
        log_marginal_likelihood=lml,
        start_points=tuple(starts),
        start_lml=tuple(start_lml),
    )


def expected_improvement(mean, variance, f_best):
    """EI for maximization with no exploration offset; works elementwise."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    sigma = np.sqrt(variance)
    improve = mean - f_best
    positive = sigma > 0
    safe_sigma = np.where(positive, sigma, 1.0)
    z = improve / safe_sigma
    with np.errstate(over="ignore"):  # z * z -> inf gives the correct pdf of 0
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    ei = np.where(positive, improve * ndtr(z) + sigma * pdf, np.maximum(improve, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def argmax_acquisition(model: GprModel, domain: SearchDomain, f_best: float, rng: RngStream,
                       n_candidates: int = 2048, n_polish: int = 10, n_halvings: int = 8,
                       max_moves: int = 25) -> np.ndarray:
    """Maximize EI over ``domain``: random candidates, then coordinate pattern search."""
    D = domain.dim

    def acq(X):
        m, v = model.predict_many(X)
        return expected_improvement(m, v, f_best)

    cand = domain.lower + rng.uniform(0.0, 1.0, size=(n_candidates, D)) * domain.width
    cand = np.minimum(cand, domain.upper)
    ei = acq(cand)
    top = np.argsort(-ei, kind="stable")[: min(n_polish, n_candidates)]
    pts = cand[top].copy()
    vals = ei[top].copy()
    S = pts.shape[0]

    eye = np.eye(D)
    step = 0.1 * domain.width
    for _ in range(n_halvings + 1):
        offsets = np.concatenate([eye * step, -eye * step])  # (2D, D)
        for _ in range(max_moves):
            polls = clip(domain, pts[:, None, :] + offsets[None, :, :])
            pv = acq(polls.reshape(-1, D)).reshape(S, 2 * D)
            k = np.argmax(pv, axis=1)
            pv_best = pv[np.arange(S), k]
            moved = pv_best > vals
            if not moved.any():
                break
            pts[moved] = polls[moved, k[moved]]
            vals[moved] = pv_best[moved]
        step = step / 2.0
    i = int(np.argmax(vals))
    return pts[i].copy()
