"""Mixture-weight estimation for a linear pool of frozen component forecasts.

Two estimators are provided:

* ``fit_em`` maximizes the mixture log-likelihood
  ``sum_t log sum_m pi_m f_m(i_t)`` by expectation-maximization.
* ``fit_vi`` runs mean-field coordinate ascent for the Bayesian version with
  a symmetric Dirichlet prior whose concentration ``alpha = rho * N / M``
  grows with the number of training observations ``N``, so the pull toward
  equal weights stays a constant fraction of the data.

Every routine takes component log scores (an M x T matrix, either a
``LogScoreMatrix`` or a plain array) and works in log space throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import DegenerateColumnError, DomainError
from .forecast import LogScoreMatrix, WeightVector
from .special import digamma

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 10_000

# Concentrations never drop below this. Only reachable with rho = 0, where
# the prior is improper and a component's responsibility can underflow to 0.
_GAMMA_FLOOR = np.finfo(float).tiny


@dataclass(frozen=True)
class PriorSchedule:
    rho: float
    num_models: int

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise DomainError(f"rho must lie in [0, 1], got {self.rho!r}")
        if self.num_models < 1:
            raise DomainError("num_models must be positive")

    def alpha(self, n_train: int) -> float:
        return alpha_of_t(self, n_train)


@dataclass(frozen=True)
class DirichletState:
    """Concentration vector of the variational Dirichlet over weights."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        if g.ndim != 1 or g.size == 0:
            raise DomainError("gamma must be a non-empty vector")
        if np.any(~(g > 0)) or np.any(~np.isfinite(g)):
            raise DomainError("Dirichlet concentrations must be positive and finite")

    def __eq__(self, other):
        if not isinstance(other, DirichletState):
            return NotImplemented
        return np.array_equal(self.gamma, other.gamma)

    __hash__ = None


@dataclass(frozen=True)
class FitTrace:
    """Outcome of one weight fit.

    ``objective_path[0]`` is the objective at the initial point; each later
    entry follows one full iteration. For EM the objective is the mixture
    log-likelihood, for VI it is the evidence lower bound.
    """

    method: str
    iterations: int
    objective_path: np.ndarray
    converged: bool
    final_weights: WeightVector
    final_state: DirichletState | None = None
    schedule: PriorSchedule | None = None
    final_responsibilities: np.ndarray | None = field(default=None, repr=False)


def _scores(scores) -> np.ndarray:
    v = scores.values if isinstance(scores, LogScoreMatrix) else np.asarray(scores, float)
    if v.ndim != 2:
        raise DomainError("scores must be an M x T matrix")
    return v


def _model_ids(scores):
    return scores.model_ids if isinstance(scores, LogScoreMatrix) else None


def _weights(pi, m: int) -> np.ndarray:
    w = pi.weights if isinstance(pi, WeightVector) else np.asarray(pi, float)
    if w.shape != (m,):
        raise DomainError(f"expected {m} weights, got shape {w.shape}")
    return w


def _gamma(state) -> np.ndarray:
    if isinstance(state, DirichletState):
        return state.gamma
    return DirichletState(state).gamma


def _normalize_columns(log_r: np.ndarray) -> np.ndarray:
    top = log_r.max(axis=0)
    bad = ~np.isfinite(top)
    if bad.any():
        cols = np.flatnonzero(bad)[:5].tolist()
        raise DegenerateColumnError(f"no component supports columns {cols}")
    r = np.exp(log_r - top)
    return r / r.sum(axis=0)


def log_likelihood(scores, pi) -> float:
    """Mixture log-likelihood ``sum_t log sum_m pi_m exp(scores[m, t])``."""
    s = _scores(scores)
    w = _weights(pi, s.shape[0])
    with np.errstate(divide="ignore"):
        log_pi = np.log(w)
    return float(np.sum(logsumexp(log_pi[:, None] + s, axis=0)))


def em_responsibilities(scores, pi) -> np.ndarray:
    """Posterior probability that each component generated each observation."""
    s = _scores(scores)
    w = _weights(pi, s.shape[0])
    with np.errstate(divide="ignore"):
        log_pi = np.log(w)
    return _normalize_columns(log_pi[:, None] + s)


def _check_init(init, m: int) -> np.ndarray:
    if init is None:
        return np.full(m, 1.0 / m)
    w = _weights(init, m)
    if not isinstance(init, WeightVector):
        w = WeightVector(w).weights
    return w


def _as_weight_vector(w: np.ndarray, ids) -> WeightVector:
    return WeightVector(w / w.sum(), ids)


def fit_em(scores, init=None, tol: float = DEFAULT_TOL,
           max_iters: int = DEFAULT_MAX_ITERS) -> FitTrace:
    """Maximum-likelihood mixture weights by expectation-maximization.

    Args:
        scores: M x T component log scores.
        init: starting weights; uniform when omitted.
        tol: stop once an iteration improves the log-likelihood by less.
        max_iters: hard cap on iterations.

    Returns:
        A ``FitTrace`` whose objective path is the log-likelihood.
    """
    s = _scores(scores)
    m, t = s.shape
    if t < 1:
        raise DomainError("need at least one observation to fit weights")
    pi = _check_init(init, m)
    path = [log_likelihood(s, pi)]
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        r = em_responsibilities(s, pi)
        pi = r.sum(axis=1) / t
        pi = pi / pi.sum()
        path.append(log_likelihood(s, pi))
        if path[-1] - path[-2] < tol:
            converged = True
            break
    return FitTrace(
        method="em",
        iterations=it,
        objective_path=np.array(path),
        converged=converged,
        final_weights=_as_weight_vector(pi, _model_ids(scores)),
        final_responsibilities=r if it else None,
    )


def alpha_of_t(schedule: PriorSchedule, n_train: int) -> float:
    """Shared Dirichlet concentration ``rho * N / M``."""
    if n_train < 0:
        raise DomainError("n_train must be non-negative")
    return schedule.rho * n_train / schedule.num_models


def expected_log_pi(state) -> np.ndarray:
    """``E[log pi_k] = psi(gamma_k) - psi(sum gamma)`` under Dirichlet(gamma)."""
    g = _gamma(state)
    return digamma(g) - digamma(g.sum())


def vi_responsibilities(scores, state) -> np.ndarray:
    """Mean-field responsibilities ``r ∝ exp(E[log pi_m] + log f_m(i_t))``."""
    s = _scores(scores)
    g = _gamma(state)
    if g.size != s.shape[0]:
        raise DomainError("gamma and scores disagree on the number of models")
    return _normalize_columns(expected_log_pi(g)[:, None] + s)


def _log_gamma(x):
    # scipy overflows on subnormal input; log Gamma(x) = -log(x) + O(x) there.
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x < 1e-300, -np.log(x), gammaln(x))


def _elbo(s: np.ndarray, g: np.ndarray, r: np.ndarray, alpha: float, elp=None) -> float:
    m = s.shape[0]
    if elp is None:
        elp = expected_log_pi(g)
    with np.errstate(divide="ignore", invalid="ignore"):
        entropy_z = -np.sum(np.where(r > 0, r * np.log(r), 0.0))
    # Coefficient of E[log pi_m] collected from log p(Z|pi), log p(pi) and
    # -log q(pi). It is exactly zero right after a concentration update.
    coef = (r.sum(axis=1) + alpha) - g
    pi_terms = float(np.sum(np.where(coef != 0, coef * elp, 0.0)))
    # Dir(0) is improper; its normalizer is an additive constant and dropped.
    log_norm_prior = float(_log_gamma(m * alpha) - m * _log_gamma(alpha)) if alpha > 0 else 0.0
    log_norm_q = float(_log_gamma(g.sum()) - np.sum(_log_gamma(g)))
    return float(np.sum(r * s) + entropy_z + pi_terms + log_norm_prior - log_norm_q)


def elbo(scores, state, r, schedule: PriorSchedule) -> float:
    """Evidence lower bound for q(pi) = Dir(gamma) and q(Z) = columns of ``r``.

    Returns ``E_q[log p(D, Z, pi)] - E_q[log q(Z)] - E_q[log q(pi)]`` with
    the prior concentration taken from ``schedule`` at ``N = T``.
    """
    s = _scores(scores)
    g = _gamma(state)
    r = np.asarray(r, dtype=float)
    if r.shape != s.shape or g.size != s.shape[0]:
        raise DomainError("scores, responsibilities and gamma dimensions disagree")
    if schedule.num_models != s.shape[0]:
        raise DomainError("schedule is for a different number of models")
    return _elbo(s, g, r, alpha_of_t(schedule, s.shape[1]))


def fit_vi(scores, schedule: PriorSchedule, init=None, tol: float = DEFAULT_TOL,
           max_iters: int = DEFAULT_MAX_ITERS) -> FitTrace:
    """Variational posterior over mixture weights under the scheduled prior.

    Alternates the responsibility update with the conjugate concentration
    update ``gamma_m = alpha + sum_t r(m, t)``. The initial concentrations
    are ``alpha + N * init``. Final weights are ``gamma / sum(gamma)``.
    """
    s = _scores(scores)
    m, t = s.shape
    if t < 1:
        raise DomainError("need at least one observation to fit weights")
    if schedule.num_models != m:
        raise DomainError(
            f"schedule is for {schedule.num_models} models, scores have {m}"
        )
    alpha = alpha_of_t(schedule, t)
    g = np.maximum(alpha + t * _check_init(init, m), _GAMMA_FLOOR)
    elp = expected_log_pi(g)
    r = _normalize_columns(elp[:, None] + s)
    path = [_elbo(s, g, r, alpha, elp)]
    converged = False
    it = 0
    while it < max_iters:
        it += 1
        g = np.maximum(alpha + r.sum(axis=1), _GAMMA_FLOOR)
        elp = expected_log_pi(g)
        used = r
        path.append(_elbo(s, g, used, alpha, elp))
        if path[-1] - path[-2] < tol:
            converged = True
            break
        r = _normalize_columns(elp[:, None] + s)
    state = DirichletState(g)
    return FitTrace(
        method="vi",
        iterations=it,
        objective_path=np.array(path),
        converged=converged,
        final_weights=map_weights(state, ids=_model_ids(scores)),
        final_state=state,
        schedule=schedule,
        final_responsibilities=used if it else r,
    )


def map_weights(state, schedule: PriorSchedule | None = None,
                n_train: int | None = None, ids=None) -> WeightVector:
    """Point estimate ``gamma_m / sum(gamma)`` of the weights.

    When ``schedule`` and ``n_train`` are given, ``gamma`` is checked to total
    ``M * alpha + N`` as it must after a concentration update.
    """
    g = _gamma(state)
    if schedule is not None and n_train is not None:
        expected = schedule.num_models * alpha_of_t(schedule, n_train) + n_train
        if not np.isclose(g.sum(), expected, rtol=1e-9, atol=1e-9):
            raise DomainError(
                f"gamma totals {g.sum():.12g}, expected {expected:.12g} for this prior"
            )
    return WeightVector(g / g.sum(), ids)
