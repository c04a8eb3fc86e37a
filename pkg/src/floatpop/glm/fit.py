"""Poisson and NB2 regression with log link and exposure offset.

Both fitters work on a :class:`DesignMatrix` and return a
:class:`SnapshotFit`.  The NB2 fitter profiles the likelihood over
``ln(alpha)`` with a bounded Brent search; each profile evaluation runs
IRLS for the coefficients at fixed ``alpha``.  The Brent optimum is then
polished with a joint Newton iteration on ``(beta, alpha)``, which also
yields the observed information used for the standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .special import digamma, lgamma, trigamma

ALPHA_MIN = 1e-8
ALPHA_MAX = 1e4
Z_95 = 1.959963984540054

# Above this count the log-rising-factorial sums switch from prefix sums to
# the gamma-function forms.
_PREFIX_SUM_LIMIT = 1_000_000


class GLMError(Exception):
    """Base class for fitting failures."""


class CollinearDesignError(GLMError):
    def __init__(self, msg="collinear design"):
        super().__init__(msg)


class DegenerateVarianceError(GLMError):
    def __init__(self, msg="degenerate variance"):
        super().__init__(msg)


@dataclass(frozen=True)
class DesignMatrix:
    """Regressors, log-exposure offset and (optionally) a count response.

    Parameters
    ----------
    names : tuple of str
        Column names, one per column of ``X``.
    X : ndarray, shape (n, p)
    offset : ndarray, shape (n,)
        ``log(exposure)`` per row.
    response : ndarray, shape (n,), optional
        Non-negative integer counts (stored as float).
    """

    names: tuple
    X: np.ndarray
    offset: np.ndarray
    response: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.names):
            raise ValueError("X must be 2-D with one column per name")
        offset = np.asarray(self.offset, dtype=float)
        if offset.shape != (X.shape[0],):
            raise ValueError("offset must have one entry per row")
        if not np.all(np.isfinite(offset)):
            raise ValueError("offset must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "names", tuple(self.names))
        if self.response is not None:
            y = np.asarray(self.response, dtype=float)
            if y.shape != (X.shape[0],):
                raise ValueError("response must have one entry per row")
            if np.any(y < 0) or np.any(y != np.round(y)):
                raise ValueError("response must be non-negative integers")
            object.__setattr__(self, "response", y)

    @property
    def n_obs(self):
        return self.X.shape[0]

    def with_response(self, y):
        return DesignMatrix(self.names, self.X, self.offset, y)

    def with_offset(self, offset):
        return DesignMatrix(self.names, self.X, offset, self.response)


@dataclass(frozen=True)
class SnapshotFit:
    """Fitted count regression for one snapshot (minute).

    ``alpha`` is the NB2 dispersion; it is 0 for Poisson fits and for NB
    fits that ended at the lower bound (``poisson_limit``).
    """

    names: tuple
    beta: np.ndarray
    se: np.ndarray
    alpha: float
    converged: bool
    n_obs: int
    log_likelihood: float
    minute: int | None = None
    poisson_limit: bool = False
    family: str = "negbin"
    iterations: int = 0
    flags: tuple = field(default_factory=tuple)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no regressor named {name!r}") from None

    @property
    def coefficients(self):
        return dict(zip(self.names, self.beta.tolist()))

    @property
    def std_errors(self):
        return dict(zip(self.names, self.se.tolist()))

    @property
    def irr(self):
        return dict(zip(self.names, np.exp(self.beta).tolist()))

    @property
    def ci95(self):
        lo = np.exp(self.beta - Z_95 * self.se)
        hi = np.exp(self.beta + Z_95 * self.se)
        return {k: (a, b) for k, a, b in zip(self.names, lo.tolist(), hi.tolist())}

    @property
    def z_values(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return dict(zip(self.names, (self.beta / self.se).tolist()))

    @property
    def p_values(self):
        return {k: wald_test(self, k)[1] for k in self.names}

    def with_minute(self, minute):
        return _replace(self, minute=minute)


def _replace(fit, **kw):
    from dataclasses import replace
    return replace(fit, **kw)


def normal_two_sided_p(z):
    """Two-sided normal tail probability ``2 (1 - Phi(|z|))`` via erfc."""
    return math.erfc(abs(z) / math.sqrt(2.0))


def wald_test(fit, name):
    """z statistic and two-sided p-value for one coefficient."""
    i = fit.index(name)
    se = float(fit.se[i])
    if not se > 0 or not math.isfinite(se):
        raise DegenerateVarianceError()
    z = float(fit.beta[i]) / se
    return z, normal_two_sided_p(z)


def safe_exp(x):
    """``math.exp`` that saturates to inf instead of raising on overflow."""
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def irr(fit, name):
    """Incidence rate ratio with its 95% Wald interval: ``(point, low, high)``."""
    i = fit.index(name)
    b = float(fit.beta[i])
    se = float(fit.se[i])
    return safe_exp(b), safe_exp(b - Z_95 * se), safe_exp(b + Z_95 * se)


# ---------------------------------------------------------------------------
# likelihood pieces

def _log_rising(y, a, order=0):
    """Sums over ``j < y`` of ``log1p(a j)`` and its first two a-derivatives.

    ``sum_j log1p(a j)`` equals ``lgG(y + 1/a) - lgG(1/a) + y ln a`` without the
    cancellation that form suffers for small ``a``.
    """
    yi = y.astype(np.int64)
    ymax = int(yi.max()) if yi.size else 0
    if ymax <= _PREFIX_SUM_LIMIT:
        j = np.arange(ymax, dtype=float)
        aj = a * j
        out = [np.concatenate(([0.0], np.cumsum(np.log1p(aj))))[yi]]
        if order >= 1:
            out.append(np.concatenate(([0.0], np.cumsum(j / (1.0 + aj))))[yi])
        if order >= 2:
            out.append(np.concatenate(([0.0], -np.cumsum((j / (1.0 + aj)) ** 2)))[yi])
        return out
    r = 1.0 / a
    out = [lgamma(y + r) - lgamma(r) + y * math.log(a)]
    if order >= 1:
        dpsi = digamma(y + r) - digamma(r)
        out.append(r * (y - r * dpsi))
    if order >= 2:
        dtri = trigamma(r) - trigamma(y + r)
        out.append(-(r * r) * (y - 2.0 * r * dpsi + r * r * dtri))
    return out


def _h(x):
    """``(log1p(x) - x/(1+x)) / x**2`` and its derivative, stable near 0."""
    small = x < 1e-2
    h = np.empty_like(x)
    dh = np.empty_like(x)
    xl = x[~small]
    n = np.log1p(xl) - xl / (1.0 + xl)
    h[~small] = n / xl**2
    dh[~small] = 1.0 / (xl * (1.0 + xl) ** 2) - 2.0 * n / xl**3
    xs = x[small]
    # log1p(x) - x/(1+x) = sum_{k>=2} (-1)^k (k-1)/k x^k
    hs = np.zeros_like(xs)
    dhs = np.zeros_like(xs)
    for k in range(12, 1, -1):
        c = (-1) ** k * (k - 1) / k
        hs = hs * xs + c
    for k in range(12, 2, -1):
        c = (-1) ** k * (k - 1) / k * (k - 2)
        dhs = dhs * xs + c
    h[small] = hs
    dh[small] = dhs
    return h, dh


class _Problem:
    """Data and cached constants for one fit."""

    def __init__(self, design):
        if design.response is None:
            raise ValueError("design has no response")
        self.names = design.names
        self.X = design.X
        self.offset = design.offset
        self.y = design.response
        self.n, self.p = self.X.shape
        if self.n <= self.p:
            raise GLMError("need more observations than columns")
        self.lgy1 = float(np.sum(lgamma(self.y + 1.0)))
        self._cached_a = None
        self._cached_D = None
        if np.linalg.matrix_rank(self.X) < self.p:
            raise CollinearDesignError()

    def eta(self, beta):
        return np.clip(self.offset + self.X @ beta, -700.0, 700.0)

    def loglik(self, beta, a):
        eta = self.eta(beta)
        mu = np.exp(eta)
        y = self.y
        if a == 0.0:
            return float(np.sum(y * eta - mu)) - self.lgy1
        if a != self._cached_a:
            self._cached_a, self._cached_D = a, _log_rising(y, a)[0]
        D = self._cached_D
        return float(np.sum(D + y * eta - (y + 1.0 / a) * np.log1p(a * mu))) - self.lgy1

    def start(self):
        z = np.log(self.y + 0.5) - self.offset
        beta, *_ = np.linalg.lstsq(self.X, z, rcond=None)
        return beta


def _irls(prob, a, beta, tol=1e-8, max_iter=100):
    """IRLS for beta at fixed NB2 dispersion ``a`` (a = 0 is Poisson)."""
    X, y = prob.X, prob.y
    ll = prob.loglik(beta, a)
    for it in range(1, max_iter + 1):
        eta = prob.eta(beta)
        mu = np.exp(eta)
        w = mu / (1.0 + a * mu)
        score = X.T @ ((y - mu) / (1.0 + a * mu))
        info = (X.T * w) @ X
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise CollinearDesignError() from None
        new = beta + step
        new_ll = prob.loglik(new, a)
        halvings = 0
        while not new_ll >= ll - 1e-12 * abs(ll) and halvings < 30:
            step = step * 0.5
            new = beta + step
            new_ll = prob.loglik(new, a)
            halvings += 1
        beta, ll = new, new_ll
        if np.max(np.abs(step)) < tol:
            return beta, ll, True, it
    return beta, ll, False, max_iter


def _derivatives(prob, beta, a):
    """Gradient and Hessian of the NB2 log-likelihood in (beta, a)."""
    X, y = prob.X, prob.y
    mu = np.exp(prob.eta(beta))
    amu = a * mu
    d1 = (y - mu) / (1.0 + amu)
    d2 = -mu * (1.0 + a * y) / (1.0 + amu) ** 2
    d_eta_a = -(y - mu) * mu / (1.0 + amu) ** 2
    _, D1, D2 = _log_rising(y, a, order=2)
    h, dh = _h(amu)
    s_a = D1 + mu * mu * h - y * mu / (1.0 + amu)
    s_aa = D2 + mu**3 * dh + y * mu * mu / (1.0 + amu) ** 2
    p = prob.p
    g = np.empty(p + 1)
    g[:p] = X.T @ d1
    g[p] = s_a.sum()
    H = np.empty((p + 1, p + 1))
    H[:p, :p] = (X.T * d2) @ X
    H[:p, p] = H[p, :p] = X.T @ d_eta_a
    H[p, p] = s_aa.sum()
    return g, H


def score_vector(design, fit):
    """Gradient of the log-likelihood at ``fit`` (beta block, then alpha if NB)."""
    prob = _Problem(design)
    if fit.family == "poisson" or fit.poisson_limit:
        mu = np.exp(prob.eta(fit.beta))
        return prob.X.T @ (prob.y - mu)
    g, _ = _derivatives(prob, fit.beta, fit.alpha)
    return g


def _se_from_info(info):
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise CollinearDesignError() from None
    d = np.diag(cov)
    return np.sqrt(np.where(d > 0, d, np.nan))


def fit_poisson(design, minute=None):
    """Poisson log-link regression with offset, by IRLS.

    Standard errors come from the inverse Fisher information.
    """
    prob = _Problem(design)
    beta, ll, ok, it = _irls(prob, 0.0, prob.start())
    mu = np.exp(prob.eta(beta))
    se = _se_from_info((prob.X.T * mu) @ prob.X)
    return SnapshotFit(prob.names, beta, se, 0.0, ok, prob.n, ll, minute=minute,
                       family="poisson", iterations=it)


def _fixed_alpha_fit(prob, a, beta0, minute):
    beta, ll, ok, it = _irls(prob, a, beta0)
    g, H = _derivatives(prob, beta, a)
    se = _se_from_info(-H[:-1, :-1])
    return SnapshotFit(prob.names, beta, se, a, ok, prob.n, ll, minute=minute,
                       iterations=it, flags=("alpha_fixed",))


def fit_negbin(design, alpha=None, minute=None):
    """NB2 log-link regression with offset.

    Parameters
    ----------
    design : DesignMatrix
        Must carry a response.
    alpha : float, optional
        Hold the dispersion fixed at this value instead of estimating it.
    minute : int, optional
        Snapshot label copied into the result.

    Returns
    -------
    SnapshotFit
        ``alpha`` is reported as 0 with ``poisson_limit=True`` when the
        likelihood is maximised at the lower dispersion bound.
    """
    prob = _Problem(design)
    beta_p, ll_p, ok_p, it_p = _irls(prob, 0.0, prob.start())
    if alpha is not None:
        return _fixed_alpha_fit(prob, float(alpha), beta_p, minute)

    # Profile slope in alpha at alpha -> 0 is 0.5 * sum((y - mu)^2 - y).
    mu_p = np.exp(prob.eta(beta_p))
    if np.sum((prob.y - mu_p) ** 2 - prob.y) <= 0.0:
        return _poisson_limit(prob, beta_p, ok_p, minute)

    state = {"beta": beta_p, "ok": True, "evals": 0}

    def neg_profile(log_a):
        beta, ll, ok, _ = _irls(prob, math.exp(log_a), state["beta"], tol=1e-6)
        state["beta"] = beta
        state["ok"] = state["ok"] and ok
        state["evals"] += 1
        return -ll

    lo, hi = math.log(ALPHA_MIN), math.log(ALPHA_MAX)
    res = minimize_scalar(neg_profile, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-4, "maxiter": 200})
    log_a = float(res.x)
    if log_a - lo < 1e-2:
        return _poisson_limit(prob, beta_p, ok_p, minute)

    a = math.exp(log_a)
    beta, ll, ok, _ = _irls(prob, a, state["beta"], tol=1e-10)
    beta, a, ll, newton_ok, H = _newton_polish(prob, beta, a, ll)
    flags = []
    converged = bool(res.success) and ok and newton_ok
    if a >= ALPHA_MAX * 0.999:
        flags.append("alpha_upper_bound")
        converged = False
    info = -H
    if not np.all(np.linalg.eigvalsh(info) > 0):
        flags.append("indefinite_information")
        info = info[:-1, :-1]
    se = _se_from_info(info)[: prob.p]
    return SnapshotFit(prob.names, beta, se, a, converged, prob.n, ll, minute=minute,
                       iterations=state["evals"], flags=tuple(flags))


def _poisson_limit(prob, beta_p, ok, minute):
    beta, ll, ok2, it = _irls(prob, ALPHA_MIN, beta_p, tol=1e-10)
    _, H = _derivatives(prob, beta, ALPHA_MIN)
    se = _se_from_info(-H[:-1, :-1])
    return SnapshotFit(prob.names, beta, se, 0.0, ok and ok2, prob.n, ll, minute=minute,
                       poisson_limit=True, iterations=it, flags=("poisson_limit",))


def _newton_polish(prob, beta, a, ll, max_iter=25):
    """Joint Newton steps on (beta, a) until the log-likelihood settles."""
    p = prob.p
    for _ in range(max_iter):
        g, H = _derivatives(prob, beta, a)
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            return beta, a, ll, False, H
        t = 1.0
        while True:
            new_a = a + t * step[p]
            if new_a > 0:
                new_beta = beta + t * step[:p]
                new_ll = prob.loglik(new_beta, new_a)
                if new_ll >= ll - 1e-12 * abs(ll):
                    break
            t *= 0.5
            if t < 1e-10:
                return beta, a, ll, False, H
        delta = new_ll - ll
        beta, a, ll = new_beta, new_a, new_ll
        if abs(delta) < 1e-10 and np.max(np.abs(t * step)) < 1e-8:
            _, H = _derivatives(prob, beta, a)
            return beta, a, ll, True, H
    _, H = _derivatives(prob, beta, a)
    return beta, a, ll, False, H
