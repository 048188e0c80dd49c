"""Censored parametric survival fitting and the shelf-life decay surface.

Three observation kinds feed every likelihood: superseded spans contribute
density terms, while reinforcements and window-end censoring contribute
survival terms. Families: exponential (closed form), Weibull (profiled
Newton on the shape), log-normal (quasi-Newton on (mu, log s)). The decay
surface is a Weibull accelerated-failure-time model with
tau = exp(theta . (1, v, sigma, v*sigma)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr, logsumexp

from .errors import DataError, FitError
from .signals import SUPERSEDED, LifetimeRecord

FAMILIES = ("exponential", "weibull", "lognormal")
KAPPA_BOUNDS = (0.05, 20.0)
MIN_DURATION = 1e-3

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Distribution functions


def _check_domain(t, cond: bool, msg: str) -> None:
    if not cond:
        raise DataError(msg)


def weibull_sf(t, tau: float, kappa: float):
    """S(t) = exp(-(t/tau)^kappa)."""
    t = np.asarray(t, dtype=float)
    _check_domain(t, bool(np.all(t >= 0)) and tau > 0 and kappa > 0,
                  "weibull_sf requires t >= 0, tau > 0, kappa > 0")
    out = np.exp(-np.power(t / tau, kappa))
    return float(out) if out.ndim == 0 else out


def weibull_pdf(t, tau: float, kappa: float):
    t = np.asarray(t, dtype=float)
    _check_domain(t, bool(np.all(t >= 0)) and tau > 0 and kappa > 0,
                  "weibull_pdf requires t >= 0, tau > 0, kappa > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        x = t / tau
        out = (kappa / tau) * np.power(x, kappa - 1.0) * np.exp(-np.power(x, kappa))
        if kappa < 1.0:
            out = np.where(t == 0.0, np.inf, out)
        elif kappa > 1.0:
            out = np.where(t == 0.0, 0.0, out)
        else:
            out = np.where(t == 0.0, 1.0 / tau, out)
    return float(out) if out.ndim == 0 else out


def exponential_sf(t, tau: float):
    return weibull_sf(t, tau, 1.0)


def exponential_pdf(t, tau: float):
    return weibull_pdf(t, tau, 1.0)


def lognormal_sf(t, mu: float, s: float):
    t = np.asarray(t, dtype=float)
    _check_domain(t, bool(np.all(t >= 0)) and s > 0,
                  "lognormal_sf requires t >= 0, s > 0")
    with np.errstate(divide="ignore"):
        z = (np.log(t) - mu) / s
    out = np.exp(log_ndtr(-z))
    out = np.where(t == 0.0, 1.0, out)
    return float(out) if out.ndim == 0 else out


def lognormal_pdf(t, mu: float, s: float):
    t = np.asarray(t, dtype=float)
    _check_domain(t, bool(np.all(t >= 0)) and s > 0,
                  "lognormal_pdf requires t >= 0, s > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (np.log(t) - mu) / s
        out = np.exp(-0.5 * z * z) / (s * t * math.sqrt(2.0 * math.pi))
    out = np.where(t == 0.0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def family_sf(t, family: str, params: dict):
    if family == "exponential":
        return exponential_sf(t, params["tau"])
    if family == "weibull":
        return weibull_sf(t, params["tau"], params["kappa"])
    if family == "lognormal":
        return lognormal_sf(t, params["mu"], params["s"])
    raise DataError(f"unknown family {family!r}")


def family_pdf(t, family: str, params: dict):
    if family == "exponential":
        return exponential_pdf(t, params["tau"])
    if family == "weibull":
        return weibull_pdf(t, params["tau"], params["kappa"])
    if family == "lognormal":
        return lognormal_pdf(t, params["mu"], params["s"])
    raise DataError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# Record helpers


def records_to_arrays(records: Sequence[LifetimeRecord]):
    """(durations, is_event, velocity, volatility) arrays; durations clamped."""
    t = np.array([r.duration for r in records], dtype=float)
    d = np.array([r.event == SUPERSEDED for r in records], dtype=bool)
    v = np.array([r.velocity for r in records], dtype=float)
    s = np.array([r.volatility for r in records], dtype=float)
    return np.maximum(t, MIN_DURATION), d, v, s


def _as_arrays(records_or_durations, events: Optional[np.ndarray]):
    if events is None:
        t, d, _, _ = records_to_arrays(records_or_durations)
    else:
        t = np.maximum(np.asarray(records_or_durations, dtype=float), MIN_DURATION)
        d = np.asarray(events, dtype=bool)
        if t.shape != d.shape:
            raise DataError("durations and event flags must have equal length")
    return t, d


# ---------------------------------------------------------------------------
# Parametric fits


@dataclass
class ParamFit:
    family: str
    params: dict
    loglik: float
    n_events: int
    n_censored: int
    aic: float
    converged: bool = True
    n_iter: int = 0

    def sf(self, t):
        return family_sf(t, self.family, self.params)

    def pdf(self, t):
        return family_pdf(t, self.family, self.params)


def _weibull_loglik(t: np.ndarray, d: np.ndarray, tau: float, kappa: float) -> float:
    logt = np.log(t)
    n_ev = int(d.sum())
    z = np.exp(kappa * (logt - math.log(tau)))
    return float(n_ev * math.log(kappa) - n_ev * kappa * math.log(tau)
                 + (kappa - 1.0) * logt[d].sum() - z.sum())


def _lognormal_loglik(t: np.ndarray, d: np.ndarray, mu: float, s: float) -> float:
    z = (np.log(t) - mu) / s
    ev = -np.log(t[d]) - math.log(s) - _LOG_SQRT_2PI - 0.5 * z[d] ** 2
    cen = log_ndtr(-z[~d])
    return float(ev.sum() + cen.sum())


def fit_exponential(records_or_durations, events=None, min_obs: int = 5) -> ParamFit:
    t, d = _as_arrays(records_or_durations, events)
    if t.size < min_obs:
        raise FitError(f"need at least {min_obs} records, got {t.size}")
    n_ev = int(d.sum())
    if n_ev == 0:
        raise FitError("all censored: exponential scale not identifiable")
    tau = float(t.sum() / n_ev)
    ll = float(-n_ev * math.log(tau) - t.sum() / tau)
    return ParamFit("exponential", {"tau": tau}, ll, n_ev, int(t.size - n_ev),
                    aic=2.0 * 1 - 2.0 * ll)


def _weibull_profile_score(kappa: float, logt: np.ndarray, d_sum: float,
                           logt_ev_sum: float, shape_prior: bool):
    """Score and derivative of the kappa-profile log-likelihood."""
    w_log = kappa * logt
    lw = logsumexp(w_log)
    w = np.exp(w_log - lw)
    m1 = float(np.dot(w, logt))
    var = float(np.dot(w, (logt - m1) ** 2))
    g = d_sum / kappa + logt_ev_sum - d_sum * m1
    gp = -d_sum / kappa ** 2 - d_sum * var
    if shape_prior:
        lk = math.log(kappa)
        g += -lk / kappa
        gp += -(1.0 - lk) / kappa ** 2
    return g, gp


def fit_weibull(records_or_durations, events=None, min_obs: int = 5,
                tol: float = 1e-8, max_iter: int = 100,
                map_shape_prior: bool = False) -> ParamFit:
    """Censored Weibull MLE: Newton on kappa with tau profiled out.

    tau(kappa) = (sum t_i^kappa / n_events)^(1/kappa). Shape bounded to
    [0.05, 20]; bisection safeguards the Newton step. Optional log-normal
    shape prior adds -(log kappa)^2 / 2 to the objective (MAP mode).
    """
    t, d = _as_arrays(records_or_durations, events)
    if t.size < min_obs:
        raise FitError(f"need at least {min_obs} records, got {t.size}")
    d_sum = float(d.sum())
    if d_sum == 0:
        raise FitError("all censored: weibull shape not identifiable")
    logt = np.log(t)
    logt_ev_sum = float(logt[d].sum())

    lo, hi = KAPPA_BOUNDS
    g_lo, _ = _weibull_profile_score(lo, logt, d_sum, logt_ev_sum, map_shape_prior)
    g_hi, _ = _weibull_profile_score(hi, logt, d_sum, logt_ev_sum, map_shape_prior)
    kappa = 1.0
    converged = False
    n_iter = 0
    if g_lo <= 0:
        kappa, converged = lo, True
    elif g_hi >= 0:
        kappa, converged = hi, True
    else:
        for n_iter in range(1, max_iter + 1):
            g, gp = _weibull_profile_score(kappa, logt, d_sum, logt_ev_sum, map_shape_prior)
            if g > 0:
                lo = kappa
            else:
                hi = kappa
            step = g / gp if gp < 0 else float("nan")
            new = kappa - step
            if not math.isfinite(new) or not (lo < new < hi):
                new = 0.5 * (lo + hi)
            if abs(new - kappa) < tol:
                kappa = new
                converged = True
                break
            kappa = new
    tau = float(np.exp((logsumexp(kappa * logt) - math.log(d_sum)) / kappa))
    ll = _weibull_loglik(t, d, tau, kappa)
    return ParamFit("weibull", {"tau": tau, "kappa": kappa}, ll,
                    int(d_sum), int(t.size - d_sum), aic=2.0 * 2 - 2.0 * ll,
                    converged=converged, n_iter=n_iter)


def fit_lognormal(records_or_durations, events=None, min_obs: int = 5,
                  max_iter: int = 200) -> ParamFit:
    """Censored log-normal MLE via BFGS on (mu, log s) with analytic gradient."""
    t, d = _as_arrays(records_or_durations, events)
    if t.size < min_obs:
        raise FitError(f"need at least {min_obs} records, got {t.size}")
    if int(d.sum()) == 0:
        raise FitError("all censored: lognormal parameters not identifiable")
    logt = np.log(t)
    mu0 = float(logt[d].mean())
    s0 = float(logt[d].std())
    s0 = max(s0, 0.05)

    def negll_and_grad(x):
        mu, ln_s = x
        s = math.exp(ln_s)
        z = (logt - mu) / s
        zc = z[~d]
        # hazard of the standard normal at censoring points, stable in tails
        log_h = -0.5 * zc * zc - _LOG_SQRT_2PI - log_ndtr(-zc)
        h = np.exp(log_h)
        ll = (-logt[d] - ln_s - _LOG_SQRT_2PI - 0.5 * z[d] ** 2).sum() + log_ndtr(-zc).sum()
        d_mu = (z[d] / s).sum() + (h / s).sum()
        d_lns = (z[d] ** 2 - 1.0).sum() + (zc * h).sum()
        return -ll, np.array([-d_mu, -d_lns])

    res = minimize(negll_and_grad, np.array([mu0, math.log(s0)]), jac=True,
                   method="BFGS", options={"maxiter": max_iter, "gtol": 1e-8})
    mu, s = float(res.x[0]), float(math.exp(res.x[1]))
    ll = _lognormal_loglik(t, d, mu, s)
    return ParamFit("lognormal", {"mu": mu, "s": s}, ll, int(d.sum()),
                    int(t.size - d.sum()), aic=2.0 * 2 - 2.0 * ll,
                    converged=bool(res.success), n_iter=int(res.nit))


def fit_parametric(records_or_durations, family: str, events=None,
                   min_obs: int = 5, **kwargs) -> ParamFit:
    if family == "exponential":
        return fit_exponential(records_or_durations, events, min_obs=min_obs)
    if family == "weibull":
        return fit_weibull(records_or_durations, events, min_obs=min_obs, **kwargs)
    if family == "lognormal":
        return fit_lognormal(records_or_durations, events, min_obs=min_obs)
    raise DataError(f"unknown family {family!r}")


def compare_aic(records_or_durations, events=None,
                families: Sequence[str] = FAMILIES, min_obs: int = 5) -> list[ParamFit]:
    """Fit each family and rank ascending by AIC. Families that cannot be
    fitted (e.g. all censored) are dropped from the comparison."""
    fits = []
    errors = []
    for fam in families:
        try:
            fits.append(fit_parametric(records_or_durations, fam, events=events, min_obs=min_obs))
        except FitError as exc:
            errors.append((fam, str(exc)))
    if not fits:
        raise FitError("no family could be fitted: " + "; ".join(f"{f}: {m}" for f, m in errors))
    fits.sort(key=lambda f: f.aic)
    return fits


# ---------------------------------------------------------------------------
# Log-normal hazard analysis


def _lognormal_log_hazard(u: float, mu: float, s: float) -> float:
    z = (u - mu) / s
    return -u - math.log(s) - _LOG_SQRT_2PI - 0.5 * z * z - log_ndtr(-z)


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def lognormal_hazard_peak(mu: float, s: float,
                          bracket: tuple[float, float] = (1e-6, 1e8),
                          tol: float = 1e-10) -> tuple[float, float]:
    """Locate the hazard maximum of a log-normal by golden-section on log t.

    The log-normal hazard rises to a single peak and then decreases, so a
    golden-section search on the log-time axis finds it. Returns
    (t_peak, hazard_at_peak).
    """
    if s <= 0:
        raise DataError("lognormal_hazard_peak requires s > 0")
    a, b = math.log(bracket[0]), math.log(bracket[1])
    c = b - _INV_PHI * (b - a)
    d_ = a + _INV_PHI * (b - a)
    fc = _lognormal_log_hazard(c, mu, s)
    fd = _lognormal_log_hazard(d_, mu, s)
    while b - a > tol:
        if fc > fd:
            b, d_, fd = d_, c, fc
            c = b - _INV_PHI * (b - a)
            fc = _lognormal_log_hazard(c, mu, s)
        else:
            a, c, fc = c, d_, fd
            d_ = a + _INV_PHI * (b - a)
            fd = _lognormal_log_hazard(d_, mu, s)
    u = 0.5 * (a + b)
    return math.exp(u), math.exp(_lognormal_log_hazard(u, mu, s))


def hazard_decreasing_at(mu: float, s: float, t_ref: float) -> bool:
    """True when the log-normal hazard is already past its peak at t_ref."""
    if t_ref <= 0:
        raise DataError("reference age must be positive")
    t_peak, _ = lognormal_hazard_peak(mu, s)
    return t_ref > t_peak


# ---------------------------------------------------------------------------
# Decay surface (Weibull AFT on velocity / volatility)


@dataclass
class CovTransform:
    mean_v: float
    sd_v: float
    mean_s: float
    sd_s: float

    def design(self, v, s) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        s = np.asarray(s, dtype=float)
        zv = (v - self.mean_v) / self.sd_v
        zs = (s - self.mean_s) / self.sd_s
        return np.stack([np.ones_like(zv), zv, zs, zv * zs], axis=-1)

    def to_dict(self) -> dict:
        return {"mean_v": self.mean_v, "sd_v": self.sd_v,
                "mean_s": self.mean_s, "sd_s": self.sd_s}

    @classmethod
    def from_dict(cls, d: dict) -> "CovTransform":
        return cls(d["mean_v"], d["sd_v"], d["mean_s"], d["sd_s"])

    @classmethod
    def fit(cls, v: np.ndarray, s: np.ndarray) -> "CovTransform":
        sd_v = float(np.std(v))
        sd_s = float(np.std(s))
        return cls(float(np.mean(v)), sd_v if sd_v > 1e-12 else 1.0,
                   float(np.mean(s)), sd_s if sd_s > 1e-12 else 1.0)


def theta_to_raw(theta: np.ndarray, tr: CovTransform) -> np.ndarray:
    """Map standardized-space coefficients to raw (v, sigma) scale."""
    a0, a1, a2, a3 = (float(x) for x in theta)
    cv, cs = tr.sd_v, tr.sd_s
    mv, ms = tr.mean_v, tr.mean_s
    r3 = a3 / (cv * cs)
    r1 = a1 / cv - a3 * ms / (cv * cs)
    r2 = a2 / cs - a3 * mv / (cv * cs)
    r0 = a0 - a1 * mv / cv - a2 * ms / cs + a3 * mv * ms / (cv * cs)
    return np.array([r0, r1, r2, r3])


@dataclass
class SurfaceFit:
    theta: np.ndarray          # standardized-covariate scale
    theta_raw: np.ndarray      # raw (v, sigma) scale
    kappa: float
    loglik: float
    transform: CovTransform
    n_events: int
    n_records: int
    converged: bool
    n_iter: int


def _aft_value_grad(params: np.ndarray, logt: np.ndarray, d: np.ndarray,
                    X: np.ndarray, fit_kappa: bool, kappa_fixed: float,
                    theta_parent: Optional[np.ndarray], lam_over_n: float,
                    kappa_parent: Optional[float] = None):
    """Mean penalized AFT log-likelihood and its gradient."""
    n = logt.size
    if fit_kappa:
        theta = params[:4]
        ln_k = float(np.clip(params[4], math.log(KAPPA_BOUNDS[0]), math.log(KAPPA_BOUNDS[1])))
        kappa = math.exp(ln_k)
    else:
        theta = params
        kappa = kappa_fixed
    eta = X @ theta
    u = kappa * (logt - eta)
    with np.errstate(over="ignore"):
        w = np.exp(np.minimum(u, 500.0))
    ll = (d * (math.log(kappa) + (kappa - 1.0) * logt - kappa * eta)).sum() - w.sum()
    ll /= n
    g_theta = (kappa / n) * (X.T @ (w - d.astype(float)))
    if theta_parent is not None:
        diff = theta - theta_parent
        ll -= lam_over_n * float(diff @ diff)
        g_theta = g_theta - 2.0 * lam_over_n * diff
    if fit_kappa:
        g_lnk = float((d * (1.0 + u)).sum() - (w * u).sum()) / n
        if kappa_parent is not None:
            dk = math.log(kappa) - math.log(kappa_parent)
            ll -= lam_over_n * dk * dk
            g_lnk -= 2.0 * lam_over_n * dk
        return ll, np.concatenate([g_theta, [g_lnk]])
    return ll, g_theta


def _gradient_ascent(value_grad, x0: np.ndarray, max_iter: int, tol: float,
                     project=None) -> tuple[np.ndarray, float, bool, int]:
    """Steepest ascent with backtracking line search; never decreases."""
    x = np.array(x0, dtype=float)
    if project is not None:
        x = project(x)
    f, g = value_grad(x)
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        if float(np.max(np.abs(g))) < tol:
            return x, f, True, it - 1
        gnorm2 = float(g @ g)
        accepted = False
        s = step
        for _ in range(60):
            x_new = x + s * g
            if project is not None:
                x_new = project(x_new)
            f_new, g_new = value_grad(x_new)
            if math.isfinite(f_new) and f_new >= f + 1e-4 * s * gnorm2:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            # no ascent possible at machine precision
            return x, f, float(np.max(np.abs(g))) < max(tol, 1e-5), it
        x, f, g = x_new, f_new, g_new
        step = min(s * 1.5, 1e6)
    return x, f, False, it


def fit_surface(records_or_durations, events=None, velocity=None, volatility=None,
                shape_init: Optional[float] = None, min_records: int = 10,
                min_events: int = 2, tol: float = 1e-6,
                max_iter: int = 500) -> SurfaceFit:
    """Weibull AFT fit with tau_e = exp(theta . (1, v, sigma, v*sigma)).

    Covariates are standardized internally (the transform is kept on the
    fit so coefficients can be reported in both scales). Joint gradient
    ascent on (theta, log kappa), initialized from the no-covariate fit.
    """
    if events is None:
        t, d, v, s = records_to_arrays(records_or_durations)
    else:
        t, d = _as_arrays(records_or_durations, events)
        v = np.asarray(velocity, dtype=float)
        s = np.asarray(volatility, dtype=float)
    if t.size < min_records:
        raise FitError(f"need at least {min_records} records, got {t.size}")
    if int(d.sum()) < min_events:
        raise FitError(f"need at least {min_events} events, got {int(d.sum())}")

    tr = CovTransform.fit(v, s)
    X = tr.design(v, s)
    logt = np.log(t)

    base = fit_weibull(t, d, min_obs=1)
    kappa0 = shape_init if shape_init is not None else base.params["kappa"]
    theta0 = np.array([math.log(t.sum() / d.sum()), 0.0, 0.0, 0.0])
    x0 = np.concatenate([theta0, [math.log(kappa0)]])

    lo, hi = math.log(KAPPA_BOUNDS[0]), math.log(KAPPA_BOUNDS[1])

    def project(x):
        x = x.copy()
        x[4] = min(max(x[4], lo), hi)
        return x

    def vg(x):
        return _aft_value_grad(x, logt, d, X, True, 0.0, None, 0.0)

    x, f, ok, it = _gradient_ascent(vg, x0, max_iter=max_iter, tol=tol, project=project)
    theta = x[:4]
    kappa = math.exp(x[4])
    return SurfaceFit(theta=theta, theta_raw=theta_to_raw(theta, tr), kappa=kappa,
                      loglik=f * t.size, transform=tr, n_events=int(d.sum()),
                      n_records=int(t.size), converged=ok, n_iter=it)


def refit_theta(durations: np.ndarray, events: np.ndarray, X: np.ndarray,
                kappa: float, theta_parent: np.ndarray, lam: float,
                shrink_kappa_to: Optional[float] = None,
                tol: float = 1e-6, max_iter: int = 300):
    """Penalized child fit used by the hierarchy.

    Maximizes the AFT likelihood in theta with the shape held at the parent
    value, plus lam * ||theta - theta_parent||^2 pulling toward the parent.
    Initialization at the parent plus monotone line search guarantees the
    penalized objective never falls below the inherit-parent baseline.
    When shrink_kappa_to is given, log kappa is refitted too with
    lam * (log kappa - log kappa_parent)^2.
    """
    t = np.maximum(np.asarray(durations, dtype=float), MIN_DURATION)
    d = np.asarray(events, dtype=bool)
    logt = np.log(t)
    n = t.size
    lam_over_n = lam / n
    fit_kappa = shrink_kappa_to is not None
    if fit_kappa:
        x0 = np.concatenate([theta_parent, [math.log(kappa)]])
        lo, hi = math.log(KAPPA_BOUNDS[0]), math.log(KAPPA_BOUNDS[1])

        def project(x):
            x = x.copy()
            x[4] = min(max(x[4], lo), hi)
            return x

        def vg(x):
            return _aft_value_grad(x, logt, d, X, True, 0.0, theta_parent,
                                   lam_over_n, kappa_parent=shrink_kappa_to)

        x, f, ok, _ = _gradient_ascent(vg, x0, max_iter=max_iter, tol=tol, project=project)
        return x[:4], math.exp(x[4]), f * n, ok

    def vg(x):
        return _aft_value_grad(x, logt, d, X, False, kappa, theta_parent, lam_over_n)

    x, f, ok, _ = _gradient_ascent(vg, np.array(theta_parent, dtype=float),
                                   max_iter=max_iter, tol=tol)
    return x, kappa, f * n, ok


def aft_loglik(durations, events, X: np.ndarray, theta: np.ndarray, kappa: float) -> float:
    """Unpenalized AFT log-likelihood at given parameters (total, not mean)."""
    t = np.maximum(np.asarray(durations, dtype=float), MIN_DURATION)
    d = np.asarray(events, dtype=bool)
    logt = np.log(t)
    ll, _ = _aft_value_grad(np.asarray(theta, dtype=float), logt, d, X, False,
                            kappa, None, 0.0)
    return ll * t.size


# ---------------------------------------------------------------------------
# Observation-cadence floor


def tau_floor(gaps: Sequence[float], min_duration: float = MIN_DURATION) -> float:
    """Median inter-observation gap; the configured minimum when no gaps."""
    arr = np.asarray([g for g in gaps if g >= 0.0], dtype=float)
    if arr.size == 0:
        return min_duration
    return float(np.median(arr))


def observation_gaps(store, predicates, context: Optional[str]) -> list[float]:
    """Consecutive observation gaps pooled over the concepts of a predicate
    group, restricted to edges recorded in the given context."""
    gaps: list[float] = []
    preds = set(predicates)
    for subject, predicate in store.concepts():
        if predicate not in preds:
            continue
        hist = store.history(subject, predicate)
        ts = [e.t for e in hist if context is None or e.context == context]
        gaps.extend(float(b - a) for a, b in zip(ts, ts[1:]))
    return gaps
