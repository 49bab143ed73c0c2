"""Decay-model fits and derived time scales.

Each model is a small scikit-learn style regressor: ``fit(X, y)`` with the
abscissa as ``X`` (1-D or a single column), ``predict(X)``, fitted
parameters in ``params_`` / ``errors_`` and a :class:`FitResult` from
``result()``. Module-level ``fit_*`` helpers wrap the estimators for
:class:`~scaledspin.protocols.SignalCurve` inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import curve_fit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted


class FitError(RuntimeError):
    """A fit failed to converge; ``initial_guess`` records the start point."""

    def __init__(self, message: str, initial_guess=None):
        super().__init__(f"{message} (initial guess: {initial_guess})")
        self.initial_guess = initial_guess


@dataclass
class FitResult:
    model: str
    params: dict
    errors: dict
    residual_norm: float
    derived: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {k: float(v) for k, v in self.params.items()},
            "errors": {k: float(v) for k, v in self.errors.items()},
            "residual_norm": float(self.residual_norm),
            "derived": {k: _jsonable(v) for k, v in self.derived.items()},
            "flags": list(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    return v


# ----------------------------------------------------------------------------
# validation helpers


def check_xy(X, y, min_points: int = 1):
    """Return finite 1-D float arrays ``(x, y)`` of equal length."""
    x = check_array(X, ensure_2d=False, dtype=float)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError("X must be 1-D or have a single column")
        x = x[:, 0]
    yy = check_array(y, ensure_2d=False, dtype=float)
    if yy.ndim != 1 or yy.shape[0] != x.shape[0]:
        raise ValueError("y must be 1-D with one value per sample")
    if x.shape[0] < min_points:
        raise ValueError(f"need at least {min_points} points, got {x.shape[0]}")
    return x, yy


def check_x(X):
    x = check_array(X, ensure_2d=False, dtype=float)
    return x[:, 0] if x.ndim == 2 else x


# ----------------------------------------------------------------------------
# model functions


def abragam(t, w, h):
    """``sinc(w t) exp(-(h t)^2 / 2)`` with ``sinc(x) = sin(x)/x``."""
    t = np.asarray(t, dtype=float)
    return np.sinc(w * t / np.pi) * np.exp(-0.5 * (h * t) ** 2)


def abragam_t2(w: float, h: float) -> float:
    """``T_2 = 1 / sqrt(h^2 + w^2 / 3)``."""
    return 1.0 / math.sqrt(h**2 + w**2 / 3.0)


def flambaum_izrailev(t, gamma, sigma):
    """``exp(2 G^2/s^2 - 2 sqrt(G^4/s^4 + G^2 t^2))``; equals 1 at t = 0."""
    t = np.asarray(t, dtype=float)
    r = (gamma / sigma) ** 2
    # subtract in a cancellation-free form
    return np.exp(-2.0 * gamma**2 * t**2 / (r + np.sqrt(r**2 + gamma**2 * t**2)))


def boltzmann(x, a1, a2, x0, dx):
    """``A2 + (A1 - A2) / (1 + exp((x - x0) / dx))``."""
    x = np.asarray(x, dtype=float)
    z = np.clip((x - x0) / dx, -700, 700)
    return a2 + (a1 - a2) / (1.0 + np.exp(z))


def saturation_law(x, r):
    """``sqrt(R^2 + x^2)``."""
    return np.sqrt(r**2 + np.asarray(x, dtype=float) ** 2)


def fgr_rate(gamma: float, sigma: float) -> dict:
    """Golden-rule density of directly connected states.

    ``sigma_1 = pi sigma^2 / Gamma`` and ``N_1 = 1 / sigma_1`` (same inverse
    time units as the inputs).
    """
    if gamma <= 0:
        raise ValueError("Gamma must be positive")
    s1 = math.pi * sigma**2 / gamma
    return {"sigma_1": s1, "N_1": 1.0 / s1}


def t_star(sigma: float) -> float:
    """``T_* = sqrt(2) / sigma``."""
    return math.sqrt(2.0) / sigma


@dataclass(frozen=True)
class HalfMax:
    time: float
    censored: bool


def half_max_time(times, values) -> HalfMax:
    """First time the curve falls to half its maximum.

    Linear interpolation between the bracketing samples; independent of any
    fit. If the curve never reaches half maximum the result is right-censored
    at the last sample time.
    """
    t, v = check_xy(times, values, min_points=2)
    i_max = int(np.argmax(v))
    half = 0.5 * v[i_max]
    below = np.flatnonzero(v[i_max:] <= half)
    if below.size == 0:
        return HalfMax(float(t[-1]), True)
    j = i_max + int(below[0])
    if v[j] == half or j == 0:
        return HalfMax(float(t[j]), False)
    t0, t1, v0, v1 = t[j - 1], t[j], v[j - 1], v[j]
    return HalfMax(float(t0 + (half - v0) * (t1 - t0) / (v1 - v0)), False)


# ----------------------------------------------------------------------------
# estimators


class _CurveModel(BaseEstimator, RegressorMixin):
    model_id = ""
    param_names: tuple = ()

    def _fit_curve(self, func, x, y, p0, bounds=(-np.inf, np.inf), sigma=None,
                   absolute_sigma=False):
        try:
            popt, pcov = curve_fit(func, x, y, p0=p0, bounds=bounds, sigma=sigma,
                                   absolute_sigma=absolute_sigma, maxfev=20000)
        except (RuntimeError, ValueError) as exc:
            raise FitError(f"{self.model_id} fit did not converge: {exc}", p0) from exc
        perr = np.sqrt(np.clip(np.diag(pcov), 0, np.inf))
        perr = np.where(np.isfinite(perr), perr, np.inf)
        self.params_ = dict(zip(self.param_names, map(float, popt)))
        self.errors_ = dict(zip(self.param_names, map(float, perr)))
        self.initial_guess_ = dict(zip(self.param_names, map(float, p0)))
        self.residual_norm_ = float(np.linalg.norm(y - func(x, *popt)))
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return self._func(check_x(X), *self.params_.values())

    def derived(self) -> dict:
        return {}

    def result(self) -> FitResult:
        check_is_fitted(self, "params_")
        return FitResult(self.model_id, dict(self.params_), dict(self.errors_),
                         self.residual_norm_, self.derived(), list(getattr(self, "flags_", [])))


class AbragamFit(_CurveModel):
    """Fit ``P(t) = sinc(w t) exp(-(h t)^2/2)``.

    Initial guesses: ``w`` from the first zero crossing (``w t_0 = pi``) and
    ``h`` from the early-time curvature ``1 - P ~ (h^2 + w^2/3) t^2 / 2``.
    """

    model_id = "abragam"
    param_names = ("w", "h")
    _func = staticmethod(abragam)

    def __init__(self, delta: Optional[float] = None):
        self.delta = delta

    def fit(self, X, y):
        t, p = check_xy(X, y, min_points=8)
        if abs(p[np.argmin(t)] - 1.0) > 0.05:
            raise ValueError("curve must start at 1")
        m2 = _early_second_moment(t, p)
        cross = np.flatnonzero((p[:-1] > 0) & (p[1:] <= 0))
        if cross.size:
            k = cross[0]
            t0 = t[k] + p[k] * (t[k + 1] - t[k]) / (p[k] - p[k + 1])
            w0 = math.pi / t0
        else:
            w0 = 0.3 * math.sqrt(m2)
        h0 = math.sqrt(max(m2 - w0**2 / 3.0, 0.05 * m2))
        return self._fit_curve(abragam, t, p, [w0, h0], bounds=([0, 0], [np.inf, np.inf]))

    def derived(self) -> dict:
        w, h = self.params_["w"], self.params_["h"]
        t2 = abragam_t2(w, h)
        out = {"T2": t2, "M2": 1.0 / t2**2}
        if self.delta:
            out["rescaled_rate"] = 1.0 / (self.delta * t2)
        return out


def _early_second_moment(t, p) -> float:
    mask = (p > 0.7) & (t > 0)
    if mask.sum() < 2:
        mask = np.argsort(t)[1:4]
    tt, pp = t[mask], p[mask]
    return float(2.0 * np.sum((1 - pp) * tt**2) / np.sum(tt**4))


class FlambaumIzrailevFit(_CurveModel):
    """Fit ``exp(2 G^2/s^2 - 2 sqrt(G^4/s^4 + G^2 t^2))``.

    ``sigma`` starts from the early Gaussian ``-ln f ~ sigma^2 t^2`` and
    ``Gamma`` from the late exponential slope ``-d ln f / dt ~ 2 Gamma``.
    """

    model_id = "flambaum_izrailev"
    param_names = ("Gamma", "sigma")
    _func = staticmethod(flambaum_izrailev)

    def fit(self, X, y):
        t, f = check_xy(X, y, min_points=6)
        pos = f > 1e-8
        lt, lf = t[pos], np.log(f[pos])
        early = (lf > np.log(0.5)) & (lt > 0)
        if early.sum() >= 2:
            s0 = math.sqrt(max(np.sum(-lf[early] * lt[early] ** 2) / np.sum(lt[early] ** 4), 1e-30))
        else:
            s0 = 1.0 / max(lt.max(), 1e-30)
        tail = slice(2 * len(lt) // 3, None)
        if len(lt[tail]) >= 2:
            slope = np.polyfit(lt[tail], lf[tail], 1)[0]
            g0 = max(-slope / 2.0, 0.1 * s0)
        else:
            g0 = s0
        return self._fit_curve(flambaum_izrailev, t, f, [g0, s0], bounds=([1e-12, 1e-12], [np.inf, np.inf]))

    def derived(self) -> dict:
        g, s = self.params_["Gamma"], self.params_["sigma"]
        out = {"T_star": t_star(s), "short_time_gaussian_rate": s, "long_time_rate": 2 * g}
        out.update(fgr_rate(g, s))
        return out


class BoltzmannFit(_CurveModel):
    """Four-parameter sigmoid ``A2 + (A1 - A2) / (1 + exp((x - x0)/dx))``.

    The half-maximum time of the data (not of the fit) is reported as ``T3``
    (or ``T_sigma`` for an unscaled echo); ``T3_scaled = delta T3``.
    """

    model_id = "boltzmann"
    param_names = ("A1", "A2", "x0", "dx")
    _func = staticmethod(boltzmann)

    def __init__(self, delta: Optional[float] = None):
        self.delta = delta

    def fit(self, X, y):
        x, v = check_xy(X, y, min_points=5)
        hm = half_max_time(x, v)
        self.half_max_ = hm
        if hm.censored:
            self.flags_ = ["right-censored"]
        a1, a2 = float(v.max()), float(v.min())
        x0 = hm.time
        span = x.max() - x.min()
        dx = span / 10.0
        return self._fit_curve(boltzmann, x, v, [a1, a2, x0, dx])

    def derived(self) -> dict:
        hm = self.half_max_
        out = {"T3": hm.time, "censored": hm.censored}
        if self.delta:
            out["T3_scaled"] = self.delta * hm.time
        return out


class GaussianMQCFit(BaseEstimator, RegressorMixin):
    """Gaussian envelope ``S_q ~ exp(-q^2 / N^2)`` of an MQC spectrum.

    Weighted linear regression of ``log S_q`` on ``q^2`` over populated
    orders (weights ``S_q^2``, the inverse variance of ``log S`` under
    additive noise). With fewer than three populated ``|q|`` values the
    cluster size falls back to ``sqrt(sum q^2 S_q)`` and is flagged.
    """

    model_id = "gaussian_mqc"

    def __init__(self, rel_threshold: float = 1e-3):
        self.rel_threshold = rel_threshold

    def fit(self, X, y):
        q, s = check_xy(X, y, min_points=1)
        populated = s > self.rel_threshold * s.max()
        mags = np.unique(np.abs(q[populated]))
        self.flags_ = []
        self.q2_ = float(np.sum(q**2 * s))
        if mags.size < 3:
            self.flags_.append("fallback_sqrt_Q2")
            self.params_ = {"N": math.sqrt(max(self.q2_, 0.0)), "log_amplitude": math.nan}
            self.errors_ = {"N": math.nan, "log_amplitude": math.nan}
            self.residual_norm_ = math.nan
            return self
        qq, ls, wt = q[populated] ** 2, np.log(s[populated]), s[populated]
        coef, cov = np.polyfit(qq, ls, 1, w=wt, cov="unscaled") if qq.size > 3 else (
            np.polyfit(qq, ls, 1, w=wt), np.full((2, 2), np.nan))
        slope, icpt = coef
        if slope >= 0:
            raise FitError("MQC distribution does not decay with |q|", None)
        n = 1.0 / math.sqrt(-slope)
        resid = ls - (slope * qq + icpt)
        dof = max(qq.size - 2, 1)
        scale = float(np.sum((wt * resid) ** 2) / dof)
        dslope = math.sqrt(abs(cov[0, 0]) * scale) if np.isfinite(cov[0, 0]) else math.nan
        self.params_ = {"N": n, "log_amplitude": float(icpt)}
        self.errors_ = {"N": 0.5 * n**3 * dslope, "log_amplitude": math.sqrt(abs(cov[1, 1]) * scale)}
        self.residual_norm_ = float(np.linalg.norm(s - self.predict(q)))
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        q = check_x(X)
        if "fallback_sqrt_Q2" in self.flags_:
            raise ValueError("no Gaussian envelope available (fallback fit)")
        return np.exp(self.params_["log_amplitude"] - q**2 / self.params_["N"] ** 2)

    def result(self) -> FitResult:
        check_is_fitted(self, "params_")
        return FitResult(self.model_id, dict(self.params_), dict(self.errors_), self.residual_norm_,
                         {"N": self.params_["N"], "Q2": self.q2_}, list(self.flags_))


class PowerLawFit(BaseEstimator, RegressorMixin):
    """``N = A x^b`` by ordinary least squares in log-log space."""

    model_id = "power_law"

    def fit(self, X, y):
        x, n = check_xy(X, y, min_points=4)
        if np.any(x <= 0) or np.any(n <= 0):
            raise ValueError("power-law fit needs positive data")
        fit = linear_fit(np.log(x), np.log(n))
        b, lna = fit.params["slope"], fit.params["intercept"]
        self.params_ = {"A": math.exp(lna), "b": b}
        self.errors_ = {"A": math.exp(lna) * fit.errors["intercept"], "b": fit.errors["slope"]}
        self.residual_norm_ = float(np.linalg.norm(n - self.predict(x)))
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return self.params_["A"] * check_x(X) ** self.params_["b"]

    def result(self) -> FitResult:
        check_is_fitted(self, "params_")
        return FitResult(self.model_id, dict(self.params_), dict(self.errors_), self.residual_norm_,
                         {"A": self.params_["A"], "b": self.params_["b"]})


class SaturationFit(_CurveModel):
    """One-parameter law ``T2/T3 = sqrt(R^2 + (T2/T_sigma)^2)``.

    ``X`` is ``T2/T_sigma`` and ``y`` is ``T2/T3``. Pass ``noise`` to use a
    known absolute measurement error in the parameter uncertainty.
    """

    model_id = "saturation"
    param_names = ("R",)
    _func = staticmethod(saturation_law)

    def __init__(self, noise: Optional[float] = None):
        self.noise = noise

    def fit(self, X, y):
        x, v = check_xy(X, y, min_points=3)
        if np.ptp(x) == 0:
            raise ValueError("degenerate abscissa")
        r0 = math.sqrt(max(np.min(v**2 - x**2), 0.0)) or 0.1 * float(np.max(v))
        sigma = None if self.noise is None else np.full_like(v, self.noise)
        self._fit_curve(saturation_law, x, v, [r0], bounds=([0.0], [np.inf]), sigma=sigma,
                        absolute_sigma=self.noise is not None)
        return self

    def derived(self) -> dict:
        return {"R": self.params_["R"]}


class LinearFit(BaseEstimator, RegressorMixin):
    """Ordinary least squares line with parameter standard errors."""

    model_id = "linear"

    def fit(self, X, y):
        res = linear_fit(X, y)
        self.params_, self.errors_, self.residual_norm_ = res.params, res.errors, res.residual_norm
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return self.params_["slope"] * check_x(X) + self.params_["intercept"]


def linear_fit(X, y) -> FitResult:
    x, v = check_xy(X, y, min_points=3)
    if np.ptp(x) == 0:
        raise ValueError("degenerate abscissa")
    a = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(a, v, rcond=None)
    resid = v - a @ coef
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    cov = s2 * np.linalg.inv(a.T @ a)
    err = np.sqrt(np.diag(cov))
    return FitResult("linear", {"slope": float(coef[0]), "intercept": float(coef[1])},
                     {"slope": float(err[0]), "intercept": float(err[1])},
                     float(np.linalg.norm(resid)))


# ----------------------------------------------------------------------------
# curve-level helpers


def fit_abragam(curve) -> FitResult:
    return AbragamFit(delta=curve.metadata.get("delta") or None).fit(curve.times, curve.values).result()


def fit_flambaum_izrailev(curve) -> FitResult:
    return FlambaumIzrailevFit().fit(curve.times, curve.values).result()


def fit_boltzmann(curve) -> FitResult:
    return BoltzmannFit(delta=curve.metadata.get("delta") or None).fit(curve.times, curve.values).result()


def fit_gaussian_mqc(spectrum) -> FitResult:
    return GaussianMQCFit().fit(spectrum.orders, spectrum.S_q).result()


def fit_power_law(x, n) -> FitResult:
    return PowerLawFit().fit(x, n).result()


def fit_saturation(x, y, noise: Optional[float] = None) -> FitResult:
    return SaturationFit(noise=noise).fit(x, y).result()
