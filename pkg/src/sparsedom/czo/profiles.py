"""Scalar profiles (modulus, large/small scale and position factors) and their integral transforms."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from ..errors import ConfigError, QuadratureError

FORMS = ("constant", "zero", "power", "power_large", "power_small", "power_position", "table")


@dataclass(frozen=True)
class ScalarProfile:
    """Named scalar map evaluated elementwise on numpy arrays.

    ``power``:           t**exponent (a modulus of continuity on [0, 1])
    ``power_large``:     amplitude * (1 + t/scale)**(-rate), vanishing as t -> inf
    ``power_small``:     amplitude * (t / (scale + t))**rate, vanishing as t -> 0
    ``power_position``:  amplitude * (1 + r/scale)**(-rate), vanishing as r -> inf
    ``table``:           linear interpolation of ``x``/``y`` with flat extrapolation
    """

    form: str = "constant"
    params: tuple = ()

    @classmethod
    def make(cls, form: str, **params) -> "ScalarProfile":
        if form not in FORMS:
            raise ConfigError(f"unknown profile form {form!r}; expected one of {', '.join(FORMS)}")
        items = []
        for k, v in sorted(params.items()):
            items.append((k, tuple(v) if isinstance(v, (list, tuple)) else float(v)))
        return cls(form, tuple(items))

    @property
    def p(self) -> dict:
        return dict(self.params)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        p = self.p
        amp = p.get("amplitude", 1.0)
        if self.form == "zero":
            return np.zeros_like(t)
        if self.form == "constant":
            return np.full_like(t, p.get("value", 1.0))
        if self.form == "power":
            return np.clip(t, 0.0, None) ** p.get("exponent", 1.0)
        if self.form == "power_large":
            return amp * (1.0 + t / p.get("scale", 1.0)) ** (-p.get("rate", 1.0))
        if self.form == "power_small":
            s = p.get("scale", 1.0)
            return amp * (t / (s + t)) ** p.get("rate", 1.0)
        if self.form == "power_position":
            return amp * (1.0 + t / p.get("scale", 1.0)) ** (-p.get("rate", 1.0))
        if self.form == "table":
            xs, ys = np.asarray(p["x"], float), np.asarray(p["y"], float)
            return np.interp(t, xs, ys, left=ys[0], right=ys[-1])
        raise ConfigError(f"unknown profile form {self.form!r}")

    def scalar(self, t: float) -> float:
        return float(self(np.asarray(t, float)))

    def to_json(self) -> dict:
        return {"form": self.form, **{k: list(v) if isinstance(v, tuple) else v for k, v in self.params}}

    @classmethod
    def from_json(cls, obj) -> "ScalarProfile":
        if isinstance(obj, (int, float)):
            return cls.make("constant", value=obj)
        if not isinstance(obj, dict) or "form" not in obj:
            raise ConfigError(f"profile must be an object with a 'form' field, got {obj!r}")
        params = {k: v for k, v in obj.items() if k != "form"}
        return cls.make(obj["form"], **params)


def modulus_power(delta: float) -> ScalarProfile:
    return ScalarProfile.make("power", exponent=delta)


# --------------------------------------------------------------------------
# quadrature helpers
# --------------------------------------------------------------------------

def _quad(fn, a, b, what: str, epsrel=1e-10, epsabs=1e-14, limit=400):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fn, a, b, epsrel=epsrel, epsabs=epsabs, limit=limit)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"{what}: quadrature did not converge ({exc})") from None
    if not math.isfinite(val) or err > max(1e-7 * abs(val), 1e-12):
        raise QuadratureError(f"{what}: value {val!r} with error estimate {err!r}")
    return val


def dini_integral(omega: ScalarProfile) -> float:
    """int_0^1 int_0^1 omega(st) ds/s dt/t, reduced to int_0^inf omega(e^-v) v dv."""
    return _quad(lambda v: omega.scalar(math.exp(-v)) * v, 0.0, np.inf, "Dini integral")


def W(omega: ScalarProfile, t: float) -> float:
    """W(t) = int_0^t omega(s) ds/s, computed as int_0^inf omega(t e^-u) du."""
    if t <= 0:
        return 0.0
    return _quad(lambda u: omega.scalar(t * math.exp(-u)), 0.0, np.inf, f"W({t})")


def L_tilde(omega: ScalarProfile, L: ScalarProfile, side: float) -> float:
    """int_0^1 omega(t) L(side/t) dt/t."""
    return _quad(lambda s: omega.scalar(math.exp(-s)) * L.scalar(side * math.exp(min(s, 700.0))), 0.0, np.inf,
                 f"L~({side})")


class DTildeTable:
    """Tabulated D~(r) = int_0^1 W(t) D(1 + t (r - 1)) dt/t on r in [1, r_max].

    The relative distance of the dilated cube t^{-1}I to the unit cube is
    modelled as 1 + t (rdist(I, B) - 1): it equals rdist at t = 1 and tends
    to 1 as the dilation swallows the unit cube.
    """

    def __init__(self, omega: ScalarProfile, D: ScalarProfile, r_max: float, points: int = 160,
                 s_max: float = 120.0, w_points: int = 2400):
        self.omega, self.D = omega, D
        self.r_max = float(max(r_max, 2.0))
        # W(e^-s) on a grid, by cumulative quadrature from the far end
        s = np.linspace(0.0, s_max, w_points)
        tail = _quad(lambda u: omega.scalar(math.exp(-u)), s_max, np.inf, "W tail")
        pieces = np.array([
            _quad(lambda u: omega.scalar(math.exp(-u)), s[k], s[k + 1], "W piece") for k in range(w_points - 1)
        ])
        wv = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]]) + tail
        self._logw = CubicSpline(s, np.log(np.maximum(wv, 1e-300)))
        self._s_max = s_max
        x = np.linspace(0.0, math.log(self.r_max), points)
        vals = np.array([self.direct(math.exp(v)) for v in x])
        self._x = x
        self._spline = CubicSpline(x, vals)

    def W_exp(self, s: float) -> float:
        """W(e^-s) from the tabulated spline."""
        if s >= self._s_max:
            return float(math.exp(self._logw(self._s_max)))
        return float(math.exp(self._logw(s)))

    def direct(self, r: float) -> float:
        D = self.D
        return _quad(lambda s: self.W_exp(s) * D.scalar(1.0 + math.exp(-s) * (r - 1.0)), 0.0, self._s_max,
                     f"D~({r})", epsrel=1e-11)

    def __call__(self, r):
        r = np.asarray(r, float)
        if np.any(r < 1 - 1e-12) or np.any(r > self.r_max * (1 + 1e-12)):
            raise ValueError("D~ evaluated outside its tabulated range")
        return self._spline(np.log(np.clip(r, 1.0, self.r_max)))


@dataclass
class Transforms:
    """Cached transforms of a kernel's profiles."""

    omega: ScalarProfile
    L: ScalarProfile
    D: ScalarProfile
    r_max: float
    _lt: dict = field(default_factory=dict, repr=False)
    _dt: DTildeTable | None = field(default=None, repr=False)

    def L_tilde(self, sides):
        sides = np.asarray(sides, float)
        uniq, inv = np.unique(sides, return_inverse=True)
        vals = np.empty(uniq.size)
        for k, s in enumerate(uniq):
            if s not in self._lt:
                self._lt[s] = L_tilde(self.omega, self.L, float(s))
            vals[k] = self._lt[s]
        return vals[inv].reshape(sides.shape)

    def D_tilde(self, r):
        if self._dt is None:
            self._dt = DTildeTable(self.omega, self.D, self.r_max)
        return self._dt(r)


@lru_cache(maxsize=64)
def _cached_dini(omega: ScalarProfile) -> float:
    return dini_integral(omega)
