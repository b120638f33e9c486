"""Parameterized arrival intensities and their exact integrals.

Three families are supported:

``homogeneous``
    ``lambda(t) = eta_1``.
``hill``
    The derivative of the Hill equation, rising to a single peak and
    decaying: ``eta_1 (eta_2/eta_3) (t/eta_3)^(eta_2-1) (1+(t/eta_3)^eta_2)^-2``.
    Its antiderivative is ``eta_1 H(t)`` with ``H(t) = u/(1+u)``,
    ``u = (t/eta_3)^eta_2``, so ``eta_1`` is the total mass on ``[0, inf)``.
``hill_plus_peaks``
    Hill plus ``eta_4`` times a fixed :class:`PeakTemplate`.

Every function is vectorized over ``t``.  Gradients are returned with the
parameter axis last.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.special import expit, ndtr

_SQRT_2PI = np.sqrt(2.0 * np.pi)


class RateKind(str, Enum):
    HOMOGENEOUS = "homogeneous"
    HILL = "hill"
    HILL_PLUS_PEAKS = "hill_plus_peaks"


N_RATE_PARAMS = {RateKind.HOMOGENEOUS: 1, RateKind.HILL: 3, RateKind.HILL_PLUS_PEAKS: 4}


@dataclass(frozen=True)
class PeakTemplate:
    """Sum of Gaussian bumps truncated to ``[0, horizon]``, each with unit mass."""

    centers: tuple[float, ...]
    widths: tuple[float, ...]
    horizon: float

    def __post_init__(self):
        c = tuple(float(x) for x in self.centers)
        w = tuple(float(x) for x in self.widths)
        if len(c) != len(w) or not c:
            raise ValueError("need one width per peak center and at least one peak")
        if any(not 0 < x < self.horizon for x in c):
            raise ValueError(f"peak centers must lie in (0, {self.horizon})")
        if any(x <= 0 for x in w):
            raise ValueError("peak widths must be positive")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "widths", w)

    @property
    def _arrays(self):
        c = np.asarray(self.centers)
        w = np.asarray(self.widths)
        lo = ndtr(-c / w)
        z = ndtr((self.horizon - c) / w) - lo
        return c, w, lo, z

    def __call__(self, t) -> np.ndarray:
        c, w, _, z = self._arrays
        x = (np.asarray(t, dtype=float)[..., None] - c) / w
        return np.sum(np.exp(-0.5 * x * x) / (_SQRT_2PI * w * z), axis=-1)

    def cumulative(self, t) -> np.ndarray:
        """Integral of the template over ``[0, t]``."""
        c, w, lo, z = self._arrays
        x = (np.asarray(t, dtype=float)[..., None] - c) / w
        return np.sum((ndtr(x) - lo) / z, axis=-1)

    def max_height(self) -> float:
        """Upper bound on the template: the sum of the individual peak maxima."""
        _, w, _, z = self._arrays
        return float(np.sum(1.0 / (_SQRT_2PI * w * z)))


def bakery_peak_template(horizon: float = 8.0, centers=(5.0, 6.5), widths=(0.12, 0.12)) -> PeakTemplate:
    """Two sharp afternoon peaks on an 8-hour day (open 11:00).

    Defaults put the peaks at 16:00 and 17:30; they are configuration values.
    """
    return PeakTemplate(tuple(centers), tuple(widths), horizon)


@dataclass(frozen=True)
class RateFamily:
    """A rate family together with its fixed peak template, if any."""

    kind: RateKind
    template: PeakTemplate | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "kind", RateKind(self.kind))
        if self.kind is RateKind.HILL_PLUS_PEAKS and self.template is None:
            raise ValueError("hill_plus_peaks needs a peak template")

    @property
    def n_params(self) -> int:
        return N_RATE_PARAMS[self.kind]

    def validate(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self.n_params,):
            raise ValueError(
                f"{self.kind.value} rate takes {self.n_params} parameters, got shape {eta.shape}"
            )
        if not np.all(np.isfinite(eta)):
            raise ValueError("rate parameters must be finite")
        if self.kind is RateKind.HOMOGENEOUS:
            if eta[0] < 0:
                raise ValueError("homogeneous rate must be nonnegative")
        else:
            if np.any(eta[:3] <= 0):
                raise ValueError("hill parameters must be positive")
            if self.kind is RateKind.HILL_PLUS_PEAKS and eta[3] < 0:
                raise ValueError("peak weight must be nonnegative")
        return eta

    # -- values -----------------------------------------------------------

    def rate(self, eta, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind is RateKind.HOMOGENEOUS:
            return np.full(t.shape, float(eta[0]))
        out = np.exp(_hill_log_rate(eta, t))
        if self.kind is RateKind.HILL_PLUS_PEAKS:
            out = out + eta[3] * self.template(t)
        return out

    def cumulative(self, eta, t) -> np.ndarray:
        """``Lambda(0, t)``."""
        t = np.asarray(t, dtype=float)
        if self.kind is RateKind.HOMOGENEOUS:
            return eta[0] * t
        out = eta[0] * _hill_cdf(eta, t)
        if self.kind is RateKind.HILL_PLUS_PEAKS:
            out = out + eta[3] * self.template.cumulative(t)
        return out

    def integral(self, eta, t0, t1) -> np.ndarray:
        return self.cumulative(eta, t1) - self.cumulative(eta, t0)

    # -- gradients --------------------------------------------------------

    def rate_grad(self, eta, t) -> tuple[np.ndarray, np.ndarray]:
        """``lambda(t)`` and ``d lambda / d eta`` with shape ``t.shape + (p,)``."""
        t = np.asarray(t, dtype=float)
        if self.kind is RateKind.HOMOGENEOUS:
            return np.full(t.shape, float(eta[0])), np.ones(t.shape + (1,))
        logr, dlog = _hill_log_rate_grad(eta, t)
        lam_h = np.exp(logr)
        with np.errstate(invalid="ignore"):
            grad = np.where(lam_h[..., None] > 0, lam_h[..., None] * dlog, 0.0)
        if self.kind is RateKind.HILL:
            return lam_h, grad
        peak = self.template(t)
        return lam_h + eta[3] * peak, np.concatenate([grad, peak[..., None]], axis=-1)

    def log_rate_grad(self, eta, t) -> tuple[np.ndarray, np.ndarray]:
        """``log lambda(t)`` and its gradient; ``-inf`` where the rate vanishes."""
        t = np.asarray(t, dtype=float)
        if self.kind is RateKind.HOMOGENEOUS:
            with np.errstate(divide="ignore"):
                return (np.full(t.shape, np.log(eta[0])),
                        np.full(t.shape + (1,), 1.0 / eta[0]))
        if self.kind is RateKind.HILL:
            return _hill_log_rate_grad(eta, t)
        lam, grad = self.rate_grad(eta, t)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(lam), grad / lam[..., None]

    def cumulative_grad(self, eta, t) -> tuple[np.ndarray, np.ndarray]:
        """``Lambda(0, t)`` and its gradient with shape ``t.shape + (p,)``."""
        t = np.asarray(t, dtype=float)
        if self.kind is RateKind.HOMOGENEOUS:
            return eta[0] * t, t[..., None].copy()
        h, dh2, dh3 = _hill_cdf_grad(eta, t)
        cols = [h, eta[0] * dh2, eta[0] * dh3]
        value = eta[0] * h
        if self.kind is RateKind.HILL_PLUS_PEAKS:
            pc = self.template.cumulative(t)
            cols.append(pc)
            value = value + eta[3] * pc
        return value, np.stack(cols, axis=-1)

    def upper_bound(self, eta, horizon: float) -> float:
        """Exact supremum of the Hill part plus a bound on the peaks over ``[0, horizon]``."""
        eta = self.validate(eta)
        if self.kind is RateKind.HOMOGENEOUS:
            return float(eta[0])
        e1, e2, e3 = eta[:3]
        if e2 < 1:
            raise ValueError("hill rate with shape < 1 is unbounded at t = 0")
        u = (e2 - 1.0) / (e2 + 1.0)
        t_mode = min(e3 * u ** (1.0 / e2), horizon) if e2 > 1 else 0.0
        bound = float(self.rate(eta, np.array(t_mode)))
        if self.kind is RateKind.HILL_PLUS_PEAKS:
            bound += eta[3] * self.template.max_height()
        return bound


def _hill_cdf(eta, t):
    with np.errstate(divide="ignore"):
        return expit(eta[1] * (np.log(t) - np.log(eta[2])))


def _hill_cdf_grad(eta, t):
    e2, e3 = eta[1], eta[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        logx = np.log(t) - np.log(e3)
        h = expit(e2 * logx)
        hh = h * (1.0 - h)
        dh2 = np.where(hh > 0, hh * logx, 0.0)
    dh3 = -hh * e2 / e3
    return h, dh2, dh3


def _hill_log_rate(eta, t):
    e1, e2, e3 = eta[0], eta[1], eta[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        logx = np.log(t) - np.log(e3)
        y = e2 * logx
        power = (e2 - 1.0) * logx if e2 != 1.0 else np.zeros_like(logx)
        return np.log(e1) + np.log(e2) - np.log(e3) + power - 2.0 * np.logaddexp(0.0, y)


def _hill_log_rate_grad(eta, t):
    e1, e2, e3 = eta[0], eta[1], eta[2]
    value = _hill_log_rate(eta, t)
    with np.errstate(divide="ignore", invalid="ignore"):
        logx = np.log(t) - np.log(e3)
        one_minus_2h = 1.0 - 2.0 * expit(e2 * logx)
    d1 = np.full(t.shape, 1.0 / e1)
    d2 = 1.0 / e2 + logx * one_minus_2h
    d3 = -(e2 / e3) * one_minus_2h
    return value, np.stack([d1, d2, d3], axis=-1)


# -- spec-level API ----------------------------------------------------------


@dataclass(frozen=True)
class RateParams:
    kind: RateKind
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", RateKind(self.kind))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def eta(self) -> np.ndarray:
        return np.asarray(self.values)


def _family(params: RateParams, template: PeakTemplate | None) -> tuple[RateFamily, np.ndarray]:
    fam = RateFamily(params.kind, template)
    return fam, fam.validate(params.eta)


def eval_rate(params: RateParams, t, template: PeakTemplate | None = None):
    fam, eta = _family(params, template)
    return fam.rate(eta, t)


def integrate_rate(params: RateParams, t0, t1, template: PeakTemplate | None = None):
    if np.any(np.asarray(t0) > np.asarray(t1)):
        raise ValueError("integration bounds must satisfy t0 <= t1")
    fam, eta = _family(params, template)
    return fam.integral(eta, t0, t1)


def grad_rate(params: RateParams, t, template: PeakTemplate | None = None) -> np.ndarray:
    fam, eta = _family(params, template)
    return fam.rate_grad(eta, t)[1]


def grad_integral(params: RateParams, t0, t1, template: PeakTemplate | None = None) -> np.ndarray:
    if np.any(np.asarray(t0) > np.asarray(t1)):
        raise ValueError("integration bounds must satisfy t0 <= t1")
    fam, eta = _family(params, template)
    return fam.cumulative_grad(eta, t1)[1] - fam.cumulative_grad(eta, t0)[1]


def default_eta_bounds(kind: RateKind | str, horizon: float) -> np.ndarray:
    """Uniform-prior boxes for each rate parameter, shape ``(p, 2)``.

    The Hill shape is kept at or above 1 so the rate stays bounded at
    ``t = 0`` (thinning needs a finite bound); the half-time spans two
    decades around the horizon.
    """
    kind = RateKind(kind)
    rows: list[Sequence[float]] = [(1e-6, 1e6)]
    if kind is not RateKind.HOMOGENEOUS:
        rows += [(1.0, 10.0), (1e-2 * horizon, 10.0 * horizon)]
    if kind is RateKind.HILL_PLUS_PEAKS:
        rows.append((0.0, 1e6))
    return np.array(rows, dtype=float)
