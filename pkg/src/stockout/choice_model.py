"""Purchase probabilities ``f_i(s, phi, tau)`` for the supported choice models.

Probability vectors are laid out as ``[f_0, f_1, ..., f_n]`` where ``f_0``
is the no-purchase probability and ``f_i`` refers to item ``i`` (1-based).
Stock vectors ``s`` are 0/1 arrays of length ``n`` with ``s[i - 1]`` for
item ``i``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class ChoiceKind(str, Enum):
    MNL = "mnl"
    EXOGENOUS = "exogenous"
    NONPARAMETRIC = "nonparametric"


class DegeneratePreferenceError(ValueError):
    """An out-of-stock item carries all the preference mass, so re-weighting is undefined."""


Ranking = tuple[int, ...]


@dataclass(frozen=True)
class SegmentParams:
    """Choice parameters of one customer segment.

    ``preference`` is a probability vector over items for MNL and exogenous
    choice, or a ranking (tuple of distinct 1-based items) for the
    nonparametric model.  ``substitution`` is the exogenous substitution
    probability or the fixed MNL no-purchase weight.
    """

    preference: np.ndarray | Ranking
    substitution: float = 0.0


@dataclass(frozen=True)
class SegmentMixture:
    kind: ChoiceKind
    weights: np.ndarray
    segments: tuple[SegmentParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", ChoiceKind(self.kind))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.segments),):
            raise ValueError("one weight per segment required")
        if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
            raise ValueError("segment weights must be a probability vector")
        object.__setattr__(self, "weights", w)


def enumerate_rankings(n: int, max_length: int = 2) -> list[Ranking]:
    """All ordered subsets of ``1..n`` of size ``1..max_length``, shortest first."""
    count = sum(math.perm(n, d) for d in range(1, max_length + 1))
    if max_length >= 3:
        warnings.warn(f"{count} nonparametric segments for n={n}, max_length={max_length}")
    return [r for d in range(1, max_length + 1) for r in itertools.permutations(range(1, n + 1), d)]


# -- vectorized tables --------------------------------------------------------


def choice_table(kind, patterns, phi=None, tau=None, rankings=None, grad=False):
    """Purchase probabilities for every segment and stock pattern.

    Parameters
    ----------
    kind : ChoiceKind
    patterns : (P, n) array of 0/1 stock vectors
    phi : (K, n) preference vectors (MNL, exogenous)
    tau : (K,) substitution / no-purchase weights (MNL, exogenous)
    rankings : list of K rankings (nonparametric)
    grad : also return ``dF/dphi`` with shape (K, P, n+1, n) and
        ``dF/dtau`` with shape (K, P, n+1).

    Returns
    -------
    F : (K, P, n+1) array, or ``(F, dphi, dtau)`` when ``grad`` is set.
    """
    kind = ChoiceKind(kind)
    s = np.asarray(patterns, dtype=float)
    if s.ndim != 2:
        raise ValueError("patterns must be a 2-D array")
    if kind is ChoiceKind.NONPARAMETRIC:
        F = _nonparametric_table(s, rankings)
        if grad:
            K, P, m = F.shape
            return F, np.zeros((K, P, m, m - 1)), np.zeros((K, P, m))
        return F
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if phi.shape[1] != s.shape[1] or tau.shape != (phi.shape[0],):
        raise ValueError("phi must be (K, n) and tau (K,) to match the stock patterns")
    if kind is ChoiceKind.MNL:
        return _mnl_table(s, phi, tau, grad)
    return _exogenous_table(s, phi, tau, grad)


def _mnl_table(s, phi, tau, grad):
    denom = tau[:, None] + phi @ s.T  # (K, P)
    if np.any(denom <= 0):
        raise ZeroDivisionError("MNL denominator vanishes: no-purchase weight 0 with nothing in stock")
    K, n = phi.shape
    P = s.shape[0]
    F = np.empty((K, P, n + 1))
    F[:, :, 0] = tau[:, None] / denom
    F[:, :, 1:] = s[None, :, :] * phi[:, None, :] / denom[:, :, None]
    if not grad:
        return F
    inv = 1.0 / denom
    # d f_i / d phi_u = s_i [i == u] / D - s_i phi_i s_u / D^2
    dphi = np.empty((K, P, n + 1, n))
    dphi[:, :, 0, :] = -tau[:, None, None] * s[None] * (inv ** 2)[:, :, None]
    eye = np.eye(n)
    dphi[:, :, 1:, :] = (
        (s[None, :, :, None] * eye) * inv[:, :, None, None]
        - F[:, :, 1:, None] * s[None, :, None, :] * inv[:, :, None, None]
    )
    dtau = np.empty((K, P, n + 1))
    dtau[:, :, 0] = (denom - tau[:, None]) * inv ** 2
    dtau[:, :, 1:] = -F[:, :, 1:] * inv[:, :, None]
    return F, dphi, dtau


def _exogenous_table(s, phi, tau, grad):
    K, n = phi.shape
    P = s.shape[0]
    out = 1.0 - s  # (P, n)
    rest = phi.sum(axis=1, keepdims=True) - phi  # (K, n): sum_{v != j} phi_v
    needed = (out[None, :, :] > 0) & (phi[:, None, :] > 0)
    if np.any(needed & (rest[:, None, :] <= 0)):
        raise DegeneratePreferenceError(
            "an out-of-stock item holds all preference mass; second-choice weights undefined"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rest > 0, phi / rest, 0.0)  # (K, n)
    R = ratio @ out.T  # (K, P)
    s_in = phi @ s.T  # (K, P)
    F = np.empty((K, P, n + 1))
    boost = 1.0 + tau[:, None] * R
    F[:, :, 1:] = s[None] * phi[:, None, :] * boost[:, :, None]
    # f_0 in closed form so that it is exactly 0 under full stock
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_rest = np.where(rest > 0, 1.0 / rest, 0.0)
    w0 = out[None] * phi[:, None, :]  # (K, P, n): out_j phi_j
    F[:, :, 0] = np.sum(w0 * (1.0 - tau[:, None, None] * s_in[:, :, None] * inv_rest[:, None, :]), axis=2)
    if not grad:
        return F
    # dR/dphi_u = out_u / rest_u - sum_j out_j phi_j / rest_j^2 + out_u phi_u / rest_u^2
    c = (ratio * inv_rest) @ out.T  # (K, P): sum_j out_j phi_j / rest_j^2
    dR = (
        out[None] * inv_rest[:, None, :]
        - c[:, :, None]
        + out[None] * (ratio * inv_rest)[:, None, :]
    )  # (K, P, n)
    eye = np.eye(n)
    dphi = np.empty((K, P, n + 1, n))
    dphi[:, :, 1:, :] = (
        (s[None, :, :, None] * eye) * boost[:, :, None, None]
        + (s[None] * phi[:, None, :])[..., None] * tau[:, None, None, None] * dR[:, :, None, :]
    )
    # f_0 = sum_j out_j phi_j - tau * s_in * R
    dphi[:, :, 0, :] = out[None] - tau[:, None, None] * (
        s[None] * R[:, :, None] + s_in[:, :, None] * dR
    )
    dtau = np.empty((K, P, n + 1))
    dtau[:, :, 1:] = s[None] * phi[:, None, :] * R[:, :, None]
    dtau[:, :, 0] = -s_in * R
    return F, dphi, dtau


def _nonparametric_table(s, rankings):
    if not rankings:
        raise ValueError("nonparametric choice needs at least one ranking")
    P, n = s.shape
    F = np.zeros((len(rankings), P, n + 1))
    for k, ranking in enumerate(rankings):
        _check_ranking(ranking, n)
        chosen = np.zeros(P, dtype=np.int64)
        undecided = np.ones(P, dtype=bool)
        for item in ranking:
            hit = undecided & (s[:, item - 1] > 0)
            chosen[hit] = item
            undecided &= ~hit
        F[k, np.arange(P), chosen] = 1.0
    return F


def _check_ranking(ranking: Sequence[int], n: int) -> None:
    if len(ranking) == 0 or len(set(ranking)) != len(ranking):
        raise ValueError(f"ranking {ranking} must be nonempty with distinct items")
    if any(not 1 <= int(i) <= n for i in ranking):
        raise ValueError(f"ranking {ranking} refers to items outside 1..{n}")


# -- single-evaluation API ----------------------------------------------------


def _single(kind, s, phi, tau, i):
    F = choice_table(kind, np.atleast_2d(s), np.atleast_2d(phi), [tau])[0, 0]
    return F if i is None else float(F[i])


def purchase_prob_mnl(s, phi, tau: float, i: int | None = None):
    """MNL purchase probability of item ``i`` (``0`` = no purchase); all of them if ``i`` is None."""
    if tau < 0:
        raise ValueError("MNL no-purchase weight must be nonnegative")
    return _single(ChoiceKind.MNL, s, phi, tau, i)


def purchase_prob_exogenous(s, phi, tau: float, i: int | None = None):
    """Exogenous single-substitution purchase probability."""
    if len(np.atleast_1d(phi)) < 2:
        raise ValueError("exogenous substitution needs at least two items")
    if not 0 <= tau <= 1:
        raise ValueError("substitution probability must lie in [0, 1]")
    return _single(ChoiceKind.EXOGENOUS, s, phi, tau, i)


def purchase_prob_nonparametric(s, ranking: Sequence[int], i: int | None = None):
    """1 for the first in-stock item of ``ranking``, else 0; ``i = 0`` is no-purchase."""
    F = choice_table(ChoiceKind.NONPARAMETRIC, np.atleast_2d(s), rankings=[tuple(ranking)])[0, 0]
    return F if i is None else float(F[i])


def segment_probs(kind, s, segment: SegmentParams) -> np.ndarray:
    kind = ChoiceKind(kind)
    if kind is ChoiceKind.NONPARAMETRIC:
        return purchase_prob_nonparametric(s, segment.preference)
    if kind is ChoiceKind.MNL:
        return purchase_prob_mnl(s, segment.preference, segment.substitution)
    return purchase_prob_exogenous(s, segment.preference, segment.substitution)


def mixture_prob(s, mixture: SegmentMixture, i: int | None = None):
    """Segment-weighted purchase probability ``pi_i(s)``."""
    probs = np.stack([segment_probs(mixture.kind, s, seg) for seg in mixture.segments])
    pi = mixture.weights @ probs
    return pi if i is None else float(pi[i])


def grad_choice(s, phi, tau: float, i: int, kind: ChoiceKind | str = ChoiceKind.EXOGENOUS):
    """Partial derivatives of ``f_i`` with respect to ``phi`` and ``tau``.

    Returns ``(d f_i / d phi, d f_i / d tau)``.  Nonparametric rankings are
    fixed, so their gradient is identically zero.
    """
    kind = ChoiceKind(kind)
    if kind is ChoiceKind.NONPARAMETRIC:
        return np.zeros(len(np.atleast_1d(s))), 0.0
    _, dphi, dtau = choice_table(kind, np.atleast_2d(s), np.atleast_2d(phi), [tau], grad=True)
    return dphi[0, 0, i].copy(), float(dtau[0, 0, i])
