"""Supervision losses for a keypoint extractor trained on cross-domain matches.

Pure numpy kernels with closed-form gradients. Gradient stopping is reported
through flags rather than performed, so any training framework can honour it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import EmptyGrid, NumericallyDegenerate

DEFAULT_KAPPA = 0.5
DEFAULT_BINS = 25
NORM_EPS = 1e-12
NEGATIVE_MIN_DISTANCE = 8.0


def _unit_interval(name, x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return x


@dataclass(frozen=True, eq=False)
class HeatmapSamples:
    """Repeatability values at matched pixels of the reference and query heatmaps."""

    s: np.ndarray
    s_prime: np.ndarray

    def __post_init__(self):
        s = _unit_interval("s", self.s).reshape(-1)
        sp = _unit_interval("s_prime", self.s_prime).reshape(-1)
        if len(s) == 0 or len(s) != len(sp):
            raise ValueError("heatmap samples must be non-empty and of equal length")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "s_prime", sp)


@dataclass(frozen=True, eq=False)
class ReliabilityInputs:
    ap: np.ndarray
    r: np.ndarray
    kappa: float = DEFAULT_KAPPA

    def __post_init__(self):
        ap = _unit_interval("ap", self.ap).reshape(-1)
        r = _unit_interval("r", self.r).reshape(-1)
        if len(ap) == 0 or len(ap) != len(r):
            raise ValueError("ap and r must be non-empty and of equal length")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        object.__setattr__(self, "ap", ap)
        object.__setattr__(self, "r", r)


@dataclass(frozen=True)
class DomainPair:
    d: object
    d_prime: object

    @property
    def same_domain(self):
        return self.d == self.d_prime


# -- repeatability ---------------------------------------------------------


class CosimLoss(NamedTuple):
    value: float
    grad_s: np.ndarray
    grad_s_prime: np.ndarray


def cosim_loss(s, s_prime=None) -> CosimLoss:
    """One minus the cosine similarity of two sample vectors, with gradients.

    Accepts a HeatmapSamples or two arrays. Either vector being (near) zero
    leaves the cosine undefined and raises NumericallyDegenerate.
    """
    if isinstance(s, HeatmapSamples):
        s, s_prime = s.s, s.s_prime
    a = np.asarray(s, dtype=np.float64).reshape(-1)
    b = np.asarray(s_prime, dtype=np.float64).reshape(-1)
    if len(a) == 0 or len(a) != len(b):
        raise ValueError("vectors must be non-empty and of equal length")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise NumericallyDegenerate("cosine similarity of a zero vector")
    dot = float(a @ b)
    c = min(1.0, max(-1.0, dot / (na * nb)))
    grad_a = -(b / (na * nb) - dot * a / (na**3 * nb))
    grad_b = -(a / (na * nb) - dot * b / (na * nb**3))
    return CosimLoss(1.0 - c, grad_a, grad_b)


def peakiness_loss(grid, patch):
    """One minus the mean over ``patch``-sized tiles of (tile max - tile mean).

    Trailing rows and columns that do not fill a whole tile are ignored.
    """
    g = _unit_interval("grid", grid)
    if g.ndim != 2:
        raise ValueError("grid must be two-dimensional")
    patch = int(patch)
    if patch < 1:
        raise ValueError("patch must be >= 1")
    ny, nx = g.shape[0] // patch, g.shape[1] // patch
    if ny == 0 or nx == 0:
        raise EmptyGrid(f"grid {g.shape} holds no full {patch}x{patch} patch")
    tiles = g[:ny * patch, :nx * patch].reshape(ny, patch, nx, patch).swapaxes(1, 2)
    tiles = tiles.reshape(ny, nx, -1)
    return 1.0 - float(np.mean(tiles.max(-1) - tiles.mean(-1)))


# -- reliability -----------------------------------------------------------


class APKappaLoss(NamedTuple):
    per_point: np.ndarray
    mean: float
    grad_ap: np.ndarray  # of the mean
    grad_r: np.ndarray   # of the mean


def ap_kappa_loss(inp: ReliabilityInputs) -> APKappaLoss:
    """Reliability-weighted AP loss per point, its mean and the mean's gradients."""
    ap, r, k = inp.ap, inp.r, float(inp.kappa)
    per = 1.0 - (ap * r + k * (1.0 - r))
    n = len(ap)
    return APKappaLoss(per, float(np.mean(per)), -r / n, (k - ap) / n)


def bin_centers(bins):
    if bins < 2:
        raise ValueError("bins must be >= 2")
    return np.linspace(-1.0, 1.0, bins)


def soft_assign(x, bins):
    """Triangular-kernel weights of similarities ``x`` over ``bins`` centres on [-1, 1]."""
    c = bin_centers(bins)
    width = c[1] - c[0]
    x = np.clip(np.asarray(x, dtype=np.float64).reshape(-1), -1.0, 1.0)
    return np.maximum(0.0, 1.0 - np.abs(x[:, None] - c[None, :]) / width)


def ap_approx(positive, negatives, bins=DEFAULT_BINS):
    """Histogram-binned AP of one positive against a set of negatives.

    Similarities are spread over bins with linear interpolation. The positive
    mass in a bin is scored by the precision at that bin: one over one plus
    the negatives in higher bins plus half of those sharing the bin.
    """
    neg = np.asarray(negatives, dtype=np.float64).reshape(-1)
    if len(neg) == 0:
        raise ValueError("need at least one negative")
    pos_w = soft_assign([float(positive)], bins)[0]
    neg_w = soft_assign(neg, bins).sum(0)
    above = np.concatenate([np.cumsum(neg_w[::-1])[::-1][1:], [0.0]])
    prec = 1.0 / (1.0 + above + 0.5 * neg_w)
    return float(min(1.0, max(0.0, pos_w @ prec)))


def sample_negative_anchors(candidates, positive, n, rng, min_distance=NEGATIVE_MIN_DISTANCE):
    """Up to ``n`` candidate pixels at least ``min_distance`` from the positive."""
    cand = np.asarray(candidates, dtype=np.float64).reshape(-1, 2)
    far = np.flatnonzero(np.linalg.norm(cand - np.asarray(positive, dtype=np.float64), axis=1)
                         >= min_distance)
    if len(far) <= n:
        return cand[far]
    return cand[np.sort(rng.choice(far, n, replace=False))]


# -- global loss -----------------------------------------------------------


class GlobalLoss(NamedTuple):
    value: float
    rep_grad_open: bool
    reliability_grad_open: bool


def global_loss(rep, rel):
    """Plain sum of the repeatability and reliability terms."""
    return rep + rel


def adapted_global_loss(rep, rel, pair: DomainPair) -> GlobalLoss:
    """Global loss with the repeatability term gated by a same-domain indicator.

    Across domains only the reliability term remains, and its gradient must
    not reach the reliability output; the flags say which paths stay open.
    """
    rep = float(rep)
    rel = float(rel)
    if not (math.isfinite(rep) and math.isfinite(rel)):
        raise ValueError("loss terms must be finite")
    same = pair.same_domain
    indicator = 1.0 if same else 0.0
    return GlobalLoss(indicator * rep + rel, same, same)
