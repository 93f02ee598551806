"""Path-loss intensity measures, serving-link densities and association.

Every (tier, link state) population of BSs seen from the typical user is a
Poisson process on the path-loss axis.  The serving BS is the point with the
smallest biased loss ``L / (P B)`` over all populations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special

from .model import ChannelParams, NetworkModel, TierParams


class LinkState(enum.Enum):
    LOS = "L"
    NLOS = "N"

    @property
    def is_los(self) -> bool:
        return self is LinkState.LOS


STATES = (LinkState.LOS, LinkState.NLOS)


class QuadratureError(RuntimeError):
    def __init__(self, message: str, error_estimate: float):
        self.error_estimate = error_estimate
        super().__init__(f"{message} (error estimate {error_estimate:.3g})")


def los_probability(distance, blockage: float):
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    return np.exp(-blockage * d)


def _los_mass(x):
    """1 - e^-x (1 + x), accurate for small x."""
    return special.gammainc(2.0, x)


def _nlos_mass(x):
    """x^2/2 - (1 - e^-x (1 + x)), without cancellation for small x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 0.05
    xs = x[small]
    # alternating series sum_{n>=3} (-1)^(n+1) (n-1) x^n / n!
    term = np.zeros_like(xs)
    for n in range(12, 2, -1):
        term = (-1) ** (n + 1) * (n - 1) * xs**n / math.factorial(n) + term
    out[small] = term
    xl = x[~small]
    out[~small] = 0.5 * xl**2 - special.gammainc(2.0, xl)
    return out


def distance_of_level(level, kappa: float, alpha: float):
    return (np.asarray(level, dtype=float) / kappa) ** (1.0 / alpha)


def intensity(tier: TierParams, channel: ChannelParams, state: LinkState, level):
    """Expected number of ``state`` BSs of ``tier`` with path loss below ``level``."""
    lvl = np.asarray(level, dtype=float)
    if np.any(lvl < 0):
        raise ValueError("path-loss level must be non-negative")
    los = state.is_los
    r = distance_of_level(lvl, channel.kappa(los), channel.alpha(los))
    beta = tier.blockage
    scale = 2.0 * math.pi * tier.density / beta**2
    if los:
        out = scale * _los_mass(beta * r)
    else:
        out = scale * _nlos_mass(beta * r)
    return out if np.ndim(level) else float(out)


def intensity_derivative(tier: TierParams, channel: ChannelParams, state: LinkState, level):
    """d/dl of :func:`intensity`."""
    lvl = np.asarray(level, dtype=float)
    if np.any(lvl <= 0):
        raise ValueError("path-loss level must be positive")
    los = state.is_los
    alpha = channel.alpha(los)
    r = distance_of_level(lvl, channel.kappa(los), alpha)
    br = tier.blockage * r
    p = np.exp(-br) if los else -np.expm1(-br)
    out = 2.0 * math.pi * tier.density * r**2 * p / (alpha * lvl)
    return out if np.ndim(level) else float(out)


def los_state_prob(tier: TierParams, state: LinkState, distance):
    p = np.exp(-tier.blockage * np.asarray(distance, dtype=float))
    return p if state.is_los else -np.expm1(-tier.blockage * np.asarray(distance, dtype=float))


def biased_ratio(model: NetworkModel, j: int, k: int) -> float:
    """P_j B_j / (P_k B_k); serving gains are G_max on both sides and cancel."""
    tj, tk = model.tiers[j], model.tiers[k]
    return (tj.tx_power * tj.bias) / (tk.tx_power * tk.bias)


def competitor_mass(model: NetworkModel, k: int, level):
    """Sum over all populations of the intensity of BSs beating a tier-k BS at ``level``."""
    lvl = np.asarray(level, dtype=float)
    total = np.zeros_like(lvl)
    for j, tier in enumerate(model.tiers):
        scaled = biased_ratio(model, j, k) * lvl
        for st in STATES:
            total = total + intensity(tier, model.channel, st, scaled)
    return total


def serving_pathloss_pdf(model: NetworkModel, k: int, state: LinkState, level):
    """Joint density: nearest-in-loss tier-k ``state`` BS sits at ``level`` and wins association."""
    lvl = np.asarray(level, dtype=float)
    if np.any(lvl <= 0):
        raise ValueError("path-loss level must be positive")
    tier = model.tiers[k]
    out = intensity_derivative(tier, model.channel, state, lvl) * np.exp(-competitor_mass(model, k, lvl))
    return out if np.ndim(level) else float(out)


# --------------------------------------------------------------------------
# Quadrature on the log-distance axis of the serving link
# --------------------------------------------------------------------------

_GL_ORDER = 20


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def composite_gauss_legendre(a: float, b: float, panels: int, order: int = _GL_ORDER):
    """Nodes and weights of a composite Gauss-Legendre rule on [a, b]."""
    x, w = gauss_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


@dataclass(frozen=True)
class ServingRule:
    """Quadrature rule for integrals against the serving-loss density of (k, state).

    ``sum(weights * g(levels))`` approximates ``int g(l) f_{L_{k,state}}(l) dl``,
    so ``weights.sum()`` is the per-state association probability.
    """

    tier: int
    state: LinkState
    distances: np.ndarray
    levels: np.ndarray
    weights: np.ndarray
    error_estimate: float

    @property
    def association(self) -> float:
        return float(self.weights.sum())


SURVIVAL_FLOOR = 1e-14
ASSOC_TOL = 1e-9


def _serving_integrand(model: NetworkModel, k: int, state: LinkState, u: np.ndarray) -> np.ndarray:
    """Integrand in u = ln r of the serving-loss density times dl/du."""
    tier = model.tiers[k]
    los = state.is_los
    r = np.exp(u)
    level = model.channel.kappa(los) * r ** model.channel.alpha(los)
    p = los_state_prob(tier, state, r)
    # Lambda'(l) dl = 2 pi lambda p(r) r dr, and dr = r du
    return 2.0 * math.pi * tier.density * p * r**2 * np.exp(-competitor_mass(model, k, level))


def _distance_bounds(model: NetworkModel, k: int, state: LinkState) -> tuple[float, float]:
    los = state.is_los
    kappa, alpha = model.channel.kappa(los), model.channel.alpha(los)
    tier = model.tiers[k]

    def excess_upper(u):
        return float(competitor_mass(model, k, kappa * math.exp(u) ** alpha)) - math.log(1.0 / SURVIVAL_FLOOR)

    hi = 0.0
    while excess_upper(hi) < 0:
        hi += 2.0
    u_hi = optimize.brentq(excess_upper, hi - 2.0 if hi > 0 else -50.0, hi, xtol=1e-10)

    def excess_lower(u):
        own = intensity(tier, model.channel, state, kappa * math.exp(u) ** alpha)
        return math.log(max(own, 1e-300)) - math.log(1e-16)

    lo = u_hi
    while excess_lower(lo) > 0:
        lo -= 2.0
    u_lo = optimize.brentq(excess_lower, lo, lo + 2.0, xtol=1e-10)
    return u_lo, u_hi


def serving_rule(model: NetworkModel, k: int, state: LinkState, tol: float = ASSOC_TOL,
                 max_panels: int = 1024) -> ServingRule:
    """Adaptive composite rule: panels double until the association integral settles."""
    return _serving_rule_cached(model, k, state, tol, max_panels)


@lru_cache(maxsize=256)
def _serving_rule_cached(model, k, state, tol, max_panels) -> ServingRule:
    u_lo, u_hi = _distance_bounds(model, k, state)
    panels = 8
    nodes, weights = composite_gauss_legendre(u_lo, u_hi, panels)
    vals = weights * _serving_integrand(model, k, state, nodes)
    prev = vals.sum()
    while True:
        panels *= 2
        nodes, weights = composite_gauss_legendre(u_lo, u_hi, panels)
        vals = weights * _serving_integrand(model, k, state, nodes)
        err = abs(vals.sum() - prev)
        if err < tol or panels >= max_panels:
            break
        prev = vals.sum()
    if err >= tol:
        raise QuadratureError("serving-loss quadrature did not converge", err)
    los = state.is_los
    r = np.exp(nodes)
    levels = model.channel.kappa(los) * r ** model.channel.alpha(los)
    keep = vals > 0
    return ServingRule(k, state, r[keep], levels[keep], vals[keep], err)


def association_probability(model: NetworkModel, k: int) -> tuple[float, dict[LinkState, float]]:
    """Tier-k association probability and its LOS/NLOS split."""
    per_state = {st: serving_rule(model, k, st).association for st in STATES}
    return sum(per_state.values()), per_state


def association_table(model: NetworkModel) -> np.ndarray:
    """Array of shape (K, 2): A_{k,LOS}, A_{k,NLOS}."""
    return np.array([[serving_rule(model, k, st).association for st in STATES]
                     for k in range(model.num_tiers)])
