"""Moments of the conditional success probability.

Given a serving link of tier k in state rho at path loss l, success means
``h > s (sigma^2 + I)`` with ``h ~ Gamma(m_rho, 1)`` and
``s = m_rho theta l / (P_k G_max)``.  The Gamma CDF is replaced by
``(1 - exp(-zeta V))^m_rho`` with ``zeta = (m_rho!)^(-1/m_rho)``, so that
binomial expansion turns every moment into Laplace transforms of the
normalised interference ``J = s I``.

Interferers of tier j in state v live beyond the exclusion loss
``x0 = (P_j B_j / P_k B_k) l``.  Writing their distance as ``r0 e^w`` with
``r0`` the distance at loss ``x0`` makes the per-interferer Laplace factor
independent of ``l``; only the interferer measure over ``w`` depends on the
serving node.  The Laplace exponent for a batch of arguments is therefore a
single matrix product per population, and the activity vector enters
linearly on top of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import special

from .geometry import STATES, LinkState, biased_ratio, composite_gauss_legendre, serving_rule
from .model import NetworkModel

MAX_SERIES_ORDER = 64
SERIES_TOL = 1e-8
W_MAX = 30.0
W_PANELS = 60
W_ORDER = 8


class PoleError(ValueError):
    pass


class SeriesDivergenceError(RuntimeError):
    def __init__(self, message: str, partial_sums: Sequence[complex]):
        self.partial_sums = list(partial_sums)
        super().__init__(message)


def generalized_binomial(b: complex, k: int) -> complex:
    """Gamma(b+1) / (Gamma(k+1) Gamma(b-k+1)) for complex ``b``.

    Exact integer arithmetic when ``b`` is a non-negative integer.
    """
    if k < 0 or int(k) != k:
        raise ValueError("k must be a non-negative integer")
    k = int(k)
    bc = complex(b)
    if bc.imag == 0 and bc.real.is_integer():
        n = int(bc.real)
        if n >= 0:
            return complex(math.comb(n, k))
        # Gamma(b+1) has a pole; the ratio exists as a limit but is not what callers mean
        raise PoleError(f"binomial({n}, {k}) hits a pole of Gamma(b+1)")
    if k == 0:
        return 1.0 + 0.0j
    if k <= 256:
        # falling-factorial product; avoids b - k + 1 rounding onto a pole
        out = 1.0 + 0.0j
        for i in range(k):
            out *= (bc - i) / (i + 1)
        return out
    val = special.loggamma(bc + 1.0) - special.gammaln(k + 1.0) - special.loggamma(bc - k + 1.0)
    return complex(np.exp(val))


def activity_vector(model: NetworkModel, activity) -> np.ndarray:
    """Validate and broadcast an activity specification to one entry per tier."""
    q = np.broadcast_to(np.asarray(activity, dtype=float), (model.num_tiers,)).copy()
    if np.any(~np.isfinite(q)) or np.any(q < -1e-12) or np.any(q > 1 + 1e-12):
        raise ValueError(f"activity probabilities must lie in [0, 1], got {q}")
    return np.clip(q, 0.0, 1.0)


def zeta(m: int) -> float:
    return math.factorial(m) ** (-1.0 / m)


@dataclass
class _Population:
    """Interferers of one (tier j, state v) population for a fixed serving (k, rho)."""

    tier: int
    state: LinkState
    measure: np.ndarray  # (nodes, W) quadrature weights times interferer intensity
    tail: np.ndarray  # (nodes,) first-order weight of the region beyond W_MAX
    decay: np.ndarray  # (W,) e^{-alpha_v w}
    c0: float
    nakagami: int
    gains: tuple[tuple[float, float], ...]

    def kernel(self, sigma: np.ndarray) -> np.ndarray:
        """1 - E_G (1 + sigma c0 G e^{-alpha w})^-M on the (W, len(sigma)) grid."""
        sig = np.asarray(sigma)
        out = np.ones((self.decay.size, sig.size), dtype=np.result_type(sig, float))
        base = self.c0 * self.decay[:, None] * sig[None, :]
        for g, pg in self.gains:
            out -= pg * (1.0 + g * base) ** (-self.nakagami)
        return out

    def exponent(self, sigma: np.ndarray) -> np.ndarray:
        """Integrated (1 - Laplace factor) against the interferer measure, per node."""
        sig = np.asarray(sigma)
        mean_gain = sum(g * p for g, p in self.gains)
        return self.measure @ self.kernel(sig) + np.outer(self.tail, self.c0 * mean_gain * sig)


@dataclass
class LinkField:
    """Serving-link quadrature plus the interference populations for (k, rho)."""

    model: NetworkModel
    tier: int
    state: LinkState
    levels: np.ndarray
    weights: np.ndarray  # serving-loss density weights; sum = A_{k,rho}
    s: np.ndarray  # m_rho theta l / (P_k G_max)
    nakagami: int
    zeta: float
    noise_term: np.ndarray  # s sigma^2
    populations: list[_Population]
    _psi_cache: dict = field(default_factory=dict, repr=False)

    @property
    def association(self) -> float:
        return float(self.weights.sum())

    def psi(self, sigma: np.ndarray) -> np.ndarray:
        """Per-tier interference exponents, shape (K, nodes, len(sigma)), activity not applied."""
        sig = np.ascontiguousarray(np.asarray(sigma))
        key = (sig.dtype.str, sig.tobytes())
        hit = self._psi_cache.get(key)
        if hit is not None:
            return hit
        out = np.zeros((self.model.num_tiers, self.levels.size, sig.size), dtype=np.result_type(sig, float))
        for pop in self.populations:
            out[pop.tier] += pop.exponent(sig)
        if len(self._psi_cache) > 16:
            self._psi_cache.clear()
        self._psi_cache[key] = out
        return out

    def log_laplace_j(self, sigma: np.ndarray, activity: np.ndarray) -> np.ndarray:
        """log E[exp(-sigma J)] per serving node, J = s I."""
        psi = self.psi(sigma)
        return -np.tensordot(activity, psi, axes=(0, 0))

    def shifted_laplace(self, tau2: np.ndarray, activity: np.ndarray) -> np.ndarray:
        """E[exp(-zeta tau2 s (sigma^2 + I))] per serving node, shape (nodes, len(tau2))."""
        sig = self.zeta * np.asarray(tau2, dtype=float)
        return np.exp(-np.outer(self.noise_term, sig) + self.log_laplace_j(sig, activity))


def _w_rule():
    return composite_gauss_legendre(0.0, W_MAX, W_PANELS, W_ORDER)


def link_field(model: NetworkModel, k: int, state: LinkState) -> LinkField:
    return _link_field_cached(model, k, state)


@lru_cache(maxsize=64)
def _link_field_cached(model: NetworkModel, k: int, state: LinkState) -> LinkField:
    rule = serving_rule(model, k, state)
    return build_field(model, k, state, rule.levels, rule.weights)


def _tail_weight(model: NetworkModel, j: int, st: LinkState, r0: np.ndarray) -> np.ndarray:
    """First-order interferer mass beyond w = W_MAX (kernel linear in its argument there)."""
    tj = model.tiers[j]
    alpha = model.channel.alpha(st.is_los)
    edge = r0 * math.exp(W_MAX)
    base = 2.0 * math.pi * tj.density * r0**2
    if not st.is_los:
        return base * math.exp((2.0 - alpha) * W_MAX) / (alpha - 2.0)
    if alpha == 2.0:
        return base * special.exp1(np.maximum(tj.blockage * edge, 1e-300))
    return base * math.exp((2.0 - alpha) * W_MAX) / (alpha - 2.0) * np.exp(-tj.blockage * edge)


def build_field(model: NetworkModel, k: int, state: LinkState, levels: np.ndarray,
                weights: np.ndarray) -> LinkField:
    """Interference populations for serving tier-k ``state`` links at the given levels."""
    levels = np.asarray(levels, dtype=float)
    ch = model.channel
    m_rho = ch.nakagami(state.is_los)
    tk = model.tiers[k]
    g_max = model.antenna.g_max
    s = m_rho * model.sinr_threshold * levels / (tk.tx_power * g_max)
    w, ww = _w_rule()
    e2w = np.exp(2.0 * w)
    pops = []
    for j, tj in enumerate(model.tiers):
        x0 = biased_ratio(model, j, k) * levels
        for st in STATES:
            ilos = st.is_los
            alpha = ch.alpha(ilos)
            r0 = (x0 / ch.kappa(ilos)) ** (1.0 / alpha)
            far = r0[:, None] * np.exp(w)[None, :]
            p = np.exp(-tj.blockage * far) if ilos else -np.expm1(-tj.blockage * far)
            measure = 2.0 * math.pi * tj.density * (r0**2)[:, None] * (e2w * ww)[None, :] * p
            c0 = (model.sinr_threshold * m_rho * tk.bias) / (g_max * tj.bias * ch.nakagami(ilos))
            pops.append(_Population(
                tier=j, state=st, measure=measure, tail=_tail_weight(model, j, st, r0),
                decay=np.exp(-alpha * w), c0=c0, nakagami=ch.nakagami(ilos),
                gains=model.interferer_gains(),
            ))
    return LinkField(
        model=model, tier=k, state=state, levels=levels, weights=np.asarray(weights, dtype=float), s=s,
        nakagami=m_rho, zeta=zeta(m_rho), noise_term=s * model.noise_power, populations=pops,
    )


# --------------------------------------------------------------------------
# Laplace transform of one interferer population (diagnostic surface)
# --------------------------------------------------------------------------

def laplace_interference(model: NetworkModel, k: int, rho: LinkState, level: float, j: int,
                         upsilon: LinkState, s_arg: complex, activity) -> complex:
    """E[exp(-s_arg I_{j,upsilon})] for a tier-k ``rho`` link at path loss ``level``.

    ``s_arg`` is in units of 1/W; the result is the probability generating
    functional of the (j, upsilon) interferers beyond the association
    exclusion loss, averaged over Nakagami fading, beam gain and activity.
    """
    if level <= 0:
        raise ValueError("level must be positive")
    q = activity_vector(model, activity)
    if q[j] == 0.0 or s_arg == 0:
        return 1.0 + 0.0j
    fld = build_field(model, k, rho, np.array([float(level)]), np.array([1.0]))
    sigma = complex(s_arg) / fld.s[0]  # argument for J = s I
    pop = next(p for p in fld.populations if p.tier == j and p.state is upsilon)
    expo = pop.exponent(np.array([sigma]))[0, 0]
    if expo.real < -1e-12:
        raise OverflowError("Laplace exponent has the wrong sign; parameters are pathological")
    return complex(np.exp(-q[j] * expo))


# --------------------------------------------------------------------------
# Moments
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MomentResult:
    order: complex
    value: complex
    terms_used: int  # tau1 terms summed (series) or y-grid points (distribution)
    quadrature_nodes: int
    truncation_error_estimate: float
    method: str = "series"

    @property
    def real(self) -> float:
        return float(np.real(self.value))


def _is_nonneg_int(b: complex) -> bool:
    bc = complex(b)
    return bc.imag == 0 and bc.real >= 0 and float(bc.real).is_integer()


def _node_moments_integer(fld: LinkField, orders: Sequence[int], q: np.ndarray) -> np.ndarray:
    """Per-node moments for non-negative integer orders; exact finite sums."""
    m = fld.nakagami
    bmax = max(orders)
    tau2 = np.arange(m * bmax + 1, dtype=float)
    lap = fld.shifted_laplace(tau2, q)  # (nodes, m*bmax+1)
    # D[:, t1] = E[(1 - e^{-zeta V})^{m t1}]
    d = np.empty((lap.shape[0], bmax + 1))
    for t1 in range(bmax + 1):
        n = m * t1
        coef = np.array([(-1) ** t2 * math.comb(n, t2) for t2 in range(n + 1)], dtype=float)
        d[:, t1] = lap[:, : n + 1] @ coef
    out = np.empty((lap.shape[0], len(orders)))
    for i, b in enumerate(orders):
        coef = np.array([(-1) ** t1 * math.comb(b, t1) for t1 in range(b + 1)], dtype=float)
        out[:, i] = d[:, : b + 1] @ coef
    return out


def integer_moments(model: NetworkModel, k: int, rho: LinkState, orders: Sequence[int], activity) -> np.ndarray:
    """M_{b,k,rho} for several non-negative integer orders at once."""
    q = activity_vector(model, activity)
    fld = link_field(model, k, rho)
    per_node = _node_moments_integer(fld, list(orders), q)
    return fld.weights @ per_node / fld.association


def _series_moment(fld: LinkField, b: complex, q: np.ndarray) -> MomentResult:
    """Binomial series in tau1 with the magnitude-based stopping rule."""
    m = fld.nakagami
    total = np.zeros(fld.levels.size, dtype=complex)
    small_run = 0
    last = 0.0
    partial = []
    precision_floor = np.finfo(float).eps
    for t1 in range(MAX_SERIES_ORDER + 1):
        n = m * t1
        # alternating sum loses ~2^n eps; stop before rounding noise dominates
        if t1 > 0 and (2.0**n) * precision_floor > SERIES_TOL:
            raise SeriesDivergenceError(
                f"series for b={b} needs more than {t1 - 1} terms; cancellation limits precision", partial)
        lap = fld.shifted_laplace(np.arange(n + 1, dtype=float), q)
        coef = np.array([(-1) ** t2 * math.comb(n, t2) for t2 in range(n + 1)], dtype=float)
        d = lap @ coef
        term = generalized_binomial(b, t1) * (-1) ** t1 * d
        total += term
        mag = abs(fld.weights @ term) / fld.association
        partial.append(complex(fld.weights @ total / fld.association))
        last = mag
        if _is_nonneg_int(b) and t1 >= int(complex(b).real):
            break
        small_run = small_run + 1 if mag < SERIES_TOL else 0
        if small_run >= 3:
            break
    else:
        raise SeriesDivergenceError(f"series for b={b} did not settle within {MAX_SERIES_ORDER} terms", partial)
    value = complex(fld.weights @ total / fld.association)
    if _is_nonneg_int(b):
        last = 0.0
    return MomentResult(complex(b), value, t1 + 1, fld.levels.size, float(last), "series")


def conditional_stp_moment(model: NetworkModel, k: int, rho: LinkState, b: complex, activity,
                           method: str = "auto") -> MomentResult:
    """b-th moment of the conditional success probability of a tier-k ``rho`` link.

    ``method="series"`` is the binomial expansion (exact for non-negative
    integer ``b``).  ``"distribution"`` integrates against the per-link
    distribution of the normalised interference; ``"auto"`` picks the series
    for non-negative integers and the distribution otherwise.
    """
    bc = complex(b)
    if bc.real < 0 and bc.real != 0:
        raise ValueError("order must have non-negative real part")
    q = activity_vector(model, activity)
    fld = link_field(model, k, rho)
    if bc == 0:
        return MomentResult(bc, 1.0 + 0.0j, 1, fld.levels.size, 0.0, "series")
    if method == "auto":
        method = "series" if _is_nonneg_int(bc) else "distribution"
    if method == "series":
        return _series_moment(fld, bc, q)
    if method == "distribution":
        from .inversion import link_distribution

        dist = link_distribution(model, k, rho, q)
        return dist.moment(bc)
    raise ValueError(f"unknown method {method!r}")


def total_moment(model: NetworkModel, b: complex, activity, method: str = "auto") -> complex:
    """Network-wide moment: association-weighted mixture over tiers and states."""
    total = 0.0 + 0.0j
    for k in range(model.num_tiers):
        for st in STATES:
            fld = link_field(model, k, st)
            total += fld.association * conditional_stp_moment(model, k, st, b, activity, method).value
    return total


def tier_moments(model: NetworkModel, k: int, activity, orders: Sequence[int] = (1, 2)) -> np.ndarray:
    """Moments of the conditional success probability given association with tier k."""
    acc = np.zeros(len(orders))
    a_k = 0.0
    for st in STATES:
        fld = link_field(model, k, st)
        acc += fld.association * integer_moments(model, k, st, orders, activity)
        a_k += fld.association
    return acc / a_k


def network_moments(model: NetworkModel, activity, orders: Sequence[int] = (1, 2)) -> np.ndarray:
    acc = np.zeros(len(orders))
    for k in range(model.num_tiers):
        for st in STATES:
            fld = link_field(model, k, st)
            acc += fld.association * integer_moments(model, k, st, orders, activity)
    return acc
