"""Meta distributions, cell loads and the queue-coupled activity fixed point."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special, stats

from .geometry import STATES, association_probability
from .model import NetworkModel
from .moments import activity_vector, link_field, tier_moments

# Gil-Pelaez quadrature
GP_ORDER = 16
GP_PANEL_TOL = 1e-7
GP_T_CAP = 500.0
GP_TAPER_START = 250.0
GP_BATCH = 25

PMF_TAIL = 1e-6
CELL_SHAPE = 3.5

FP_TOL = 1e-5
FP_MAX_ITER = 200
FP_DAMPING = 0.5

DEGENERATE_VARIANCE = 1e-14


class DegenerateVarianceError(ValueError):
    def __init__(self, m1: float, m2: float):
        self.point = m1
        super().__init__(f"variance {m2 - m1 * m1:.3g} too small for a beta fit; point mass at {m1:.6g}")


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, state: "FixedPointState"):
        self.state = state
        super().__init__(message)


# --------------------------------------------------------------------------
# representations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class BetaParams:
    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"beta shapes must be positive, got a={self.a}, b={self.b}")

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    @property
    def second_moment(self) -> float:
        a, b = self.a, self.b
        return a * (a + 1) / ((a + b) * (a + b + 1))


@dataclass(frozen=True)
class MetaDistribution:
    """CCDF of the conditional success probability over [0, 1].

    ``kind`` is ``"beta"``, ``"tabulated"`` or ``"point"`` (zero variance).
    Tabulated CCDFs interpolate linearly between grid points.
    """

    kind: str
    provenance: str
    beta: BetaParams | None = None
    grid: np.ndarray | None = None
    values: np.ndarray | None = None
    point: float | None = None
    half_width: np.ndarray | None = None
    label: str = ""

    @classmethod
    def from_beta(cls, params: BetaParams, provenance: str = "beta-matched", label: str = ""):
        return cls("beta", provenance, beta=params, label=label)

    @classmethod
    def tabulated(cls, grid, values, provenance: str, half_width=None, label: str = ""):
        g = np.asarray(grid, dtype=float)
        v = np.asarray(values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly ascending and match the values")
        if g[0] < 0 or g[-1] > 1:
            raise ValueError("grid must lie in [0, 1]")
        return cls("tabulated", provenance, grid=g, values=v,
                   half_width=None if half_width is None else np.asarray(half_width, float), label=label)

    @classmethod
    def point_mass(cls, p: float, provenance: str = "beta-matched", label: str = ""):
        return cls("point", provenance, point=float(p), label=label)

    def ccdf(self, y) -> np.ndarray | float:
        yy = np.asarray(y, dtype=float)
        if self.kind == "beta":
            out = stats.beta.sf(yy, self.beta.a, self.beta.b)
            out = np.where(yy <= 0, 1.0, np.where(yy >= 1, 0.0, out))
        elif self.kind == "point":
            out = np.where(yy < self.point, 1.0, 0.0)
        else:
            g, v = self.grid, self.values
            left = 1.0 if g[0] > 0 else v[0]
            out = np.interp(yy, g, v, left=left, right=v[-1] if g[-1] >= 1 else 0.0)
        return float(out) if np.ndim(y) == 0 else out

    def cdf(self, y):
        return 1.0 - self.ccdf(y)

    def moments(self) -> tuple[float, float]:
        if self.kind == "beta":
            return self.beta.mean, self.beta.second_moment
        if self.kind == "point":
            return self.point, self.point**2
        # E[P] = int ccdf, E[P^2] = int 2y ccdf on the interpolated law
        g = np.concatenate([[0.0], self.grid]) if self.grid[0] > 0 else self.grid
        v = self.ccdf(g)
        return float(integrate.trapezoid(v, g)), float(integrate.trapezoid(2 * g * v, g))

    def expected_min(self, c: float) -> float:
        """E[min(1, c / P)] for c >= 0."""
        if c <= 0:
            return 0.0
        if c >= 1:
            return 1.0
        if self.kind == "point":
            return 1.0 if self.point <= c else c / self.point
        if self.kind == "beta":
            a, b = self.beta.a, self.beta.b
            below = stats.beta.cdf(c, a, b)
            if a > 1:
                inv_mean = special.beta(a - 1, b) / special.beta(a, b)
                tail = inv_mean * special.betaincc(a - 1, b, c)
            else:
                # p^(a-2) (1-p)^(b-1) / B(a, b) with the endpoint factor as a weight
                tail = integrate.quad(lambda p: p ** (a - 2.0), c, 1.0, weight="alg", wvar=(0.0, b - 1.0),
                                      limit=200)[0] / special.beta(a, b)
            return float(min(1.0, below + c * tail))
        # tabulated: c + int_c^1 (c / p^2) F(p) dp by the trapezoid rule
        g = self.grid[self.grid > c]
        p = np.concatenate([[c], g, [1.0]]) if (g.size == 0 or g[-1] < 1) else np.concatenate([[c], g])
        f = 1.0 - self.ccdf(p)
        return float(min(1.0, c + integrate.trapezoid(c * f / p**2, p)))


def beta_match(m1: float, m2: float) -> BetaParams:
    """Beta shapes with mean ``m1`` and second moment ``m2``."""
    if not (0.0 < m1 < 1.0):
        raise ValueError(f"mean must lie in (0, 1), got {m1}")
    if m2 > m1:
        raise ValueError(f"second moment {m2} exceeds the mean {m1}")
    if m2 <= m1 * m1 + DEGENERATE_VARIANCE:
        raise DegenerateVarianceError(m1, m2)
    b = (m1 - m2) * (1.0 - m1) / (m2 - m1 * m1)
    a = m1 * b / (1.0 - m1)
    return BetaParams(a, b)


def meta_from_moments(m1: float, m2: float, label: str = "") -> MetaDistribution:
    """Beta-matched meta distribution, degrading to a point mass at zero variance or at the ends."""
    if m1 >= 1.0 - 1e-12 or m1 <= 1e-12:
        return MetaDistribution.point_mass(min(max(m1, 0.0), 1.0), label=label)
    try:
        return MetaDistribution.from_beta(beta_match(m1, min(m2, m1)), label=label)
    except DegenerateVarianceError as err:
        return MetaDistribution.point_mass(err.point, label=label)


# --------------------------------------------------------------------------
# Gil-Pelaez inversion
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GilPelaezResult:
    y: np.ndarray
    ccdf: np.ndarray
    clamp: np.ndarray  # how far each raw value fell outside [0, 1]
    t_max: float
    tail_estimate: float


def _taper(t: np.ndarray, start: float, stop: float) -> np.ndarray:
    """C-infinity step from 1 at ``start`` to 0 at ``stop``."""
    u = np.clip((t - start) / (stop - start), 0.0, 1.0)

    def bump(x):
        return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)

    return bump(1.0 - u) / (bump(1.0 - u) + bump(u))


def _call_moments(moment_fn: Callable, t: np.ndarray) -> np.ndarray:
    jt = 1j * t
    try:
        out = np.asarray(moment_fn(jt), dtype=complex)
        if out.shape == t.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([complex(moment_fn(complex(v))) for v in jt])


def gil_pelaez(moment_fn: Callable, y, t_cap: float = GP_T_CAP, taper_start: float = GP_TAPER_START,
               panel_tol: float = GP_PANEL_TOL) -> GilPelaezResult:
    """CCDF of a [0, 1] variable from its imaginary-order moments ``moment_fn(j t)``.

    Unit panels of Gauss-Legendre nodes are added until three consecutive
    panels change no value by more than ``panel_tol`` or ``t_cap`` is hit.
    Beyond ``taper_start`` the integrand is multiplied by a smooth window
    falling to zero at ``t_cap``, which suppresses the truncation ripple of
    slowly decaying (for example atomic) laws.
    """
    yy = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any((yy <= 0) | (yy >= 1)):
        raise ValueError("y must lie in (0, 1)")
    ly = np.log(yy)
    x, w = np.polynomial.legendre.leggauss(GP_ORDER)
    acc = np.zeros_like(yy)
    quiet = 0
    t_hi = 0.0
    last = np.inf
    n_panels = int(math.ceil(t_cap))
    done = False
    for first in range(0, n_panels, GP_BATCH):
        lo = np.arange(first, min(first + GP_BATCH, n_panels), dtype=float)
        t = (lo[:, None] + 0.5 + 0.5 * x[None, :]).ravel()
        wt = np.tile(0.5 * w, lo.size)
        mom = _call_moments(moment_fn, t)
        win = _taper(t, taper_start, t_cap)
        integrand = np.imag(np.exp(-1j * np.outer(ly, t)) * mom[None, :]) / t[None, :]
        contrib = (integrand * (wt * win)[None, :]).reshape(yy.size, lo.size, GP_ORDER).sum(axis=2)
        for p in range(lo.size):
            acc += contrib[:, p]
            last = float(np.max(np.abs(contrib[:, p])))
            t_hi = lo[p] + 1.0
            quiet = quiet + 1 if last < panel_tol else 0
            if quiet >= 3:
                done = True
                break
        if done:
            break
    raw = 0.5 + acc / math.pi
    clipped = np.clip(raw, 0.0, 1.0)
    return GilPelaezResult(yy, clipped, raw - clipped, t_hi, last / math.pi)


def gil_pelaez_ccdf(moment_fn: Callable, y, **kwargs):
    """Scalar or array CCDF value(s); see :func:`gil_pelaez` for diagnostics."""
    res = gil_pelaez(moment_fn, y, **kwargs)
    return float(res.ccdf[0]) if np.ndim(y) == 0 else res.ccdf


# --------------------------------------------------------------------------
# analytic meta distributions at fixed activity
# --------------------------------------------------------------------------

def _tier_states(model: NetworkModel, tier: int | None):
    tiers = range(model.num_tiers) if tier is None else [tier]
    return [(k, st) for k in tiers for st in STATES]


def moment_function(model: NetworkModel, activity, tier: int | None = None) -> Callable:
    """t -> M_{jt} (vectorised), conditioned on ``tier`` or mixed over all tiers."""
    from .inversion import link_distribution, log_table_moment

    q = activity_vector(model, activity)
    acc = None
    total = 0.0
    x = None
    for k, st in _tier_states(model, tier):
        dist = link_distribution(model, k, st, q)
        x, ccdf = dist.log_table()
        acc = dist.association * ccdf if acc is None else acc + dist.association * ccdf
        total += dist.association
    mixed = acc / total

    def fn(b):
        return log_table_moment(x, mixed, np.asarray(b, dtype=complex))

    return fn


def direct_ccdf(model: NetworkModel, activity, y, tier: int | None = None) -> np.ndarray:
    """CCDF from the inverted interference law, without the Gil-Pelaez step."""
    from .inversion import link_distribution

    q = activity_vector(model, activity)
    yy = np.atleast_1d(np.asarray(y, dtype=float))
    acc = np.zeros(yy.shape)
    total = 0.0
    for k, st in _tier_states(model, tier):
        dist = link_distribution(model, k, st, q)
        acc += dist.association * dist.ccdf(yy)
        total += dist.association
    return acc / total


def meta_distribution(model: NetworkModel, activity, y_grid, method: str = "beta",
                      tier: int | None = None) -> MetaDistribution:
    """Meta distribution at fixed activity.

    ``method`` is ``"beta"`` (moment matching), ``"gil-pelaez"`` (inversion of
    imaginary moments) or ``"direct"`` (tabulated from the interference law).
    """
    label = "network" if tier is None else f"tier{tier + 1}"
    if method == "beta":
        q = activity_vector(model, activity)
        if tier is None:
            from .moments import network_moments

            m1, m2 = network_moments(model, q)
        else:
            m1, m2 = tier_moments(model, tier, q)
        return meta_from_moments(float(m1), float(m2), label)
    y = np.asarray(y_grid, dtype=float)
    inner = (y > 0) & (y < 1)
    vals = np.empty(y.shape)
    vals[y <= 0] = 1.0
    vals[y >= 1] = 0.0
    if method == "gil-pelaez":
        vals[inner] = gil_pelaez(moment_function(model, activity, tier), y[inner]).ccdf
        vals = np.minimum.accumulate(vals)
        return MetaDistribution.tabulated(y, vals, "gil-pelaez", label=label)
    if method == "direct":
        vals[inner] = direct_ccdf(model, activity, y[inner], tier)
        return MetaDistribution.tabulated(y, vals, "direct", label=label)
    raise ValueError(f"unknown method {method!r}")


def variance_conditional_stp(model: NetworkModel, activity, tier: int | None = None) -> float:
    """M2 - M1^2 of the conditional success probability."""
    from .moments import network_moments

    q = activity_vector(model, activity)
    m1, m2 = network_moments(model, q) if tier is None else tier_moments(model, tier, q)
    return float(max(m2 - m1 * m1, 0.0))


# --------------------------------------------------------------------------
# cell loads and activity
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class UserCountModel:
    tier: int
    load: float  # mu_k
    pmf: np.ndarray  # index nu = 0..nu_max

    @property
    def nu_max(self) -> int:
        return self.pmf.size - 1

    def busy_weights(self) -> np.ndarray:
        """U(nu) / (1 - U(0)) for nu >= 1 (index 0 of the result is nu = 1)."""
        return self.pmf[1:] / (1.0 - self.pmf[0])


def _log_pmf_positive(mu: float, nu: np.ndarray) -> np.ndarray:
    c = CELL_SHAPE
    return ((nu - 1) * math.log(mu) if mu > 0 else np.where(nu == 1, 0.0, -np.inf)) \
        + special.gammaln(c + nu) - special.gammaln(nu) - special.gammaln(c + 1) \
        - (c + nu) * math.log1p(mu)


def cell_load(model: NetworkModel, k: int) -> float:
    a_k, _ = association_probability(model, k)
    return model.traffic.user_density * a_k / (CELL_SHAPE * model.tiers[k].density)


def user_count_pmf(model: NetworkModel, k: int, nu) -> float | np.ndarray:
    """Probability that the cell of a tier-k BS serving the typical user holds ``nu`` users."""
    nn = np.atleast_1d(np.asarray(nu))
    if np.any(nn < 0) or np.any(nn != np.floor(nn)):
        raise ValueError("nu must be a non-negative integer")
    counts = user_counts(model, k)
    out = np.zeros(nn.shape)
    inside = nn <= counts.nu_max
    out[inside] = counts.pmf[nn[inside].astype(int)]
    far = ~inside
    if np.any(far):
        out[far] = np.exp(_log_pmf_positive(counts.load, nn[far].astype(float)))
    return float(out[0]) if np.ndim(nu) == 0 else out


def user_counts(model: NetworkModel, k: int, tail: float = PMF_TAIL) -> UserCountModel:
    mu = cell_load(model, k)
    chunk = 64
    nu_max = chunk
    while True:
        nu = np.arange(1, nu_max + 1, dtype=float)
        pos = np.exp(_log_pmf_positive(mu, nu))
        if 1.0 - pos.sum() < tail or nu_max > 10**6:
            break
        nu_max *= 2
    # smallest cap with tail mass below the tolerance
    csum = np.cumsum(pos)
    cap = int(np.searchsorted(csum, 1.0 - tail) + 1)
    pos = pos[:cap]
    u0 = max(1.0 - pos.sum(), 0.0)
    return UserCountModel(k, mu, np.concatenate([[u0], pos]))


def mean_active_probability(model: NetworkModel, k: int, meta: MetaDistribution,
                            counts: UserCountModel | None = None) -> float:
    """E[q_{a,k}] = sum_nu U(nu)/(1-U(0)) E[min(1, nu xi / P)]."""
    xi = model.traffic.arrival_prob
    if xi <= 0:
        return 0.0
    counts = counts if counts is not None else user_counts(model, k)
    w = counts.busy_weights()
    total = 0.0
    for i, wi in enumerate(w):
        c = (i + 1) * xi
        if c >= 1:
            total += w[i:].sum()
            break
        total += wi * meta.expected_min(c)
    return float(min(max(total, 0.0), 1.0))


def initial_activity(model: NetworkModel) -> np.ndarray:
    """E[min(nu xi, 1)] per tier: utilisation with perfect links."""
    xi = model.traffic.arrival_prob
    out = []
    for k in range(model.num_tiers):
        w = user_counts(model, k).busy_weights()
        nu = np.arange(1, w.size + 1)
        out.append(min(float(w @ np.minimum(nu * xi, 1.0)), 1.0))
    return np.array(out)


# --------------------------------------------------------------------------
# fixed point and bounds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedPointRecord:
    iteration: int
    activity: np.ndarray
    change: float


@dataclass
class FixedPointState:
    iteration: int
    metas: list[MetaDistribution]
    activity: np.ndarray
    change: float
    converged: bool
    oscillating: bool = False
    moments: np.ndarray | None = None  # (K, 2) per-tier M1, M2
    trajectory: list[FixedPointRecord] = field(default_factory=list)

    def network_meta(self, model: NetworkModel) -> "MixtureMeta":
        return MixtureMeta.of_tiers(model, self.metas)


@dataclass(frozen=True)
class MixtureMeta:
    """Association-weighted mixture of per-tier meta distributions."""

    weights: np.ndarray
    parts: tuple[MetaDistribution, ...]

    @classmethod
    def of_tiers(cls, model: NetworkModel, metas: Sequence[MetaDistribution]):
        a = np.array([association_probability(model, k)[0] for k in range(model.num_tiers)])
        return cls(a / a.sum(), tuple(metas))

    def ccdf(self, y):
        return sum(w * np.asarray(m.ccdf(y)) for w, m in zip(self.weights, self.parts))


def _tier_metas(model: NetworkModel, q: np.ndarray) -> tuple[list[MetaDistribution], np.ndarray]:
    metas, mom = [], []
    for k in range(model.num_tiers):
        m1, m2 = tier_moments(model, k, q)
        mom.append((m1, m2))
        metas.append(meta_from_moments(float(m1), float(m2), f"tier{k + 1}"))
    return metas, np.array(mom)


def activity_update(model: NetworkModel, q) -> tuple[np.ndarray, list[MetaDistribution], np.ndarray]:
    """One undamped application of the map activity -> meta -> activity."""
    qv = activity_vector(model, q)
    metas, mom = _tier_metas(model, qv)
    new = np.array([mean_active_probability(model, k, metas[k]) for k in range(model.num_tiers)])
    return new, metas, mom


def solve_fixed_point(model: NetworkModel, tol: float = FP_TOL, max_iter: int = FP_MAX_ITER,
                      damping: float = FP_DAMPING, initial=None, strict: bool = False) -> FixedPointState:
    """Iterate activity -> per-tier beta meta -> activity until the activities settle."""
    if model.traffic.arrival_prob <= 0:
        raise ValueError("arrival probability must be positive")
    q = initial_activity(model) if initial is None else activity_vector(model, initial)
    trajectory = [FixedPointRecord(0, q.copy(), float("nan"))]
    change = float("inf")
    metas, mom = _tier_metas(model, q)
    converged = False
    oscillating = False
    it = 0
    for it in range(1, max_iter + 1):
        target, metas, mom = activity_update(model, q)
        new = (1.0 - damping) * target + damping * q
        change = float(np.max(np.abs(new - q)))
        q = np.clip(new, 0.0, 1.0)
        trajectory.append(FixedPointRecord(it, q.copy(), change))
        if change < tol:
            converged = True
            metas, mom = _tier_metas(model, q)
            break
        if it >= 4:
            last = [r.activity for r in trajectory[-4:]]
            two_cycle = np.allclose(last[0], last[2], atol=tol) and np.allclose(last[1], last[3], atol=tol)
            if two_cycle and not np.allclose(last[0], last[1], atol=tol):
                oscillating = True
                break
    state = FixedPointState(it, metas, q, change, converged, oscillating, mom, trajectory)
    if strict and not converged:
        reason = "oscillating" if oscillating else f"not converged after {it} iterations"
        raise NonConvergenceError(f"activity fixed point {reason} (last change {change:.3g})", state)
    return state


@dataclass(frozen=True)
class BoundResult:
    system: str
    degree: int
    activity: np.ndarray
    metas: list[MetaDistribution]


def bound_meta(model: NetworkModel, system: str, degree: int) -> BoundResult:
    """Dominant (all interferers on) or favorable (loss-free utilisation) bounds."""
    if system not in ("dominant", "favorable"):
        raise ValueError("system must be 'dominant' or 'favorable'")
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    q = np.ones(model.num_tiers) if system == "dominant" else initial_activity(model)
    metas, _ = _tier_metas(model, q)
    if degree == 2:
        q, _, _ = activity_update(model, q)
        metas, _ = _tier_metas(model, q)
    return BoundResult(system, degree, q, metas)


def link_state_split(model: NetworkModel, k: int) -> dict:
    """Association probability of each serving state of tier k (reporting helper)."""
    return {st.name: link_field(model, k, st).association for st in STATES}
