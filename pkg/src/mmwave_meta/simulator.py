"""Spatio-temporal Monte Carlo ground truth.

A realization holds one draw of the BS and user point processes, the
per-link LOS marks and the resulting association.  Two experiments run on
top of it:

* ``run_static``: fixed interferer activity, many fading/beam/activity
  draws per user, giving the conditional success probability given the
  spatial layout.
* ``run_temporal``: slot-level Geo/G/1 queues with random scheduling and
  retransmission until success.

Random numbers come from a counter-based hash of (seed, realization, slot,
link, draw), so results do not depend on execution order or thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .model import NetworkModel

DEFAULT_WINDOW = 2000.0
EDGE_FRACTION = 0.10
# users closer to the boundary than the distance beyond which only this
# fraction of serving links lie are excluded from statistics
SERVING_TAIL = 1e-3
MIN_ATTEMPTS = 50
# interferers whose mean power (main-lobe gain) is below this fraction of the
# noise power, and of the serving power, are not simulated
DROP_NOISE_FRACTION = 1e-3
DROP_SIGNAL_FRACTION = 1e-7


class WindowTooSmallError(ValueError):
    def __init__(self, radius: float, required: float):
        self.radius = radius
        self.required = required
        super().__init__(f"window radius {radius:g} m too small; need at least {required:g} m")


class InsufficientSampleError(ValueError):
    pass


# --------------------------------------------------------------------------
# counter-based random numbers
# --------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@numba.njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def _key(base, a):
    return _mix(np.uint64(base) + (np.uint64(a) + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15))


@numba.njit(cache=True, inline="always")
def _uniform(key, counter):
    h = _mix(np.uint64(key) ^ _mix(np.uint64(counter) * np.uint64(0xD1B54A32D192ED03) + np.uint64(1)))
    return ((h >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True, inline="always")
def _unit_gamma(key, counter, m):
    """Gamma(m, 1/m) (unit mean) for integer m, from m uniforms."""
    prod = 1.0
    for i in range(m):
        prod *= _uniform(key, counter * 8 + i)
    return -math.log(prod) / m


@numba.njit(cache=True)
def _realization_key(base, index):
    return _key(_mix(base), index)


def realization_key(seed: int, index: int) -> np.uint64:
    # keep every intermediate in uint64: numba hands uint64 results back as Python ints
    return np.uint64(_realization_key(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF), np.uint64(index)))


# --------------------------------------------------------------------------
# spatial realization
# --------------------------------------------------------------------------

@dataclass
class Realization:
    window_radius: float
    seed: int
    index: int
    bs_pos: np.ndarray  # (B, 2)
    bs_tier: np.ndarray  # (B,)
    user_pos: np.ndarray  # (U, 2)
    serving: np.ndarray  # (U,) BS index
    serving_power: np.ndarray  # (U,) P_k G_max / L, W
    serving_los: np.ndarray  # (U,) bool
    serving_loss: np.ndarray  # (U,)
    # interferers of each user, CSR layout over users
    intf_ptr: np.ndarray
    intf_bs: np.ndarray
    intf_power: np.ndarray  # P_j / L without beam gain, W
    intf_los: np.ndarray
    user_edge: np.ndarray  # (U,) bool
    bs_edge: np.ndarray  # (B,) bool
    dropped_interference: float  # mean dropped power / mean kept power, main lobe
    los_marks: np.ndarray | None = field(default=None, repr=False)

    @property
    def num_users(self) -> int:
        return self.user_pos.shape[0]

    @property
    def num_bs(self) -> int:
        return self.bs_pos.shape[0]

    @property
    def user_tier(self) -> np.ndarray:
        return self.bs_tier[self.serving] if self.num_users else np.zeros(0, dtype=np.int64)


def truncation_ratio(model: NetworkModel, radius: float) -> float:
    """Mean interference from beyond ``radius`` over that from inside it (origin view)."""
    from scipy import integrate

    lam_tot = sum(t.density for t in model.tiers)
    r_in = 0.5 / math.sqrt(lam_tot)
    ch = model.channel
    g = model.antenna.mean_gain if model.interferer_gain_averaging else 1.0

    def density(r):
        tot = 0.0
        for t in model.tiers:
            pl = math.exp(-t.blockage * r)
            tot += t.tx_power * g * 2 * math.pi * t.density * r * (
                pl / (ch.kappa_los * r**ch.alpha_los) + (1 - pl) / (ch.kappa_nlos * r**ch.alpha_nlos))
        return tot

    inside = integrate.quad(density, r_in, radius, limit=200)[0]
    outside = integrate.quad(density, radius, np.inf, limit=200)[0]
    return outside / inside


def serving_distance_quantile(model: NetworkModel, tail: float = SERVING_TAIL) -> float:
    """Distance D with P(serving distance > D) = tail, from the analytic serving densities."""
    from .geometry import STATES, serving_rule

    rules = [serving_rule(model, k, st) for k in range(model.num_tiers) for st in STATES]
    d = np.concatenate([r.distances for r in rules])
    w = np.concatenate([r.weights for r in rules])
    order = np.argsort(d)[::-1]
    above = np.cumsum(w[order])
    i = np.searchsorted(above, tail)
    return float(d[order][min(i, d.size - 1)])


def edge_guard(model: NetworkModel, window_radius: float) -> float:
    return max(EDGE_FRACTION * window_radius, serving_distance_quantile(model))


def required_radius(model: NetworkModel, tol: float = 0.01) -> float:
    r = 2.0 / math.sqrt(sum(t.density for t in model.tiers))
    while truncation_ratio(model, r) >= tol:
        r *= 1.25
    return r


def sample_network(model: NetworkModel, window_radius: float = DEFAULT_WINDOW, seed: int = 0,
                   index: int = 0, check_window: bool = True, keep_marks: bool = False) -> Realization:
    """Draw BSs, users, LOS marks and association in a disc of ``window_radius``."""
    if check_window:
        if truncation_ratio(model, window_radius) >= 0.01:
            raise WindowTooSmallError(window_radius, required_radius(model))
        if edge_guard(model, window_radius) > 0.8 * window_radius:
            raise WindowTooSmallError(window_radius, 5.0 * edge_guard(model, window_radius))
    rng = np.random.Generator(np.random.Philox(key=(int(seed) & (2**64 - 1)) * 2**64 + int(index)))
    area = math.pi * window_radius**2

    def disc(n):
        rad = window_radius * np.sqrt(rng.random(n))
        ang = 2 * math.pi * rng.random(n)
        return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])

    pos, tier = [], []
    for k, t in enumerate(model.tiers):
        n = rng.poisson(t.density * area)
        pos.append(disc(n))
        tier.append(np.full(n, k, dtype=np.int64))
    bs_pos = np.concatenate(pos) if pos else np.zeros((0, 2))
    bs_tier = np.concatenate(tier)
    n_users = rng.poisson(model.traffic.user_density * area)
    user_pos = disc(n_users)

    ch = model.channel
    power = np.array([t.tx_power for t in model.tiers])[bs_tier]
    bias = np.array([t.bias for t in model.tiers])[bs_tier]
    beta = np.array([t.blockage for t in model.tiers])[bs_tier]
    d = np.hypot(user_pos[:, None, 0] - bs_pos[None, :, 0], user_pos[:, None, 1] - bs_pos[None, :, 1])
    los = rng.random(d.shape) < np.exp(-beta[None, :] * d)
    d = np.maximum(d, 1e-3)
    loss = np.where(los, ch.kappa_los * d**ch.alpha_los, ch.kappa_nlos * d**ch.alpha_nlos)
    g_max = model.antenna.g_max

    if bs_pos.shape[0] == 0 or n_users == 0:
        serving = np.zeros(n_users, dtype=np.int64)
        empty = np.zeros(0)
        return Realization(window_radius, seed, index, bs_pos, bs_tier, user_pos, serving,
                           empty, np.zeros(0, bool), empty, np.zeros(n_users + 1, np.int64),
                           np.zeros(0, np.int64), empty, np.zeros(0, bool),
                           np.zeros(n_users, bool), np.zeros(bs_pos.shape[0], bool), 0.0)

    biased = (power * bias)[None, :] / loss
    serving = np.argmax(biased, axis=1)
    rows = np.arange(n_users)
    serving_loss = loss[rows, serving]
    serving_power = power[serving] * g_max / serving_loss
    serving_los = los[rows, serving]

    mean_rx = power[None, :] * g_max / loss
    mean_rx[rows, serving] = 0.0
    cutoff = DROP_NOISE_FRACTION * model.noise_power + DROP_SIGNAL_FRACTION * serving_power
    keep = mean_rx > cutoff[:, None]
    kept = mean_rx[keep].sum()
    dropped = mean_rx[~keep].sum()
    counts = keep.sum(axis=1)
    ptr = np.zeros(n_users + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    ui, bi = np.nonzero(keep)
    intf_power = power[bi] / loss[ui, bi]

    r_user = np.hypot(user_pos[:, 0], user_pos[:, 1])
    r_bs = np.hypot(bs_pos[:, 0], bs_pos[:, 1])
    edge_r = window_radius - edge_guard(model, window_radius)
    return Realization(
        window_radius=window_radius, seed=seed, index=index, bs_pos=bs_pos, bs_tier=bs_tier,
        user_pos=user_pos, serving=serving.astype(np.int64), serving_power=serving_power,
        serving_los=serving_los, serving_loss=serving_loss,
        intf_ptr=ptr, intf_bs=bi.astype(np.int64), intf_power=intf_power, intf_los=los[ui, bi],
        user_edge=r_user > edge_r, bs_edge=r_bs > edge_r,
        dropped_interference=float(dropped / kept) if kept > 0 else 0.0,
        los_marks=los if keep_marks else None,
    )


def _gain_table(model: NetworkModel) -> tuple[np.ndarray, np.ndarray]:
    gains = model.interferer_gains()
    values = np.array([g for g, _ in gains])
    cdf = np.cumsum([p for _, p in gains])
    cdf[-1] = 1.0
    return values, cdf


def _nakagami(model: NetworkModel, los: np.ndarray) -> np.ndarray:
    ch = model.channel
    return np.where(los, ch.nakagami_los, ch.nakagami_nlos).astype(np.int64)


# --------------------------------------------------------------------------
# static experiment
# --------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _static_kernel(key, users, serving_power, serving_m, ptr, intf_bs, intf_power, intf_m,
                   bs_tier, activity, gain_values, gain_cdf, noise, thetas, draws):
    n_theta = thetas.size
    counts = np.zeros((users.size, n_theta), dtype=np.int64)
    for ui in range(users.size):
        u = users[ui]
        ukey = _key(key, u)
        for d in range(draws):
            dkey = _key(ukey, d)
            s = serving_power[u] * _unit_gamma(dkey, 0, serving_m[u])
            interference = 0.0
            for p in range(ptr[u], ptr[u + 1]):
                c = p - ptr[u] + 1
                b = intf_bs[p]
                if _uniform(dkey, 3 * c * 8 + 1) >= activity[bs_tier[b]]:
                    continue
                ug = _uniform(dkey, 3 * c * 8 + 2)
                g = gain_values[gain_values.size - 1]
                for gi in range(gain_values.size):
                    if ug < gain_cdf[gi]:
                        g = gain_values[gi]
                        break
                interference += intf_power[p] * g * _unit_gamma(dkey, 3 * c + 1, intf_m[p])
            sinr = s / (noise + interference) if noise + interference > 0 else np.inf
            for t in range(n_theta):
                if sinr > thetas[t]:
                    counts[ui, t] += 1
    return counts


@dataclass
class StaticResult:
    thetas: np.ndarray
    user_tier: np.ndarray
    user_los: np.ndarray
    stp: np.ndarray  # (users, thetas) conditional success estimates
    draws: int


def run_static(real: Realization, model: NetworkModel, activity, fading_draws: int,
               thetas=None, include_edge: bool = False) -> StaticResult:
    """Per-user conditional success probability under fixed interferer activity."""
    if fading_draws < 1:
        raise ValueError("fading_draws must be >= 1")
    from .moments import activity_vector

    q = activity_vector(model, activity)
    thetas = np.atleast_1d(np.asarray(model.sinr_threshold if thetas is None else thetas, dtype=float))
    users = np.arange(real.num_users) if include_edge else np.nonzero(~real.user_edge)[0]
    gv, gc = _gain_table(model)
    counts = _static_kernel(
        realization_key(real.seed, real.index), users.astype(np.int64), real.serving_power,
        _nakagami(model, real.serving_los), real.intf_ptr, real.intf_bs, real.intf_power,
        _nakagami(model, real.intf_los), real.bs_tier, q, gv, gc, float(model.noise_power),
        thetas, int(fading_draws))
    return StaticResult(thetas, real.bs_tier[real.serving[users]], real.serving_los[users],
                        counts / fading_draws, fading_draws)


# --------------------------------------------------------------------------
# temporal experiment
# --------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _temporal_kernel(key, n_bs, bs_tier, serving, serving_power, serving_m, roster_ptr, roster,
                     ptr, intf_bs, intf_power, intf_m, gain_values, gain_cdf, noise, theta,
                     arrival_prob, slots, warmup):
    n_users = serving.size
    queue = np.zeros(n_users, dtype=np.int64)
    arrivals = np.zeros(n_users, dtype=np.int64)
    departures = np.zeros(n_users, dtype=np.int64)
    attempts = np.zeros(n_users, dtype=np.int64)
    successes = np.zeros(n_users, dtype=np.int64)
    active_slots = np.zeros(n_bs, dtype=np.int64)
    active = np.zeros(n_bs, dtype=np.bool_)
    scheduled = np.full(n_bs, -1, dtype=np.int64)
    busy_violations = 0
    for t in range(slots):
        skey = _key(key, t)
        akey = _key(skey, 0)
        for u in range(n_users):
            if _uniform(akey, u) < arrival_prob:
                queue[u] += 1
                arrivals[u] += 1
        bkey = _key(skey, 1)
        for b in range(n_bs):
            nonempty = 0
            for r in range(roster_ptr[b], roster_ptr[b + 1]):
                if queue[roster[r]] > 0:
                    nonempty += 1
            if nonempty == 0:
                active[b] = False
                scheduled[b] = -1
                continue
            pick = int(_uniform(bkey, b) * nonempty)
            if pick >= nonempty:
                pick = nonempty - 1
            for r in range(roster_ptr[b], roster_ptr[b + 1]):
                if queue[roster[r]] > 0:
                    if pick == 0:
                        scheduled[b] = roster[r]
                        break
                    pick -= 1
            active[b] = True
        counted = t >= warmup
        for b in range(n_bs):
            if not active[b]:
                continue
            u = scheduled[b]
            if queue[u] <= 0:
                busy_violations += 1
            lkey = _key(_key(skey, 2), b)
            s = serving_power[u] * _unit_gamma(lkey, 0, serving_m[u])
            interference = 0.0
            for p in range(ptr[u], ptr[u + 1]):
                j = intf_bs[p]
                if not active[j]:
                    continue
                c = p - ptr[u] + 1
                ug = _uniform(lkey, 3 * c * 8 + 2)
                g = gain_values[gain_values.size - 1]
                for gi in range(gain_values.size):
                    if ug < gain_cdf[gi]:
                        g = gain_values[gi]
                        break
                interference += intf_power[p] * g * _unit_gamma(lkey, 3 * c + 1, intf_m[p])
            ok = s > theta * (noise + interference)
            if ok:
                queue[u] -= 1
                departures[u] += 1
            if counted:
                attempts[u] += 1
                if ok:
                    successes[u] += 1
        if counted:
            for b in range(n_bs):
                if active[b]:
                    active_slots[b] += 1
    return queue, arrivals, departures, attempts, successes, active_slots, busy_violations


@dataclass
class TemporalResult:
    slots: int
    warmup: int
    user_tier: np.ndarray
    user_edge: np.ndarray
    attempts: np.ndarray
    successes: np.ndarray
    arrivals: np.ndarray
    departures: np.ndarray
    final_queue: np.ndarray
    bs_tier: np.ndarray
    bs_edge: np.ndarray
    bs_users: np.ndarray
    bs_activity: np.ndarray  # fraction of post-warmup slots active
    scheduling_violations: int

    @property
    def user_stp(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.attempts > 0, self.successes / np.maximum(self.attempts, 1), np.nan)


def _rosters(real: Realization) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(real.serving, kind="stable")
    counts = np.bincount(real.serving, minlength=real.num_bs) if real.num_users else np.zeros(real.num_bs, int)
    ptr = np.zeros(real.num_bs + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, order.astype(np.int64)


def run_temporal(real: Realization, model: NetworkModel, slots: int, warmup: int) -> TemporalResult:
    """Slot-level queueing simulation with random scheduling and retransmission."""
    if slots < 10 * warmup:
        raise ValueError("slots must be at least 10 x warmup")
    roster_ptr, roster = _rosters(real)
    gv, gc = _gain_table(model)
    out = _temporal_kernel(
        realization_key(real.seed, real.index), real.num_bs, real.bs_tier, real.serving,
        real.serving_power, _nakagami(model, real.serving_los), roster_ptr, roster,
        real.intf_ptr, real.intf_bs, real.intf_power, _nakagami(model, real.intf_los), gv, gc,
        float(model.noise_power), float(model.sinr_threshold), float(model.traffic.arrival_prob),
        int(slots), int(warmup))
    queue, arrivals, departures, attempts, successes, active_slots, violations = out
    return TemporalResult(
        slots=slots, warmup=warmup, user_tier=real.user_tier, user_edge=real.user_edge,
        attempts=attempts, successes=successes, arrivals=arrivals, departures=departures,
        final_queue=queue, bs_tier=real.bs_tier, bs_edge=real.bs_edge,
        bs_users=np.diff(roster_ptr), bs_activity=active_slots / max(slots - warmup, 1),
        scheduling_violations=int(violations),
    )


# --------------------------------------------------------------------------
# pooled results over many realizations
# --------------------------------------------------------------------------

def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def empirical_ccdf(samples: np.ndarray, y_grid) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of samples strictly above each y, with 95% binomial half-widths."""
    y = np.asarray(y_grid, dtype=float)
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    frac = (n - np.searchsorted(x, y, side="right")) / n
    half = 1.96 * np.sqrt(frac * (1 - frac) / n)
    return frac, half


@dataclass
class SimulationResult:
    """Pooled per-tier statistics of one experiment."""

    mode: str
    num_tiers: int
    user_tier: np.ndarray
    user_stp: np.ndarray  # static: (users, thetas); temporal: (users,)
    user_los: np.ndarray | None
    bs_tier: np.ndarray | None
    bs_activity: np.ndarray | None
    thetas: np.ndarray
    realizations: int
    edge_users_excluded: float
    min_attempts: int = 0

    def tier_mean_stp(self, k: int | None = None) -> np.ndarray:
        sel = self.user_stp if k is None else self.user_stp[self.user_tier == k]
        return sel.mean(axis=0)

    def tier_moments(self, k: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mean, second moment and 95% half-width of the mean."""
        sel = self.user_stp if k is None else self.user_stp[self.user_tier == k]
        n = max(sel.shape[0], 1)
        return sel.mean(axis=0), (sel**2).mean(axis=0), 1.96 * sel.std(axis=0) / math.sqrt(n)

    def tier_activity(self, k: int) -> tuple[float, float]:
        a = self.bs_activity[self.bs_tier == k]
        if a.size == 0:
            return float("nan"), float("nan")
        return float(a.mean()), float(1.96 * a.std() / math.sqrt(a.size))


def simulate_static(model: NetworkModel, activity, realizations: int, fading_draws: int, seed: int = 0,
                    thetas=None, window_radius: float = DEFAULT_WINDOW, threads: int = 1) -> SimulationResult:
    thetas = np.atleast_1d(np.asarray(model.sinr_threshold if thetas is None else thetas, dtype=float))

    def one(i):
        real = sample_network(model, window_radius, seed, i, check_window=(i == 0))
        res = run_static(real, model, activity, fading_draws, thetas)
        return res, real.user_edge.mean() if real.num_users else 0.0

    parts = _map_ordered(one, range(realizations), threads)
    stp = np.concatenate([p.stp for p, _ in parts]) if parts else np.zeros((0, thetas.size))
    return SimulationResult(
        mode="static", num_tiers=model.num_tiers,
        user_tier=np.concatenate([p.user_tier for p, _ in parts]),
        user_stp=stp, user_los=np.concatenate([p.user_los for p, _ in parts]),
        bs_tier=None, bs_activity=None, thetas=thetas, realizations=realizations,
        edge_users_excluded=float(np.mean([e for _, e in parts])) if parts else 0.0,
    )


def simulate_temporal(model: NetworkModel, realizations: int, slots: int, warmup: int, seed: int = 0,
                      window_radius: float = DEFAULT_WINDOW, threads: int = 1,
                      min_attempts: int = MIN_ATTEMPTS) -> SimulationResult:
    def one(i):
        real = sample_network(model, window_radius, seed, i, check_window=(i == 0))
        return run_temporal(real, model, slots, warmup)

    parts = _map_ordered(one, range(realizations), threads)
    u_tier, u_stp, b_tier, b_act = [], [], [], []
    edge = []
    for r in parts:
        ok = (~r.user_edge) & (r.attempts >= min_attempts)
        u_tier.append(r.user_tier[ok])
        u_stp.append(r.successes[ok] / r.attempts[ok])
        bsel = (~r.bs_edge) & (r.bs_users > 0)
        b_tier.append(r.bs_tier[bsel])
        b_act.append(r.bs_activity[bsel])
        edge.append(r.user_edge.mean() if r.user_edge.size else 0.0)
    return SimulationResult(
        mode="temporal", num_tiers=model.num_tiers,
        user_tier=np.concatenate(u_tier), user_stp=np.concatenate(u_stp), user_los=None,
        bs_tier=np.concatenate(b_tier), bs_activity=np.concatenate(b_act),
        thetas=np.array([model.sinr_threshold]), realizations=realizations,
        edge_users_excluded=float(np.mean(edge)) if edge else 0.0, min_attempts=min_attempts,
    )


def empirical_meta(result: SimulationResult, y_grid, tier: int | None = None, theta_index: int = 0,
                   min_users: int = 100):
    """Tabulated meta distribution from pooled per-user success estimates."""
    from .metadist import MetaDistribution

    stp = result.user_stp if result.user_stp.ndim == 1 else result.user_stp[:, theta_index]
    if tier is not None:
        stp = stp[result.user_tier == tier]
    if stp.size < min_users:
        raise InsufficientSampleError(f"{stp.size} qualifying users, need at least {min_users}")
    y = np.asarray(y_grid, dtype=float)
    frac, half = empirical_ccdf(stp, y)
    frac = np.where(y <= 0, 1.0, frac)
    label = "network" if tier is None else f"tier{tier + 1}"
    return MetaDistribution.tabulated(y, frac, "empirical", half_width=half, label=label)
