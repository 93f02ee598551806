"""Invariant suite run by ``--check``."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import geometry, metadist, moments
from .geometry import STATES, LinkState
from .model import NetworkModel


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _association(model: NetworkModel) -> CheckResult:
    total = float(geometry.association_table(model).sum())
    return CheckResult("association sums to one", abs(total - 1) <= 1e-6, f"sum={total:.12f}")


def _zero_moment(model: NetworkModel) -> CheckResult:
    vals = [moments.conditional_stp_moment(model, k, st, 0, 1.0).value
            for k in range(model.num_tiers) for st in STATES]
    ok = all(v == 1 for v in vals)
    return CheckResult("zeroth moment is one", ok, f"values={sorted({complex(v) for v in vals}, key=abs)}")


def _variance_grid(model: NetworkModel) -> CheckResult:
    worst = math.inf
    for tdb in np.linspace(-10, 20, 5):
        for xi in (0.1, 0.3, 0.5, 0.7, 0.9):
            m = model.with_threshold(10 ** (tdb / 10)).with_traffic(arrival_prob=xi)
            q = metadist.solve_fixed_point(m).activity
            m1, m2 = moments.network_moments(m, q)
            worst = min(worst, m2 - m1 * m1)
    return CheckResult("variance non-negative on 5x5 (theta, xi) grid", worst >= 0, f"min={worst:.3e}")


def _blockage_split(model: NetworkModel) -> CheckResult:
    ch = dataclasses.replace(model.channel, alpha_nlos=model.channel.alpha_los,
                             kappa_nlos=model.channel.kappa_los)
    worst = 0.0
    for tier in model.tiers:
        r = np.logspace(0, 3.5, 40)
        lvl = ch.kappa_los * r**ch.alpha_los
        split = geometry.intensity(tier, ch, LinkState.LOS, lvl) + geometry.intensity(tier, ch, LinkState.NLOS, lvl)
        full = math.pi * tier.density * r**2
        worst = max(worst, float(np.max(np.abs(split - full) / full)))
    return CheckResult("LOS + NLOS intensity equals unblocked intensity", worst <= 1e-9, f"max rel err={worst:.2e}")


def _pmf(model: NetworkModel) -> CheckResult:
    worst = max(abs(metadist.user_counts(model, k).pmf.sum() - 1) for k in range(model.num_tiers))
    return CheckResult("user-count PMF normalises", worst <= 1e-6, f"max |sum-1|={worst:.2e}")


def _ordering(model: NetworkModel) -> CheckResult:
    m = moments.network_moments(model, 1.0, orders=(1, 2, 3))
    ok = 1 >= m[0] >= m[1] >= m[2] >= 0
    return CheckResult("moment ordering 1 >= M1 >= M2 >= M3", bool(ok), f"M={np.round(m, 9).tolist()}")


def _gil_pelaez_oracles() -> CheckResult:
    y = np.arange(1, 10) / 10
    p = 0.65
    cases = {
        "degenerate": (lambda b: p**b, (y < p).astype(float)),
        "uniform": (lambda b: 1.0 / (1.0 + b), 1.0 - y),
        "beta22": (lambda b: np.exp(special.loggamma(2 + b) + special.loggamma(4.0)
                                    - special.loggamma(2.0) - special.loggamma(4 + b)),
                   stats.beta.sf(y, 2, 2)),
    }
    errs = {k: float(np.max(np.abs(metadist.gil_pelaez(fn, y).ccdf - ref))) for k, (fn, ref) in cases.items()}
    return CheckResult("Gil-Pelaez oracles within 1e-3", max(errs.values()) <= 1e-3,
                       ", ".join(f"{k}={v:.1e}" for k, v in errs.items()))


def _bounds(model: NetworkModel) -> CheckResult:
    y = np.linspace(0.01, 0.99, 99)
    fp = metadist.solve_fixed_point(model)
    chain = [metadist.bound_meta(model, "favorable", 1), metadist.bound_meta(model, "favorable", 2), None,
             metadist.bound_meta(model, "dominant", 2), metadist.bound_meta(model, "dominant", 1)]
    worst = math.inf
    for k in range(model.num_tiers):
        curves = [fp.metas[k].ccdf(y) if c is None else c.metas[k].ccdf(y) for c in chain]
        for hi, lo in zip(curves, curves[1:]):
            worst = min(worst, float(np.min(hi - lo)))
    return CheckResult("bounds bracket the fixed point", worst >= -1e-3, f"min gap={worst:.2e}")


def run_checks(model: NetworkModel) -> list[CheckResult]:
    out = []
    for fn in (_association, _zero_moment, _ordering, _blockage_split, _pmf, _bounds, _variance_grid):
        try:
            out.append(fn(model))
        except Exception as exc:  # a crash is a failed check, reported not raised
            out.append(CheckResult(fn.__name__.strip("_"), False, f"error: {exc}"))
    out.append(_gil_pelaez_oracles())
    return out


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  result  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    return "\n".join(lines)
