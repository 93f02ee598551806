"""Distribution of the conditional success probability via Laplace inversion.

For a serving node at loss ``l`` the approximated success probability is
``Q = 1 - (1 - exp(-zeta s (sigma^2 + I)))^m``.  With ``J = s I`` this gives

    P(Q > y | l) = F_J(v_y - s sigma^2),  v_y = -ln(1 - (1 - y)^(1/m)) / zeta,

so the CCDF of ``Q`` follows from the CDF of ``J``.  That CDF is obtained by
Euler-accelerated Fourier-series inversion of ``L_J(sigma) / sigma`` on one
z grid shared by every serving node, which turns the Laplace exponent into a
single matrix product.  Complex-order moments ``E[Q^b]`` are then exact
integrals of the tabulated law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import LinkState
from .model import NetworkModel
from .moments import MomentResult, activity_vector, link_field

# Euler inversion parameters: discretisation error ~ e^-A
EULER_A = 18.4
EULER_N = 15
EULER_M = 11
Z_MIN, Z_MAX, Z_PER_DECADE = 1e-8, 1e3, 16
# y grid for the tabulated law of Q: geometric towards 0 and towards 1
Y_TAIL_LOW = 1e-12
Y_TAIL_HIGH = 1e-14
Y_POINTS_PER_SIDE = 1200
Y_INTERIOR_POINTS = 800  # uniform fill between the two geometric tails


def y_table_grid(points_per_side: int = Y_POINTS_PER_SIDE) -> np.ndarray:
    low = np.logspace(math.log10(Y_TAIL_LOW), math.log10(0.5), points_per_side)
    high = 1.0 - np.logspace(math.log10(0.5), math.log10(Y_TAIL_HIGH), points_per_side)[1:]
    mid = np.linspace(0.01, 0.99, Y_INTERIOR_POINTS)
    return np.unique(np.concatenate([low, high, mid, [1.0]]))


def z_grid() -> np.ndarray:
    decades = math.log10(Z_MAX / Z_MIN)
    return np.logspace(math.log10(Z_MIN), math.log10(Z_MAX), int(round(decades * Z_PER_DECADE)) + 1)


@lru_cache(maxsize=None)
def _euler_weights(n: int, m: int) -> np.ndarray:
    """Weights w_k so that the Euler-summed value is sum_k w_k Re F(sigma_k)."""
    kmax = n + m
    sign = (-1.0) ** np.arange(kmax + 1)
    sign[0] = 0.5
    # partial sums s_j = sum_{k<=j} sign_k a_k; result = sum_{i=0}^m C(m,i) 2^-m s_{n+i}
    binom = np.array([math.comb(m, i) for i in range(m + 1)], dtype=float) / 2.0**m
    w = np.zeros(kmax + 1)
    for i, c in enumerate(binom):
        w[: n + i + 1] += c
    return w * sign


def euler_invert_cdf(log_laplace, z: np.ndarray, a: float = EULER_A, n: int = EULER_N, m: int = EULER_M):
    """CDF of a non-negative variable at ``z`` from its log-Laplace transform.

    ``log_laplace`` maps a 1-D complex array of transform arguments to an
    array of shape (..., len(args)); the result has shape (..., len(z)).
    """
    z = np.asarray(z, dtype=float)
    k = np.arange(n + m + 1)
    sig = (a + 2j * math.pi * k[None, :]) / (2.0 * z[:, None])  # (nz, K)
    vals = np.exp(log_laplace(sig.ravel())) / sig.ravel()
    vals = vals.reshape(vals.shape[:-1] + sig.shape).real
    w = _euler_weights(n, m)
    return math.exp(a / 2.0) / z * (vals @ w)


@dataclass
class LinkDistribution:
    """Law of the conditional success probability for serving (tier, state)."""

    tier: int
    state: LinkState
    association: float
    weights: np.ndarray  # serving-node weights, sum = association
    noise_term: np.ndarray  # s sigma^2 per node
    nakagami: int
    zeta: float
    z: np.ndarray
    cdf_j: np.ndarray  # (nodes, len(z))

    def _v(self, y: np.ndarray) -> np.ndarray:
        y = np.clip(y, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            inner = -np.expm1(np.log1p(-y) / self.nakagami)
            return -np.log(inner) / self.zeta

    def node_ccdf(self, y) -> np.ndarray:
        """P(Q > y) per serving node, shape (nodes, len(y))."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        arg = self._v(y)[None, :] - self.noise_term[:, None]
        lz = np.log(self.z)
        out = np.zeros(arg.shape)
        pos = arg > 0
        la = np.log(np.where(pos, arg, 1.0))
        for i in range(arg.shape[0]):
            row = np.interp(la[i], lz, self.cdf_j[i], left=self.cdf_j[i, 0], right=1.0)
            out[i] = np.where(pos[i], row, 0.0)
        out[:, y <= 0] = 1.0
        out[:, y >= 1] = 0.0
        return np.clip(out, 0.0, 1.0)

    def ccdf(self, y) -> np.ndarray:
        """P(Q > y) given association with this (tier, state)."""
        return np.clip(self.weights @ self.node_ccdf(y) / self.association, 0.0, 1.0)

    def log_table(self) -> tuple[np.ndarray, np.ndarray]:
        """CCDF tabulated against x = ln y."""
        y = y_table_grid()
        return np.log(y), self.ccdf(y)

    def moment(self, b: complex) -> MomentResult:
        x, ccdf = self.log_table()
        val = log_table_moment(x, ccdf, b)
        return MomentResult(complex(b), val, x.size, self.weights.size, 0.0, "distribution")


def log_table_moment(x: np.ndarray, ccdf: np.ndarray, b) -> complex | np.ndarray:
    """E[Q^b] for Q whose CCDF is piecewise linear in x = ln y on the grid ``x``.

    The mass below ``x[0]`` is placed at ``x[0]``.  Accepts scalar or array ``b``.
    """
    bb = np.atleast_1d(np.asarray(b, dtype=complex))
    cdf = 1.0 - np.asarray(ccdf, dtype=float)
    cdf = np.maximum.accumulate(np.clip(cdf, 0.0, 1.0))
    cdf[-1] = 1.0
    dp = np.diff(cdf)
    keep = dp > 0
    h = np.diff(x)[keep]
    x0 = x[:-1][keep]
    dp = dp[keep]
    out = cdf[0] * np.exp(bb * x[0])
    # uniform density in x on each cell: E[e^{bX}; cell] = dp (e^{b x1} - e^{b x0}) / (b h)
    e0 = np.exp(np.outer(bb, x0))
    bh = np.outer(bb, h)
    small = np.abs(bh) < 1e-6
    growth = np.where(small, 1.0 + bh / 2.0 + bh * bh / 6.0, np.expm1(np.where(small, 0.0, bh)) / np.where(small, 1.0, bh))
    out = out + (e0 * growth) @ dp
    return complex(out[0]) if np.ndim(b) == 0 else out


def link_distribution(model: NetworkModel, k: int, rho: LinkState, activity) -> LinkDistribution:
    q = activity_vector(model, activity)
    return _link_distribution_cached(model, k, rho, tuple(float(v) for v in q))


@lru_cache(maxsize=64)
def _link_distribution_cached(model, k, rho, q) -> LinkDistribution:
    fld = link_field(model, k, rho)
    qa = np.asarray(q)
    z = z_grid()
    cdf = euler_invert_cdf(lambda sig: fld.log_laplace_j(sig, qa), z)
    cdf = np.clip(cdf, 0.0, 1.0)
    cdf = np.maximum.accumulate(cdf, axis=1)
    return LinkDistribution(k, rho, fld.association, fld.weights, fld.noise_term, fld.nakagami,
                            fld.zeta, z, cdf)
