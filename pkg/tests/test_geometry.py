import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmwave_meta import geometry
from mmwave_meta.geometry import STATES, LinkState


def test_association_sums_to_one(ref_model):
    assert geometry.association_table(ref_model).sum() == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-6, 1e-4), st.floats(0.001, 0.05), st.floats(-10, 10))
def test_association_sums_to_one_property(density, blockage, bias_db):
    from mmwave_meta.model import table_one
    model = table_one().with_tier(1, density=density, blockage=blockage, bias=10 ** (bias_db / 10))
    assert geometry.association_table(model).sum() == pytest.approx(1.0, abs=1e-6)


def test_blockage_split_identity(ref_model):
    ch = ref_model.channel
    r = np.logspace(0, 3.5, 30)
    lvl = ch.kappa_los * r**ch.alpha_los
    import dataclasses
    same = dataclasses.replace(ch, alpha_nlos=ch.alpha_los, kappa_nlos=ch.kappa_los)
    for tier in ref_model.tiers:
        split = sum(geometry.intensity(tier, same, s, lvl) for s in STATES)
        np.testing.assert_allclose(split, math.pi * tier.density * r**2, rtol=1e-9)


def test_intensity_monotone(ref_model):
    lvl = np.logspace(5, 14, 50)
    for tier in ref_model.tiers:
        for s in STATES:
            v = geometry.intensity(tier, ref_model.channel, s, lvl)
            assert np.all(np.diff(v) >= 0)


def test_serving_pdf_integrates_to_association(ref_model):
    from scipy import integrate
    for k in range(2):
        for s in STATES:
            los = s.is_los
            ka, al = ref_model.channel.kappa(los), ref_model.channel.alpha(los)
            f = lambda u: geometry.serving_pathloss_pdf(ref_model, k, s, math.exp(u)) * math.exp(u)
            lo, hi = math.log(ka * 0.1**al), math.log(ka * 1e4**al)
            val = integrate.quad(f, lo, hi, limit=400, epsabs=1e-12)[0]
            assert val == pytest.approx(geometry.serving_rule(ref_model, k, s).association, abs=1e-6)


def test_los_probability():
    assert geometry.los_probability(0.0, 0.01) == 1.0
    assert geometry.los_probability(100.0, 0.01) == pytest.approx(math.exp(-1))


def test_bias_shifts_association(ref_model):
    base = geometry.association_table(ref_model)[1].sum()
    biased = geometry.association_table(ref_model.with_tier(1, bias=10.0))[1].sum()
    assert biased > base


@pytest.mark.parametrize("x, beta, expected", [(0.0, 0.01, 1.0), (1 / 0.02, 0.02, math.exp(-1)),
                                               (200.0, 0.006, 0.30119)])
def test_los_probability_values(x, beta, expected):
    assert geometry.los_probability(x, beta) == pytest.approx(expected, abs=1e-5)


def test_intensity_at_zero_and_infinity(ref_model):
    ch = ref_model.channel
    tier = ref_model.tiers[0]
    for s in STATES:
        assert geometry.intensity(tier, ch, s, 0.0) == 0.0
    far = geometry.intensity(tier, ch, LinkState.LOS, 1e40)
    assert far == pytest.approx(2 * math.pi * tier.density / tier.blockage**2, rel=1e-9)


def test_los_intensity_quadrature(ref_model):
    from scipy import integrate
    ch = ref_model.channel
    tier = ref_model.tiers[0]
    got = geometry.intensity(tier, ch, LinkState.LOS, ch.kappa_los * 100.0**2)
    ref = 2 * math.pi * tier.density * integrate.quad(lambda t: math.exp(-tier.blockage * t) * t, 0, 100)[0]
    assert got == pytest.approx(ref, rel=1e-10)
    assert got == pytest.approx(0.1354, abs=1e-4)


def test_intensity_derivative_finite_difference(ref_model):
    ch = ref_model.channel
    levels = np.logspace(math.log10(ch.kappa_los), math.log10(ch.kappa_nlos * 2000.0**4), 20)
    for tier in ref_model.tiers:
        for s in STATES:
            h = levels * 1e-5
            fd = (geometry.intensity(tier, ch, s, levels + h) - geometry.intensity(tier, ch, s, levels - h)) / (2 * h)
            an = geometry.intensity_derivative(tier, ch, s, levels)
            np.testing.assert_allclose(an, fd, rtol=1e-6, atol=1e-9 * an.max())


def test_intensity_derivative_limits(ref_model):
    ch = ref_model.channel
    tier = ref_model.tiers[0]
    assert geometry.intensity_derivative(tier, ch, LinkState.LOS, 1e40) < 1e-30
    lvl = ch.kappa_nlos * 1e5**4
    dominant = (2 * math.pi * tier.density / ch.alpha_nlos) * ch.kappa_nlos ** (-2 / ch.alpha_nlos) \
        * lvl ** (2 / ch.alpha_nlos - 1)
    assert geometry.intensity_derivative(tier, ch, LinkState.NLOS, lvl) == pytest.approx(dominant, rel=1e-6)


def test_identical_tiers_split_evenly():
    from mmwave_meta.model import table_one
    base = table_one()
    model = base.with_tier(1, **{f: getattr(base.tiers[0], f) for f in ("density", "tx_power", "bias", "blockage")})
    a = geometry.association_table(model).sum(axis=1)
    np.testing.assert_allclose(a, [0.5, 0.5], atol=1e-9)


def test_single_tier_certain():
    from mmwave_meta.model import table_one
    base = table_one()
    model = table_one(tiers=base.tiers[:1])
    assert geometry.association_table(model).sum() == pytest.approx(1.0, abs=1e-9)


def _serving_cdf(model, k, lvl):
    """P(serving loss <= lvl, serving tier k): panel-wise quadrature of the serving density in ln l."""
    from scipy import integrate
    u = np.linspace(math.log(1e3), math.log(1e20), 400)
    f = lambda x, s: geometry.serving_pathloss_pdf(model, k, s, math.exp(x)) * math.exp(x)
    inc = [sum(integrate.quad(f, a, b, args=(s,), epsabs=1e-13)[0] for s in STATES) for a, b in zip(u[:-1], u[1:])]
    cdf = np.concatenate([[0.0], np.cumsum(inc)])
    return np.interp(np.log(lvl), u, cdf)


def test_denser_tier_serves_at_lower_loss():
    from mmwave_meta.model import table_one
    base = table_one(tiers=table_one().tiers[:1]).with_tier(0, blockage=1e-6)
    dense = base.with_tier(0, density=2 * base.tiers[0].density)
    lvl = base.channel.kappa_los * np.logspace(0.5, 3.5, 30) ** 2
    assert np.all(_serving_cdf(dense, 0, lvl) >= _serving_cdf(base, 0, lvl) - 1e-6)


def _typical_user(model, trials, seed, radius=4000.0):
    """Serving tier, LOS flag and path loss of the typical user, by direct PPP sampling."""
    rng = np.random.default_rng(seed)
    ch = model.channel
    tier_out, los_out, loss_out = np.empty(trials, int), np.empty(trials, bool), np.empty(trials)
    for i in range(trials):
        best = -np.inf
        for k, t in enumerate(model.tiers):
            n = rng.poisson(t.density * math.pi * radius**2)
            if n == 0:
                continue
            r = radius * np.sqrt(rng.random(n))
            los = rng.random(n) < np.exp(-t.blockage * r)
            loss = np.where(los, ch.kappa_los * r**ch.alpha_los, ch.kappa_nlos * r**ch.alpha_nlos)
            j = np.argmax(t.tx_power * t.bias / loss)
            val = t.tx_power * t.bias / loss[j]
            if val > best:
                best = val
                tier_out[i], los_out[i], loss_out[i] = k, los[j], loss[j]
    return tier_out, los_out, loss_out


@pytest.fixture(scope="module")
def typical_users(ref_model):
    return _typical_user(ref_model, 10000, seed=21)


def test_association_fractions_ten_thousand(ref_model, typical_users):
    tier, los, _ = typical_users
    table = geometry.association_table(ref_model)
    for k in range(2):
        for s, flag in enumerate((True, False)):
            assert abs(np.mean((tier == k) & (los == flag)) - table[k, s]) <= 0.01


def test_serving_loss_distribution_ks(ref_model, typical_users):
    _, _, loss = typical_users
    grid = np.sort(loss)
    analytic = sum(_serving_cdf(ref_model, k, grid) for k in range(2))
    empirical = np.arange(1, grid.size + 1) / grid.size
    assert np.max(np.abs(analytic - empirical)) < 0.02
