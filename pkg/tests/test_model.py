import math

import pytest
from hypothesis import given, strategies as st

from mmwave_meta.model import (ConfigError, build_model, db_to_linear, dbm_to_watts, default_config,
                               derive_antenna, linear_to_db, merge_config, parse_config_text, table_one,
                               thermal_noise, valid_keys, watts_to_dbm, free_space_intercept)


def test_antenna_64_elements():
    ant = derive_antenna(64)
    assert ant.g_max == 64
    # 1 / sin^2(3 pi / 16) and sqrt(3) / 8, evaluated by hand
    assert ant.g_min == pytest.approx(3.2398, abs=1e-4)
    assert ant.beamwidth == pytest.approx(0.216506, abs=1e-6)
    assert ant.main_lobe_prob == pytest.approx(0.216506 / (2 * math.pi), rel=1e-5)


def test_antenna_4_elements():
    ant = derive_antenna(4)
    # sin(3 pi / 4)^2 = 1/2
    assert ant.g_min == pytest.approx(2.0, rel=1e-12)
    assert ant.beamwidth == pytest.approx(math.sqrt(3) / 2)


@pytest.mark.parametrize("n", [0, 2, 3, 10, 63, 4.5, True])
def test_antenna_rejects(n):
    with pytest.raises(ConfigError) as exc:
        derive_antenna(n)
    assert exc.value.key == "elements"


@given(st.floats(-150, 150))
def test_db_round_trip(x):
    assert linear_to_db(db_to_linear(x)) == pytest.approx(x, abs=1e-9)
    assert watts_to_dbm(dbm_to_watts(x)) == pytest.approx(x, abs=1e-9)


def test_unit_anchors():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(43.0) == pytest.approx(19.9526, rel=1e-5)
    # -174 dBm/Hz over 1 GHz = -84 dBm
    assert watts_to_dbm(thermal_noise(1e9)) == pytest.approx(-84.0)
    # free-space loss at 1 m and 28 GHz is about 61.4 dB
    assert linear_to_db(free_space_intercept(28e9)) == pytest.approx(61.39, abs=0.01)


def test_table_one_defaults(ref_model):
    assert ref_model.num_tiers == 2
    macro, small = ref_model.tiers
    assert macro.density == pytest.approx(5 / (math.pi * 500**2))
    assert small.density == pytest.approx(10 / (math.pi * 500**2))
    assert (macro.blockage, small.blockage) == (0.006, 0.024)
    assert ref_model.channel.nakagami_los == 3 and ref_model.channel.nakagami_nlos == 2
    assert ref_model.sinr_threshold == 1.0


def test_default_config_builds_table_one(ref_model):
    assert build_model(default_config()) == ref_model


@pytest.mark.parametrize("kw, key", [
    ({"sinr_threshold": 0.0}, "sinr_threshold"),
    ({"noise_power": -1.0}, "noise_power"),
])
def test_validation_names_key(kw, key):
    with pytest.raises(ConfigError) as exc:
        table_one(**kw)
    assert exc.value.key == key


def test_validation_nlos_exponent():
    flat = merge_config({"channel.alpha_nlos": 2.0})
    with pytest.raises(ConfigError) as exc:
        build_model(flat)
    assert exc.value.key == "channel.alpha_nlos"


def test_validation_tier_value():
    with pytest.raises(ConfigError) as exc:
        build_model(merge_config({"tier2.density": -1.0}, replace_tiers=False))
    assert "density" in exc.value.key


def test_arrival_prob_range():
    with pytest.raises(ConfigError):
        build_model(merge_config({"traffic.arrival_prob": 1.5}))


def test_config_text_parsing():
    flat = parse_config_text("# comment\ntier1.density = 1e-5\n\nsinr_threshold_db = 3  # inline\n")
    assert flat == {"tier1.density": "1e-5", "sinr_threshold_db": "3"}
    with pytest.raises(ConfigError):
        parse_config_text("a = 1\na = 2")
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as exc:
        merge_config({"tier1.colour": 3})
    assert exc.value.key == "tier1.colour"


def test_tier_keys_replace_tier_list():
    flat = merge_config({"tier1.tx_power_dbm": 30, "tier1.density": 1e-5, "tier1.blockage": 0.01})
    model = build_model(flat)
    assert model.num_tiers == 1
    with pytest.raises(ConfigError) as exc:
        build_model(merge_config({"tier1.density": 1e-5}))
    assert exc.value.key.startswith("tier1.")


def test_patch_single_tier_key():
    model = build_model(merge_config({"tier2.blockage": 0.048}, replace_tiers=False))
    assert model.num_tiers == 2 and model.tiers[1].blockage == 0.048


def test_valid_keys_listed():
    keys = valid_keys(2)
    assert "tier2.blockage" in keys and "traffic.arrival_prob" in keys
    assert len(keys) == len(set(keys))


def test_reference_powers():
    macro, small = table_one().tiers
    assert macro.tx_power == pytest.approx(19.95, abs=0.01)
    assert small.tx_power == pytest.approx(0.1995, abs=1e-4)


def test_zero_density_names_density():
    from mmwave_meta.model import validate
    with pytest.raises(ConfigError) as exc:
        validate(table_one().with_tier(0, density=0.0))
    assert exc.value.key == "density"


def test_arrival_prob_names_key():
    from mmwave_meta.model import validate
    with pytest.raises(ConfigError) as exc:
        validate(table_one().with_traffic(arrival_prob=1.5))
    assert exc.value.key == "arrival_prob"


def test_antenna_five_elements():
    with pytest.raises(ConfigError):
        derive_antenna(5)
