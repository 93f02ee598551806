"""Configuration and domain types shared by the analytic and simulation paths.

Everything inside the package works in linear units (watts, meters, linear
gains).  dB only appears in the flat key/value config format and on the CLI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_PER_HZ = -174.0


class ConfigError(ValueError):
    """An invariant of the configuration is violated.

    ``key`` names the offending field (config key or dataclass field) and
    ``value`` carries the rejected value.
    """

    def __init__(self, key: str, value: Any, reason: str):
        self.key = key
        self.value = value
        self.reason = reason
        super().__init__(f"{key} = {value!r}: {reason}")


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def linear_to_db(x):
    return 10.0 * math.log10(x)


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(w):
    return 10.0 * math.log10(w) + 30.0


def free_space_intercept(carrier_freq: float) -> float:
    """Path loss at 1 m, (4*pi*f/c)^2, i.e. the inverse free-space gain."""
    return (4.0 * math.pi * carrier_freq / SPEED_OF_LIGHT) ** 2


def thermal_noise(bandwidth: float) -> float:
    """Thermal noise floor in watts, no noise figure."""
    return dbm_to_watts(THERMAL_NOISE_DBM_PER_HZ + 10.0 * math.log10(bandwidth))


@dataclass(frozen=True)
class TierParams:
    density: float  # BS per m^2
    tx_power: float  # W
    bias: float = 1.0  # linear
    blockage: float = 0.006  # 1/m


@dataclass(frozen=True)
class ChannelParams:
    alpha_los: float = 2.0
    alpha_nlos: float = 4.0
    kappa_los: float = field(default_factory=lambda: free_space_intercept(28e9))
    kappa_nlos: float = field(default_factory=lambda: free_space_intercept(28e9))
    nakagami_los: int = 3
    nakagami_nlos: int = 2

    def alpha(self, los: bool) -> float:
        return self.alpha_los if los else self.alpha_nlos

    def kappa(self, los: bool) -> float:
        return self.kappa_los if los else self.kappa_nlos

    def nakagami(self, los: bool) -> int:
        return self.nakagami_los if los else self.nakagami_nlos


@dataclass(frozen=True)
class AntennaPattern:
    elements: int
    g_max: float
    g_min: float
    beamwidth: float

    @property
    def main_lobe_prob(self) -> float:
        """Probability that a uniformly pointed interferer beam hits the user."""
        return self.beamwidth / (2.0 * math.pi)

    @property
    def mean_gain(self) -> float:
        p = self.main_lobe_prob
        return self.g_max * p + self.g_min * (1.0 - p)


def derive_antenna(elements: int) -> AntennaPattern:
    """Sector-model gains of a sqrt(N) x sqrt(N) uniform planar array."""
    if isinstance(elements, bool) or int(elements) != elements:
        raise ConfigError("elements", elements, "must be an integer")
    elements = int(elements)
    root = math.isqrt(elements) if elements > 0 else 0
    if elements < 4:
        raise ConfigError("elements", elements, "need at least 4 elements")
    if root * root != elements:
        raise ConfigError("elements", elements, "must be a perfect square")
    g_min = 1.0 / math.sin(3.0 * math.pi / (2.0 * root)) ** 2
    return AntennaPattern(
        elements=elements,
        g_max=float(elements),
        g_min=g_min,
        beamwidth=math.sqrt(3.0) / root,
    )


@dataclass(frozen=True)
class TrafficParams:
    arrival_prob: float = 0.3
    user_density: float = 50.0 / (500.0**2 * math.pi)


@dataclass(frozen=True)
class NetworkModel:
    tiers: tuple[TierParams, ...]
    channel: ChannelParams = field(default_factory=ChannelParams)
    antenna: AntennaPattern = field(default_factory=lambda: derive_antenna(64))
    traffic: TrafficParams = field(default_factory=TrafficParams)
    noise_power: float = field(default_factory=lambda: thermal_noise(1e9))
    sinr_threshold: float = 1.0
    bandwidth: float = 1e9
    carrier_freq: float = 28e9
    # off: interferer gain taken as 1, exactly as the Laplace transform is printed
    interferer_gain_averaging: bool = True

    @property
    def num_tiers(self) -> int:
        return len(self.tiers)

    def interferer_gains(self) -> tuple[tuple[float, float], ...]:
        """(gain, probability) pairs for an interfering beam."""
        if not self.interferer_gain_averaging:
            return ((1.0, 1.0),)
        p = self.antenna.main_lobe_prob
        return ((self.antenna.g_max, p), (self.antenna.g_min, 1.0 - p))

    def with_threshold(self, theta: float) -> "NetworkModel":
        return replace(self, sinr_threshold=float(theta))

    def with_traffic(self, **kw) -> "NetworkModel":
        return replace(self, traffic=replace(self.traffic, **kw))

    def with_tier(self, index: int, **kw) -> "NetworkModel":
        tiers = list(self.tiers)
        tiers[index] = replace(tiers[index], **kw)
        return replace(self, tiers=tuple(tiers))


def _positive(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ConfigError(name, value, "must be a finite positive number")


def validate(model: NetworkModel) -> NetworkModel:
    """Return ``model`` unchanged if every invariant holds, else raise ConfigError."""
    if not model.tiers:
        raise ConfigError("tiers", model.tiers, "at least one tier is required")
    for i, tier in enumerate(model.tiers, start=1):
        for name in ("density", "tx_power", "bias", "blockage"):
            _positive(name, getattr(tier, name))

    ch = model.channel
    if not (math.isfinite(ch.alpha_los) and ch.alpha_los >= 2.0):
        raise ConfigError("alpha_los", ch.alpha_los, "path-loss exponent must be >= 2")
    if not (math.isfinite(ch.alpha_nlos) and ch.alpha_nlos >= ch.alpha_los):
        raise ConfigError("alpha_nlos", ch.alpha_nlos, "must be >= alpha_los")
    if ch.alpha_nlos <= 2.0:
        # infinitely many NLOS interferers with alpha = 2 give unbounded interference
        raise ConfigError("alpha_nlos", ch.alpha_nlos, "must exceed 2 for finite interference")
    _positive("kappa_los", ch.kappa_los)
    _positive("kappa_nlos", ch.kappa_nlos)
    for name in ("nakagami_los", "nakagami_nlos"):
        m = getattr(ch, name)
        if isinstance(m, bool) or not isinstance(m, (int,)) or m < 1:
            raise ConfigError(name, m, "must be an integer >= 1")

    ant = model.antenna
    expected = derive_antenna(ant.elements)
    for name in ("g_max", "g_min", "beamwidth"):
        if not math.isclose(getattr(ant, name), getattr(expected, name), rel_tol=1e-12):
            raise ConfigError(name, getattr(ant, name), "derived from elements; set elements instead")

    tr = model.traffic
    if not (isinstance(tr.arrival_prob, (int, float)) and 0.0 <= tr.arrival_prob <= 1.0):
        raise ConfigError("arrival_prob", tr.arrival_prob, "must lie in [0, 1]")
    _positive("user_density", tr.user_density)

    if not (math.isfinite(model.noise_power) and model.noise_power >= 0.0):
        raise ConfigError("noise_power", model.noise_power, "must be >= 0")
    _positive("sinr_threshold", model.sinr_threshold)
    _positive("bandwidth", model.bandwidth)
    _positive("carrier_freq", model.carrier_freq)
    return model


def table_one(**overrides) -> NetworkModel:
    """Two-tier 28 GHz macro/small-cell reference configuration."""
    disc = 500.0**2 * math.pi
    model = NetworkModel(
        tiers=(
            TierParams(density=5.0 / disc, tx_power=dbm_to_watts(43.0), bias=1.0, blockage=0.006),
            TierParams(density=10.0 / disc, tx_power=dbm_to_watts(23.0), bias=1.0, blockage=0.024),
        ),
    )
    return validate(replace(model, **overrides))


# --------------------------------------------------------------------------
# Flat key/value config format
# --------------------------------------------------------------------------

TIER_KEYS = {
    "tx_power_dbm": "transmit power [dBm]",
    "density": "BS density [1/m^2]",
    "bias_db": "association bias [dB]",
    "blockage": "blockage parameter [1/m]",
}

GLOBAL_KEYS = {
    "channel.alpha_los": "LOS path-loss exponent",
    "channel.alpha_nlos": "NLOS path-loss exponent",
    "channel.kappa_los_db": "LOS path loss at 1 m [dB] (default: free space at carrier_freq)",
    "channel.kappa_nlos_db": "NLOS path loss at 1 m [dB] (default: free space at carrier_freq)",
    "channel.nakagami_los": "LOS Nakagami parameter (integer)",
    "channel.nakagami_nlos": "NLOS Nakagami parameter (integer)",
    "antenna.elements": "UPA element count (perfect square)",
    "antenna.interferer_gain_averaging": "on|off",
    "traffic.arrival_prob": "Bernoulli arrival probability per slot",
    "traffic.user_density": "user density [1/m^2]",
    "noise_power_dbm": "noise power [dBm] (default: -174 dBm/Hz + 10log10(W))",
    "sinr_threshold_db": "SINR threshold [dB]",
    "bandwidth": "bandwidth [Hz]",
    "carrier_freq": "carrier frequency [Hz]",
}

_BOOL_WORDS = {"on": True, "true": True, "yes": True, "1": True,
               "off": False, "false": False, "no": False, "0": False}


def _tier_key(key: str) -> tuple[int, str] | None:
    head, _, tail = key.partition(".")
    if head.startswith("tier") and head[4:].isdigit() and tail in TIER_KEYS:
        return int(head[4:]), tail
    return None


def valid_keys(num_tiers: int) -> list[str]:
    keys = [f"tier{i}.{k}" for i in range(1, num_tiers + 1) for k in TIER_KEYS]
    return keys + list(GLOBAL_KEYS)


def default_config() -> dict[str, Any]:
    """Flat config of the two-tier reference network."""
    disc = 500.0**2 * math.pi
    return {
        "tier1.tx_power_dbm": 43.0,
        "tier1.density": 5.0 / disc,
        "tier1.bias_db": 0.0,
        "tier1.blockage": 0.006,
        "tier2.tx_power_dbm": 23.0,
        "tier2.density": 10.0 / disc,
        "tier2.bias_db": 0.0,
        "tier2.blockage": 0.024,
        "channel.alpha_los": 2.0,
        "channel.alpha_nlos": 4.0,
        "channel.nakagami_los": 3,
        "channel.nakagami_nlos": 2,
        "antenna.elements": 64,
        "antenna.interferer_gain_averaging": True,
        "traffic.arrival_prob": 0.3,
        "traffic.user_density": 50.0 / disc,
        "sinr_threshold_db": 0.0,
        "bandwidth": 1e9,
        "carrier_freq": 28e9,
    }


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{source}:{lineno}", line, "expected 'key = value'")
        if key in raw:
            raise ConfigError(key, value, f"duplicate key ({source}:{lineno})")
        raw[key] = value
    return raw


def _coerce(key: str, value: Any) -> Any:
    if key == "antenna.interferer_gain_averaging":
        if isinstance(value, bool):
            return value
        word = str(value).strip().lower()
        if word not in _BOOL_WORDS:
            raise ConfigError(key, value, "expected on/off")
        return _BOOL_WORDS[word]
    if key in ("antenna.elements", "channel.nakagami_los", "channel.nakagami_nlos"):
        try:
            f = float(value)
        except (TypeError, ValueError):
            raise ConfigError(key, value, "expected an integer") from None
        if not f.is_integer():
            raise ConfigError(key, value, "expected an integer")
        return int(f)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, value, "expected a number") from None


def merge_config(overrides: Mapping[str, Any], base: Mapping[str, Any] | None = None,
                 replace_tiers: bool = True) -> dict[str, Any]:
    """Overlay ``overrides`` on ``base`` (default: reference network).

    With ``replace_tiers`` (the config-file behaviour), any tier key in
    ``overrides`` makes it define the whole tier list, so every tier needs
    tx_power_dbm, density and blockage.  Otherwise keys are patched one by one.
    """
    base = dict(default_config() if base is None else base)
    tiers_given = any(_tier_key(k) for k in overrides)
    if tiers_given and replace_tiers:
        base = {k: v for k, v in base.items() if not _tier_key(k)}
    for key, value in overrides.items():
        if _tier_key(key) is None and key not in GLOBAL_KEYS:
            raise ConfigError(key, value, "unknown key")
        base[key] = _coerce(key, value)
    return base


def build_model(flat: Mapping[str, Any]) -> NetworkModel:
    """Construct and validate a NetworkModel from a flat config mapping."""
    tier_fields: dict[int, dict[str, Any]] = {}
    for key, value in flat.items():
        tk = _tier_key(key)
        if tk is not None:
            tier_fields.setdefault(tk[0], {})[tk[1]] = _coerce(key, value)
        elif key not in GLOBAL_KEYS:
            raise ConfigError(key, value, "unknown key")
    if not tier_fields:
        raise ConfigError("tiers", None, "no tier keys given")
    indices = sorted(tier_fields)
    if indices != list(range(1, len(indices) + 1)):
        raise ConfigError("tiers", indices, "tier numbers must be contiguous from 1")

    tiers = []
    for i in indices:
        f = tier_fields[i]
        for req in ("tx_power_dbm", "density", "blockage"):
            if req not in f:
                raise ConfigError(f"tier{i}.{req}", None, "missing")
        tiers.append(TierParams(
            density=f["density"],
            tx_power=dbm_to_watts(f["tx_power_dbm"]),
            bias=db_to_linear(f.get("bias_db", 0.0)),
            blockage=f["blockage"],
        ))

    g = {k: _coerce(k, v) for k, v in flat.items() if k in GLOBAL_KEYS}
    defaults = default_config()
    get = lambda k: g.get(k, defaults[k])  # noqa: E731
    carrier = get("carrier_freq")
    bandwidth = get("bandwidth")
    kappa_fs = free_space_intercept(carrier) if carrier > 0 else float("nan")
    channel = ChannelParams(
        alpha_los=get("channel.alpha_los"),
        alpha_nlos=get("channel.alpha_nlos"),
        kappa_los=db_to_linear(g["channel.kappa_los_db"]) if "channel.kappa_los_db" in g else kappa_fs,
        kappa_nlos=db_to_linear(g["channel.kappa_nlos_db"]) if "channel.kappa_nlos_db" in g else kappa_fs,
        nakagami_los=get("channel.nakagami_los"),
        nakagami_nlos=get("channel.nakagami_nlos"),
    )
    noise = (dbm_to_watts(g["noise_power_dbm"]) if "noise_power_dbm" in g
             else thermal_noise(bandwidth) if bandwidth > 0 else float("nan"))
    model = NetworkModel(
        tiers=tuple(tiers),
        channel=channel,
        antenna=derive_antenna(get("antenna.elements")),
        traffic=TrafficParams(arrival_prob=get("traffic.arrival_prob"),
                              user_density=get("traffic.user_density")),
        noise_power=noise,
        sinr_threshold=db_to_linear(get("sinr_threshold_db")),
        bandwidth=bandwidth,
        carrier_freq=carrier,
        interferer_gain_averaging=get("antenna.interferer_gain_averaging"),
    )
    try:
        return validate(model)
    except ConfigError as exc:
        raise ConfigError(_config_key_for(exc.key, tier_fields), exc.value, exc.reason) from None


def _config_key_for(field_name: str, tier_fields: Mapping[int, Any]) -> str:
    """Best-effort mapping from a dataclass field name back to its config key."""
    for key in GLOBAL_KEYS:
        if key.split(".")[-1].removesuffix("_db").removesuffix("_dbm") == field_name:
            return key
    if field_name == "tx_power":
        return "tier*.tx_power_dbm"
    if field_name in ("density", "blockage", "bias"):
        return f"tier*.{field_name}"
    return field_name


def load_config(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    return merge_config(parse_config_text(path.read_text(), source=str(path)))


def format_config(flat: Mapping[str, Any]) -> str:
    """Render a flat config, one documented key per line."""
    lines = []
    for key in sorted(flat, key=_key_order):
        tk = _tier_key(key)
        doc = TIER_KEYS[tk[1]] if tk else GLOBAL_KEYS[key]
        value = flat[key]
        if isinstance(value, bool):
            text = "on" if value else "off"
        else:
            text = repr(value)
        lines.append(f"{key} = {text}  # {doc}")
    return "\n".join(lines) + "\n"


def _key_order(key: str):
    tk = _tier_key(key)
    if tk:
        return (0, tk[0], list(TIER_KEYS).index(tk[1]), "")
    return (1, 0, list(GLOBAL_KEYS).index(key), key)


def iter_tier_states(model: NetworkModel) -> Iterable[tuple[int, bool]]:
    """(tier index, is_los) pairs in a fixed order."""
    for k in range(model.num_tiers):
        yield k, True
        yield k, False
