"""Scenario description for a single-gateway LoRaWAN cell.

Everything the analytic model and the simulator consume lives in
:class:`ScenarioConfig`: traffic mix, per-SF device shares, duty-cycle
ratios, receive-window prioritization flags, capture constants and the
per-SF airtime table.  Configs are immutable after construction and safe
to share across threads.

Scenarios are read from and written to YAML documents whose keys match
the ``ScenarioConfig`` field names exactly; unknown keys are rejected so
typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

import yaml

#: The six LoRa spreading factors, ordered.
SPREADING_FACTORS: tuple[int, ...] = (7, 8, 9, 10, 11, 12)
N_SF = len(SPREADING_FACTORS)

#: Airtime of a 10-byte data packet at 125 kHz, per SF 7..12 [s].
DEFAULT_DATA_AIRTIME: tuple[float, ...] = (0.051, 0.102, 0.185, 0.329, 0.659, 1.318)
#: Airtime of a payload-less ACK at 125 kHz, per SF 7..12 [s].
DEFAULT_ACK_AIRTIME: tuple[float, ...] = (0.041, 0.072, 0.144, 0.247, 0.495, 0.991)

#: EXPLoRa SF shares as commonly tabulated.  They add up to 0.998 because of
#: rounding in the source table; :func:`preset` renormalizes them.
EXPLORA_RAW: tuple[float, ...] = (0.487, 0.243, 0.135, 0.076, 0.038, 0.019)

SCHEMA_VERSION = 1

#: Sum tolerance for SF distributions.
DISTRIBUTION_TOL = 1e-9


class ParseError(ValueError):
    """A scenario document could not be parsed at all."""


class ValidationError(ValueError):
    """A scenario value violates one of the documented invariants."""


def sf_index(sf: int) -> int:
    """Map a spreading factor in 7..12 to its 0-based vector index."""
    if sf not in SPREADING_FACTORS:
        raise ValidationError(f"spreading factor must be in {SPREADING_FACTORS}, got {sf}")
    return sf - SPREADING_FACTORS[0]


def _as_float_tuple(name: str, values) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name} must be a sequence of {N_SF} numbers") from exc
    if len(vals) != N_SF:
        raise ValidationError(f"{name} must have {N_SF} entries (SF 7..12), got {len(vals)}")
    return vals


@dataclass(frozen=True)
class AirtimeTable:
    """Per-SF airtimes [s] of data packets and of ACKs in the two receive windows.

    ``t_ack2`` is the ACK airtime seen by a device that uplinked with the
    row's SF.  The second receive window uses SF12 unless the network
    server reconfigures it, so the default column repeats the SF12 ACK
    airtime for every row.
    """

    t_data: tuple[float, ...] = DEFAULT_DATA_AIRTIME
    t_ack1: tuple[float, ...] = DEFAULT_ACK_AIRTIME
    t_ack2: tuple[float, ...] = (DEFAULT_ACK_AIRTIME[-1],) * N_SF

    def __post_init__(self):
        for name in ("t_data", "t_ack1", "t_ack2"):
            vals = _as_float_tuple(f"airtimes.{name}", getattr(self, name))
            object.__setattr__(self, name, vals)
            if any(not math.isfinite(v) or v <= 0.0 for v in vals):
                raise ValidationError(f"airtimes.{name} entries must be strictly positive")
        # Doubling the symbol time per SF step makes these strictly increasing.
        for name in ("t_data", "t_ack1"):
            vals = getattr(self, name)
            if any(a >= b for a, b in zip(vals, vals[1:])):
                raise ValidationError(f"airtimes.{name} must be strictly increasing in SF")

    def to_dict(self) -> dict:
        return {
            "t_data": list(self.t_data),
            "t_ack1": list(self.t_ack1),
            "t_ack2": list(self.t_ack2),
        }


@dataclass(frozen=True)
class SfDistribution:
    """Share of devices per spreading factor; entries are >= 0 and sum to 1."""

    p: tuple[float, ...]

    def __post_init__(self):
        vals = _as_float_tuple("SF distribution", self.p)
        object.__setattr__(self, "p", vals)
        if any(not math.isfinite(v) or v < 0.0 for v in vals):
            raise ValidationError("SF distribution entries must be finite and non-negative")
        total = sum(vals)
        if abs(total - 1.0) > DISTRIBUTION_TOL:
            raise ValidationError(
                f"SF distribution must sum to 1 within {DISTRIBUTION_TOL:g} (got {total!r}); "
                "pass renormalize=True to accept and rescale"
            )

    @classmethod
    def from_values(cls, values, renormalize: bool = False) -> "SfDistribution":
        vals = _as_float_tuple("SF distribution", values)
        if renormalize:
            if any(not math.isfinite(v) or v < 0.0 for v in vals):
                raise ValidationError("SF distribution entries must be finite and non-negative")
            total = sum(vals)
            if total <= 0.0:
                raise ValidationError("cannot renormalize an all-zero SF distribution")
            vals = tuple(v / total for v in vals)
        return cls(vals)

    @classmethod
    def equal(cls) -> "SfDistribution":
        return cls((1.0 / N_SF,) * N_SF)

    @classmethod
    def explora(cls) -> "SfDistribution":
        return cls.from_values(EXPLORA_RAW, renormalize=True)


_PRESETS = {
    "equal": SfDistribution.equal,
    "explora": SfDistribution.explora,
}


def preset(name: str) -> SfDistribution:
    """Return a named SF distribution: ``equal`` or ``explora``."""
    try:
        factory = _PRESETS[name.lower()]
    except (KeyError, AttributeError):
        raise ValidationError(
            f"unknown SF distribution preset {name!r}; known presets: {sorted(_PRESETS)}"
        ) from None
    return factory()


@dataclass(frozen=True)
class ScenarioConfig:
    """All tunable inputs of the cell model.

    Defaults reproduce the European channel plan: three shared UL/DL
    channels with a 1% duty cycle (``delta_sb1 = 99``), one dedicated DL
    channel at 10% (``delta_sb2 = 9``), eight gateway demodulators, and
    capture probabilities for a uniform disc deployment.
    """

    lambda_total: float = 1.0      # aggregate application packet rate [pck/s]
    alpha: float = 0.0             # fraction of traffic requiring an ACK
    p_unconfirmed: SfDistribution = field(default_factory=SfDistribution.equal)
    p_confirmed: SfDistribution = field(default_factory=SfDistribution.equal)
    h: int = 1                     # transmissions per unconfirmed packet
    m: int = 8                     # max attempts per confirmed packet
    delta_sb1: float = 99.0        # silent/airtime ratio in the shared sub-band
    delta_sb2: float = 9.0         # silent/airtime ratio in the DL-only sub-band
    tau1: int = 1                  # 1: gateway TX preempts reception in RX1
    tau2: int = 1                  # 1: gateway TX preempts reception in RX2
    c_channels: int = 3            # number of UL frequency channels
    mu_retx: float = 2.0           # mean retransmission timeout [s]
    w_gw: float = 0.1796           # uplink capture probability at the gateway
    w_ed: float = 0.5682           # downlink capture probability at the device
    airtimes: AirtimeTable = field(default_factory=AirtimeTable)
    n_demodulators: int = 8

    def __post_init__(self):
        self._set_float("lambda_total", minimum=0.0)
        self._set_float("alpha", minimum=0.0, maximum=1.0)
        self._set_int("h", minimum=1)
        self._set_int("m", minimum=1)
        self._set_float("delta_sb1", minimum=0.0)
        self._set_float("delta_sb2", minimum=0.0)
        self._set_int("tau1", minimum=0, maximum=1)
        self._set_int("tau2", minimum=0, maximum=1)
        self._set_int("c_channels", minimum=1)
        self._set_float("mu_retx", minimum=0.0)
        self._set_float("w_gw", minimum=0.0, maximum=1.0)
        self._set_float("w_ed", minimum=0.0, maximum=1.0)
        self._set_int("n_demodulators", minimum=1)
        for name in ("p_unconfirmed", "p_confirmed"):
            if not isinstance(getattr(self, name), SfDistribution):
                raise ValidationError(f"{name} must be an SfDistribution")
        if not isinstance(self.airtimes, AirtimeTable):
            raise ValidationError("airtimes must be an AirtimeTable")

    def _set_float(self, name: str, minimum: float | None = None, maximum: float | None = None):
        raw = getattr(self, name)
        try:
            value = float(raw)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{name} must be a number, got {raw!r}") from exc
        if not math.isfinite(value):
            raise ValidationError(f"{name} must be finite, got {value!r}")
        if minimum is not None and value < minimum:
            raise ValidationError(f"{name} must be >= {minimum}, got {value}")
        if maximum is not None and value > maximum:
            raise ValidationError(f"{name} must be <= {maximum}, got {value}")
        object.__setattr__(self, name, value)

    def _set_int(self, name: str, minimum: int, maximum: int | None = None):
        raw = getattr(self, name)
        if isinstance(raw, bool) or (isinstance(raw, float) and not raw.is_integer()):
            raise ValidationError(f"{name} must be an integer, got {raw!r}")
        try:
            value = int(raw)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{name} must be an integer, got {raw!r}") from exc
        if value < minimum:
            raise ValidationError(f"{name} must be >= {minimum}, got {value}")
        if maximum is not None and value > maximum:
            raise ValidationError(f"{name} must be <= {maximum}, got {value}")
        object.__setattr__(self, name, value)

    def to_dict(self) -> dict:
        """Plain-scalar mapping with exactly the field names, plus schema_version."""
        return {
            "schema_version": SCHEMA_VERSION,
            "lambda_total": self.lambda_total,
            "alpha": self.alpha,
            "p_unconfirmed": list(self.p_unconfirmed.p),
            "p_confirmed": list(self.p_confirmed.p),
            "h": self.h,
            "m": self.m,
            "delta_sb1": self.delta_sb1,
            "delta_sb2": self.delta_sb2,
            "tau1": self.tau1,
            "tau2": self.tau2,
            "c_channels": self.c_channels,
            "mu_retx": self.mu_retx,
            "w_gw": self.w_gw,
            "w_ed": self.w_ed,
            "airtimes": self.airtimes.to_dict(),
            "n_demodulators": self.n_demodulators,
        }


_CONFIG_KEYS = {f.name for f in fields(ScenarioConfig)} | {"schema_version"}
_AIRTIME_KEYS = {"t_data", "t_ack1", "t_ack2"}


def _parse_distribution(name: str, value, renormalize: bool) -> SfDistribution:
    if isinstance(value, str):
        return preset(value)
    if isinstance(value, SfDistribution):
        return value
    return SfDistribution.from_values(value, renormalize=renormalize)


def _parse_airtimes(value) -> AirtimeTable:
    if isinstance(value, AirtimeTable):
        return value
    if not isinstance(value, Mapping):
        raise ValidationError("airtimes must be a mapping with t_data/t_ack1/t_ack2 lists")
    unknown = set(value) - _AIRTIME_KEYS
    if unknown:
        raise ValidationError(f"unknown airtimes keys: {sorted(unknown)}")
    kwargs = {k: value[k] for k in _AIRTIME_KEYS if k in value}
    return AirtimeTable(**kwargs)


def load_scenario(source, renormalize: bool = False) -> ScenarioConfig:
    """Build a validated :class:`ScenarioConfig` from a YAML document.

    ``source`` may be YAML text, a :class:`~pathlib.Path` to a YAML file,
    or an already-parsed mapping.  Missing keys take the European
    defaults; unknown keys raise :class:`ValidationError`.  With
    ``renormalize`` set, SF distributions that do not sum to one are
    rescaled instead of rejected.
    """
    if isinstance(source, Mapping):
        data = dict(source)
    else:
        if isinstance(source, Path):
            text = source.read_text()
        else:
            text = source
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ParseError(f"malformed scenario document: {exc}") from exc
        if data is None:
            data = {}
        if not isinstance(data, Mapping):
            raise ParseError(
                f"scenario document must be a mapping, got {type(data).__name__}"
            )
        data = dict(data)

    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")

    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(
            f"unsupported schema_version {version!r} (this release reads version {SCHEMA_VERSION})"
        )

    kwargs = dict(data)
    for name in ("p_unconfirmed", "p_confirmed"):
        if name in kwargs:
            kwargs[name] = _parse_distribution(name, kwargs[name], renormalize)
    if "airtimes" in kwargs:
        kwargs["airtimes"] = _parse_airtimes(kwargs["airtimes"])
    return ScenarioConfig(**kwargs)


def scenario_to_yaml(cfg: ScenarioConfig) -> str:
    """Serialize a config to YAML; ``load_scenario`` of the result round-trips."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
