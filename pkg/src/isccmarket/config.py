"""Process-model and market parameter blocks carried by a scenario file."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

from .errors import SchemaError, ScenarioValidationError

EXPECTED = "expected"
SAMPLED = "sampled"


@dataclass(frozen=True)
class ProcessParams:
    """Sensing, transfer and extraction constants.

    Defaults are modelling choices, every one of them can be overridden from
    the ``process`` block of a scenario file.
    """

    p_aws: float = 0.5
    p_pws: float = 0.2
    p_fa: float = 0.05
    d0: float = 5.0
    r0: float = 10.0
    c_per_unit: float = 1.0
    theta_tol: float = 15.0
    mode: str = EXPECTED
    # seconds per time slot; 0 freezes geometry for the whole round
    slot_seconds: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.p_aws <= 1.0:
            raise ScenarioValidationError(f"p_aws must lie in (0, 1], got {self.p_aws}")
        if not 0.0 < self.p_pws <= 1.0:
            raise ScenarioValidationError(f"p_pws must lie in (0, 1], got {self.p_pws}")
        if not self.p_pws < self.p_aws:
            raise ScenarioValidationError("passive sensing must be less reliable than active (p_pws < p_aws)")
        if not 0.0 <= self.p_fa < 1.0:
            raise ScenarioValidationError(f"p_fa must lie in [0, 1), got {self.p_fa}")
        if self.d0 < 0 or self.r0 <= 0 or self.c_per_unit < 0:
            raise ScenarioValidationError("d0, c_per_unit must be >= 0 and r0 > 0")
        if self.theta_tol < 0:
            raise ScenarioValidationError("theta_tol must be >= 0")
        if self.mode not in (EXPECTED, SAMPLED):
            raise ScenarioValidationError(f"mode must be '{EXPECTED}' or '{SAMPLED}', got {self.mode!r}")
        if self.slot_seconds < 0:
            raise ScenarioValidationError("slot_seconds must be >= 0")

    def detection_probability(self, mode: str) -> float:
        return self.p_aws if mode == "AWS" else self.p_pws


@dataclass(frozen=True)
class BuyerTerms:
    unit_price: float
    q_min: float


@dataclass(frozen=True)
class MarketConfig:
    """Prices, resource weights and the order quality ladder."""

    unit_price: float = 1.0
    q_min: float = 0.5
    # per-CAV overrides of (unit_price, q_min)
    buyers: Mapping[int, BuyerTerms] = field(default_factory=dict)
    w_space: float = 1.0
    w_freq: float = 1.0
    w_compute: float = 1.0
    ladder: tuple = (0.0, 0.5, 0.75)

    def __post_init__(self):
        if self.unit_price < 0:
            raise ScenarioValidationError("unit_price must be >= 0")
        if not 0.0 <= self.q_min <= 1.0:
            raise ScenarioValidationError("q_min must lie in [0, 1]")
        for cav, terms in self.buyers.items():
            if terms.unit_price < 0 or not 0.0 <= terms.q_min <= 1.0:
                raise ScenarioValidationError(f"invalid buyer terms for CAV {cav}")
        if min(self.w_space, self.w_freq, self.w_compute) < 0:
            raise ScenarioValidationError("resource weights must be >= 0")
        ladder = tuple(float(q) for q in self.ladder)
        if not ladder or ladder[0] != 0.0 or list(ladder) != sorted(set(ladder)):
            raise ScenarioValidationError("ladder must start at 0 and be strictly increasing")
        if ladder[-1] > 1.0:
            raise ScenarioValidationError("ladder levels must be <= 1")
        object.__setattr__(self, "ladder", ladder)

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.w_space, self.w_freq, self.w_compute)

    def terms(self, cav_id: int) -> BuyerTerms:
        return self.buyers.get(cav_id, BuyerTerms(self.unit_price, self.q_min))


def _check_keys(block: Mapping[str, Any], allowed, where: str):
    if not isinstance(block, Mapping):
        raise SchemaError(where, "must be an object")
    for key in block:
        if key not in allowed:
            raise SchemaError(f"{where}.{key}", "unknown field")


def process_from_dict(block: Mapping[str, Any] | None) -> ProcessParams:
    if block is None:
        return ProcessParams()
    names = {f.name for f in fields(ProcessParams)}
    _check_keys(block, names, "process")
    kwargs = {}
    for key, value in block.items():
        if key == "mode":
            if not isinstance(value, str):
                raise SchemaError("process.mode", "must be a string")
            kwargs[key] = value
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaError(f"process.{key}", "must be a number")
            kwargs[key] = float(value)
    return ProcessParams(**kwargs)


def process_to_dict(params: ProcessParams) -> dict:
    return asdict(params)


_MARKET_KEYS = {"unit_price", "q_min", "buyers", "weights", "ladder"}


def market_from_dict(block: Mapping[str, Any] | None) -> MarketConfig:
    if block is None:
        return MarketConfig()
    _check_keys(block, _MARKET_KEYS, "market")
    kwargs: dict[str, Any] = {}
    for key in ("unit_price", "q_min"):
        if key in block:
            value = block[key]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaError(f"market.{key}", "must be a number")
            kwargs[key] = float(value)
    if "weights" in block:
        w = block["weights"]
        if not isinstance(w, list) or len(w) != 3:
            raise SchemaError("market.weights", "must be a list [w_space, w_freq, w_compute]")
        kwargs["w_space"], kwargs["w_freq"], kwargs["w_compute"] = (float(x) for x in w)
    if "ladder" in block:
        if not isinstance(block["ladder"], list):
            raise SchemaError("market.ladder", "must be a list")
        kwargs["ladder"] = tuple(float(x) for x in block["ladder"])
    buyers = {}
    for cav, terms in (block.get("buyers") or {}).items():
        if not isinstance(terms, Mapping):
            raise SchemaError(f"market.buyers.{cav}", "must be an object")
        _check_keys(terms, {"unit_price", "q_min"}, f"market.buyers.{cav}")
        base_price = kwargs.get("unit_price", MarketConfig.unit_price)
        base_qmin = kwargs.get("q_min", MarketConfig.q_min)
        try:
            buyers[int(cav)] = BuyerTerms(float(terms.get("unit_price", base_price)),
                                          float(terms.get("q_min", base_qmin)))
        except ValueError as exc:
            raise SchemaError(f"market.buyers.{cav}", str(exc)) from None
    kwargs["buyers"] = buyers
    return MarketConfig(**kwargs)


def market_to_dict(market: MarketConfig) -> dict:
    return {
        "unit_price": market.unit_price,
        "q_min": market.q_min,
        "buyers": {str(k): {"unit_price": v.unit_price, "q_min": v.q_min}
                   for k, v in sorted(market.buyers.items())},
        "weights": list(market.weights),
        "ladder": list(market.ladder),
    }


def apply_overrides(process: ProcessParams, market: MarketConfig, overrides: Mapping[str, str]):
    """Apply ``key=value`` strings to either parameter block.

    Keys naming a ProcessParams field go to the process block; ``unit_price``,
    ``q_min``, ``w_space``, ``w_freq`` and ``w_compute`` go to the market block.
    """
    proc_names = {f.name for f in fields(ProcessParams)}
    market_names = {"unit_price", "q_min", "w_space", "w_freq", "w_compute"}
    proc_kw, market_kw = {}, {}
    for key, raw in overrides.items():
        if key in proc_names:
            proc_kw[key] = raw if key == "mode" else float(raw)
        elif key in market_names:
            market_kw[key] = float(raw)
        else:
            raise SchemaError(key, "unknown parameter override")
    return replace(process, **proc_kw), replace(market, **market_kw)
