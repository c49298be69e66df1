"""Scenario configuration: YAML loading, validation, seeding, sampling."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .dynamics import CollectionPolicy, PolicyKind
from .errors import ConfigError
from .privacy import AggregationMode

_MODE_NAMES = {m.value: m for m in AggregationMode}
_POLICY_NAMES = {p.value: p for p in PolicyKind}


@dataclass(frozen=True)
class ThresholdDist:
    """Truncated-normal sampling spec for provider privacy thresholds."""

    mean: float = 5.0
    stddev: float = 1.0
    low: float = 1.0
    high: float = 10.0

    def __post_init__(self) -> None:
        if not self.low < self.high:
            raise ConfigError(f"degenerate threshold interval [{self.low}, {self.high}]")
        if self.stddev <= 0:
            raise ConfigError("threshold stddev must be positive")
        if self.low <= 0:
            raise ConfigError("threshold interval must be positive")


def sample_thresholds(
    dist: ThresholdDist, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw n thresholds from Normal(mean, stddev) rejection-truncated to [low, high]."""
    out = np.empty(n)
    filled = 0
    for _ in range(1000):
        if filled >= n:
            break
        draws = rng.normal(dist.mean, dist.stddev, size=2 * (n - filled) + 16)
        accepted = draws[(draws >= dist.low) & (draws <= dist.high)]
        take = min(accepted.size, n - filled)
        out[filled : filled + take] = accepted[:take]
        filled += take
    if filled < n:
        raise ConfigError(
            f"threshold distribution rejects almost all mass on [{dist.low}, {dist.high}]"
        )
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    """One structured file drives every subcommand; all knobs live here."""

    master_seed: int = 20210917
    k: int = 16
    aggregation: AggregationMode = AggregationMode.ADDITIVE_INFORMATION
    k1: float = 1.0
    k2: float = 0.001
    budget: float = 10000.0
    thresholds: ThresholdDist = field(default_factory=ThresholdDist)
    federation_sizes: tuple[int, ...] = (25, 50, 75, 100)
    targets: tuple[float, ...] = (125.0, 250.0, 375.0, 500.0)
    replications: int = 100
    max_rounds: int = 10
    policy: PolicyKind = PolicyKind.CATALYZING
    # provider behavior
    data_points: int = 40
    points_per_round: int = 6
    participation_prob: float = 0.8
    initial_eps_low: float = 0.0
    initial_eps_high: float = 0.6
    # savings / penalty machinery
    tolerance_window: int = 3
    warmup_years: int = 3
    delta_thresholds: tuple[float, ...] = (1.0, 2.0, 3.0)
    freerider_sizes: tuple[int, ...] = (50, 100)
    freerider_years: int = 6
    freerider_rounds_per_year: int = 3
    freerider_points_per_round: int = 1
    freerider_initial_eps_high: float = 0.7
    # shapley evaluation
    shapley_samples: int = 100_000
    # shapley timing experiment
    timing_sizes: tuple[int, ...] = (15, 18, 21, 24, 27)
    timing_target_fraction: float = 0.15
    timing_prize: float = 100.0
    timing_repeats: int = 3

    def __post_init__(self) -> None:
        if self.master_seed < 0:
            raise ConfigError("master seed must be non-negative")
        if self.k < 2:
            raise ConfigError("alphabet size must be at least 2")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ConfigError("valuation parameters must be positive")
        if self.budget <= 0:
            raise ConfigError("budget must be positive")
        if self.replications < 1:
            raise ConfigError("need at least one replication")
        if self.max_rounds < 1:
            raise ConfigError("need at least one collection round")
        if self.data_points < 1:
            raise ConfigError("providers need at least one data point")
        if not self.federation_sizes or any(n < 1 for n in self.federation_sizes):
            raise ConfigError("federation sizes must be positive")
        if not self.targets or any(t <= 0 for t in self.targets):
            raise ConfigError("targets must be positive")
        if any(d <= 0 for d in self.delta_thresholds):
            raise ConfigError("free-rider thresholds must be positive")
        if self.tolerance_window < 1 or self.warmup_years < 0:
            raise ConfigError("tolerance window and warmup years must be sane")
        if self.freerider_years < 1 or self.freerider_rounds_per_year < 1:
            raise ConfigError("free-rider experiment needs at least one year and round")
        if self.freerider_points_per_round < 1:
            raise ConfigError("free-rider providers must report at least one point per round")
        if not 0.0 < self.freerider_initial_eps_high <= 1.0:
            raise ConfigError("free-rider initial epsilon fraction must lie in (0, 1]")
        if not 0.0 < self.timing_target_fraction < 1.0:
            raise ConfigError("timing target fraction must lie in (0, 1)")
        if self.shapley_samples < 1:
            raise ConfigError("need at least one permutation sample")

    def collection_policy(self, kind: PolicyKind) -> CollectionPolicy:
        return CollectionPolicy(
            kind=kind,
            initial_eps_low=self.initial_eps_low,
            initial_eps_high=self.initial_eps_high,
            participation_prob=self.participation_prob,
            points_per_round=self.points_per_round,
        )

    def freerider_policy(self, kind: PolicyKind) -> CollectionPolicy:
        """Low-volume reporting profile used by the free-rider experiment.

        One point per round keeps yearly savings on the scale of the
        configured tolerance thresholds.
        """
        return CollectionPolicy(
            kind=kind,
            initial_eps_low=self.initial_eps_low,
            initial_eps_high=self.freerider_initial_eps_high,
            participation_prob=self.participation_prob,
            points_per_round=self.freerider_points_per_round,
        )

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["aggregation"] = self.aggregation.value
        raw["policy"] = self.policy.value
        for key in ("federation_sizes", "targets", "delta_thresholds", "freerider_sizes", "timing_sizes"):
            raw[key] = list(raw[key])
        return raw


def config_from_dict(data: dict) -> ScenarioConfig:
    data = dict(data or {})
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    if "aggregation" in data:
        name = str(data["aggregation"])
        if name not in _MODE_NAMES:
            raise ConfigError(f"unknown aggregation mode {name!r}; expected one of {sorted(_MODE_NAMES)}")
        data["aggregation"] = _MODE_NAMES[name]
    if "policy" in data:
        name = str(data["policy"])
        if name not in _POLICY_NAMES:
            raise ConfigError(f"unknown policy {name!r}; expected one of {sorted(_POLICY_NAMES)}")
        data["policy"] = _POLICY_NAMES[name]
    if "thresholds" in data and not isinstance(data["thresholds"], ThresholdDist):
        try:
            data["thresholds"] = ThresholdDist(**data["thresholds"])
        except TypeError as exc:
            raise ConfigError(f"bad threshold distribution spec: {exc}") from exc
    for key in ("federation_sizes", "targets", "delta_thresholds", "freerider_sizes", "timing_sizes"):
        if key in data:
            data[key] = tuple(data[key])
    try:
        return ScenarioConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"bad configuration: {exc}") from exc


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as handle:
        data = yaml.safe_load(handle)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    return config_from_dict(data)


def derive_seed(master_seed: int, *parts) -> int:
    """Counter-based seed split: independent stream per labeled cell."""
    digest = hashlib.sha256()
    digest.update(str(master_seed).encode())
    for part in parts:
        digest.update(b"|")
        digest.update(str(part).encode())
    return int.from_bytes(digest.digest()[:8], "big")


def rng_for(master_seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *parts))


def override(config: ScenarioConfig, **changes) -> ScenarioConfig:
    """Apply CLI overrides; None values are ignored."""
    actual = {k: v for k, v in changes.items() if v is not None}
    return replace(config, **actual) if actual else config
