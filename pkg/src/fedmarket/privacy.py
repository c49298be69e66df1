"""k-ary randomized response and privacy-parameter arithmetic.

Every quantity here is expressed through the privacy parameter epsilon
(nats of privacy loss). Three information measures are supported for
turning a set of report batches into a single federation-level number:

* ``KRR_COMPOSITION`` -- the privacy parameter of the kRR mechanism that
  the pooled reports jointly follow,
* ``ADDITIVE_INFORMATION`` -- the plain sum of per-batch information
  limits ``d * eps``,
* ``EXAMPLE_CONTRIBUTION`` -- the sum of ``d * e^eps / (k - 1 + e^eps)``
  retention masses.

Downstream code (deal sealing, threshold games, collection dynamics) is
parametric in the measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

# e^eps overflows float64 just above 709; 700 is treated as "no privacy".
MAX_EPSILON = 700.0


def validate_epsilon(eps: float) -> float:
    """Check that a privacy parameter lies in (0, MAX_EPSILON]."""
    if not math.isfinite(eps) or eps <= 0.0:
        raise DomainError(f"privacy parameter must be positive and finite, got {eps}")
    if eps > MAX_EPSILON:
        raise DomainError(f"privacy parameter {eps} exceeds saturation bound {MAX_EPSILON}")
    return float(eps)


@dataclass(frozen=True)
class AlphabetSpec:
    """Finite input alphabet of size k for the randomized-response mechanism."""

    k: int

    def __post_init__(self) -> None:
        if int(self.k) != self.k or self.k < 2:
            raise DomainError(f"alphabet size must be an integer >= 2, got {self.k}")


@dataclass(frozen=True)
class ReportBatch:
    """A count of data points reported under one privacy parameter."""

    d: int
    epsilon: float

    def __post_init__(self) -> None:
        if int(self.d) != self.d or self.d < 0:
            raise DomainError(f"batch size must be a non-negative integer, got {self.d}")
        if self.d > 0:
            validate_epsilon(self.epsilon)


class AggregationMode(Enum):
    KRR_COMPOSITION = "krr"
    ADDITIVE_INFORMATION = "additive"
    EXAMPLE_CONTRIBUTION = "example"


def keep_probability(eps: float, k: int) -> float:
    """Probability that kRR reports the true symbol: e^eps / (k - 1 + e^eps)."""
    e = math.exp(eps)
    return e / (k - 1 + e)


def krr_distribution(x: int, spec: AlphabetSpec, eps: float) -> np.ndarray:
    """Output distribution of the kRR mechanism for true symbol ``x``.

    Entry ``x`` carries mass e^eps / (k - 1 + e^eps); every other symbol
    carries 1 / (k - 1 + e^eps).
    """
    validate_epsilon(eps)
    k = spec.k
    if int(x) != x or not 0 <= x < k:
        raise DomainError(f"symbol {x} outside alphabet [0, {k})")
    denom = k - 1 + math.exp(eps)
    probs = np.full(k, 1.0 / denom)
    probs[int(x)] = math.exp(eps) / denom
    return probs


def krr_obfuscate(x: int, spec: AlphabetSpec, eps: float, rng: np.random.Generator) -> int:
    """Sample one obfuscated symbol; deterministic given the generator state.

    Keeps the true symbol with probability e^eps / (k - 1 + e^eps),
    otherwise reports one of the other k - 1 symbols uniformly, which is
    the distribution of ``krr_distribution``.
    """
    validate_epsilon(eps)
    k = spec.k
    if int(x) != x or not 0 <= x < k:
        raise DomainError(f"symbol {x} outside alphabet [0, {k})")
    if rng.random() < keep_probability(eps, k):
        return int(x)
    other = int(rng.integers(k - 1))
    return other if other < x else other + 1


def information_limit(d: int, eps: float) -> float:
    """Information limit of a provider: data points times privacy parameter."""
    if d < 0:
        raise DomainError(f"data count must be non-negative, got {d}")
    return float(d) * float(eps)


def combined_epsilon(batches: Sequence[ReportBatch], spec: AlphabetSpec) -> float:
    """Privacy parameter of the kRR mechanism jointly followed by pooled reports.

    Computes ln( sum(d_i) / sum(d_i / (k - 1 + e^{eps_i})) + 1 - k ). The
    result lies between the smallest and largest batch epsilon. Batches
    with d = 0 are ignored; at least one batch must carry data.
    """
    k = spec.k
    total = 0
    weighted = 0.0
    for batch in batches:
        if batch.d == 0:
            continue
        total += batch.d
        weighted += batch.d / (k - 1 + math.exp(batch.epsilon))
    if total == 0:
        raise DomainError("combined epsilon is undefined when no batch carries data")
    return math.log(total / weighted + 1 - k)


def example_contribution(batches: Iterable[ReportBatch], spec: AlphabetSpec) -> float:
    """Sum of d * e^eps / (k - 1 + e^eps) over batches (retention mass)."""
    return sum(batch.d * keep_probability(batch.epsilon, spec.k) for batch in batches if batch.d > 0)


def additive_information(batches: Iterable[ReportBatch]) -> float:
    """Sum of d * eps over batches."""
    return sum(information_limit(batch.d, batch.epsilon) for batch in batches if batch.d > 0)


def aggregate(batches: Sequence[ReportBatch], mode: AggregationMode, spec: AlphabetSpec) -> float:
    """Collapse report batches into one information number under ``mode``.

    The additive measures return 0.0 for an empty batch list; the kRR
    composition needs at least one batch with data.
    """
    if mode is AggregationMode.KRR_COMPOSITION:
        return combined_epsilon(batches, spec)
    if mode is AggregationMode.ADDITIVE_INFORMATION:
        return additive_information(batches)
    if mode is AggregationMode.EXAMPLE_CONTRIBUTION:
        return example_contribution(batches, spec)
    raise DomainError(f"unknown aggregation mode {mode!r}")
