"""
Coincidence counting on detector time tags and photon-pair source metrics.

Tags are integer ticks of a common time base. Coincidences are found by
greedy earliest-first one-to-one matching: anchor tags of the first channel of
a combination are visited in time order, and each takes the earliest
still-unmatched partner(s) whose pairwise time differences all lie within the
window. No tag is counted twice for the same combination, so every
coincidence rate stays below its singles rates.

Errors are Poisson (√N/duration) and are propagated to first order with the
counts treated as independent. A rate with zero counts carries a one-sided
68 % upper bound instead of a zero error bar.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ArgumentError, DataError, UndefinedMetricError
from .jsa import PumpSpec

logger = logging.getLogger(__name__)

# counts at which P(0 | mean) = 0.32
ZERO_COUNT_UPPER_BOUND = -math.log(0.32)
DEFAULT_TICK_RESOLUTION = 1e-12

Channels = Tuple[int, ...]


@dataclass(frozen=True)
class TagStream:
    """Sorted click times of one detector channel"""

    channel: int
    ticks: NDArray[np.int64]
    tick_resolution: float
    duration: float

    def __post_init__(self) -> None:
        ticks = np.array(self.ticks, dtype=np.int64).ravel()
        if not (math.isfinite(self.tick_resolution) and self.tick_resolution > 0):
            raise ArgumentError(f"Tick resolution must be positive, got {self.tick_resolution}")
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ArgumentError(f"Acquisition duration must be positive, got {self.duration}")
        if ticks.size:
            unsorted = np.flatnonzero(np.diff(ticks) < 0)
            if unsorted.size:
                index = int(unsorted[0]) + 1
                raise DataError(
                    f"Channel {self.channel}: tags are not sorted at index {index} "
                    f"(tick {ticks[index]} after {ticks[index - 1]})",
                    index=index,
                )
            if ticks[0] < 0 or ticks[-1] * self.tick_resolution > self.duration * (1 + 1e-12):
                bad = 0 if ticks[0] < 0 else ticks.size - 1
                raise DataError(
                    f"Channel {self.channel}: tag {ticks[bad]} lies outside the acquisition "
                    f"[0, {self.duration:g}] s",
                    index=bad,
                )
        ticks.setflags(write=False)
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "channel", int(self.channel))

    def __len__(self) -> int:
        return len(self.ticks)

    def shifted(self, offset: int) -> "TagStream":
        return TagStream(self.channel, self.ticks + offset, self.tick_resolution, self.duration)


@dataclass(frozen=True)
class Estimate:
    """Value with standard error; ``one_sided`` marks an upper-bound error"""

    value: float
    error: float
    one_sided: bool = False

    def to_dict(self) -> Dict[str, Union[float, bool]]:
        return {"value": self.value, "error": self.error, "one_sided": self.one_sided}


@dataclass(frozen=True)
class Rate:
    counts: int
    duration: float

    @property
    def value(self) -> float:
        return self.counts / self.duration

    @property
    def one_sided(self) -> bool:
        return self.counts == 0

    @property
    def error(self) -> float:
        if self.counts == 0:
            return ZERO_COUNT_UPPER_BOUND / self.duration
        return math.sqrt(self.counts) / self.duration

    def estimate(self) -> Estimate:
        return Estimate(self.value, self.error, self.one_sided)


@dataclass(frozen=True)
class ChannelRoles:
    """Which channel heralds (idler) and which are signal arms (two with a splitter)"""

    idler: int
    signals: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "signals", tuple(int(s) for s in self.signals))
        if not self.signals:
            raise ArgumentError("At least one signal channel is required")
        if len(self.signals) > 2:
            raise ArgumentError("At most two signal arms (one splitter) are supported")
        if self.idler in self.signals or len(set(self.signals)) != len(self.signals):
            raise ArgumentError(
                f"Channel roles overlap: idler {self.idler}, signals {self.signals}"
            )

    @classmethod
    def default(cls, channels: Iterable[int]) -> "ChannelRoles":
        ordered = sorted(channels)
        if len(ordered) < 2:
            raise ArgumentError("At least two channels are needed to assign roles")
        return cls(ordered[0], tuple(ordered[1:3]))

    @property
    def has_splitter(self) -> bool:
        return len(self.signals) == 2

    def combinations(self) -> List[Channels]:
        combos: List[Channels] = [(self.idler, s) for s in self.signals]
        if self.has_splitter:
            combos.append((self.idler, *self.signals))
        return combos


@dataclass(frozen=True)
class CoincidenceStats:
    """Singles and coincidence counts of one acquisition"""

    singles: Mapping[int, Rate]
    coincidences: Mapping[Channels, Rate]
    window: float
    duration: float
    roles: ChannelRoles
    tick_resolution: float = DEFAULT_TICK_RESOLUTION

    def __post_init__(self) -> None:
        for combo, rate in self.coincidences.items():
            missing = [c for c in combo if c not in self.singles]
            if missing:
                raise ArgumentError(f"Coincidence {combo} refers to unknown channels {missing}")
            limit = min(self.singles[c].counts for c in combo)
            if rate.counts > limit:
                raise DataError(
                    f"Coincidence counts {rate.counts} for {combo} exceed the singles ({limit})"
                )

    @classmethod
    def from_counts(
        cls,
        singles: Mapping[int, int],
        coincidences: Mapping[Channels, int],
        duration: float,
        window: float = 3.125e-9,
        roles: Optional[ChannelRoles] = None,
    ) -> "CoincidenceStats":
        if not duration > 0:
            raise ArgumentError("Duration must be positive")
        return cls(
            singles={int(c): Rate(int(n), duration) for c, n in singles.items()},
            coincidences={tuple(k): Rate(int(n), duration) for k, n in coincidences.items()},
            window=window,
            duration=duration,
            roles=roles or ChannelRoles.default(singles.keys()),
        )

    def coincidence(self, channels: Sequence[int]) -> Rate:
        key = tuple(channels)
        if key in self.coincidences:
            return self.coincidences[key]
        for combo, rate in self.coincidences.items():
            if sorted(combo) == sorted(key):
                return rate
        raise UndefinedMetricError(f"Coincidences {key} were not counted")

    @property
    def c_i(self) -> Rate:
        return self.singles[self.roles.idler]

    @property
    def c_s(self) -> Rate:
        return Rate(sum(self.singles[s].counts for s in self.roles.signals), self.duration)

    @property
    def c_si(self) -> Rate:
        total = sum(self.coincidence((self.roles.idler, s)).counts for s in self.roles.signals)
        return Rate(total, self.duration)

    def _splitter_arm(self, arm: int) -> Rate:
        if not self.roles.has_splitter:
            raise UndefinedMetricError("Heralded g2 needs two signal arms behind a splitter")
        return self.coincidence((self.roles.idler, self.roles.signals[arm]))

    @property
    def c_s1i(self) -> Rate:
        return self._splitter_arm(0)

    @property
    def c_s2i(self) -> Rate:
        return self._splitter_arm(1)

    @property
    def c_s1s2i(self) -> Rate:
        if not self.roles.has_splitter:
            raise UndefinedMetricError("Heralded g2 needs two signal arms behind a splitter")
        return self.coincidence((self.roles.idler, *self.roles.signals))

    def to_dict(self) -> Dict[str, object]:
        return {
            "duration_s": self.duration,
            "window_s": self.window,
            "idler_channel": self.roles.idler,
            "signal_channels": list(self.roles.signals),
            "singles": {str(c): r.counts for c, r in sorted(self.singles.items())},
            "coincidences": {
                "-".join(str(c) for c in combo): r.counts
                for combo, r in sorted(self.coincidences.items())
            },
        }


def _window_candidates(
    ticks: NDArray[np.int64], used: NDArray[np.bool_], lo: int, hi: int
) -> NDArray[np.intp]:
    left = int(np.searchsorted(ticks, lo, side="left"))
    right = int(np.searchsorted(ticks, hi, side="right"))
    candidates = np.arange(left, right)
    return candidates[~used[candidates]]


def _first_partners(
    anchor: int,
    channels: Sequence[NDArray[np.int64]],
    used: Sequence[NDArray[np.bool_]],
    window: int,
    chosen: Tuple[int, ...] = (),
) -> Optional[Tuple[int, ...]]:
    """Lexicographically earliest unmatched partner indices for one anchor tick"""
    depth = len(chosen)
    if depth == len(channels):
        return chosen
    ticks = channels[depth]
    times = [anchor] + [int(channels[d][k]) for d, k in enumerate(chosen)]
    lo, hi = max(times) - window, min(times) + window
    if lo > hi:
        return None
    for k in _window_candidates(ticks, used[depth], lo, hi):
        found = _first_partners(anchor, channels, used, window, chosen + (int(k),))
        if found is not None:
            return found
    return None


def match_coincidences(tag_arrays: Sequence[ArrayLike], window_ticks: int) -> int:
    """Number of k-fold coincidences under greedy earliest-first one-to-one matching.

    The first array provides the anchors; all pairwise differences within a
    matched tuple are at most ``window_ticks``.
    """
    arrays = [np.asarray(t, dtype=np.int64) for t in tag_arrays]
    if len(arrays) < 2:
        raise ArgumentError("A coincidence needs at least two channels")
    anchors, partners = arrays[0], arrays[1:]
    used = [np.zeros(len(t), dtype=bool) for t in partners]
    count = 0
    for anchor in anchors:
        found = _first_partners(int(anchor), partners, used, window_ticks)
        if found is None:
            continue
        for flags, k in zip(used, found):
            flags[k] = True
        count += 1
    return count


def count_coincidences(
    streams: Sequence[TagStream],
    window: float,
    combinations: Optional[Sequence[Sequence[int]]] = None,
    roles: Optional[ChannelRoles] = None,
) -> CoincidenceStats:
    """Singles and windowed coincidence rates.

    Without explicit ``combinations`` every idler-signal pair (and the
    idler-signal-signal threefold when there is a splitter) is counted.
    """
    if len(streams) < 2:
        raise ArgumentError(f"Coincidence counting needs at least 2 streams, got {len(streams)}")
    ids = [s.channel for s in streams]
    if len(set(ids)) != len(ids):
        raise ArgumentError(f"Overlapping channel ids: {ids}")
    resolutions = {s.tick_resolution for s in streams}
    if len(resolutions) != 1:
        raise ArgumentError("All streams must share one tick resolution")
    resolution = resolutions.pop()
    if not (math.isfinite(window) and window > 0):
        raise ArgumentError(f"Coincidence window must be positive, got {window}")
    window_ticks = int(math.floor(window / resolution + 1e-9))
    if window_ticks < 1:
        raise ArgumentError(
            f"Coincidence window {window:g} s is shorter than one tick ({resolution:g} s)"
        )

    by_channel = {s.channel: s for s in streams}
    duration = max(s.duration for s in streams)
    roles = roles or ChannelRoles.default(ids)
    for channel in (roles.idler, *roles.signals):
        if channel not in by_channel:
            raise ArgumentError(f"Channel {channel} has no tag stream")
    combos = [tuple(int(c) for c in combo) for combo in (combinations or roles.combinations())]

    coincidences: Dict[Channels, Rate] = {}
    for combo in combos:
        if len(combo) < 2 or len(set(combo)) != len(combo):
            raise ArgumentError(f"Invalid channel combination {combo}")
        unknown = [c for c in combo if c not in by_channel]
        if unknown:
            raise ArgumentError(f"Combination {combo} refers to unknown channels {unknown}")
        n = match_coincidences([by_channel[c].ticks for c in combo], window_ticks)
        coincidences[combo] = Rate(n, duration)
        logger.debug(f"{combo}: {n} coincidences in {window_ticks} ticks")

    singles = {c: Rate(len(s), duration) for c, s in by_channel.items()}
    logger.info(
        f"Counted {len(combos)} combinations over {duration:g} s, "
        f"window {window * 1e9:.3f} ns"
    )
    return CoincidenceStats(singles, coincidences, window, duration, roles, resolution)


def _power_law(factors: Sequence[Tuple[Rate, float]], scale: float = 1.0) -> Estimate:
    """scale · Π rate^power with first-order propagated error.

    A zero-count numerator gives value 0 and a one-sided error from its bound.
    """
    for rate, power in factors:
        if power < 0 and rate.counts == 0:
            raise UndefinedMetricError("Metric undefined: a denominator rate is zero")
    value = scale * math.prod(rate.value**power for rate, power in factors)
    zero = [(rate, power) for rate, power in factors if rate.counts == 0]
    if zero:
        bound = scale * math.prod(
            (rate.error if rate.counts == 0 else rate.value) ** power for rate, power in factors
        )
        return Estimate(0.0, bound, one_sided=True)
    relative = math.sqrt(sum((power * rate.error / rate.value) ** 2 for rate, power in factors))
    return Estimate(value, abs(value) * relative)


def brightness(stats: CoincidenceStats, pump: PumpSpec) -> Estimate:
    """Detected pairs per second and milliwatt of transmitted pump power"""
    power_mw = pump.transmitted_power * 1e3
    if not power_mw > 0:
        raise ArgumentError("Brightness needs a positive transmitted pump power")
    return _power_law([(stats.c_si, 1.0)], scale=1.0 / power_mw)


def klyshko_efficiency(stats: CoincidenceStats) -> Estimate:
    """C_si / √(C_s·C_i)"""
    _require_singles(stats)
    return _power_law([(stats.c_si, 1.0), (stats.c_s, -0.5), (stats.c_i, -0.5)])


def car(stats: CoincidenceStats, pump: PumpSpec) -> Estimate:
    """Coincidences-to-accidentals ratio C_si·R_rep / (C_s·C_i)"""
    if not pump.repetition_rate > 0:
        raise ArgumentError("CAR needs a positive repetition rate")
    _require_singles(stats)
    return _power_law(
        [(stats.c_si, 1.0), (stats.c_s, -1.0), (stats.c_i, -1.0)], scale=pump.repetition_rate
    )


def heralded_g2(stats: CoincidenceStats) -> Estimate:
    """(C_s1s2i·C_i) / (C_s1i·C_s2i)"""
    s1i, s2i = stats.c_s1i, stats.c_s2i
    if s1i.counts == 0 or s2i.counts == 0:
        raise UndefinedMetricError(
            "Heralded g2 undefined: a splitter arm has no heralded coincidences"
        )
    return _power_law([(stats.c_s1s2i, 1.0), (stats.c_i, 1.0), (s1i, -1.0), (s2i, -1.0)])


def _require_singles(stats: CoincidenceStats) -> None:
    if stats.c_s.counts == 0 or stats.c_i.counts == 0:
        raise UndefinedMetricError("Metric undefined: signal or idler singles rate is zero")


METRICS = ("brightness", "klyshko", "car", "g2")


def metrics_report(
    stats: CoincidenceStats, pump: PumpSpec, metrics: Sequence[str] = METRICS
) -> Dict[str, object]:
    """Requested metrics with errors plus the underlying rates.

    A metric that cannot be evaluated for these counts is reported with the
    reason instead of a value.
    """
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise ArgumentError(f"Unknown metrics {unknown} (known: {', '.join(METRICS)})")
    evaluators = {
        "brightness": lambda: brightness(stats, pump),
        "klyshko": lambda: klyshko_efficiency(stats),
        "car": lambda: car(stats, pump),
        "g2": lambda: heralded_g2(stats),
    }
    results: Dict[str, object] = {}
    for name in metrics:
        try:
            results[name] = evaluators[name]().to_dict()
        except (UndefinedMetricError, ArgumentError) as e:
            logger.warning(f"{name}: {e}")
            results[name] = {"undefined": str(e)}

    rates = {"C_s": stats.c_s, "C_i": stats.c_i, "C_si": stats.c_si}
    if stats.roles.has_splitter:
        rates.update({"C_s1i": stats.c_s1i, "C_s2i": stats.c_s2i, "C_s1s2i": stats.c_s1s2i})
    return {
        "metrics": results,
        "rates_per_s": {name: rate.estimate().to_dict() for name, rate in rates.items()},
        "counts": stats.to_dict(),
    }


class PairStatistics(str, Enum):
    POISSON = "poisson"
    THERMAL = "thermal"
    SINGLE = "single"


@dataclass(frozen=True)
class SourceSettings:
    """Parameters of a simulated pulsed pair source.

    ``efficiencies`` and ``dark_rates`` are (idler, signal); with a splitter
    the signal photons are sent to arm 1 with probability ``splitter`` and to
    arm 2 otherwise, and ``dark_rates`` may list all three channels.
    """

    mean_pairs_per_pulse: float
    efficiencies: Tuple[float, float]
    repetition_rate: float
    duration: float
    dark_rates: Tuple[float, ...] = (0.0, 0.0)
    splitter: Optional[float] = None
    statistics: PairStatistics = PairStatistics.POISSON
    tick_resolution: float = DEFAULT_TICK_RESOLUTION
    seed: Optional[int] = None
    channels: Tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "statistics", PairStatistics(self.statistics))
        object.__setattr__(self, "efficiencies", tuple(float(e) for e in self.efficiencies))
        object.__setattr__(self, "dark_rates", tuple(float(d) for d in self.dark_rates))
        n_channels = 3 if self.splitter is not None else 2
        if not self.channels:
            object.__setattr__(self, "channels", tuple(range(n_channels)))
        if len(self.channels) != n_channels or len(set(self.channels)) != n_channels:
            raise ArgumentError(f"Expected {n_channels} distinct channel ids, got {self.channels}")
        if len(self.efficiencies) != 2:
            raise ArgumentError("efficiencies must be (idler, signal)")
        if any(not (0.0 <= e <= 1.0) for e in self.efficiencies):
            raise ArgumentError(f"Efficiencies must lie in [0, 1], got {self.efficiencies}")
        if len(self.dark_rates) == 2 and n_channels == 3:
            object.__setattr__(
                self, "dark_rates", (self.dark_rates[0], self.dark_rates[1], self.dark_rates[1])
            )
        if len(self.dark_rates) != n_channels:
            raise ArgumentError(f"Expected {n_channels} dark rates, got {len(self.dark_rates)}")
        if any(not (math.isfinite(d) and d >= 0) for d in self.dark_rates):
            raise ArgumentError("Dark rates must be finite and >= 0")
        if self.splitter is not None and not (0.0 <= self.splitter <= 1.0):
            raise ArgumentError(f"Splitter ratio must lie in [0, 1], got {self.splitter}")
        mu = self.mean_pairs_per_pulse
        if not (math.isfinite(mu) and mu >= 0):
            raise ArgumentError(f"Mean pair number must be finite and >= 0, got {mu}")
        if self.statistics is PairStatistics.SINGLE and mu > 1:
            raise ArgumentError("Single-pair statistics need a pair probability <= 1")
        for name in ("repetition_rate", "duration", "tick_resolution"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ArgumentError(f"{name} must be positive, got {value}")

    @property
    def period_ticks(self) -> int:
        ticks = int(round(1.0 / (self.repetition_rate * self.tick_resolution)))
        if ticks < 1:
            raise ArgumentError("Pulse period is shorter than one tick")
        return ticks

    @property
    def pulses(self) -> int:
        return int(math.floor(self.duration * self.repetition_rate + 1e-9))


def _pair_numbers(
    rng: np.random.Generator, statistics: PairStatistics, mu: float, pulses: int
) -> NDArray[np.int64]:
    if statistics is PairStatistics.POISSON:
        return rng.poisson(mu, pulses)
    if statistics is PairStatistics.THERMAL:
        # geometric on {0, 1, ...} with mean mu
        return rng.geometric(1.0 / (1.0 + mu), pulses) - 1
    return (rng.random(pulses) < mu).astype(np.int64)


def simulate_tag_source(settings: SourceSettings) -> List[TagStream]:
    """Seeded time tags of a pulsed pair source with lossy click detectors.

    Pulse k emits n_k pairs; each photon is detected independently, a channel
    clicks at tick k·period if at least one photon reaches it, and dark counts
    are spread uniformly over the acquisition.
    """
    rng = np.random.default_rng(settings.seed)
    pulses = settings.pulses
    eta_i, eta_s = settings.efficiencies
    pairs = _pair_numbers(rng, settings.statistics, settings.mean_pairs_per_pulse, pulses)

    idler = rng.binomial(pairs, eta_i)
    signal = rng.binomial(pairs, eta_s)
    if settings.splitter is None:
        detected = [idler, signal]
    else:
        arm1 = rng.binomial(signal, settings.splitter)
        detected = [idler, arm1, signal - arm1]

    pulse_ticks = np.arange(pulses, dtype=np.int64) * settings.period_ticks
    last_tick = int(math.floor(settings.duration / settings.tick_resolution))
    streams = []
    for channel, photons, dark_rate in zip(settings.channels, detected, settings.dark_rates):
        clicks = pulse_ticks[photons > 0]
        n_dark = rng.poisson(dark_rate * settings.duration)
        dark = rng.integers(0, last_tick + 1, n_dark, dtype=np.int64)
        ticks = np.sort(np.concatenate([clicks, dark]), kind="stable")
        streams.append(TagStream(channel, ticks, settings.tick_resolution, settings.duration))

    logger.info(
        f"Simulated {pulses} pulses ({settings.statistics.value}, "
        f"mu={settings.mean_pairs_per_pulse:g}): "
        + ", ".join(f"ch{s.channel}={len(s)}" for s in streams)
    )
    return streams


def default_window(repetition_rate: float) -> float:
    """A quarter of the pulse period"""
    if not repetition_rate > 0:
        raise ArgumentError("Repetition rate must be positive")
    return 0.25 / repetition_rate

