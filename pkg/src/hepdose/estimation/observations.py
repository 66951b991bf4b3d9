"""Dosing/measurement records as the estimator sees them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import DEFAULT_DOMAINS, Domains
from ..errors import InvalidParameterError

# Records with almost no aPTT measurements cannot pin three initial
# conditions plus kinetics; below this count results are flagged.
LOW_INFORMATION_COUNT = 3

# Floor for the data-derived noise scale: a perfectly smooth record would
# otherwise degenerate the likelihood into a hard interpolation constraint.
MIN_NOISE_SCALE = 0.5


@dataclass(frozen=True)
class ObservationSeries:
    """Doses and sparse aPTT readings over hours 0..T.

    ``doses[t]`` is the amount infused during hour ``t`` (it lands in the
    hour ``t+1`` state), so ``len(doses)`` equals the horizon T.  ``times``
    are the observation hours, a strictly increasing subset of {1..T};
    ``values`` are the corresponding noisy aPTT readings.  ``noise_scale``
    is the Laplace scale of the measurement noise.
    """

    doses: np.ndarray
    times: np.ndarray
    values: np.ndarray
    noise_scale: float

    def __post_init__(self):
        object.__setattr__(self, "doses", np.asarray(self.doses, dtype=float))
        object.__setattr__(self, "times", np.asarray(self.times, dtype=int))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def validate(self, domains: Domains = DEFAULT_DOMAINS) -> "ObservationSeries":
        T = self.horizon
        if self.doses.ndim != 1:
            raise InvalidParameterError("doses must be a flat sequence")
        if self.doses.size and (self.doses.min() < 0 or self.doses.max() > domains.u_max):
            raise InvalidParameterError(f"doses must lie in [0, {domains.u_max}]")
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise InvalidParameterError("times and values must be flat and equal length")
        if self.times.size:
            if self.times.min() < 1 or self.times.max() > T:
                raise InvalidParameterError(f"observation hours must lie in 1..{T}")
            if np.any(np.diff(self.times) <= 0):
                raise InvalidParameterError("observation hours must be strictly increasing")
            if self.values.min() < 0:
                raise InvalidParameterError("aPTT readings must be nonnegative")
        if not (self.noise_scale > 0):
            raise InvalidParameterError("noise_scale must be positive")
        return self

    @property
    def horizon(self) -> int:
        return len(self.doses)

    @property
    def count(self) -> int:
        return len(self.times)

    @property
    def low_information(self) -> bool:
        return self.count < LOW_INFORMATION_COUNT

    def truncated(self, hours: int) -> "ObservationSeries":
        """The record as it looked ``hours`` hours in."""
        keep = self.times <= hours
        return ObservationSeries(doses=self.doses[:hours].copy(),
                                 times=self.times[keep].copy(),
                                 values=self.values[keep].copy(),
                                 noise_scale=self.noise_scale)


def default_noise_scale(values) -> float:
    """Data-derived Laplace scale: deviation of each reading from a short
    rolling median, converted via  median |X| = scale * ln 2  and floored.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return MIN_NOISE_SCALE
    half = 2
    centers = np.array([np.median(v[max(0, i - half):i + half + 1])
                        for i in range(v.size)])
    mad = float(np.median(np.abs(v - centers)))
    return max(mad / math.log(2.0), MIN_NOISE_SCALE)
