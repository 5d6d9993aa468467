"""Two-point wild-bootstrap weight distributions.

Solves for the unique (up to permutation) two-point distribution with mean
zero and prescribed second and third moments, including the finite-sample
moment correction that undoes the downward bias of empirical central moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidMoment, SampleTooSmall


@dataclass(frozen=True)
class TwoPointWeights:
    """Distribution taking w1 with probability p_star, else w2.

    Satisfies E[w] = 0, E[w^2] = c2, E[w^3] = c3 analytically.
    """

    p_star: float
    w1: float
    w2: float
    c2: float
    c3: float


def solve_two_point(c2: float, c3: float) -> TwoPointWeights:
    """Solve the three-moment system for a two-point distribution.

    The closed form produces a nonnegative third moment; for c3 < 0 the
    mirrored distribution (negated support, swapped probabilities) is the
    permuted solution.
    """
    if c2 <= 0.0:
        raise InvalidMoment(f"second moment must be positive, got {c2}")
    a3 = abs(c3)
    s = math.sqrt(4.0 * c2**3 + a3 * a3)
    # cancellation-free rearrangement of 1/2 - (|c3|/2) / s
    p = 2.0 * c2**3 / (s * (s + a3))
    w1 = (s + a3) / (2.0 * c2)
    w2 = -2.0 * c2 * c2 / (s + a3)
    if c3 < 0.0:
        # mirror the support; keeping p_star on the rare point preserves the
        # conditioning of the moment identities
        w1, w2 = -w1, -w2
    return TwoPointWeights(p_star=p, w1=w1, w2=w2, c2=c2, c3=c3)


def corrected_moments(n: int) -> tuple[float, float]:
    """Target moments that offset the finite-sample bias of an empirical
    distribution of n points: c2 = n/(n-1), c3 = n^2/((n-2)(n-1))."""
    if n < 3:
        raise SampleTooSmall(f"moment correction needs n >= 3, got {n}")
    return n / (n - 1.0), n * n / ((n - 2.0) * (n - 1.0))


def mammen_weights() -> TwoPointWeights:
    """The classical golden-ratio two-point distribution (c2 = c3 = 1)."""
    return solve_two_point(1.0, 1.0)


def weights_for_dimension(scheme: str, n: int) -> TwoPointWeights:
    """Weight distribution for resampling one dimension of size n.

    The corrected scheme matches the empirical moments of that dimension;
    below n = 3 the correction is undefined and the uncorrected distribution
    is used instead.
    """
    if scheme == "moment_corrected" and n >= 3:
        return solve_two_point(*corrected_moments(n))
    return mammen_weights()


def sample_weights(dist: TwoPointWeights, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw count i.i.d. weights; deterministic given the stream state."""
    return np.where(rng.random(count) < dist.p_star, dist.w1, dist.w2)
