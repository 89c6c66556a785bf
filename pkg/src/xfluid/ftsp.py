"""Fast-time-scale analysis of the queue-difference process.

While both pools are full, the integer-valued difference process (for the
1-into-2 direction, ``D = Q1 - k - Q2`` at ratio one) moves on a much faster
clock than the fluid state.  Frozen at a fluid point it is a two-sided
birth-death chain: above zero every newly available agent takes class-1 work,
so the chain steps down at the total event rate against class-1 arrivals and
class-2 abandonment; at or below zero each pool serves its own class, which
changes which events push up.

For the 1-into-2 direction at fluid point ``x`` and time ``t``::

    lambda+ = lam1(t) + theta2*q2
    mu+     = lam2(t) + mu11*z11 + mu12*z12 + mu21*z21 + mu22*z22 + theta1*q1
    lambda- = lam1(t) + mu22*z22 + mu12*z12 + theta2*q2
    mu-     = lam2(t) + mu11*z11 + mu21*z21 + theta1*q1

With drifts ``delta+- = lambda+- - mu+-`` the chain is positive recurrent iff
``delta+ < 0 < delta-``, and the long-run fraction of time spent above zero is

    pi = delta- / (delta- - delta+)

(mean excursion lengths 1/(-delta+) above and 1/delta- below).  When both
pools are full the gap ``delta- - delta+`` equals twice the service rate of
the receiving pool, hence is strictly positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import ControlMode, FluidState, Scenario, total_service_rate


class UnsupportedRatioError(ValueError):
    """Birth-death reduction requires unit queue ratios (r12 = r21 = 1)."""


class InconsistentDriftError(ValueError):
    """delta+ >= 0 and delta- <= 0 together: impossible while any server works."""


class FtspClass(Enum):
    ERGODIC = "ergodic"
    DRIFT_POS = "drift_pos"  # pi = 1: difference escapes upward
    DRIFT_NEG = "drift_neg"  # pi = 0: difference escapes downward


def classify(delta_plus: float, delta_minus: float) -> FtspClass:
    """Classify the frozen difference chain by its one-sided drifts."""
    if delta_plus >= 0.0 and delta_minus <= 0.0:
        raise InconsistentDriftError(
            f"delta+ = {delta_plus:.6g} >= 0 and delta- = {delta_minus:.6g} <= 0: "
            "no stationary regime exists for these rates"
        )
    if delta_plus >= 0.0:
        return FtspClass.DRIFT_POS
    if delta_minus <= 0.0:
        return FtspClass.DRIFT_NEG
    return FtspClass.ERGODIC


def pi_boundary(delta_plus: float, delta_minus: float) -> float:
    """Long-run fraction of time above zero, by classification."""
    klass = classify(delta_plus, delta_minus)
    if klass is FtspClass.DRIFT_POS:
        return 1.0
    if klass is FtspClass.DRIFT_NEG:
        return 0.0
    return delta_minus / (delta_minus - delta_plus)


@dataclass(frozen=True)
class FtspProfile:
    """Frozen birth-death rates of the difference chain plus derived quantities."""

    lambda_plus: float
    mu_plus: float
    lambda_minus: float
    mu_minus: float

    @property
    def delta_plus(self) -> float:
        return self.lambda_plus - self.mu_plus

    @property
    def delta_minus(self) -> float:
        return self.lambda_minus - self.mu_minus

    @property
    def klass(self) -> FtspClass:
        return classify(self.delta_plus, self.delta_minus)

    @property
    def pi(self) -> float:
        return pi_boundary(self.delta_plus, self.delta_minus)


def _require_unit_ratio(s: Scenario) -> None:
    c = s.control
    if c.r12 != 1.0 or c.r21 != 1.0:
        raise UnsupportedRatioError(
            f"fluid Pi unsupported for ratio != 1 (r12={c.r12}, r21={c.r21}); "
            "the difference process is not a birth-death chain off the unit ratio"
        )


def ftsp_rates_12(x: FluidState, t: float, s: Scenario) -> FtspProfile:
    """Difference-chain rates for sharing class 1 into pool 2, frozen at ``x``."""
    _require_unit_ratio(s)
    r = s.rates
    lam1, lam2 = s.lambda1(t), s.lambda2(t)
    agg = total_service_rate(x, r)
    return FtspProfile(
        lambda_plus=lam1 + r.theta2 * x.q2,
        mu_plus=lam2 + agg + r.theta1 * x.q1,
        lambda_minus=lam1 + r.mu22 * x.z22 + r.mu12 * x.z12 + r.theta2 * x.q2,
        mu_minus=lam2 + r.mu11 * x.z11 + r.mu21 * x.z21 + r.theta1 * x.q1,
    )


def ftsp_rates_21(x: FluidState, t: float, s: Scenario) -> FtspProfile:
    """Mirror direction: sharing class 2 into pool 1 (classes relabeled)."""
    _require_unit_ratio(s)
    r = s.rates
    lam1, lam2 = s.lambda1(t), s.lambda2(t)
    agg = total_service_rate(x, r)
    return FtspProfile(
        lambda_plus=lam2 + r.theta1 * x.q1,
        mu_plus=lam1 + agg + r.theta2 * x.q2,
        lambda_minus=lam2 + r.mu11 * x.z11 + r.mu21 * x.z21 + r.theta1 * x.q1,
        mu_minus=lam1 + r.mu22 * x.z22 + r.mu12 * x.z12 + r.theta2 * x.q2,
    )


def _release_open(shared_other: float, tau_other: float, mode: ControlMode) -> bool:
    # Sharing toward a pool stays blocked while the other class's content
    # there sits above the release level (above zero in one-way mode).
    if mode is ControlMode.FQR_T_ONE_WAY:
        return shared_other <= 0.0
    return shared_other < tau_other


def big_pi(
    x: FluidState,
    t: float,
    s: Scenario,
    direction: str,
    d_value: float,
    on_boundary: bool,
) -> float:
    """Instantaneous sharing indicator for the fluid right-hand side.

    ``direction`` is ``"12"`` (class 1 into pool 2, gated by ``z21`` against
    ``tau21``) or ``"21"``.  Off the boundary the indicator is the sign of the
    difference process; on it, the stationary fraction of the frozen chain.
    """
    c = s.control
    if direction == "12":
        if not _release_open(x.z21, c.tau21, c.mode):
            return 0.0
    elif direction == "21":
        if not _release_open(x.z12, c.tau12, c.mode):
            return 0.0
    else:
        raise ValueError(f"direction must be '12' or '21', got {direction!r}")
    if not on_boundary:
        if d_value > 0.0:
            return 1.0
        if d_value < 0.0:
            return 0.0
    profile = ftsp_rates_12(x, t, s) if direction == "12" else ftsp_rates_21(x, t, s)
    return profile.pi


@dataclass(frozen=True)
class OracleEstimate:
    """Monte Carlo estimate of the above-zero occupation fraction."""

    fraction: float
    std_error: float
    horizon: float
    batches: int


def ftsp_oracle(
    rates: tuple[float, float, float, float],
    horizon: float,
    seed: int,
    batches: int = 20,
) -> OracleEstimate:
    """Simulate the two-sided birth-death chain directly and measure occupation.

    ``rates = (lambda_plus, mu_plus, lambda_minus, mu_minus)``.  The chain
    starts at 0; above zero it moves up at lambda+ and down at mu+, at or
    below zero up at lambda- and down at mu-.  Returns the fraction of time
    spent strictly above zero with a batch-means standard error.  Written as
    an independent check on the closed-form pi; shares no code with it.
    """
    lam_p, mu_p, lam_m, mu_m = rates
    if min(lam_p, mu_p, lam_m, mu_m) <= 0.0:
        raise ValueError("oracle rates must be strictly positive")
    rng = np.random.default_rng(seed)
    total_p = lam_p + mu_p
    total_m = lam_m + mu_m
    up_prob_p = lam_p / total_p
    up_prob_m = lam_m / total_m

    batch_len = horizon / batches
    batch_above = [0.0] * batches
    state = 0
    t = 0.0
    block = 1 << 16
    exp_block = np.empty(0)
    uni_block = np.empty(0)
    idx = block
    while t < horizon:
        if idx >= block:
            uni_block = rng.random(block)
            exp_block = -np.log(rng.random(block))
            idx = 0
        if state > 0:
            hold = exp_block[idx] / total_p
            up = uni_block[idx] < up_prob_p
        else:
            hold = exp_block[idx] / total_m
            up = uni_block[idx] < up_prob_m
        idx += 1
        t_next = t + hold
        if t_next > horizon:
            t_next = horizon
        if state > 0:
            # attribute the holding time to the batches it spans
            b0 = int(t / batch_len)
            b1 = int(t_next / batch_len)
            if b1 >= batches:
                b1 = batches - 1
            if b0 == b1:
                batch_above[b0] += t_next - t
            else:
                batch_above[b0] += (b0 + 1) * batch_len - t
                for b in range(b0 + 1, b1):
                    batch_above[b] += batch_len
                batch_above[b1] += t_next - b1 * batch_len
        t = t_next
        state += 1 if up else -1
    means = np.array(batch_above) / batch_len
    fraction = float(means.mean())
    std_error = float(means.std(ddof=1) / math.sqrt(batches))
    return OracleEstimate(fraction, std_error, horizon, batches)
