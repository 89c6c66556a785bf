"""Averaging-principle fluid dynamics and the forward-Euler solver.

While both pools are full the fluid obeys the six-equation system whose
sharing indicators ``Pi`` come from :mod:`xfluid.ftsp`: off the d-boundary the
indicator is 0 or 1; on it, the stationary above-zero fraction of the frozen
difference chain.  Pools with spare capacity follow single-pool Erlang
dynamics with queues pinned at zero, except that a queue sitting at its
activation threshold overflows its excess arrival rate into the other pool's
spare capacity.  A pool whose content exceeds a lowered staffing level admits
nobody until service completions burn the excess off.

The solver is deliberately plain forward Euler: the grid is aligned to every
rate-function breakpoint so jumps land exactly on grid points, and a sign
change of a difference process between successive iterates marks the state as
on-boundary for the next indicator evaluation (the state itself is never
projected).  The step bookkeeping keeps full pools exactly on their staffing
level and caps slack-pool inflow at capacity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import ftsp
from .model import (
    ControlMode,
    FluidState,
    RateFunction,
    Scenario,
    validate_scenario,
)

#: Absolute tolerance for "pool content equals staffing level".
EPS_FULL = 1e-9
#: Queues below this are treated as empty by the regime classifier.
EPS_Q = 1e-7
#: Slop for rate comparisons in the fullness-sustainment test.
RATE_TOL = 1e-9
#: All shipped scenarios use one designated mean service time as the time
#: unit, so the step-proportional bands carry a unit rate scale.
RATE_SCALE = 1.0
#: Half-width of the d-boundary band, in steps: |d| <= 10*h counts as on-boundary.
BOUNDARY_BAND_STEPS = 10.0
#: Negative coordinates beyond 10*h indicate a solver failure, not roundoff.
NEG_CLAMP_STEPS = 10.0

_SLACK, _FULL, _OVER = 0, 1, 2


class IntegrationError(RuntimeError):
    """Euler integration produced a non-finite or impossibly negative state."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t:.6f}")
        self.t = t


class PoolState(Enum):
    SLACK = "slack"
    FULL = "full"
    OVER = "overstaffed"


class RegimeTag(Enum):
    BOTH_FULL = "both_full"
    SLACK_1 = "slack_1"
    SLACK_2 = "slack_2"
    SLACK_BOTH = "slack_both"
    OVERSTAFFED_1 = "overstaffed_1"
    OVERSTAFFED_2 = "overstaffed_2"


_POOL_STATES = (PoolState.SLACK, PoolState.FULL, PoolState.OVER)

_TAG_BY_CODE = {
    (_FULL, _FULL): RegimeTag.BOTH_FULL,
    (_SLACK, _FULL): RegimeTag.SLACK_1,
    (_FULL, _SLACK): RegimeTag.SLACK_2,
    (_SLACK, _SLACK): RegimeTag.SLACK_BOTH,
}


@dataclass(frozen=True)
class Regime:
    """Classification of a fluid state against the staffing levels."""

    tag: RegimeTag
    pool1: PoolState
    pool2: PoolState


def _tag_for(st1: int, st2: int) -> RegimeTag:
    if st1 == _OVER:
        return RegimeTag.OVERSTAFFED_1
    if st2 == _OVER:
        return RegimeTag.OVERSTAFFED_2
    return _TAG_BY_CODE[(st1, st2)]


def _release_open(shared_other: float, tau_other: float, mode: ControlMode) -> bool:
    if mode is ControlMode.FQR_T_ONE_WAY:
        return shared_other <= 0.0
    return shared_other < tau_other


def _pool_states(
    xt: tuple, t: float, s: Scenario, eps_full: float, eps_b: float
) -> tuple[int, int, float, float]:
    """Per-pool SLACK/FULL/OVER codes plus the staffing levels at ``t``.

    A pool at its staffing level only counts as full while something sustains
    the fullness: its own queue, an arrival rate covering its completion rate,
    or an active claim by the other class.  Otherwise service completions
    outpace replenishment and the pool drains (slack).
    """
    q1, q2, z11, z12, z21, z22 = xt
    r, c = s.rates, s.control
    m1v, m2v = s.m1(t), s.m2(t)
    a1 = r.mu11 * z11 + r.mu21 * z21
    a2 = r.mu22 * z22 + r.mu12 * z12
    d12v = q1 - c.r12 * q2 - c.k12
    d21v = c.r21 * q2 - q1 - c.k21
    rel12 = _release_open(z21, c.tau21, c.mode)
    rel21 = _release_open(z12, c.tau12, c.mode)
    sum1, sum2 = z11 + z21, z12 + z22
    tol1 = eps_full * (m1v if m1v > 1.0 else 1.0)
    tol2 = eps_full * (m2v if m2v > 1.0 else 1.0)

    if sum1 > m1v + tol1:
        st1 = _OVER
    elif sum1 >= m1v - tol1 and (
        q1 > EPS_Q
        or s.lambda1(t) >= a1 - RATE_TOL
        or (q2 > EPS_Q and d21v >= -eps_b and rel21)
    ):
        st1 = _FULL
    else:
        st1 = _SLACK

    if sum2 > m2v + tol2:
        st2 = _OVER
    elif sum2 >= m2v - tol2 and (
        q2 > EPS_Q
        or s.lambda2(t) >= a2 - RATE_TOL
        or (q1 > EPS_Q and d12v >= -eps_b and rel12)
    ):
        st2 = _FULL
    else:
        st2 = _SLACK
    return st1, st2, m1v, m2v


def classify_regime(
    x: FluidState, t: float, s: Scenario, *, eps_full: float = EPS_FULL, eps_b: float = 0.0
) -> Regime:
    st1, st2, _, _ = _pool_states(x.as_tuple(), t, s, eps_full, eps_b)
    return Regime(_tag_for(st1, st2), _POOL_STATES[st1], _POOL_STATES[st2])


@dataclass(frozen=True)
class RhsEval:
    """One right-hand-side evaluation with the indicators actually used."""

    dx: tuple[float, float, float, float, float, float]
    pi12: float
    pi21: float
    regime: Regime
    d12: float
    d21: float


def _rhs_detail(
    xt: tuple,
    t: float,
    s: Scenario,
    flag12: bool,
    flag21: bool,
    eps_b: float,
    eps_full: float = EPS_FULL,
) -> RhsEval:
    q1, q2, z11, z12, z21, z22 = xt
    r, c = s.rates, s.control
    st1, st2, m1v, m2v = _pool_states(xt, t, s, eps_full, eps_b)
    lam1, lam2 = s.lambda1(t), s.lambda2(t)
    a1 = r.mu11 * z11 + r.mu21 * z21
    a2 = r.mu22 * z22 + r.mu12 * z12
    d12v = q1 - c.r12 * q2 - c.k12
    d21v = c.r21 * q2 - q1 - c.k21

    fx = FluidState(q1, q2, z11, z12, z21, z22)
    pi12 = 0.0
    if st2 == _FULL:
        pi12 = ftsp.big_pi(fx, t, s, "12", d12v, flag12 or abs(d12v) <= eps_b)
    pi21 = 0.0
    if st1 == _FULL:
        pi21 = ftsp.big_pi(fx, t, s, "21", d21v, flag21 or abs(d21v) <= eps_b)
    if pi12 > 0.0 and pi21 > 0.0:
        # can only happen off the unit ratio or with degenerate thresholds:
        # keep the direction whose difference process is larger
        if d12v >= d21v:
            pi21 = 0.0
        else:
            pi12 = 0.0

    # spare-capacity overflow: a queue held at its activation threshold spills
    # its excess arrival rate into the other pool
    of12 = 0.0
    if st2 == _SLACK and d12v >= -eps_b and _release_open(z21, c.tau21, c.mode):
        of12 = lam1 - a1 - r.theta1 * c.k12
        if of12 < 0.0:
            of12 = 0.0
    of21 = 0.0
    if st1 == _SLACK and d21v >= -eps_b and _release_open(z12, c.tau12, c.mode):
        of21 = lam2 - a2 - r.theta2 * c.k21
        if of21 < 0.0:
            of21 = 0.0

    avail1 = a1 if st1 == _FULL else 0.0
    avail2 = a2 if st2 == _FULL else 0.0
    avail = avail1 + avail2

    if st1 == _SLACK:
        dq1 = 0.0
    else:
        dq1 = lam1 - r.theta1 * q1 - pi12 * avail - (1.0 - pi12 - pi21) * avail1 - of12
    if st2 == _SLACK:
        dq2 = 0.0
    else:
        dq2 = lam2 - r.theta2 * q2 - pi21 * avail - (1.0 - pi12 - pi21) * avail2 - of21

    if st2 == _OVER:
        dz12 = -r.mu12 * z12
    elif st2 == _FULL:
        dz12 = pi12 * r.mu22 * z22 - (1.0 - pi12) * r.mu12 * z12
    else:
        dz12 = -r.mu12 * z12 + of12
    if st1 == _OVER:
        dz21 = -r.mu21 * z21
    elif st1 == _FULL:
        dz21 = pi21 * r.mu11 * z11 - (1.0 - pi21) * r.mu21 * z21
    else:
        dz21 = -r.mu21 * z21 + of21

    if st1 == _OVER:
        dz11 = -r.mu11 * z11
    elif st1 == _FULL:
        dz11 = s.m1.derivative(t) - dz21
    else:
        dz11 = lam1 - r.mu11 * z11
    if st2 == _OVER:
        dz22 = -r.mu22 * z22
    elif st2 == _FULL:
        dz22 = s.m2.derivative(t) - dz12
    else:
        dz22 = lam2 - r.mu22 * z22

    regime = Regime(_tag_for(st1, st2), _POOL_STATES[st1], _POOL_STATES[st2])
    return RhsEval((dq1, dq2, dz11, dz12, dz21, dz22), pi12, pi21, regime, d12v, d21v)


def rhs(
    x: FluidState,
    t: float,
    s: Scenario,
    boundary_flags: tuple[bool, bool] = (False, False),
    *,
    eps_b: float = 0.0,
) -> FluidState:
    """Time derivative of the fluid state under the sharing control."""
    detail = _rhs_detail(x.as_tuple(), t, s, boundary_flags[0], boundary_flags[1], eps_b)
    return FluidState.from_tuple(detail.dx)


def _left_limit(f: RateFunction, t_from: float, t_to: float) -> float:
    """Value of ``f`` at ``t_to`` using the piece active on ``[t_from, t_to)``."""
    return f.piece_at(t_from).value(t_to)


@dataclass
class FluidTrajectory:
    """Euler solution on the step grid, with the indicators used at each step."""

    times: np.ndarray
    states: np.ndarray  # (N, 6): q1 q2 z11 z12 z21 z22
    pi12: np.ndarray
    pi21: np.ndarray
    regimes: np.ndarray  # int8 codes into REGIME_ORDER
    d12: np.ndarray
    d21: np.ndarray
    h: float
    scenario_name: str = ""

    REGIME_ORDER = (
        RegimeTag.BOTH_FULL,
        RegimeTag.SLACK_1,
        RegimeTag.SLACK_2,
        RegimeTag.SLACK_BOTH,
        RegimeTag.OVERSTAFFED_1,
        RegimeTag.OVERSTAFFED_2,
    )

    def index_of(self, t: float) -> int:
        idx = int(round(t / self.h))
        if idx < 0 or idx >= len(self.times) or abs(self.times[idx] - t) > 1e-9:
            raise KeyError(f"t={t} is not on the solution grid (h={self.h})")
        return idx

    def state_at(self, t: float) -> FluidState:
        return FluidState.from_tuple(tuple(self.states[self.index_of(t)]))

    def regime_at(self, t: float) -> RegimeTag:
        return self.REGIME_ORDER[self.regimes[self.index_of(t)]]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t,q1,q2,z11,z12,z21,z22,pi12,pi21,regime,d12,d21\n")
            for i in range(len(self.times)):
                row = self.states[i]
                fh.write(
                    f"{self.times[i]:.9g},"
                    f"{row[0]:.9g},{row[1]:.9g},{row[2]:.9g},"
                    f"{row[3]:.9g},{row[4]:.9g},{row[5]:.9g},"
                    f"{self.pi12[i]:.9g},{self.pi21[i]:.9g},"
                    f"{self.REGIME_ORDER[self.regimes[i]].value},"
                    f"{self.d12[i]:.9g},{self.d21[i]:.9g}\n"
                )


def _check_grid(s: Scenario, h: float) -> int:
    if not (h > 0.0):
        raise ValueError(f"step must be positive, got {h}")
    n_steps = round(s.horizon / h)
    if n_steps < 1 or abs(n_steps * h - s.horizon) > 1e-9:
        raise ValueError(f"step {h} does not divide the horizon {s.horizon}")
    for b in s.all_breakpoints():
        if abs(round(b / h) * h - b) > 1e-9:
            raise ValueError(f"step {h} is not aligned with the breakpoint at t={b}")
    return n_steps


def euler_solve(s: Scenario, h: float, *, eps_full: float = EPS_FULL) -> FluidTrajectory:
    """Integrate the fluid dynamics over ``[0, horizon]`` with step ``h``.

    The recorded ``pi`` values and regime at grid point ``t`` are the ones
    used for the step leaving ``t``.  Raises :class:`IntegrationError` if the
    state leaves the feasible region by more than the clamp band and
    ``UnsupportedRatioError`` off the unit queue ratio.
    """
    problems = validate_scenario(s)
    if problems:
        raise ValueError("invalid scenario: " + "; ".join(problems))
    if s.control.r12 != 1.0 or s.control.r21 != 1.0:
        raise ftsp.UnsupportedRatioError(
            f"fluid Pi unsupported for ratio != 1 (r12={s.control.r12}, r21={s.control.r21})"
        )
    n_steps = _check_grid(s, h)
    eps_b = BOUNDARY_BAND_STEPS * h * RATE_SCALE
    eps_neg = NEG_CLAMP_STEPS * h * RATE_SCALE

    times = np.empty(n_steps + 1)
    states = np.empty((n_steps + 1, 6))
    pi12_arr = np.empty(n_steps + 1)
    pi21_arr = np.empty(n_steps + 1)
    regime_arr = np.empty(n_steps + 1, dtype=np.int8)
    d12_arr = np.empty(n_steps + 1)
    d21_arr = np.empty(n_steps + 1)
    regime_code = {tag: i for i, tag in enumerate(FluidTrajectory.REGIME_ORDER)}

    xt = s.x0.as_tuple()
    flag12 = flag21 = False
    for k in range(n_steps + 1):
        t = k * h
        xt = _absorb_slack_queue(xt, t, s, eps_full)
        detail = _rhs_detail(xt, t, s, flag12, flag21, eps_b, eps_full)
        times[k] = t
        states[k] = xt
        pi12_arr[k] = detail.pi12
        pi21_arr[k] = detail.pi21
        regime_arr[k] = regime_code[detail.regime.tag]
        d12_arr[k] = detail.d12
        d21_arr[k] = detail.d21
        if k == n_steps:
            break

        dx = detail.dx
        y = tuple(xt[i] + h * dx[i] for i in range(6))
        y = _post_step(y, t, t + h, s, detail.regime, eps_neg)
        c = s.control
        d12_next = y[0] - c.r12 * y[1] - c.k12
        d21_next = c.r21 * y[1] - y[0] - c.k21
        flag12 = (detail.d12 > 0.0 > d12_next) or (detail.d12 < 0.0 < d12_next) or abs(
            d12_next
        ) <= eps_b
        flag21 = (detail.d21 > 0.0 > d21_next) or (detail.d21 < 0.0 < d21_next) or abs(
            d21_next
        ) <= eps_b
        xt = y

    return FluidTrajectory(
        times=times,
        states=states,
        pi12=pi12_arr,
        pi21=pi21_arr,
        regimes=regime_arr,
        d12=d12_arr,
        d21=d21_arr,
        h=h,
        scenario_name=s.name,
    )


def _absorb_slack_queue(xt: tuple, t: float, s: Scenario, eps_full: float) -> tuple:
    """Resolve the inconsistent 'idle capacity + waiting queue' state.

    Spare own-pool capacity absorbs its queue instantly in the fluid limit;
    this arises only from upward staffing jumps or artificial initial states.
    """
    q1, q2, z11, z12, z21, z22 = xt
    changed = False
    if q1 > 0.0:
        spare1 = s.m1(t) - (z11 + z21)
        if spare1 > eps_full:
            moved = q1 if q1 < spare1 else spare1
            q1 -= moved
            z11 += moved
            changed = True
    if q2 > 0.0:
        spare2 = s.m2(t) - (z12 + z22)
        if spare2 > eps_full:
            moved = q2 if q2 < spare2 else spare2
            q2 -= moved
            z22 += moved
            changed = True
    return (q1, q2, z11, z12, z21, z22) if changed else xt


def _post_step(
    y: tuple, t: float, t_next: float, s: Scenario, regime: Regime, eps_neg: float
) -> tuple:
    q1, q2, z11, z12, z21, z22 = y

    if regime.pool1 is PoolState.FULL:
        # keep the pool exactly on its staffing level (left limit at a jump,
        # so the classifier sees the jump rather than having it absorbed here)
        z11 = _left_limit(s.m1, t, t_next) - z21
    elif regime.pool1 is PoolState.SLACK:
        spare = _left_limit(s.m1, t, t_next) - z21
        if z11 > spare:
            z11 = spare  # inflow hit capacity mid-step
    if regime.pool2 is PoolState.FULL:
        z22 = _left_limit(s.m2, t, t_next) - z12
    elif regime.pool2 is PoolState.SLACK:
        spare = _left_limit(s.m2, t, t_next) - z12
        if z22 > spare:
            z22 = spare

    out = []
    for v in (q1, q2, z11, z12, z21, z22):
        if not math.isfinite(v):
            raise IntegrationError("non-finite state coordinate", t_next)
        if v < 0.0:
            if v < -eps_neg:
                raise IntegrationError(
                    f"state coordinate {v:.3e} below the clamp band {-eps_neg:.3e}", t_next
                )
            v = 0.0
        out.append(v)
    return tuple(out)


# --- closed forms used as oracles for the solver ---


def erlang_a_closed_form(
    q0: float, z0: float, lam: float, m: float, mu: float, theta: float, t: float
) -> tuple[float, float]:
    """Single-pool no-sharing fluid at time ``t``.

    Content relaxes toward ``lam/mu`` capped at the staffing level; with the
    pool full the queue relaxes toward ``(lam - mu*m)/theta``, floored at zero.
    The queue branch presumes a full pool (``z0 = m``) in the overloaded case.
    """
    target = lam / mu
    z = target + (z0 - target) * math.exp(-mu * t)
    if z > m:
        z = m
    q_inf = (lam - mu * m) / theta
    q = q_inf + (q0 - q_inf) * math.exp(-theta * t)
    if q < 0.0:
        q = 0.0
    return q, z


def shared_decay_closed_form(z0: float, mu: float, t: float) -> float:
    """Stranded other-class content with no replenishment: plain exponential decay."""
    return z0 * math.exp(-mu * t)


def q1_recovery_closed_form(
    q0: float, z0: float, mu11: float, mu21: float, theta1: float, t: float
) -> float:
    """Queue decay while stranded slow service drains, own pool critically loaded.

    Solves ``q' = (mu11 - mu21) * z0 * exp(-mu21 t) - theta1 * q``.  The
    two-exponential solution degenerates to a ``t * exp`` form at
    ``theta1 = mu21``.
    """
    if abs(theta1 - mu21) < 1e-12:
        return (q0 + (mu11 - mu21) * z0 * t) * math.exp(-theta1 * t)
    coeff = (mu11 - mu21) * z0 / (theta1 - mu21)
    return q0 * math.exp(-theta1 * t) + coeff * (
        math.exp(-mu21 * t) - math.exp(-theta1 * t)
    )
