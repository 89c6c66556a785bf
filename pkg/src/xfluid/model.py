"""Core domain types for the two-class, two-pool overload-control model.

Two customer classes arrive to two many-server pools.  Pool j is staffed with
``m_j(t)`` agents (fluid scale) and serves its designated class j at rate
``mu_jj``; cross-trained service of the other class runs slower
(``mu_ij < mu_jj`` in the inefficient-sharing cases of interest).  Waiting
customers of class i abandon at rate ``theta_i``.  Sharing is governed by
queue-difference thresholds: class i overflows into pool j only while

    d_ij = q_i - r_ij * q_j - k_ij  >  0

and the release condition holds (few enough class-j customers stuck in
pool i).  All quantities here are fluid-scaled; the simulator multiplies by
the scale ``n`` and rounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


#: Tolerance used when checking z-content against staffing levels.
STAFFING_SLACK_TOL = 1e-9


class ControlMode(Enum):
    """Which release rule gates a newly available agent taking other-class work.

    ``FQR_T_ONE_WAY``: sharing toward pool j requires *zero* class-j customers
    in pool i (strict one-way sharing).  ``FQR_ART``: sharing toward pool j is
    allowed while the class-j content of pool i is at or below a release
    threshold ``tau_ji`` (weak inequality).
    """

    FQR_T_ONE_WAY = "fqr_t_one_way"
    FQR_ART = "fqr_art"


class RateDomainError(ValueError):
    """Evaluation of a piecewise rate function outside its covered domain."""


@dataclass(frozen=True)
class ServiceRates:
    """Service rates ``mu_ij`` (class i served in pool j) and abandonment rates."""

    mu11: float
    mu12: float
    mu21: float
    mu22: float
    theta1: float
    theta2: float


@dataclass(frozen=True)
class Piece:
    """One piece of a piecewise rate function on ``[start, end)``.

    ``constant``: value ``a``.  ``sinusoid``: value ``a + b*sin(t) + c*cos(t)``.
    """

    start: float
    end: float
    kind: str  # "constant" | "sinusoid"
    a: float
    b: float = 0.0
    c: float = 0.0

    def value(self, t: float) -> float:
        if self.kind == "constant":
            return self.a
        return self.a + self.b * math.sin(t) + self.c * math.cos(t)

    def derivative(self, t: float) -> float:
        if self.kind == "constant":
            return 0.0
        return self.b * math.cos(t) - self.c * math.sin(t)

    def majorant(self) -> float:
        """Upper bound for the value on this piece (used for thinning)."""
        return self.a + abs(self.b) + abs(self.c)

    def minimum(self) -> float:
        """Exact minimum of the value over the closed piece."""
        if self.kind == "constant":
            return self.a
        candidates = [self.value(self.start), self.value(self.end)]
        # interior critical points: b*cos(t) = c*sin(t)
        if self.b != 0.0 or self.c != 0.0:
            t0 = math.atan2(self.b, self.c)
            k = math.ceil((self.start - t0) / math.pi)
            t = t0 + k * math.pi
            while t <= self.end:
                if t >= self.start:
                    candidates.append(self.value(t))
                t += math.pi
        return min(candidates)


@dataclass(frozen=True)
class RateFunction:
    """Piecewise-defined nonnegative rate of time.

    Pieces are contiguous and right-continuous: piece ``[start, end)`` applies
    at ``t == start``.  The final piece is closed on the right so the horizon
    endpoint evaluates.
    """

    pieces: tuple[Piece, ...]

    @staticmethod
    def constant(value: float, end: float, start: float = 0.0) -> "RateFunction":
        return RateFunction((Piece(start, end, "constant", value),))

    def piece_at(self, t: float) -> Piece:
        for p in self.pieces:
            if p.start <= t < p.end:
                return p
        last = self.pieces[-1]
        if t == last.end:
            return last
        raise RateDomainError(
            f"t={t!r} outside the covered domain "
            f"[{self.pieces[0].start}, {last.end}]"
        )

    def __call__(self, t: float) -> float:
        return self.piece_at(t).value(t)

    def derivative(self, t: float) -> float:
        return self.piece_at(t).derivative(t)

    def breakpoints(self) -> tuple[float, ...]:
        """Interior piece boundaries (where the value or its slope may jump)."""
        return tuple(p.start for p in self.pieces[1:])

    @property
    def domain_start(self) -> float:
        return self.pieces[0].start

    @property
    def domain_end(self) -> float:
        return self.pieces[-1].end


def eval_rate(f: RateFunction, t: float) -> float:
    """Evaluate a piecewise rate function (right-continuous at breakpoints)."""
    return f(t)


@dataclass(frozen=True)
class ControlParams:
    """Thresholds of the overflow control, fluid scale.

    ``k_ij`` activate sharing of class i into pool j; ``tau_ij`` release pool j
    for *receiving* the other class once its stuck content drops that low
    (ignored in one-way mode).  ``r_ij`` weight the other queue in the
    difference process.
    """

    r12: float = 1.0
    r21: float = 1.0
    k12: float = 0.3
    k21: float = 0.3
    tau12: float = 0.02
    tau21: float = 0.02
    mode: ControlMode = ControlMode.FQR_ART


@dataclass(frozen=True)
class FluidState:
    """Fluid-scaled system state: queues ``q_i`` and in-service content ``z_ij``."""

    q1: float = 0.0
    q2: float = 0.0
    z11: float = 0.0
    z12: float = 0.0
    z21: float = 0.0
    z22: float = 0.0

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.q1, self.q2, self.z11, self.z12, self.z21, self.z22)

    @staticmethod
    def from_tuple(values) -> "FluidState":
        q1, q2, z11, z12, z21, z22 = values
        return FluidState(q1, q2, z11, z12, z21, z22)


FLUID_COORDS = ("q1", "q2", "z11", "z12", "z21", "z22")


@dataclass(frozen=True)
class Scenario:
    """A complete experiment description.

    Arrival rates and staffing levels are fluid-scaled functions of time; the
    simulator uses ``n * lambda_i(t)`` arrivals and ``ceil(n * m_j(t))``
    agents.  Discrete thresholds default to ``round(n * k)`` /
    ``round(n * tau)`` but may be pinned to absolute integers.
    """

    rates: ServiceRates
    control: ControlParams
    lambda1: RateFunction
    lambda2: RateFunction
    m1: RateFunction
    m2: RateFunction
    n: int
    horizon: float
    x0: FluidState = field(default_factory=FluidState)
    k12_n: int | None = None
    k21_n: int | None = None
    tau12_n: int | None = None
    tau21_n: int | None = None
    name: str = ""

    # --- discrete threshold values used by the simulator ---

    def k12_count(self) -> int:
        return self.k12_n if self.k12_n is not None else round(self.n * self.control.k12)

    def k21_count(self) -> int:
        return self.k21_n if self.k21_n is not None else round(self.n * self.control.k21)

    def tau12_count(self) -> int:
        return self.tau12_n if self.tau12_n is not None else round(self.n * self.control.tau12)

    def tau21_count(self) -> int:
        return self.tau21_n if self.tau21_n is not None else round(self.n * self.control.tau21)

    def rate_functions(self) -> tuple[RateFunction, ...]:
        return (self.lambda1, self.lambda2, self.m1, self.m2)

    def all_breakpoints(self) -> tuple[float, ...]:
        """Sorted interior breakpoints of all four rate functions."""
        pts: set[float] = set()
        for f in self.rate_functions():
            pts.update(b for b in f.breakpoints() if 0.0 < b < self.horizon)
        return tuple(sorted(pts))


def d12(x: FluidState, control: ControlParams) -> float:
    """Queue-difference process for sharing class 1 into pool 2."""
    return x.q1 - control.r12 * x.q2 - control.k12


def d21(x: FluidState, control: ControlParams) -> float:
    """Queue-difference process for sharing class 2 into pool 1."""
    return control.r21 * x.q2 - x.q1 - control.k21


def total_service_rate(x: FluidState, rates: ServiceRates) -> float:
    """Aggregate completion rate over all four activities."""
    return (
        rates.mu11 * x.z11
        + rates.mu12 * x.z12
        + rates.mu21 * x.z21
        + rates.mu22 * x.z22
    )


def _validate_rate_function(label: str, f: RateFunction, horizon: float, out: list[str]) -> None:
    if not f.pieces:
        out.append(f"{label}: no pieces")
        return
    if f.pieces[0].start > 0.0:
        out.append(f"{label}: pieces start at {f.pieces[0].start}, leaving [0, ...) uncovered")
    prev_end = None
    for idx, p in enumerate(f.pieces):
        if not (p.end > p.start):
            out.append(f"{label}: piece {idx} has end {p.end} <= start {p.start}")
        if prev_end is not None and abs(p.start - prev_end) > 1e-12:
            out.append(
                f"{label}: pieces not contiguous at t={p.start} (previous piece ends {prev_end})"
            )
        if p.kind not in ("constant", "sinusoid"):
            out.append(f"{label}: piece {idx} has unknown kind {p.kind!r}")
        elif p.minimum() < 0.0:
            out.append(f"{label}: piece {idx} takes negative values (minimum {p.minimum():.6g})")
        prev_end = p.end
    if prev_end is not None and prev_end < horizon - 1e-12:
        out.append(f"{label}: pieces end at {prev_end}, short of horizon {horizon}")


def validate_scenario(s: Scenario) -> list[str]:
    """Check every model invariant; return human-readable violations (empty = valid)."""
    out: list[str] = []
    r = s.rates
    for name in ("mu11", "mu12", "mu21", "mu22", "theta1", "theta2"):
        v = getattr(r, name)
        if not (v > 0.0):
            out.append(f"rates.{name} must be strictly positive, got {v}")
    c = s.control
    for name in ("r12", "r21", "k12", "k21"):
        v = getattr(c, name)
        if not (v > 0.0):
            out.append(f"control.{name} must be strictly positive, got {v}")
    if c.mode is ControlMode.FQR_ART:
        for name in ("tau12", "tau21"):
            v = getattr(c, name)
            if not (v > 0.0):
                out.append(f"control.{name} must be strictly positive, got {v}")
    if s.n < 1:
        out.append(f"n must be >= 1, got {s.n}")
    if not (s.horizon > 0.0):
        out.append(f"horizon must be positive, got {s.horizon}")
    for label, f in (
        ("arrivals.class1", s.lambda1),
        ("arrivals.class2", s.lambda2),
        ("staffing.pool1", s.m1),
        ("staffing.pool2", s.m2),
    ):
        _validate_rate_function(label, f, s.horizon, out)
    for coord, v in zip(FLUID_COORDS, s.x0.as_tuple()):
        if v < 0.0:
            out.append(f"x0.{coord} must be nonnegative, got {v}")
    for name in ("k12_n", "k21_n", "tau12_n", "tau21_n"):
        v = getattr(s, name)
        if v is not None and v < 1:
            out.append(f"{name} override must be a positive integer, got {v}")
    # initial pool content must fit the initial staffing
    try:
        m1_0, m2_0 = s.m1(0.0), s.m2(0.0)
    except (RateDomainError, IndexError):
        pass  # already reported above
    else:
        if s.x0.z11 + s.x0.z21 > m1_0 + STAFFING_SLACK_TOL:
            out.append(
                f"x0 pool-1 content {s.x0.z11 + s.x0.z21:.6g} exceeds staffing m1(0)={m1_0:.6g}"
            )
        if s.x0.z12 + s.x0.z22 > m2_0 + STAFFING_SLACK_TOL:
            out.append(
                f"x0 pool-2 content {s.x0.z12 + s.x0.z22:.6g} exceeds staffing m2(0)={m2_0:.6g}"
            )
    return out
