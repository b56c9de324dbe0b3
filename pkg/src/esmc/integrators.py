"""Proposal integrators: leapfrog, and the exact flow of a terraced potential.

The terraced flow replaces the potential V by its staircase quantisation
V_h(q) = h * floor(V(q)/h).  Between level sets {V = k h} the motion is free
flight along straight rays; each time a ray meets the boundary of the current
terrace the velocity jumps by an impulse along the local gradient direction,
either transmitting across the step (diffraction, kinetic energy changes by
exactly -+h) or bouncing off it (reflection, kinetic energy unchanged).  The
total energy V_h + (1/2) v.Mv is therefore conserved to round-off no matter
how long the trajectory runs, which is what lets the sampler accept every
proposal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import MassSpec, PhasePoint, as_state, kinetic_energy

__all__ = [
    "CrossingEvent",
    "IntegratorError",
    "RunawayTrajectoryError",
    "SegmentRecord",
    "TerraceSpec",
    "TrajectoryResult",
    "energy_step",
    "energy_trajectory",
    "leapfrog_trajectory",
    "smallest_crossing",
    "terraced_hamiltonian",
    "terraced_potential",
    "update_velocity",
]

# Marching stride is budget / |dV/ds| with the budget capped at _SAFETY * h
# mid-band and tightened to the distance from the nearest level (down to
# _MARGIN_FLOOR * h) when the ray travels close to one.  Consecutive strides
# may grow by at most _STRIDE_GROWTH, so a quiet stretch cannot inflate the
# stride to a length that hides interior structure from the endpoints.
_SAFETY = 0.25
_MARGIN_FLOOR = 0.025
_STRIDE_GROWTH = 2.0
_SLOPE_EPS = 1e-30
_MAX_SCAN_DEPTH = 200
# Potential values within this relative distance of a level are treated as
# sitting on it when a trajectory starts (disambiguated by travel direction).
_BOUNDARY_EPS = 1e-9


class IntegratorError(Exception):
    """Integration could not proceed (degenerate crossing, non-finite values)."""


class RunawayTrajectoryError(IntegratorError):
    """Segment budget exhausted before the requested duration elapsed."""


class CrossingEvent(str, Enum):
    UPHILL_DIFFRACTION = "uphill_diffraction"
    DOWNHILL_DIFFRACTION = "downhill_diffraction"
    REFLECTION = "reflection"
    TIME_EXHAUSTED = "time_exhausted"


@dataclass(frozen=True)
class TerraceSpec:
    """Terraced-potential parameters: step height and safety limits."""

    h: float
    max_segments: int = 10_000_000
    root_tol: float = 1e-12
    root_max_iter: int = 200

    def __post_init__(self):
        if not (math.isfinite(self.h) and self.h > 0):
            raise ValueError(f"terrace height must be positive and finite, got {self.h}")
        if self.max_segments < 1:
            raise ValueError("max_segments must be at least 1")


@dataclass(frozen=True)
class SegmentRecord:
    """One straight-line piece of a terraced trajectory."""

    t_start: float
    t_end: float
    q_start: np.ndarray
    v: np.ndarray
    event: CrossingEvent
    level: float


@dataclass(frozen=True)
class TrajectoryResult:
    end: PhasePoint
    segments: int
    events: list[SegmentRecord] | None = None


def terraced_potential(value: float, h: float) -> float:
    """Quantise a potential value down to the terrace floor h*floor(value/h)."""
    return h * math.floor(value / h)


def terraced_hamiltonian(point: PhasePoint, target, mass: MassSpec, h: float) -> float:
    """Energy of the terraced system, V_h(q) + (1/2) v.Mv."""
    pot = float(target.potential(point.q))
    if not math.isfinite(pot):
        raise IntegratorError(f"potential is non-finite ({pot}) at q={point.q}")
    return terraced_potential(pot, h) + kinetic_energy(point.v, mass)


def update_velocity(v, n, h: float, mass: MassSpec):
    """Velocity jump at a terrace boundary with outward normal direction n.

    n is the potential gradient at the crossing point.  Moving against the
    step (v.n >= 0) the trajectory either climbs it, losing kinetic energy h
    (uphill diffraction), or bounces (reflection) when too slow; moving with
    the step it always drops down, gaining h (downhill diffraction).  Returns
    the post-crossing velocity and the event kind.
    """
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    a = float(np.dot(v, n))
    minv_n = n if mass.kind == "identity" else mass.apply_inverse(n)
    b = float(np.dot(n, minv_n))
    if not (math.isfinite(a) and math.isfinite(b)):
        raise IntegratorError("non-finite crossing data")
    if b <= 0.0:
        raise IntegratorError("zero gradient at crossing: cannot orient the jump")
    if a == 0.0:
        raise IntegratorError("tangential crossing (v.n == 0): transversality lost")
    if a > 0.0:
        disc = a * a - 2.0 * h * b
        if disc <= 0.0:
            lam = -2.0 * a / b
            event = CrossingEvent.REFLECTION
        else:
            lam = (-a + math.sqrt(disc)) / b
            event = CrossingEvent.UPHILL_DIFFRACTION
    else:
        disc = a * a + 2.0 * h * b
        lam = (-a - math.sqrt(disc)) / b
        event = CrossingEvent.DOWNHILL_DIFFRACTION
    return v + lam * minv_n, event


def _polish_root(f, a: float, fa: float, b: float, fb: float, tol_abs: float, max_iter: int) -> float:
    """Refine a crossing inside (a, b] where f is >= 0 at a and <= 0 at b.

    Alternates secant and bisection steps so the bracket provably shrinks.
    Converges either to |f| <= tol_abs or to a machine-width bracket (the
    crossing is then resolved as finely as floats allow).
    """
    if fb == 0.0:
        return b
    if fa < 0.0 or fb > 0.0:
        raise IntegratorError("invalid root bracket at terrace boundary")
    eps = float(np.finfo(float).eps)
    use_secant = True
    for _ in range(max_iter):
        if b - a <= 4.0 * eps * max(1.0, abs(b)):
            return b
        x = None
        if use_secant and fb != fa:
            x = b - fb * (b - a) / (fb - fa)
            if not (a < x < b):
                x = None
        if x is None:
            x = 0.5 * (a + b)
        use_secant = not use_secant
        fx = f(x)
        if not math.isfinite(fx):
            raise IntegratorError("non-finite potential during root polish")
        if abs(fx) <= tol_abs:
            return x
        if fx > 0.0:
            a, fa = x, fx
        else:
            b, fb = x, fx
    raise IntegratorError(f"root polish exceeded {max_iter} iterations")


def _slope_zero(g, a: float, ga: float, b: float, gb: float, max_iter: int = 80) -> float:
    """Locate a zero of the directional slope g inside (a, b).

    Expects ga < 0 < gb. The result is used as an interval split point, so
    a short relative tolerance on the bracket width is enough.
    """
    eps = float(np.finfo(float).eps)
    tol = abs(ga) * 1e-9
    use_secant = True
    for _ in range(max_iter):
        if b - a <= 64.0 * eps * max(1.0, abs(b)):
            return 0.5 * (a + b)
        x = None
        if use_secant and gb != ga:
            x = b - gb * (b - a) / (gb - ga)
            if not (a < x < b):
                x = None
        if x is None:
            x = 0.5 * (a + b)
        use_secant = not use_secant
        gx = g(x)
        if not math.isfinite(gx):
            raise IntegratorError("non-finite gradient during extremum search")
        if abs(gx) <= tol:
            return x
        if gx < 0.0:
            a, ga = x, gx
        else:
            b, gb = x, gx
    return 0.5 * (a + b)


def smallest_crossing(
    target,
    q,
    v,
    s_max: float,
    lower: float,
    upper: float,
    *,
    tol: float = 1e-12,
    max_iter: int = 200,
    from_boundary: str | None = None,
    v_at_q: float | None = None,
    grad_at_q: np.ndarray | None = None,
):
    """First s in (0, s_max] where V(q + s v) leaves the band [lower, upper).

    The ray potential must start inside the band (or on a boundary flagged by
    ``from_boundary``, in which case the initial residual on that side is
    ignored).  Crossings of the upper level count at V >= upper, crossings of
    the lower level only strictly below it, matching the floor quantisation.
    Returns (s, side) with side in {"lower", "upper"}, or None when the ray
    stays inside the band for the whole length.

    The search marches along the ray with a slope-scaled stride whose value
    budget is a quarter band in mid-band and tightens to the distance from
    the nearest level when the ray travels close to one, so it cannot step
    over a full terrace or a shallow return to a level unnoticed.  Strides
    whose endpoint slopes and chord disagree on a single monotone direction
    are split recursively (at the bracketed slope zero when there is one), so
    dips and humps hiding a crossing between the endpoints are resolved.
    The bracketed crossing is polished to a residual of tol * (upper - lower).
    """
    band = upper - lower
    if not (math.isfinite(band) and band > 0):
        raise ValueError(f"need lower < upper, got [{lower}, {upper}]")
    if s_max <= 0:
        return None
    q = as_state(q)
    v = as_state(v)

    buf = np.empty_like(q)

    def fray(s: float) -> float:
        np.multiply(v, s, out=buf)
        np.add(buf, q, out=buf)
        return float(target.potential(buf))

    def slope_at(s: float) -> float:
        np.multiply(v, s, out=buf)
        np.add(buf, q, out=buf)
        return float(np.dot(target.gradient(buf), v))

    v_prev = fray(0.0) if v_at_q is None else float(v_at_q)
    if not math.isfinite(v_prev):
        raise IntegratorError("non-finite potential at ray start")
    slack = tol * band
    start_slack = max(slack, _BOUNDARY_EPS * band) if from_boundary else slack
    if v_prev > upper + start_slack or v_prev < lower - start_slack:
        raise ValueError(
            f"ray starts outside the terrace band: V={v_prev}, band=[{lower}, {upper}]"
        )

    def polish_upper(a: float, fa: float, b: float, fb: float) -> tuple[float, str]:
        if not fa > 0.0:
            raise IntegratorError("degenerate bracket at upper boundary")
        return (
            _polish_root(lambda s: upper - fray(s), a, fa, b, fb, slack, max_iter),
            "upper",
        )

    def polish_lower(a: float, fa: float, b: float, fb: float) -> tuple[float, str]:
        if not fa >= 0.0:
            raise IntegratorError("degenerate bracket at lower boundary")
        return (
            _polish_root(lambda s: fray(s) - lower, a, fa, b, fb, slack, max_iter),
            "lower",
        )

    eps64 = 64.0 * float(np.finfo(float).eps)

    def scan(sa, va, ga, sb, vb, gb, depth):
        # Earliest boundary crossing in (sa, sb], given V(sa) = va inside the
        # band.  A None return guarantees vb is inside the band as well.  An
        # interval counts as settled only when its endpoint slopes and chord
        # agree on one monotone direction; anything else (a dip, a hump, or a
        # chord contradicting the slopes) is split and the halves are scanned
        # left first, so the earliest crossing wins.
        width = sb - sa
        if width <= eps64 * max(1.0, abs(sb)):
            if vb >= upper:
                return sb, "upper"
            if vb < lower:
                return sb, "lower"
            return None
        # A slope this small cannot move V by more than the polish slack over
        # the interval; treating it as zero keeps round-off sign jitter on
        # flat stretches from splitting forever.
        g_negl = slack / width
        consistent_up = ga >= -g_negl and gb >= -g_negl and vb >= va
        consistent_down = ga <= g_negl and gb <= g_negl and vb <= va
        if consistent_up or consistent_down:
            crossing = (vb >= upper) if consistent_up else (vb < lower)
            if not crossing:
                return None
            # About to end the segment here: spend one midpoint probe to make
            # sure no interior excursion contradicts the monotone picture (a
            # dip can hide an earlier crossing below a rising chord).
            vm = fray(0.5 * (sa + sb))
            agrees = (va <= vm <= vb) if consistent_up else (vb <= vm <= va)
            if agrees:
                if consistent_up:
                    return polish_upper(sa, upper - va, sb, upper - vb)
                return polish_lower(sa, va - lower, sb, vb - lower)
        if depth >= _MAX_SCAN_DEPTH:
            raise IntegratorError("crossing search recursion exhausted")
        if ga < 0.0 < gb:
            sm = _slope_zero(slope_at, sa, ga, sb, gb)
        elif ga > 0.0 > gb:
            sm = _slope_zero(lambda s: -slope_at(s), sa, -ga, sb, -gb)
        else:
            sm = 0.5 * (sa + sb)
        # Clamp the split into the middle half so both children shrink.
        sm = min(max(sm, sa + 0.25 * width), sb - 0.25 * width)
        vm = fray(sm)
        if not math.isfinite(vm):
            raise IntegratorError("non-finite potential during crossing search")
        gm = slope_at(sm)
        hit = scan(sa, va, ga, sm, vm, gm, depth + 1)
        if hit is not None:
            return hit
        return scan(sm, vm, gm, sb, vb, gb, depth + 1)

    g_prev = float(np.dot(grad_at_q, v)) if grad_at_q is not None else slope_at(0.0)
    s_prev = 0.0
    prev_stride = 0.05 * s_max
    while s_prev < s_max:
        # The stride budget shrinks with the distance to the nearest level, so
        # a path curving back toward the level it just left is sampled finely
        # enough that the turn shows up at stride endpoints.  Mid-band the
        # budget is a quarter terrace.  The growth cap keeps a near-flat
        # stretch (tiny slope, huge budget-implied stride) from producing one
        # stride so long that whole dips or humps fit between its endpoints.
        margin = min(upper - v_prev, v_prev - lower)
        budget = max(min(margin, _SAFETY * band), _MARGIN_FLOOR * band)
        stride = min(
            budget / (abs(g_prev) + _SLOPE_EPS), _STRIDE_GROWTH * prev_stride
        )
        prev_stride = stride
        s_next = s_prev + stride
        if not s_next > s_prev:
            raise IntegratorError("marching stride underflowed to zero")
        if s_next > s_max:
            s_next = s_max
        v_next = fray(s_next)
        if not math.isfinite(v_next):
            raise IntegratorError("non-finite potential during crossing search")
        g_next = slope_at(s_next)
        hit = scan(s_prev, v_prev, g_prev, s_next, v_next, g_next, 0)
        if hit is not None:
            return hit
        s_prev, v_prev, g_prev = s_next, v_next, g_next
    return None


def _quadratic_crossing(
    a: float,
    b: float,
    c: float,
    lower: float,
    upper: float,
    s_max: float,
    from_boundary: str | None,
):
    """Closed-form first crossing for a ray potential a s^2 + b s + c.

    Mirrors :func:`smallest_crossing` semantics exactly: the upper level
    counts as crossed when reached, the lower level only when passed
    strictly (a tangent touch keeps the terrace), and a start on a boundary
    is disambiguated by the travel direction.  Only meaningful for convex
    ray restrictions (a >= 0), which is what SPD quadratic targets produce.
    """
    if a < 0.0 or not all(map(math.isfinite, (a, b, c))):
        raise IntegratorError("invalid ray coefficients for quadratic crossing")
    if a == 0.0:
        # linear ray potential
        if b > 0.0:
            s = (upper - c) / b
            return (s, "upper") if 0.0 < s <= s_max else None
        if b < 0.0:
            s = (lower - c) / b
            return (s, "lower") if 0.0 < s <= s_max else None
        return None
    if from_boundary == "upper":
        # sitting on the upper level moving inward; bookkeeping puts c there
        if b >= 0.0:
            raise IntegratorError("moving outward from the upper boundary")
        best = (-b / a, "upper")
        band = upper - lower
        disc = b * b - 4.0 * a * band
        if disc > 0.0:
            # smaller root of a s^2 + b s + band, in cancellation-safe form
            best = (2.0 * band / (-b + math.sqrt(disc)), "lower")
        return best if 0.0 < best[0] <= s_max else None
    if from_boundary == "lower":
        if b <= 0.0:
            raise IntegratorError("moving outward from the lower boundary")
        disc = b * b + 4.0 * a * (upper - lower)
        s = 2.0 * (upper - lower) / (b + math.sqrt(disc))
        return (s, "upper") if s <= s_max else None
    cu = c - upper
    cl = c - lower
    if cu > 0.0 or cl < 0.0:
        raise IntegratorError("ray starts outside the terrace band")
    best = None
    if cl > 0.0 and b < 0.0:
        disc = b * b - 4.0 * a * cl
        if disc > 0.0:
            best = (2.0 * cl / (-b + math.sqrt(disc)), "lower")
    disc = b * b - 4.0 * a * cu
    if disc > 0.0:
        if b > 0.0:
            s = -2.0 * cu / (b + math.sqrt(disc))
        else:
            s = (-b + math.sqrt(disc)) / (2.0 * a)
        if s > 0.0 and (best is None or s < best[0]):
            best = (s, "upper")
    if best is None or not (0.0 < best[0] <= s_max):
        return None
    return best


def _classify_terrace(v0: float, h: float, slope0: float) -> tuple[int, str | None]:
    """Terrace index at a trajectory start, with on-boundary disambiguation.

    A start within _BOUNDARY_EPS * h of a level is treated as sitting on it,
    and the terrace is chosen by the advance direction sign(dV/dt): climbing
    starts own the level as their lower boundary, descending starts as their
    upper one.
    """
    kb = round(v0 / h)
    if abs(v0 - kb * h) <= _BOUNDARY_EPS * h and slope0 != 0.0:
        if slope0 > 0.0:
            return int(kb), "lower"
        return int(kb) - 1, "upper"
    return int(math.floor(v0 / h)), None


def energy_trajectory(
    point: PhasePoint,
    target,
    mass: MassSpec,
    terrace: TerraceSpec,
    duration: float,
    *,
    record_events: bool = False,
) -> TrajectoryResult:
    """Exact flow of the terraced system for the requested duration.

    Advances crossing to crossing, applying :func:`update_velocity` at each
    one, and clips the final free-flight segment so the end time is exactly
    ``point.t + duration``.  The terrace index is tracked as an integer across
    crossings, so the energy bookkeeping never depends on how precisely a
    root was polished.

    Raises :class:`RunawayTrajectoryError` when the segment budget runs out
    and :class:`IntegratorError` on degenerate geometry (tangential crossing,
    zero gradient, non-finite potential).
    """
    if not (math.isfinite(duration) and duration > 0):
        raise ValueError(f"duration must be positive and finite, got {duration}")
    h = terrace.h
    q = point.q.copy()
    v = point.v.copy()
    t = float(point.t)
    t_final = t + duration

    pot = float(target.potential(q))
    if not math.isfinite(pot):
        raise IntegratorError(f"potential is non-finite ({pot}) at the start")
    ray_quadratic = getattr(target, "ray_quadratic", None)
    if ray_quadratic is None:
        grad = target.gradient(q)
        slope = float(np.dot(grad, v))
    else:
        grad = None
        slope = ray_quadratic(q, v)[1]
    k, boundary = _classify_terrace(pot, h, slope)

    segments = 0
    events: list[SegmentRecord] | None = [] if record_events else None
    while True:
        if segments >= terrace.max_segments:
            raise RunawayTrajectoryError(
                f"exceeded {terrace.max_segments} segments with {t_final - t} time left"
            )
        remaining = t_final - t
        lower = k * h
        upper = (k + 1) * h
        if ray_quadratic is not None:
            qa, qb, _ = ray_quadratic(q, v)
            hit = _quadratic_crossing(qa, qb, pot, lower, upper, remaining, boundary)
        else:
            hit = smallest_crossing(
                target, q, v, remaining, lower, upper,
                tol=terrace.root_tol, max_iter=terrace.root_max_iter,
                from_boundary=boundary, v_at_q=pot, grad_at_q=grad,
            )
        if hit is None:
            q_end = q + remaining * v
            segments += 1
            if events is not None:
                events.append(
                    SegmentRecord(t, t_final, q.copy(), v.copy(), CrossingEvent.TIME_EXHAUSTED, lower)
                )
            return TrajectoryResult(PhasePoint(q_end, v, t_final), segments, events)

        s, side = hit
        q_new = q + s * v
        n = target.gradient(q_new)
        v_new, event = update_velocity(v, n, h, mass)
        if (side == "upper") == (event is CrossingEvent.DOWNHILL_DIFFRACTION):
            raise IntegratorError(
                f"crossing side {side} inconsistent with velocity update {event.value}"
            )
        if events is not None:
            level = upper if side == "upper" else lower
            events.append(SegmentRecord(t, t + s, q.copy(), v.copy(), event, level))
        segments += 1
        t += s
        q = q_new
        v = v_new
        if event is CrossingEvent.UPHILL_DIFFRACTION:
            k += 1
            boundary = "lower"
            pot = lower + h  # now on the lower level of terrace k+1
        elif event is CrossingEvent.DOWNHILL_DIFFRACTION:
            k -= 1
            boundary = "upper"
            pot = lower  # now on the upper level of terrace k-1
        else:
            boundary = "upper"
            pot = upper
        grad = n
        if t >= t_final:
            return TrajectoryResult(PhasePoint(q, v, t_final), segments, events)


def energy_step(
    point: PhasePoint,
    target,
    mass: MassSpec,
    terrace: TerraceSpec,
    t_final: float,
) -> PhasePoint:
    """Advance one segment of the terraced flow.

    Returns the state at the first terrace crossing (with the velocity jump
    applied) or, when no crossing happens before ``t_final``, the free-flight
    state exactly at ``t_final``.
    """
    if not t_final > point.t:
        raise ValueError(f"t_final {t_final} must exceed point.t {point.t}")
    h = terrace.h
    pot = float(target.potential(point.q))
    if not math.isfinite(pot):
        raise IntegratorError(f"potential is non-finite ({pot}) at the start")
    ray_quadratic = getattr(target, "ray_quadratic", None)
    if ray_quadratic is None:
        grad = target.gradient(point.q)
        k, boundary = _classify_terrace(pot, h, float(np.dot(grad, point.v)))
        hit = smallest_crossing(
            target, point.q, point.v, t_final - point.t, k * h, (k + 1) * h,
            tol=terrace.root_tol, max_iter=terrace.root_max_iter,
            from_boundary=boundary, v_at_q=pot, grad_at_q=grad,
        )
    else:
        qa, qb, _ = ray_quadratic(point.q, point.v)
        k, boundary = _classify_terrace(pot, h, qb)
        hit = _quadratic_crossing(
            qa, qb, pot, k * h, (k + 1) * h, t_final - point.t, boundary
        )
    if hit is None:
        return PhasePoint(point.q + (t_final - point.t) * point.v, point.v, t_final)
    s, _ = hit
    q_new = point.q + s * point.v
    v_new, _ = update_velocity(point.v, target.gradient(q_new), h, mass)
    return PhasePoint(q_new, v_new, point.t + s)


def leapfrog_trajectory(
    point: PhasePoint,
    target,
    mass: MassSpec,
    dt: float,
    n_steps: int,
) -> PhasePoint:
    """Velocity-Verlet integration of the smooth Hamiltonian.

    Runs ``n_steps`` kick-drift-kick steps of size ``dt`` and returns the end
    state.  Raises :class:`IntegratorError` if the state stops being finite
    (the usual divergence signal for step sizes beyond the stability limit).
    """
    if not (math.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be at least 1, got {n_steps}")
    q = point.q.copy()
    p = mass.apply(point.v)
    identity = mass.kind == "identity"
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        grad = target.gradient(q)
        half = 0.5 * dt
        for _ in range(n_steps):
            p = p - half * grad
            q = q + dt * (p if identity else mass.apply_inverse(p))
            grad = target.gradient(q)
            p = p - half * grad
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise IntegratorError("state became non-finite during leapfrog")
    return PhasePoint(q, p if identity else mass.apply_inverse(p), point.t + n_steps * dt)
