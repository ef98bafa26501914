"""Continuation toward the critical free-stream speed.

A solve of the cut-off problem is *certified* when its maximum Mach ratio

    M(q_infinity, theta) = max over cells of |grad phi| / q_cr(psi)

stays below 1 - 2 theta: the cut-off was then evaluated on its physical
branch everywhere, so the modified solution solves the original problem.
Sweeping q_infinity with warm starts, bisecting the certification boundary,
and shrinking theta along a schedule produces a nondecreasing sequence of
certified-speed suprema whose last member is the reported critical-speed
estimate.  The estimate is mesh- and truncation-dependent and is always
reported together with the discretization it was computed on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import forces as forces_mod
from . import gas
from .errors import ScheduleError, SubflowError
from .solver import uniform_state

__all__ = [
    "ContinuationRecord",
    "CriticalSearch",
    "max_mach_ratio",
    "solve_certified",
    "sweep",
    "critical_qhat",
    "write_continuation_csv",
]


@dataclass(eq=False)
class ContinuationRecord:
    q_infinity: float
    theta: float
    max_mach_ratio: float
    certified: bool
    argmax_point: np.ndarray
    state: object
    report: object


def max_mach_ratio(state, law, force):
    """Maximum of |grad phi| / q_cr(psi) over cell barycenters.

    Returns (ratio, argmax barycenter).  Uses the raw gas law, so the value
    is meaningful past the cut-off as well.
    """
    psi = np.asarray(forces_mod.potential(force, state.mesh.barycenters))
    q2 = np.asarray(gas.critical_speed_sq(law, psi, check=False))
    ratio = np.sqrt(state.speed_sq() / q2)
    k = int(np.argmax(ratio))
    return float(ratio[k]), state.mesh.barycenters[k].copy()


def _rescaled_initial(problem, prev_state, q_infinity, theta):
    """Warm start: rescale the previous solution to the new Dirichlet data."""
    if prev_state is None or prev_state.q_infinity == 0.0:
        return uniform_state(problem.mesh, q_infinity, theta)
    phi = prev_state.phi * (q_infinity / prev_state.q_infinity)
    return type(prev_state)(problem.mesh, q_infinity, phi, theta)


def make_record(state, report, problem, theta):
    """Wrap a solve into a certification record.

    A certified record additionally asserts that the cut-off was evaluated
    on its physical branch at every barycenter (zero active cells); both
    quantities come from the same per-cell data, so a mismatch is a bug.
    """
    ratio, where = max_mach_ratio(state, problem.law, problem.force)
    certified = report.converged and ratio < 1.0 - 2.0 * theta
    if certified and report.cutoff_active_cells != 0:
        raise AssertionError(
            "certified solve reports active cut-off cells; inconsistent branch bookkeeping"
        )
    return ContinuationRecord(
        q_infinity=float(state.q_infinity),
        theta=float(theta),
        max_mach_ratio=ratio,
        certified=certified,
        argmax_point=where,
        state=state,
        report=report,
    )


def solve_certified(q_infinity, theta, problem, initial=None):
    """Solve the cut-off problem and certify the result if possible."""
    if not 0.0 < theta < 0.5:
        raise ScheduleError("theta must lie in (0, 1/2)")
    if initial is None:
        initial = uniform_state(problem.mesh, q_infinity, theta)
    state, report = problem.solve(q_infinity, theta, initial=initial)
    return make_record(state, report, problem, theta)


def sweep(q_list, theta, problem):
    """Solve an increasing list of free-stream speeds with warm starts.

    Returns the records accumulated up to the first solver failure (partial
    results are better than none for a continuation table).
    """
    q_list = [float(q) for q in q_list]
    if any(b <= a for a, b in zip(q_list, q_list[1:])):
        raise ScheduleError("q_list must be strictly increasing")
    records = []
    prev = None
    for q in q_list:
        initial = _rescaled_initial(problem, prev, q, theta)
        try:
            rec = solve_certified(q, theta, problem, initial=initial)
        except SubflowError:
            if not records:
                raise
            break
        records.append(rec)
        prev = rec.state
    return records


@dataclass(eq=False)
class CriticalSearch:
    """Result of the theta-schedule bisection for the critical speed."""

    q_hat: float
    per_theta: list  # (theta, certified supremum, hit_cap flag)
    records: list
    monotone: bool
    capped: bool
    q_cap: float
    tol_q: float
    trace: list = None  # (theta, lo, hi, mid, mid_certified) per bisection step


def critical_qhat(theta_schedule, tol_q, problem, q_cap=None):
    """Bisect the certification boundary along a decreasing theta schedule.

    For each theta the bracket keeps its lower end certified and its upper
    end uncertified, halving until narrower than tol_q; the certified
    supremum carries over as the next theta's lower end (a certified solve
    stays certified when theta shrinks).  When even the cap speed certifies,
    the cap is returned with ``capped`` set.  ``tol_q`` may be None, in
    which case it defaults to 1e-3 times the critical speed at the argmax
    of the last certified solve of the first bracket.
    """
    thetas = [float(t) for t in theta_schedule]
    if not thetas:
        raise ScheduleError("theta schedule must not be empty")
    if any(not 0.0 < t < 0.5 for t in thetas):
        raise ScheduleError("every theta must lie in (0, 1/2)")
    if any(b >= a for a, b in zip(thetas, thetas[1:])):
        raise ScheduleError("theta schedule must be strictly decreasing")
    if q_cap is None:
        q_cap = 1.5 * float(gas.sound_speed(problem.law, 1.0))
    records = []
    per_theta = []
    trace = []
    q_sup = 0.0
    capped = False
    prev_state = None
    tol_eff = tol_q
    for theta in thetas:
        lo = q_sup
        rec0 = solve_certified(
            lo, theta, problem, initial=_rescaled_initial(problem, prev_state, lo, theta)
        )
        records.append(rec0)
        if not rec0.certified:
            raise AssertionError(
                "carried-over lower bracket lost certification; nesting violated"
            )
        prev_state = rec0.state
        if tol_eff is None:
            psi_at = forces_mod.potential(problem.force, rec0.argmax_point)
            tol_eff = 1e-3 * float(gas.critical_speed(problem.law, psi_at))
        rec_hi = solve_certified(
            q_cap,
            theta,
            problem,
            initial=_rescaled_initial(problem, prev_state, q_cap, theta),
        )
        records.append(rec_hi)
        if rec_hi.certified:
            per_theta.append((theta, q_cap, True))
            q_sup = q_cap
            capped = True
            prev_state = rec_hi.state
            continue
        hi = q_cap
        while hi - lo > tol_eff:
            mid = 0.5 * (lo + hi)
            rec = solve_certified(
                mid,
                theta,
                problem,
                initial=_rescaled_initial(problem, prev_state, mid, theta),
            )
            records.append(rec)
            prev_state = rec.state
            trace.append((theta, lo, hi, mid, rec.certified))
            if rec.certified:
                lo = mid
            else:
                hi = mid
        per_theta.append((theta, lo, False))
        q_sup = lo
    sups = [s for _, s, _ in per_theta]
    monotone = all(b >= a - 1e-15 for a, b in zip(sups, sups[1:]))
    return CriticalSearch(
        q_hat=q_sup,
        per_theta=per_theta,
        records=records,
        monotone=monotone,
        capped=capped,
        q_cap=float(q_cap),
        tol_q=float(tol_eff),
        trace=trace,
    )


def write_continuation_csv(records, path):
    """Emit the continuation table: theta, q, ratio, certified, iterations, energy."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["theta", "q_infinity", "max_mach_ratio", "certified", "iterations", "energy"]
        )
        for rec in records:
            writer.writerow(
                [
                    f"{rec.theta:.17g}",
                    f"{rec.q_infinity:.17g}",
                    f"{rec.max_mach_ratio:.17g}",
                    int(rec.certified),
                    rec.report.iterations,
                    f"{rec.report.energy:.17g}",
                ]
            )
