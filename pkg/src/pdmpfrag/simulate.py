"""Monte Carlo engine for the minimal PDMP.

Jump chains are sampled exactly: holding times via the generalized inverse
of the cumulative rate, pre-jump positions directly through Q (never by
composing the flow with the holding time), daughter sizes through the
kernel's inverse CDF.  Randomness is counter-based (Philox keyed by master
seed and path index) so paths are independent and reproducible for any
worker count.  Explosion is never detected, only bracketed: estimators
expose their truncation sensitivity.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .characteristics import Regime
from .errors import HorizonExceeded, InfiniteHolding, NotADensity
from .kernels import _clamp_q

DEFAULT_N_MAX = 10_000
DEFAULT_T_MAX = 1_000.0

CEMETERY = object()  # sentinel returned by state_at past a possible explosion


class TrajectoryStatus(enum.Enum):
    ALIVE_AT_HORIZON = "alive_at_horizon"
    EXHAUSTED_JUMP_BUDGET = "exhausted_jump_budget"
    DOMAIN_EXIT_AT_ZERO = "domain_exit_at_zero"


@dataclass
class Trajectory:
    """One sampled jump chain: t_0 = 0 < t_1 < ... with positions xi_n."""

    jump_times: np.ndarray
    positions: np.ndarray
    status: TrajectoryStatus
    horizon: float
    seed: int
    path_id: int

    @property
    def holding_times(self):
        return np.diff(self.jump_times)

    def to_csv(self, path):
        data = np.column_stack([np.arange(len(self.jump_times)),
                                self.jump_times, self.positions])
        np.savetxt(path, data, delimiter=",", header="n,t_n,xi_n", comments="")


@dataclass
class Estimate:
    value: float
    std_error: float
    n_paths: int
    diagnostics: dict = field(default_factory=dict)


def path_rng(seed, path_id):
    """Counter-based per-path generator: key = (master seed, path index)."""
    key = np.array([seed, path_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def simulate_chain(spec, x0, *, seed, path_id=0, n_max=DEFAULT_N_MAX,
                   t_max=DEFAULT_T_MAX):
    """Sample one jump chain.  Bit-identical for identical (seed, path_id, spec).

    Stops at the first of: t_n > t_max, n = n_max jumps, or 0-absorption of
    the decay orbit.  Raises InfiniteHolding for mis-specified models whose
    cumulative rate along an orbit stays bounded.
    """
    if x0 <= 0:
        raise ValueError("x0 must be positive")
    if n_max < 1 or t_max <= 0:
        raise ValueError("need n_max >= 1 and t_max > 0")
    gen = path_rng(seed, path_id)
    regime = spec.regime
    times = [0.0]
    positions = [float(x0)]
    status = TrajectoryStatus.EXHAUSTED_JUMP_BUDGET
    t = 0.0
    x = float(x0)
    for _ in range(n_max):
        u_eps, u_theta = gen.random(2)
        eps = -math.log1p(-u_eps)
        if regime is Regime.PURE_JUMP:
            rate = float(spec.phi(x))
            if rate <= 0:
                raise InfiniteHolding("zero jump rate in pure-jump regime")
            dt = eps / rate
            x_pre = x
        else:
            qx = float(spec.Q(np.array([x]))[0])
            lim = spec.Q.limit_inf if regime is Regime.GROWTH else spec.Q.limit_zero
            avail = np.inf if lim is None else lim - qx
            if eps > avail:
                # no jump before the rate budget runs out along this orbit
                g0 = spec.G.limit_zero
                if regime is Regime.DECAY and g0 is not None and np.isfinite(g0):
                    t = t + float(g0 - spec.G(np.array([x]))[0])
                    status = TrajectoryStatus.DOMAIN_EXIT_AT_ZERO
                    times.append(t)
                    positions.append(0.0)
                    break
                raise InfiniteHolding(
                    "cumulative rate along the orbit is bounded; check asGQ/asGQd")
            x_pre = float(spec.Q.inverse(np.array([qx + eps]))[0])
            if not (x_pre > 0.0 and math.isfinite(x_pre)):
                break  # state below float range; time frozen here
            gx = float(spec.G(np.array([x]))[0])
            dt = float(spec.G(np.array([x_pre]))[0]) - gx
            if dt <= 1e-8 * abs(gx):
                # the G-difference has lost its mantissa; the orbit segment is
                # then short, so eps / phi(midpoint) is the exact limit
                mid = math.sqrt(x * x_pre)
                with np.errstate(over="ignore"):
                    dt = eps / float(spec.phi(mid))
        if not (dt > 0.0 and math.isfinite(dt)):
            # time increment lost to rounding: the jump times have numerically
            # converged (explosion candidate); stop without a bogus jump
            break
        x = float(spec.kernel.sample(u_theta, x_pre))
        t = t + dt
        times.append(t)
        positions.append(x)
        if t > t_max:
            status = TrajectoryStatus.ALIVE_AT_HORIZON
            break
        if x <= 0.0 or not math.isfinite(x):
            status = TrajectoryStatus.DOMAIN_EXIT_AT_ZERO
            break
    return Trajectory(np.array(times), np.array(positions), status,
                      float(t_max), int(seed), int(path_id))


def state_at(traj, spec, t):
    """X(t) along a recorded trajectory; CEMETERY past a possible explosion."""
    from .characteristics import flow

    if t < 0:
        raise ValueError("t must be nonnegative")
    times = traj.jump_times
    if traj.status is TrajectoryStatus.ALIVE_AT_HORIZON and t > traj.horizon:
        raise HorizonExceeded(f"trajectory answers only up to t={traj.horizon}")
    if t > times[-1]:
        if traj.status is TrajectoryStatus.EXHAUSTED_JUMP_BUDGET:
            return CEMETERY  # possibly exploded; conservative
        if traj.status is TrajectoryStatus.DOMAIN_EXIT_AT_ZERO:
            return 0.0
        raise HorizonExceeded("time beyond the recorded jump chain")
    n = int(np.searchsorted(times, t, side="right") - 1)
    return flow(spec, t - times[n], traj.positions[n])


# -- vectorized chain engine ------------------------------------------------

def _run_block(spec, x0s, seed, path_offset, n_max, checkpoints, t_stop,
               out_times, out_final_x, out_status, sl):
    """Advance a contiguous block of paths; writes results into slices."""
    regime = spec.regime
    kernel = spec.kernel
    P = len(x0s)
    x = np.asarray(x0s, dtype=float).copy()
    t = np.zeros(P)
    status = np.zeros(P, dtype=np.int8)  # 0 running, 1 stabilized, 2 t_stop, 3 exit0
    gens = [path_rng(seed, path_offset + i) for i in range(P)]
    cps = list(checkpoints)
    cp_rows = {c: k for k, c in enumerate(cps)}
    chunk = 64
    n_done = 0
    if regime is not Regime.PURE_JUMP:
        lim = spec.Q.limit_inf if regime is Regime.GROWTH else spec.Q.limit_zero
        lim = np.inf if lim is None else lim
        g0 = spec.G.limit_zero
        g0 = np.inf if g0 is None else g0
    while n_done < n_max:
        steps = min(chunk, n_max - n_done)
        run = np.nonzero(status == 0)[0]
        if len(run) == 0:
            # all paths settled; remaining checkpoints see frozen times
            for c in cps:
                if c > n_done:
                    out_times[cp_rows[c], sl] = t
            break
        draws = np.empty((len(run), 2 * steps))
        for r, i in enumerate(run):
            draws[r] = gens[i].random(2 * steps)
        loc_x = x[run]
        loc_t = t[run]
        loc_stat = np.zeros(len(run), dtype=np.int8)
        for s in range(steps):
            act = loc_stat == 0
            if np.any(act):
                eps = -np.log1p(-draws[act, 2 * s])
                theta = _clamp_q(draws[act, 2 * s + 1])
                xa = loc_x[act]
                if regime is Regime.PURE_JUMP:
                    rate = np.asarray(spec.phi(xa), dtype=float)
                    if np.any(rate <= 0):
                        raise InfiniteHolding("zero jump rate in pure-jump regime")
                    dt = eps / rate
                    x_pre = xa
                    exceeded = np.zeros(len(xa), dtype=bool)
                else:
                    qx = spec.Q(xa)
                    with np.errstate(invalid="ignore"):
                        exceeded = eps > (lim - qx)
                    x_pre = spec.Q.inverse(qx + np.where(exceeded, 0.0, eps))
                    ga = spec.G(xa)
                    # paths whose state dropped below float range cannot be
                    # advanced further; they are frozen at their current time
                    dead = ~(x_pre > 0.0) | ~np.isfinite(x_pre)
                    x_pre = np.where(dead, xa, x_pre)
                    with np.errstate(over="ignore", invalid="ignore"):
                        dt = spec.G(x_pre) - ga
                        lossy = dt <= 1e-8 * np.abs(ga)
                        if np.any(lossy):
                            # G-difference lost to rounding: short orbit
                            # segment, eps/phi(geometric midpoint) is exact
                            mid = np.sqrt(xa * x_pre)
                            dt = np.where(lossy, eps / np.asarray(
                                spec.phi(mid), dtype=float), dt)
                    dt = np.where(dead, np.nan, dt)  # freeze via the guard below
                x_new = np.asarray(kernel.sample(theta, x_pre), dtype=float)
                t_new = loc_t[act] + dt
                if np.any(exceeded):
                    if regime is Regime.GROWTH or not np.isfinite(g0):
                        raise InfiniteHolding(
                            "cumulative rate along the orbit is bounded")
                    t_new = np.where(exceeded, loc_t[act] + (g0 - spec.G(xa)),
                                     t_new)
                    x_new = np.where(exceeded, 0.0, x_new)
                # non-increasing or non-finite time: increment lost to
                # rounding, i.e. the jump times have numerically converged;
                # freeze at the previous time without recording a bogus jump
                degenerate = ~(np.isfinite(t_new) & (t_new > loc_t[act]))
                degenerate &= ~exceeded
                t_new = np.where(degenerate, loc_t[act], t_new)
                x_new = np.where(degenerate, loc_x[act], x_new)
                stab = degenerate | (x_new <= 0) | ~np.isfinite(x_new)
                newstat = np.zeros(len(xa), dtype=np.int8)
                newstat[stab] = 1
                if np.any(exceeded):
                    newstat[exceeded] = 3
                if t_stop is not None:
                    newstat[(t_new > t_stop) & (newstat == 0)] = 2
                loc_t[act] = t_new
                loc_x[act] = x_new
                loc_stat[act] = newstat
            n_jump = n_done + s + 1
            if n_jump in cp_rows:
                t[run] = loc_t
                out_times[cp_rows[n_jump], sl.start + run] = loc_t
                # frozen paths outside `run` keep their settled times
                frozen = status != 0
                if np.any(frozen):
                    idx = np.nonzero(frozen)[0]
                    out_times[cp_rows[n_jump], sl.start + idx] = t[idx]
        x[run] = loc_x
        t[run] = loc_t
        status[run] = loc_stat
        n_done += steps
    out_final_x[sl] = x
    out_status[sl] = status


def run_chains(spec, x0s, *, seed, n_max=DEFAULT_N_MAX, checkpoints=None,
               t_stop=None, workers=1, path_offset=0):
    """Jump-time checkpoints for a batch of paths.

    Returns (times, final_x, status) where ``times[k, p]`` is t_{checkpoints[k]}
    of path p.  Paths whose jump-time increments underflow (numerically
    converged explosion candidates) are frozen; their later checkpoints repeat
    the settled time, which is exact.  With ``t_stop`` set, paths are parked
    once t exceeds it (their recorded time is then only a witness > t_stop).
    Results are independent of the worker count.
    """
    x0s = np.asarray(x0s, dtype=float)
    P = len(x0s)
    if checkpoints is None:
        checkpoints = (n_max,)
    checkpoints = sorted(set(int(c) for c in checkpoints))
    if checkpoints[-1] > n_max or checkpoints[0] < 1:
        raise ValueError("checkpoints must lie in [1, n_max]")
    out_times = np.full((len(checkpoints), P), np.nan)
    out_final_x = np.empty(P)
    out_status = np.empty(P, dtype=np.int8)
    block = max(1, min(32768, (P + max(1, workers) - 1) // max(1, workers)))
    slices = [slice(i, min(i + block, P)) for i in range(0, P, block)]

    def work(sl):
        _run_block(spec, x0s[sl], seed, path_offset + sl.start, n_max,
                   checkpoints, t_stop, out_times, out_final_x, out_status, sl)

    if workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(work, slices))
    else:
        for sl in slices:
            work(sl)
    return out_times, out_final_x, out_status, checkpoints


# -- estimators -------------------------------------------------------------

def _binomial_se(p, n):
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def estimate_explosion_cdf(spec, x0, t, n_paths, n_max=DEFAULT_N_MAX, *,
                           seed, workers=1):
    """P_x(t_infty <= t) approximated from above in law by P(t_{n_max} <= t).

    The truncation is monotone: t_{n_max} <= t_infty, so the estimate can
    only overshoot; the value at n_max/2 is reported as sensitivity.
    """
    if n_paths < 100:
        raise ValueError("need n_paths >= 100")
    if t < 0:
        raise ValueError("t must be nonnegative")
    half = max(1, n_max // 2)
    times, _, status, cps = run_chains(
        spec, np.full(n_paths, float(x0)), seed=seed, n_max=n_max,
        checkpoints=(half, n_max), t_stop=t, workers=workers)
    val = float(np.mean(times[cps.index(n_max)] <= t))
    val_half = float(np.mean(times[cps.index(half)] <= t))
    return Estimate(val, _binomial_se(val, n_paths), n_paths, {
        "n_max": n_max, "value_at_half_budget": val_half,
        "frac_budget_exhausted": float(np.mean(status == 0)),
    })


def estimate_laplace_explosion(spec, x0, lam, n_paths, n_max=DEFAULT_N_MAX, *,
                               seed, workers=1):
    """E_x e^{-lam * t_infty} bounded from above by the mean of e^{-lam t_{n_max}}."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    half = max(1, n_max // 2)
    t_stop = 745.0 / lam  # e^{-lam t} underflows beyond this
    times, _, status, cps = run_chains(
        spec, np.full(n_paths, float(x0)), seed=seed, n_max=n_max,
        checkpoints=(half, n_max), t_stop=t_stop, workers=workers)
    w_full = np.exp(-lam * times[cps.index(n_max)])
    w_half = np.exp(-lam * times[cps.index(half)])
    val = float(np.mean(w_full))
    se = float(np.std(w_full, ddof=1) / math.sqrt(n_paths))
    return Estimate(val, se, n_paths, {
        "n_max": n_max, "truncation_gap": float(np.mean(w_half - w_full)),
        "frac_budget_exhausted": float(np.mean(status == 0)),
    })


def estimate_survival_mass(spec, u0, t, n_paths, n_max=DEFAULT_N_MAX, *,
                           seed, workers=1, tol_mass=1e-6):
    """||P(t) u0|| estimated as the u0-average of 1{t_{n_max} > t}.

    Initial states are drawn by stratified inverse-CDF sampling from the grid
    density (one stratum per path); the truncation bias is upward and bounded
    by the half-budget sensitivity.
    """
    total = u0.total_mass
    if abs(total - 1.0) > tol_mass:
        raise NotADensity(f"u0 has mass {total}, expected 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    strat_gen = np.random.Generator(
        np.random.Philox(key=np.array([seed, 2 ** 63], dtype=np.uint64)))
    us = (np.arange(n_paths) + strat_gen.random(n_paths)) / n_paths
    x0s = u0.sample_inverse_cdf(us)
    half = max(1, n_max // 2)
    times, _, status, cps = run_chains(
        spec, x0s, seed=seed, n_max=n_max, checkpoints=(half, n_max),
        t_stop=t, workers=workers)
    surv = times[cps.index(n_max)] > t
    surv_half = times[cps.index(half)] > t
    val = float(np.mean(surv))
    return Estimate(val, _binomial_se(val, n_paths), n_paths, {
        "n_max": n_max, "value_at_half_budget": float(np.mean(surv_half)),
        "frac_budget_exhausted": float(np.mean(status == 0)),
    })
