"""Deterministic part of the PDMP: semiflow, jump rate, and the G/Q machinery.

The semiflow is pi_t x = G^{-1}(G(x) + t) with G the (anti)derivative of
1/g, and the cumulative jump rate along an orbit is
phi_x(t) = Q(pi_t x) - Q(x) with Q the (anti)derivative of phi/g.  The
identities hold in both the growth and the decay regime with the sign
conventions baked into the monotone maps.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, DomainExit, InfiniteHolding, NonIntegrableRate
from .monotone import ClosedFormMap, MonotoneMap, TabulatedIntegralMap

DEFAULT_DOMAIN = (1e-9, 1e9)
DEFAULT_NODES = 4096


class Regime(enum.Enum):
    PURE_JUMP = "pure_jump"
    GROWTH = "growth"
    DECAY = "decay"


@dataclass(frozen=True)
class SemiflowSpec:
    """Drift description.  ``g`` is the positive drift magnitude.

    ``power_beta`` declares the closed-form family g(x) = x**(1 - beta)
    (beta >= 0 growth, beta <= 0 decay); ``closed_form`` is an optional
    (G, G_inverse) pair of callables overriding numeric construction.
    """

    regime: Regime
    g: object = None
    power_beta: float | None = None
    closed_form: tuple | None = None

    def g_eval(self, x):
        if self.power_beta is not None and self.g is None:
            return np.asarray(x, dtype=float) ** (1.0 - self.power_beta)
        return self.g(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class RateSpec:
    """Jump rate phi >= 0; ``power`` tags the family phi(x) = a * x**alpha."""

    phi: object = None
    power: tuple | None = None  # (a, alpha)

    def phi_eval(self, x):
        if self.power is not None and self.phi is None:
            a, alpha = self.power
            return a * np.asarray(x, dtype=float) ** alpha
        return self.phi(np.asarray(x, dtype=float))


def _power_map(coeff, p, orientation):
    """Closed-form map for integrand coeff * x**(p-1), anchored per convention."""
    if orientation == "from_below":  # increasing; anchor 0 when p > 0, else 1
        if p > 0:
            c = coeff / p

            def inv_below(q):
                with np.errstate(invalid="ignore"):
                    return np.maximum(np.asarray(q, dtype=float) / c,
                                      0.0) ** (1.0 / p)

            return ClosedFormMap(
                lambda x: c * x ** p, inv_below,
                direction=+1, limit_zero=0.0, limit_inf=np.inf)
        if p == 0:
            return ClosedFormMap(
                lambda x: coeff * np.log(x),
                lambda q: np.exp(q / coeff),
                direction=+1, limit_zero=-np.inf, limit_inf=np.inf)
        raise NonIntegrableRate("growth-regime integrand diverges at infinity")
    else:  # from_above: non-increasing; anchor +inf when p < 0, else 1
        if p < 0:
            c = coeff / (-p)

            def inv(q):
                q = np.asarray(q, dtype=float)
                # generalized inverse: sup{x: V(x) >= q}; 0 once q <= V(inf) = 0
                with np.errstate(divide="ignore"):
                    val = np.where(q > 0.0, np.maximum(q / c, 1e-300) ** (1.0 / p), 0.0)
                return val

            def fwd(x):
                with np.errstate(over="ignore", divide="ignore"):
                    return c * np.asarray(x, dtype=float) ** p

            return ClosedFormMap(
                fwd, inv, direction=-1, limit_zero=np.inf, limit_inf=0.0)
        if p == 0:
            return ClosedFormMap(
                lambda x: -coeff * np.log(x),
                lambda q: np.exp(-q / coeff),
                direction=-1, limit_zero=np.inf, limit_inf=-np.inf)
        raise NonIntegrableRate("decay-regime integrand diverges at 0")


@dataclass
class CharacteristicsSpec:
    """The triple (semiflow pi, rate phi, jump kernel J) plus derived G, Q."""

    semiflow: SemiflowSpec
    rate: RateSpec
    kernel: object = None
    G: MonotoneMap | None = None
    Q: MonotoneMap | None = None
    domain: tuple = DEFAULT_DOMAIN
    divergence: dict = field(default_factory=dict)

    @property
    def regime(self):
        return self.semiflow.regime

    def phi(self, x):
        return self.rate.phi_eval(x)

    def g(self, x):
        return self.semiflow.g_eval(x)

    def consistency_residual(self, xs, h=1e-6):
        """max residual of the finite-difference checks G'*g = +-1, Q'*g = +-phi."""
        xs = np.asarray(xs, dtype=float)
        s = 1.0 if self.regime is Regime.GROWTH else -1.0
        gp = (self.G(xs * (1 + h)) - self.G(xs * (1 - h))) / (2 * h * xs)
        qp = (self.Q(xs * (1 + h)) - self.Q(xs * (1 - h))) / (2 * h * xs)
        r1 = np.abs(gp * self.g(xs) - s)
        r2 = np.abs(qp * self.g(xs) - s * self.phi(xs)) / (1.0 + self.phi(xs))
        return float(max(np.max(r1), np.max(r2)))


def _divergence_flag(tab_map, regime):
    """asGQ/asGQd heuristic: the defining integral must diverge at the far end."""
    if not isinstance(tab_map, TabulatedIntegralMap):
        return "declared"
    ok = (not tab_map._tail_ok) if regime is Regime.GROWTH else (not tab_map._head_ok)
    return "verified" if ok else "failed"


def build_gq(semiflow: SemiflowSpec, rate: RateSpec, *, domain=DEFAULT_DOMAIN,
             n_nodes=DEFAULT_NODES):
    """Construct the monotone maps G (of 1/g) and Q (of phi/g).

    Anchors follow the orbit's direction: the endpoint (0 for growth,
    +inf for decay) when the integral converges there, otherwise 1.
    """
    regime = semiflow.regime
    if regime is Regime.PURE_JUMP:
        raise ValueError("build_gq applies to growth/decay regimes only")
    orientation = "from_below" if regime is Regime.GROWTH else "from_above"

    # sanity: g > 0 at sample points
    xs = np.geomspace(domain[0], domain[1], 64)
    gx = semiflow.g_eval(xs)
    if np.any(~np.isfinite(gx)) or np.any(gx <= 0):
        raise DomainError("g must be positive on the working domain")

    divergence = {}
    if semiflow.closed_form is not None:
        fwd, inv = semiflow.closed_form
        direction = +1 if regime is Regime.GROWTH else -1
        G = ClosedFormMap(fwd, inv, direction=direction)
        divergence["G"] = "declared"
    elif semiflow.power_beta is not None:
        beta = semiflow.power_beta
        G = _power_map(1.0, beta, orientation)
        ok = beta >= 0 if regime is Regime.GROWTH else beta <= 0
        divergence["G"] = "verified" if ok else "failed"
    else:
        G = TabulatedIntegralMap(lambda x: 1.0 / semiflow.g_eval(x),
                                 orientation=orientation, domain=domain,
                                 n_nodes=n_nodes)
        divergence["G"] = _divergence_flag(G, regime)

    if rate.power is not None and semiflow.power_beta is not None:
        a, alpha = rate.power
        if a <= 0:
            raise DomainError("power-law rate needs a > 0")
        Q = _power_map(a, alpha + semiflow.power_beta, orientation)
        p = alpha + semiflow.power_beta
        ok = p >= 0 if regime is Regime.GROWTH else p <= 0
        divergence["Q"] = "verified" if ok else "failed"
    else:
        def phi_over_g(x):
            return rate.phi_eval(x) / semiflow.g_eval(x)
        Q = TabulatedIntegralMap(phi_over_g, orientation=orientation,
                                 domain=domain, n_nodes=n_nodes)
        divergence["Q"] = _divergence_flag(Q, regime)

    return G, Q, divergence


def build_characteristics(semiflow, rate, kernel=None, *, domain=DEFAULT_DOMAIN,
                          n_nodes=DEFAULT_NODES):
    """Assemble a CharacteristicsSpec, tabulating G and Q when needed."""
    if semiflow.regime is Regime.PURE_JUMP:
        xs = np.geomspace(domain[0], domain[1], 64)
        phis = rate.phi_eval(xs)
        if np.any(phis < 0):
            raise DomainError("phi must be nonnegative")
        flag = "verified" if np.all(phis > 0) else "failed"
        return CharacteristicsSpec(semiflow, rate, kernel, None, None,
                                   domain, {"phi_positive": flag})
    G, Q, divergence = build_gq(semiflow, rate, domain=domain, n_nodes=n_nodes)
    return CharacteristicsSpec(semiflow, rate, kernel, G, Q, domain, divergence)


# -- flow and holding-time machinery ---------------------------------------

def flow_vec(spec, t, x):
    """pi_t x, vectorized; returns (positions, absorbed_mask).

    In the decay regime with G(0+) finite the flow may reach 0 before t;
    such entries are returned as 0.0 with the mask set.
    """
    x = np.asarray(x, dtype=float)
    if spec.regime is Regime.PURE_JUMP:
        return np.broadcast_to(x, np.broadcast(x, t).shape).copy(), \
            np.zeros(np.broadcast(x, t).shape, dtype=bool)
    gx = spec.G(x) + t
    absorbed = np.zeros(np.shape(gx), dtype=bool)
    if spec.regime is Regime.DECAY and spec.G.limit_zero is not None \
            and np.isfinite(spec.G.limit_zero):
        absorbed = np.asarray(gx > spec.G.limit_zero)
    y = spec.G.inverse(gx)
    y = np.where(absorbed, 0.0, y)
    return y, absorbed


def flow(spec, t, x):
    """pi_t x for scalar t >= 0, x > 0.  Raises DomainExit on 0-absorption."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if x <= 0:
        raise DomainError("state must be positive")
    if spec.regime is Regime.PURE_JUMP:
        return float(x)
    y, absorbed = flow_vec(spec, t, np.array([x], dtype=float))
    if absorbed[0]:
        hit = float(spec.G.limit_zero - spec.G(np.array([x]))[0])
        raise DomainExit(hit)
    return float(y[0])


def cumulative_rate(spec, x, t):
    """phi_x(t) = int_0^t phi(pi_s x) ds, via the Q identity."""
    if spec.regime is Regime.PURE_JUMP:
        return spec.phi(x) * t
    y, absorbed = flow_vec(spec, t, x)
    qx = spec.Q(np.asarray(x, dtype=float))
    lim = spec.Q.limit_zero if spec.Q.limit_zero is not None else np.inf
    out = np.where(absorbed, lim - qx, spec.Q(np.where(absorbed, 1.0, y)) - qx)
    if np.ndim(x) == 0 and np.ndim(t) == 0:
        return float(out)
    return out


def _available_rate(spec, qx):
    """Total cumulative rate along the forward orbit starting from Q(x)=qx."""
    lim = spec.Q.limit_inf if spec.regime is Regime.GROWTH else spec.Q.limit_zero
    if lim is None:
        return np.inf
    return lim - qx


def post_flow_position_vec(spec, x, q):
    """Pre-jump position pi_{phi_x^{<-}(q)} x = Q^{<-}(Q(x) + q), vectorized."""
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    if spec.regime is Regime.PURE_JUMP:
        return np.broadcast_to(x, np.broadcast(x, q).shape).copy()
    return spec.Q.inverse(spec.Q(x) + q)


def inverse_cumulative_rate(spec, x, q):
    """Holding-time quantile phi_x^{<-}(q) for scalar x > 0, q >= 0."""
    if q < 0:
        raise ValueError("q must be nonnegative")
    if q == 0:
        return 0.0
    if spec.regime is Regime.PURE_JUMP:
        rate = float(spec.phi(x))
        if rate <= 0:
            raise InfiniteHolding("zero jump rate in pure-jump regime")
        return q / rate
    qx = float(spec.Q(np.array([x]))[0])
    if q > _available_rate(spec, qx):
        raise InfiniteHolding(
            "quantile exceeds the total cumulative rate along the orbit")
    y = float(spec.Q.inverse(np.array([qx + q]))[0])
    return float(spec.G(np.array([y]))[0] - spec.G(np.array([x]))[0])


def post_flow_position(spec, x, q):
    """Scalar pre-jump position; see post_flow_position_vec."""
    if q < 0:
        raise ValueError("q must be nonnegative")
    if spec.regime is Regime.PURE_JUMP:
        return float(x)
    qx = float(spec.Q(np.array([x]))[0])
    if q > _available_rate(spec, qx):
        raise InfiniteHolding(
            "quantile exceeds the total cumulative rate along the orbit")
    return float(spec.Q.inverse(np.array([qx + q]))[0])
