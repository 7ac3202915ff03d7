"""Numerically invertible monotone maps.

Houses the cumulative integrals G, Q of the flow/rate machinery and the
kernel CDFs H, Lambda, either as closed forms or as tabulations of a
nonnegative integrand on a log-spaced grid with panel-wise Gauss-Legendre
quadrature.  Inverses are generalized inverses, robust to flat pieces.
"""

from __future__ import annotations

import numpy as np

from .errors import NonIntegrableRate

_GL_X, _GL_W = np.polynomial.legendre.leggauss(15)


def gauss_panels(f, a, b):
    """Gauss-Legendre integral of ``f`` over panels ``[a_i, b_i]`` (vectorized).

    Accurate to near machine precision for integrands smooth on each panel.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = mid[..., None] + half[..., None] * _GL_X
    vals = np.asarray(f(pts.reshape(-1)), dtype=float).reshape(pts.shape)
    return (vals * _GL_W).sum(axis=-1) * half


def endpoint_integral(f, x0, side, *, factor=4.0, max_steps=400,
                      threshold=1e6, rel_tol=1e-13):
    """Integrate ``f >= 0`` from an endpoint: over ``(0, x0]`` or ``[x0, inf)``.

    Geometric subdivision toward the endpoint; returns ``(value, converged)``.
    Divergence is not decidable numerically, so the flag is heuristic: the
    integral is declared divergent once the partial sum exceeds ``threshold``
    or the pieces fail to decay within ``max_steps`` subdivisions.
    """
    if side not in ("zero", "inf"):
        raise ValueError(f"side must be 'zero' or 'inf', got {side!r}")
    total = 0.0
    edge = float(x0)
    for _ in range(max_steps):
        if side == "zero":
            nxt = edge / factor
            piece = float(gauss_panels(f, nxt, edge))
        else:
            nxt = edge * factor
            piece = float(gauss_panels(f, edge, nxt))
        if not np.isfinite(piece) or piece < 0:
            return np.inf, False
        total += piece
        if total > threshold:
            return np.inf, False
        if piece <= rel_tol * max(total, 1e-300):
            # remaining tail is below the quadrature noise floor
            return total, True
        edge = nxt
        if side == "zero" and edge < 1e-290:
            break
        if side == "inf" and edge > 1e290:
            break
    return np.inf, False


class MonotoneMap:
    """Common interface: vectorized forward map and generalized inverse.

    ``direction`` is +1 for increasing, -1 for decreasing maps.
    ``limit_zero`` / ``limit_inf`` are the values approached at the
    endpoints of (0, inf) (possibly +-inf).
    """

    direction = +1
    construction = "closed_form"
    domain = (0.0, np.inf)
    limit_zero = None
    limit_inf = None

    def __call__(self, x):
        raise NotImplementedError

    def inverse(self, q):
        raise NotImplementedError

    def roundtrip_error(self, xs):
        """max |inverse(forward(x)) - x| / (1 + |x|) over the sample."""
        xs = np.asarray(xs, dtype=float)
        back = self.inverse(self(xs))
        return float(np.max(np.abs(back - xs) / (1.0 + np.abs(xs))))

    def is_monotone_on(self, xs):
        xs = np.sort(np.asarray(xs, dtype=float))
        v = self(xs)
        d = np.diff(v)
        return bool(np.all(d >= 0) if self.direction > 0 else np.all(d <= 0))

    def export_csv(self, path, xs):
        xs = np.asarray(xs, dtype=float)
        data = np.column_stack([xs, self(xs)])
        np.savetxt(path, data, delimiter=",", header="x,value", comments="")


class ClosedFormMap(MonotoneMap):
    """Monotone map given by explicit forward/inverse callables."""

    construction = "closed_form"

    def __init__(self, forward, inverse, direction=+1, domain=(0.0, np.inf),
                 limit_zero=None, limit_inf=None):
        self._forward = forward
        self._inverse = inverse
        self.direction = int(direction)
        self.domain = domain
        self.limit_zero = limit_zero
        self.limit_inf = limit_inf

    def __call__(self, x):
        return self._forward(np.asarray(x, dtype=float))

    def inverse(self, q):
        return self._inverse(np.asarray(q, dtype=float))


class TabulatedIntegralMap(MonotoneMap):
    """Monotone map ``V(x) = +-integral of f`` tabulated on a log grid.

    ``orientation='from_below'`` gives the increasing ``V(x) = int_{x0}^x f``,
    ``orientation='from_above'`` the non-increasing ``V(x) = int_x^{x0} f``.
    ``anchor='auto'`` places x0 at the endpoint (0 resp. +inf) exactly when
    the integral converges there, and at 1 otherwise; a float pins it.

    Between nodes the forward map is evaluated exactly (cached cumulative
    value plus a Gauss panel over the remainder), so its accuracy is that of
    the quadrature, not of an interpolant.  The generalized inverse is a
    bracketing bisection within one grid cell.
    """

    construction = "tabulated"

    def __init__(self, integrand, *, orientation="from_below", anchor="auto",
                 domain=(1e-9, 1e9), n_nodes=4096, require_anchor=False):
        if orientation not in ("from_below", "from_above"):
            raise ValueError(f"bad orientation {orientation!r}")
        lo, hi = float(domain[0]), float(domain[1])
        self.f = integrand
        self.domain = (lo, hi)
        self.orientation = orientation
        self.nodes = np.geomspace(lo, hi, int(n_nodes))
        cells = gauss_panels(integrand, self.nodes[:-1], self.nodes[1:])
        if np.any(cells < -1e-15 * max(1.0, float(np.max(np.abs(cells))))):
            raise ValueError("integrand must be nonnegative")
        self.cumvals = np.concatenate([[0.0], np.cumsum(np.maximum(cells, 0.0))])
        self._head, self._head_ok = endpoint_integral(integrand, lo, "zero")
        self._tail, self._tail_ok = endpoint_integral(integrand, hi, "inf")

        sign = +1.0 if orientation == "from_below" else -1.0
        if anchor == "auto":
            if orientation == "from_below":
                anchor = 0.0 if self._head_ok else 1.0
            else:
                anchor = np.inf if self._tail_ok else 1.0
        if anchor == 0.0:
            if not self._head_ok:
                raise NonIntegrableRate("integrand not integrable at 0")
            const = sign * self._head if orientation == "from_below" else np.nan
            if orientation == "from_above":
                raise ValueError("anchor 0 invalid for from_above maps")
        elif anchor == np.inf:
            if orientation == "from_below":
                raise ValueError("anchor inf invalid for from_below maps")
            if not self._tail_ok:
                raise NonIntegrableRate("integrand not integrable at infinity")
            const = self.cumvals[-1] + self._tail
        else:
            a = float(anchor)
            if require_anchor and not (lo <= a <= hi):
                raise ValueError("interior anchor outside tabulation domain")
            const = -sign * self._cum(np.array([a]))[0]
        self.anchor = anchor
        self._sign = sign
        self._const = float(const)
        self.direction = +1 if orientation == "from_below" else -1

        # endpoint limits of V on (0, inf)
        head = self._head if self._head_ok else np.inf
        tail = self._tail if self._tail_ok else np.inf
        self.limit_zero = self._sign * (-head) + self._const
        self.limit_inf = self._sign * (self.cumvals[-1] + tail) + self._const

    # -- forward ---------------------------------------------------------
    def _cum(self, x):
        """int_{nodes[0]}^x f, exact per-point (cached node value + panel)."""
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.nodes, x, side="right"),
                      1, len(self.nodes) - 1)
        base = self.cumvals[idx - 1]
        rem = gauss_panels(self.f, self.nodes[idx - 1], x)
        return base + rem

    def __call__(self, x):
        return self._sign * self._cum(x) + self._const

    def derivative(self, x):
        return self._sign * np.asarray(self.f(np.asarray(x, dtype=float)))

    # -- generalized inverse ---------------------------------------------
    def inverse(self, q, n_bisect=48):
        """Generalized inverse, clamped to the tabulation domain.

        Increasing maps: inf{x : V(x) >= q}.  Non-increasing maps:
        sup{x : V(x) >= q} (the standard convention for decreasing Q).
        """
        q = np.asarray(q, dtype=float)
        t = (q - self._const) / self._sign
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        lo, hi = self.domain
        if self.direction > 0:
            # leftmost x with cum(x) >= t
            j = np.searchsorted(self.cumvals, t, side="left")
        else:
            # sup{x: cum(x) <= t}: rightmost crossing
            j = np.searchsorted(self.cumvals, t, side="right")
        j = np.clip(j, 1, len(self.nodes) - 1)
        a = self.nodes[j - 1].copy()
        b = self.nodes[j].copy()
        base = self.cumvals[j - 1]
        tau = t - base
        below = t <= self.cumvals[0]
        above = t >= self.cumvals[-1]
        for _ in range(n_bisect):
            mid = np.sqrt(a * b)
            fm = gauss_panels(self.f, self.nodes[j - 1], mid)
            if self.direction > 0:
                take_left = fm >= tau
            else:
                take_left = fm > tau
            b = np.where(take_left, mid, b)
            a = np.where(take_left, a, mid)
        out = b if self.direction > 0 else a
        # t below the table maps to the lower domain edge, above to the upper,
        # for either direction (t is the cumulative-integral target)
        out = np.where(below, lo, out)
        out = np.where(above, hi, out)
        return float(out[0]) if scalar else out
