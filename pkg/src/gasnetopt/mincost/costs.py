"""Convex separable edge costs F(q) with one-sided derivatives.

Kinds and coefficients:

* ``linear``     (c,)                      F = c q
* ``quadratic``  (c,) or (c, b)            F = c q^2 + b q,   c >= 0
* ``cubic``      (c,) or (c, b)            F = c |q|^3 + b q, c >= 0
* ``piecewise_convex``  ((x0, y0), ...)    linear interpolation of the points,
  slopes non-decreasing; the domain is clipped to [x0, xn].

The cubic term uses |q|^3 so the cost stays convex for both flow directions;
for q >= 0 it is the plain c q^3 with derivative 3 c q^2.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

INF = math.inf
KINDS = ("linear", "quadratic", "cubic", "piecewise_convex")


@dataclass(frozen=True)
class EdgeCost:
    kind: str
    coefficients: tuple
    domain: tuple = (-INF, INF)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}")
        lo, hi = self.domain
        if lo > hi:
            raise ValueError(f"bad cost domain {self.domain}")
        if self.kind == "piecewise_convex":
            pts = tuple((float(x), float(y)) for x, y in self.coefficients)
            if len(pts) < 2:
                raise ValueError("piecewise cost needs at least two points")
            xs = [p[0] for p in pts]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("piecewise breakpoints must be strictly increasing")
            sl = [(y2 - y1) / (x2 - x1) for (x1, y1), (x2, y2) in zip(pts, pts[1:])]
            if any(b < a - 1e-12 * max(1.0, abs(a)) for a, b in zip(sl, sl[1:])):
                raise ValueError("piecewise cost is not convex (slopes must not decrease)")
            object.__setattr__(self, "coefficients", pts)
            object.__setattr__(self, "domain", (max(lo, xs[0]), min(hi, xs[-1])))
        else:
            co = tuple(float(c) for c in self.coefficients)
            need = (1,) if self.kind == "linear" else (1, 2)
            if len(co) not in need:
                raise ValueError(f"{self.kind} cost: wrong number of coefficients {co}")
            if self.kind != "linear" and co[0] < 0:
                raise ValueError(f"{self.kind} cost with negative leading coefficient is not convex")
            object.__setattr__(self, "coefficients", co)

    # -- convenience constructors -------------------------------------------------
    @classmethod
    def linear(cls, c, domain=(-INF, INF)):
        return cls("linear", (c,), domain)

    @classmethod
    def quadratic(cls, c, b=0.0, domain=(-INF, INF)):
        return cls("quadratic", (c, b), domain)

    @classmethod
    def cubic(cls, c, b=0.0, domain=(-INF, INF)):
        return cls("cubic", (c, b), domain)

    @classmethod
    def piecewise(cls, points, domain=(-INF, INF)):
        return cls("piecewise_convex", tuple(points), domain)

    # -- evaluation -------------------------------------------------------------------
    def _lead(self):
        co = self.coefficients
        return co[0], (co[1] if len(co) > 1 else 0.0)

    @property
    def smooth(self) -> bool:
        return self.kind != "piecewise_convex"

    @property
    def breakpoints(self) -> tuple:
        return tuple(x for x, _ in self.coefficients) if self.kind == "piecewise_convex" else ()

    def __call__(self, q) -> float:
        return self.value(q)

    def value(self, q) -> float:
        if self.kind == "linear":
            return self.coefficients[0] * q
        if self.kind == "quadratic":
            c, b = self._lead()
            return c * q * q + b * q
        if self.kind == "cubic":
            c, b = self._lead()
            return c * abs(q) ** 3 + b * q
        pts = self.coefficients
        xs = [p[0] for p in pts]
        if q < xs[0] - 1e-12 or q > xs[-1] + 1e-12:
            raise ValueError(f"flow {q} outside piecewise cost domain [{xs[0]}, {xs[-1]}]")
        j = min(max(bisect.bisect_right(xs, q) - 1, 0), len(pts) - 2)
        (x1, y1), (x2, y2) = pts[j], pts[j + 1]
        return y1 + (y2 - y1) * (q - x1) / (x2 - x1)

    def _slopes(self):
        pts = self.coefficients
        return [(y2 - y1) / (x2 - x1) for (x1, y1), (x2, y2) in zip(pts, pts[1:])]

    def left_derivative(self, q) -> float:
        if self.smooth:
            return self.derivative(q)
        xs, sl = self.breakpoints, self._slopes()
        j = bisect.bisect_left(xs, q) - 1          # segment ending at or after q
        return sl[min(max(j, 0), len(sl) - 1)] if q > xs[0] else -INF

    def right_derivative(self, q) -> float:
        if self.smooth:
            return self.derivative(q)
        xs, sl = self.breakpoints, self._slopes()
        j = bisect.bisect_right(xs, q) - 1
        return sl[min(max(j, 0), len(sl) - 1)] if q < xs[-1] else INF

    def derivative(self, q) -> float:
        """dF/dq; for piecewise costs only valid away from breakpoints."""
        if self.kind == "linear":
            return self.coefficients[0]
        if self.kind == "quadratic":
            c, b = self._lead()
            return 2 * c * q + b
        if self.kind == "cubic":
            c, b = self._lead()
            return 3 * c * q * abs(q) + b
        lo, hi = self.left_derivative(q), self.right_derivative(q)
        if lo != hi and math.isfinite(lo) and math.isfinite(hi):
            raise ValueError(f"piecewise cost has a kink at {q}")
        return hi if math.isfinite(hi) else lo

    def second_derivative(self, q) -> float:
        if self.kind == "quadratic":
            return 2 * self.coefficients[0]
        if self.kind == "cubic":
            return 6 * self.coefficients[0] * abs(q)
        return 0.0

    def is_kink(self, q, tol=0.0) -> bool:
        xs = self.breakpoints
        return any(abs(q - x) <= tol for x in xs[1:-1])

    def inverse_derivative(self, t, lo, hi) -> float:
        """Minimizer of F(q) - t q over [lo, hi] (the Lagrangian edge problem)."""
        lo, hi = max(lo, self.domain[0]), min(hi, self.domain[1])
        if self.kind == "linear":
            c = self.coefficients[0]
            if t > c:
                return hi
            if t < c:
                return lo
            return min(max(0.0, lo), hi)
        if self.kind == "quadratic":
            c, b = self._lead()
            if c == 0:
                return EdgeCost.linear(b).inverse_derivative(t, lo, hi)
            return min(max((t - b) / (2 * c), lo), hi)
        if self.kind == "cubic":
            c, b = self._lead()
            if c == 0:
                return EdgeCost.linear(b).inverse_derivative(t, lo, hi)
            r = (t - b) / (3 * c)
            q = math.copysign(math.sqrt(abs(r)), r)
            return min(max(q, lo), hi)
        # piecewise: the best vertex inside [lo, hi]
        cand = [x for x in self.breakpoints if lo <= x <= hi] + [lo, hi]
        cand = [x for x in cand if math.isfinite(x)]
        return min(cand, key=lambda x: (self.value(x) - t * x, x))

    # -- transformations ----------------------------------------------------------------
    def reflected(self) -> "EdgeCost":
        """Cost of the reversed edge: F'(q) = F(-q)."""
        lo, hi = self.domain
        if self.kind == "piecewise_convex":
            pts = tuple((-x, y) for x, y in reversed(self.coefficients))
            return EdgeCost(self.kind, pts, (-hi, -lo))
        co = list(self.coefficients)
        if self.kind == "linear":
            co[0] = -co[0]
        elif len(co) > 1:
            co[1] = -co[1]
        return EdgeCost(self.kind, tuple(co), (-hi, -lo))

    def scaled(self, alpha) -> "EdgeCost":
        if alpha <= 0:
            raise ValueError("cost scale must be positive")
        if self.kind == "piecewise_convex":
            return EdgeCost(self.kind, tuple((x, alpha * y) for x, y in self.coefficients), self.domain)
        return EdgeCost(self.kind, tuple(alpha * c for c in self.coefficients), self.domain)
