"""Shape-preserving quadratic spline (Schumaker) and convex-hull repair of knot data."""

from __future__ import annotations

import numpy as np


def lower_convex_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the points on the lower convex hull (x sorted ascending)."""
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            i0, i1 = hull[-2], hull[-1]
            cross = (x[i1] - x[i0]) * (y[i] - y[i0]) - (y[i1] - y[i0]) * (x[i] - x[i0])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.asarray(hull)


def estimate_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Knot slopes for convex data: weighted secant averages, clipped between neighbouring secants."""
    d = np.diff(y) / np.diff(x)
    s = np.empty(len(x))
    if len(x) == 2:
        return np.array([d[0], d[0]])
    h = np.diff(x)
    s[1:-1] = (h[1:] * d[:-1] + h[:-1] * d[1:]) / (h[:-1] + h[1:])
    s[1:-1] = np.clip(s[1:-1], d[:-1], d[1:])
    s[0] = 2 * d[0] - s[1] if 2 * d[0] - s[1] <= d[0] else d[0]
    s[-1] = 2 * d[-1] - s[-2] if 2 * d[-1] - s[-2] >= d[-1] else d[-1]
    return s


def repair_slopes(x: np.ndarray, y: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Clip slopes so ``s_i <= secant_i <= s_{i+1}`` (Hermite convexity)."""
    d = np.diff(y) / np.diff(x)
    s = np.array(s, dtype=float)
    s[:-1] = np.minimum(s[:-1], d)
    s[1:] = np.maximum(s[1:], d)
    return s


class ConvexSpline:
    """C1 piecewise-quadratic interpolant of Hermite data ``(x_i, y_i, s_i)``.

    Each interval gets one extra knot placed so that the derivative stays
    between the end slopes, which keeps convex data convex.  Outside the
    knot range the spline continues linearly.
    """

    def __init__(self, x, y, slopes=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if len(x) < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("need at least two strictly increasing knots")
        s = estimate_slopes(x, y) if slopes is None else np.asarray(slopes, dtype=float)
        s = repair_slopes(x, y, s)
        self.x, self.y, self.s = x, y, s
        pieces = []
        for i in range(len(x) - 1):
            h = x[i + 1] - x[i]
            d = (y[i + 1] - y[i]) / h
            s0, s1 = s[i], s[i + 1]
            if s1 - s0 <= 1e-14 * (1 + abs(s0)):
                lam = 0.5
                sm = d
            else:
                lo = max(0.0, (s0 + s1 - 2 * d) / (s1 - s0))
                hi = min(1.0, 2 * (s1 - d) / (s1 - s0))
                lam = 0.5 * (lo + hi)
                a = lam * h
                sm = 2 * d - (s0 * a + s1 * (h - a)) / h
            xi = x[i] + lam * h
            yi = y[i] + 0.5 * (s0 + sm) * (xi - x[i])
            pieces.append((x[i], xi, x[i + 1], y[i], yi, s0, sm, s1))
        self.pieces = pieces

    def _locate(self, t):
        return int(np.clip(np.searchsorted(self.x, t, side="right") - 1, 0, len(self.pieces) - 1))

    def value(self, t: float) -> float:
        if t <= self.x[0]:
            return float(self.y[0] + self.s[0] * (t - self.x[0]))
        if t >= self.x[-1]:
            return float(self.y[-1] + self.s[-1] * (t - self.x[-1]))
        x0, xi, x1, y0, yi, s0, sm, s1 = self.pieces[self._locate(t)]
        if t <= xi:
            a = xi - x0
            u = t - x0
            return float(y0 + s0 * u + (sm - s0) * u * u / (2 * a)) if a > 0 else float(y0)
        b = x1 - xi
        u = t - xi
        return float(yi + sm * u + (s1 - sm) * u * u / (2 * b)) if b > 0 else float(yi)

    def derivative(self, t: float) -> float:
        if t <= self.x[0]:
            return float(self.s[0])
        if t >= self.x[-1]:
            return float(self.s[-1])
        x0, xi, x1, y0, yi, s0, sm, s1 = self.pieces[self._locate(t)]
        if t <= xi:
            a = xi - x0
            return float(s0 + (sm - s0) * (t - x0) / a) if a > 0 else float(s0)
        b = x1 - xi
        return float(sm + (s1 - sm) * (t - xi) / b) if b > 0 else float(s1)

    def __call__(self, t):
        if np.ndim(t):
            return np.array([self.value(float(v)) for v in np.ravel(t)]).reshape(np.shape(t))
        return self.value(float(t))
