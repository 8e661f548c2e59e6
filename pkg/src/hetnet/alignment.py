"""Pen-tree antenna alignment: quarter-area search steered by RTT heat."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ALIGN_COLUMNS = ("iter", "cx", "cy", "width", "height", "epicenter_x", "epicenter_y")


@dataclass(frozen=True)
class SearchRect:
    center: tuple
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError("degenerate rectangle: width and height must be > 0")
        if not all(math.isfinite(v) for v in (*self.center, self.width, self.height)):
            raise ValueError("rectangle must be finite")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def bounds(self):
        cx, cy = self.center
        return (cx - self.width / 2, cx + self.width / 2, cy - self.height / 2, cy + self.height / 2)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    @property
    def area(self) -> float:
        return self.width * self.height

    def probe_points(self) -> np.ndarray:
        """Four corners (row-major from the low corner) then the centre."""
        x0, x1, y0, y1 = self.bounds
        return np.array([(x0, y0), (x1, y0), (x0, y1), (x1, y1), self.center])

    def contains(self, x, y, tol=1e-9) -> bool:
        x0, x1, y0, y1 = self.bounds
        return x0 - tol <= x <= x1 + tol and y0 - tol <= y <= y1 + tol

    def lattice(self, grid_n: int):
        x0, x1, y0, y1 = self.bounds
        return np.linspace(x0, x1, grid_n), np.linspace(y0, y1, grid_n)


@dataclass
class RttField:
    """Wraps ``probe(x, y) -> rtt_ms`` and counts calls."""

    probe: Callable
    calls: int = field(default=0, init=False)

    def __call__(self, x, y) -> float:
        self.calls += 1
        v = float(self.probe(x, y))
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"probe returned invalid RTT {v!r} at ({x}, {y})")
        return v


def radial_field(optimum, base=2.0, slope=1.5, noise_sd=0.0, seed=0) -> RttField:
    """Synthetic field ``base + slope * distance + noise`` with a planted optimum."""
    ox, oy = float(optimum[0]), float(optimum[1])
    rng = np.random.default_rng(seed)

    def probe(x, y):
        rtt = base + slope * math.hypot(x - ox, y - oy)
        if noise_sd > 0:
            rtt += rng.normal(0.0, noise_sd)
        return max(rtt, 1e-6)

    return RttField(probe)


def heat_weights(rtts) -> np.ndarray:
    rtts = np.asarray(rtts, dtype=float)
    if np.any(~np.isfinite(rtts)) or np.any(rtts <= 0):
        raise ValueError("RTTs must be finite and positive")
    w = rtts.max() - rtts
    s = w.sum()
    if s <= 0:
        return np.full(len(rtts), 1.0 / len(rtts))
    return w / s


def heat_map(points, weights, rect: SearchRect, grid_n: int, bandwidth: float) -> np.ndarray:
    """Quartic-kernel heat on the ``grid_n x grid_n`` lattice, indexed ``[row=y, col=x]``."""
    xs, ys = rect.lattice(grid_n)
    gx, gy = np.meshgrid(xs, ys)
    heat = np.zeros_like(gx)
    for (px, py), w in zip(points, weights):
        u2 = ((gx - px) ** 2 + (gy - py) ** 2) / bandwidth**2
        heat += w * np.where(u2 <= 1.0, (1.0 - u2) ** 2, 0.0)
    return heat


def qkde_epicenter(points, rtts, rect: SearchRect, grid_n: int = 33, bandwidth: float | None = None):
    points = np.asarray(points, dtype=float)
    if points.shape != (5, 2):
        raise ValueError("expected 5 probe points")
    if len(rtts) != 5:
        raise ValueError("expected 5 RTT measurements")
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    bandwidth = rect.diagonal if bandwidth is None else float(bandwidth)
    if not bandwidth > 0:
        raise ValueError("bandwidth must be > 0")
    if not all(rect.contains(x, y) for x, y in points):
        raise ValueError("probe points must lie inside the rectangle")
    heat = heat_map(points, heat_weights(rtts), rect, grid_n, bandwidth)
    # argmax returns the first maximum in row-major order
    i = int(np.argmax(heat))
    row, col = divmod(i, grid_n)
    xs, ys = rect.lattice(grid_n)
    return float(xs[col]), float(ys[row])


@dataclass(frozen=True)
class AlignStep:
    iter: int
    rect: SearchRect
    epicenter: tuple


@dataclass(frozen=True)
class AlignResult:
    position: tuple
    iterations: int
    probe_count: int
    steps: tuple


def _clamp_rect(center, width, height, outer: SearchRect) -> SearchRect:
    x0, x1, y0, y1 = outer.bounds
    cx = min(max(center[0], x0 + width / 2), x1 - width / 2)
    cy = min(max(center[1], y0 + height / 2), y1 - height / 2)
    return SearchRect((cx, cy), width, height)


def pen_tree_align(field: RttField | Callable, rect0: SearchRect, eps: float = 0.01, max_iter: int = 10,
                   grid_n: int = 33, seed=None) -> AlignResult:
    """Recursive five-probe search for the lowest-RTT point.

    Each iteration probes the corners and centre of the current rectangle,
    takes the Q-KDE epicenter, halves both sides and recentres there
    (clamped inside ``rect0``). Stops once the epicenter moves less than
    ``eps`` from the current centre. ``seed`` is accepted for interface
    symmetry; the search itself is deterministic.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if not isinstance(rect0, SearchRect):
        raise TypeError("rect0 must be a SearchRect")
    probe = field if isinstance(field, RttField) else RttField(field)
    rect, steps, probes = rect0, [], 0
    epi = rect0.center
    for it in range(1, max_iter + 1):
        pts = rect.probe_points()
        rtts = [probe(x, y) for x, y in pts]
        probes += len(pts)
        epi = qkde_epicenter(pts, rtts, rect, grid_n)
        steps.append(AlignStep(it, rect, epi))
        moved = math.hypot(epi[0] - rect.center[0], epi[1] - rect.center[1])
        if moved < eps:
            break
        rect = _clamp_rect(epi, rect.width / 2, rect.height / 2, rect0)
    return AlignResult(epi, len(steps), probes, tuple(steps))


def grid_search_optimum(field: Callable, rect: SearchRect, grid_n: int = 401):
    """Brute-force oracle: lowest-RTT lattice point of a noiseless field."""
    xs, ys = rect.lattice(grid_n)
    best, arg = math.inf, None
    for y in ys:
        for x in xs:
            v = field(x, y)
            if v < best:
                best, arg = v, (float(x), float(y))
    return arg


def write_align_csv(result: AlignResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALIGN_COLUMNS)
        for s in result.steps:
            w.writerow([s.iter, repr(s.rect.center[0]), repr(s.rect.center[1]), repr(s.rect.width),
                        repr(s.rect.height), repr(s.epicenter[0]), repr(s.epicenter[1])])
