"""Adaptive piecewise Chebyshev approximation and integration.

A function is represented on ``[a, b]`` by panels, each carrying the
Chebyshev coefficients of a degree-``deg`` interpolant. Panels are bisected
until the trailing coefficients fall below tolerance, so jumps and kinks are
isolated into tiny panels and everything else is resolved to near machine
precision. Antiderivatives are exact on each panel's polynomial.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as C

DEFAULT_DEG = 20


def _cheb_nodes(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.cos(np.pi * (k + 0.5) / n)


def _cheb_transform(n: int) -> np.ndarray:
    """Matrix mapping values at ``n`` first-kind nodes to coefficients."""
    x = _cheb_nodes(n)
    T = C.chebvander(x, n - 1)  # T[k, j] = T_j(x_k)
    M = (2.0 / n) * T
    M[:, 0] *= 0.5
    return M


_TRANSFORMS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _transform(deg: int):
    if deg not in _TRANSFORMS:
        _TRANSFORMS[deg] = (_cheb_nodes(deg + 1), _cheb_transform(deg + 1))
    return _TRANSFORMS[deg]


def clenshaw(t: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Evaluate rows of ``coeffs`` at the matching entries of ``t`` in [-1, 1]."""
    b1 = np.zeros_like(t)
    b2 = np.zeros_like(t)
    for j in range(coeffs.shape[1] - 1, 0, -1):
        b1, b2 = coeffs[:, j] + 2 * t * b1 - b2, b1
    return coeffs[:, 0] + t * b1 - b2


class PiecewiseChebyshev:
    """Piecewise polynomial on ``edges`` with per-panel Chebyshev ``coeffs``."""

    def __init__(self, edges: np.ndarray, coeffs: np.ndarray):
        self.edges = np.asarray(edges, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.shape[0] != len(self.edges) - 1:
            raise ValueError("need one coefficient row per panel")

    @property
    def a(self) -> float:
        return float(self.edges[0])

    @property
    def b(self) -> float:
        return float(self.edges[-1])

    def panel_of(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.edges, x, side="right") - 1
        return np.clip(idx, 0, len(self.edges) - 2)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        idx = self.panel_of(flat)
        lo, hi = self.edges[idx], self.edges[idx + 1]
        t = np.clip((2 * flat - lo - hi) / (hi - lo), -1.0, 1.0)
        return clenshaw(t, self.coeffs[idx]).reshape(x.shape)

    def panel_integrals(self) -> np.ndarray:
        # integral over [-1, 1] of sum c_j T_j: only even j contribute 2/(1-j^2)
        j = np.arange(self.coeffs.shape[1]).astype(float)
        w = np.zeros_like(j)
        even = j % 2 == 0
        w[even] = 2.0 / (1.0 - j[even] ** 2)
        half = 0.5 * np.diff(self.edges)
        return (self.coeffs @ w) * half

    def integral(self) -> float:
        return float(self.panel_integrals().sum())

    def antiderivative(self, origin: float) -> "PiecewiseChebyshev":
        """Piecewise representation of ``x -> int_origin^x f``."""
        half = 0.5 * np.diff(self.edges)
        ic = C.chebint(self.coeffs, axis=1) * half[:, None]
        # make each panel's antiderivative vanish at its left edge
        left = C.chebval(-1.0, ic.T)
        ic[:, 0] -= left
        offsets = np.concatenate([[0.0], np.cumsum(self.panel_integrals())[:-1]])
        ic[:, 0] += offsets
        out = PiecewiseChebyshev(self.edges, ic)
        shift = float(out(np.array([origin]))[0])
        ic[:, 0] -= shift
        return PiecewiseChebyshev(self.edges, ic)

    def sample_points(self) -> np.ndarray:
        """Edges plus every panel's interpolation nodes, sorted."""
        nodes, _ = _transform(self.coeffs.shape[1] - 1)
        lo, hi = self.edges[:-1, None], self.edges[1:, None]
        inner = 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes[None, ::-1]
        return np.sort(np.concatenate([self.edges, inner.ravel()]))

    def gauss_panels(self, order: int = 24) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes and weights over every panel."""
        t, w = np.polynomial.legendre.leggauss(order)
        lo, hi = self.edges[:-1, None], self.edges[1:, None]
        half = 0.5 * (hi - lo)
        x = 0.5 * (lo + hi) + half * t[None, :]
        return x.ravel(), (half * w[None, :]).ravel()


def _initial_edges(a: float, b: float, breakpoints, max_width: float) -> np.ndarray:
    pts = [a, b] + [p for p in breakpoints if a < p < b]
    pts = np.unique(pts)
    edges = [pts[0]]
    for lo, hi in zip(pts[:-1], pts[1:]):
        n = max(1, int(np.ceil((hi - lo) / max_width)))
        edges.extend(np.linspace(lo, hi, n + 1)[1:])
    return np.asarray(edges)


def adaptive_chebyshev(
    f,
    a: float,
    b: float,
    *,
    breakpoints=(),
    tol: float = 1e-13,
    deg: int = DEFAULT_DEG,
    max_width: float | None = None,
    min_width: float | None = None,
    scale: float | None = None,
    max_panels: int = 200_000,
) -> PiecewiseChebyshev:
    """Approximate a vectorized ``f`` on ``[a, b]`` to ``tol * scale`` per panel.

    Raises ``RuntimeError`` when more than ``max_panels`` panels would be
    needed, which happens for unbounded integrands.
    """
    if not b > a:
        raise ValueError("need b > a")
    if max_width is None:
        max_width = (b - a) / 8
    if min_width is None:
        min_width = 1e-13 * max(1.0, abs(a), abs(b))
    nodes, M = _transform(deg)
    pending = _initial_edges(a, b, breakpoints, max_width)
    pending = np.stack([pending[:-1], pending[1:]], axis=1)
    done_lo, done_hi, done_c = [], [], []
    ref = scale
    n_done = 0
    for _ in range(200):
        if len(pending) == 0:
            break
        lo, hi = pending[:, :1], pending[:, 1:]
        x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * nodes[None, :]
        vals = np.asarray(f(x), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite value while building the approximation")
        coeffs = vals @ M
        if ref is None:
            ref = max(1.0, float(np.abs(vals).max()))
        tail = np.abs(coeffs[:, -3:]).max(axis=1)
        width = (hi - lo)[:, 0]
        ok = (tail <= tol * ref) | (width <= min_width)
        done_lo.append(pending[ok, 0])
        done_hi.append(pending[ok, 1])
        done_c.append(coeffs[ok])
        bad = pending[~ok]
        n_done += int(ok.sum())
        if n_done + 2 * len(bad) > max_panels:
            raise RuntimeError(f"adaptive refinement exceeded {max_panels} panels; is f bounded on [a, b]?")
        mid = 0.5 * (bad[:, 0] + bad[:, 1])
        pending = np.concatenate(
            [np.stack([bad[:, 0], mid], axis=1), np.stack([mid, bad[:, 1]], axis=1)]
        )
    else:
        raise RuntimeError("adaptive refinement did not terminate")
    lo = np.concatenate(done_lo)
    hi = np.concatenate(done_hi)
    coeffs = np.concatenate(done_c)
    order = np.argsort(lo)
    edges = np.append(lo[order], hi[order][-1])
    return PiecewiseChebyshev(edges, coeffs[order])
