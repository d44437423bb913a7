"""Benchmark PDEs as data plus residual operators.

Every problem is written as ``L(u) - f`` in the interior and ``u - g`` on
the boundary (Dirichlet only).  Residuals are vectorized over points: ``x``
has shape (K, d), ``u`` (K,), ``grad`` (K, d) and ``hess`` (K, d, d).

For training, each problem also supplies the partial derivatives of its
interior residual with respect to ``u``, ``grad`` and ``hess`` so the loss
gradient can be chained through the model without an autodiff framework.
Spacetime problems use coordinates ordered ``(x, t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

PI = np.pi
SLIT_TOL = 1e-12
SLIT_CLEARANCE = 1e-3

ADVECTION_SPEED = 1.0
ADVECTION_T = 0.8
ADVECTION_MU = -0.3
ADVECTION_SIGMA = 0.15
BURGERS_T = 0.6

PROBLEM_NAMES = ("poisson2d", "ripple2d", "square_slit", "advection1d", "burgers1d")


@dataclass(frozen=True)
class DomainSpec:
    """Box, box minus the slit {(x, 0): 0 <= x < 1}, or an (x, t) strip."""

    kind: str
    bounds: tuple[tuple[float, float], ...]
    time_horizon: float | None = None

    def __post_init__(self):
        if self.kind not in ("box", "box-minus-slit", "spacetime-strip"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        bounds = tuple((float(a), float(b)) for a, b in self.bounds)
        for a, b in bounds:
            if not b > a:
                raise ValueError(f"degenerate interval [{a}, {b}]")
        object.__setattr__(self, "bounds", bounds)
        if self.kind == "spacetime-strip":
            if self.time_horizon is None or self.time_horizon <= 0:
                raise ValueError("spacetime domains need a positive time horizon")
            if len(bounds) != 2 or bounds[1] != (0.0, float(self.time_horizon)):
                raise ValueError("spacetime bounds must be ((x0, x1), (0, T))")
        elif self.time_horizon is not None:
            raise ValueError("time_horizon is only meaningful for spacetime domains")
        if self.kind == "box-minus-slit" and bounds != ((-1.0, 1.0), (-1.0, 1.0)):
            raise ValueError("the slit domain is fixed to (-1, 1)^2")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def has_slit(self) -> bool:
        return self.kind == "box-minus-slit"

    @property
    def lo(self) -> np.ndarray:
        return np.array([a for a, _ in self.bounds])

    @property
    def hi(self) -> np.ndarray:
        return np.array([b for _, b in self.bounds])

    # -- predicates ---------------------------------------------------------

    def on_slit(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if not self.has_slit:
            return np.zeros(len(pts), dtype=bool)
        return (np.abs(pts[:, 1]) <= SLIT_TOL) & (pts[:, 0] >= 0.0) & (pts[:, 0] < 1.0)

    def slit_distance(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        dx = np.clip(pts[:, 0], 0.0, 1.0) - pts[:, 0]
        return np.hypot(dx, pts[:, 1])

    def is_interior(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lo, hi = self.lo, self.hi
        if self.kind == "spacetime-strip":
            inside = (pts[:, 0] > lo[0]) & (pts[:, 0] < hi[0])
            return inside & (pts[:, 1] > lo[1]) & (pts[:, 1] <= hi[1])
        inside = np.all((pts > lo) & (pts < hi), axis=1)
        return inside & ~self.on_slit(pts)

    def is_boundary(self, pts, tol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lo, hi = self.lo, self.hi
        within = np.all((pts >= lo - tol) & (pts <= hi + tol), axis=1)
        if self.kind == "spacetime-strip":
            initial = np.abs(pts[:, 1] - lo[1]) <= tol
            sides = (np.abs(pts[:, 0] - lo[0]) <= tol) | (np.abs(pts[:, 0] - hi[0]) <= tol)
            return within & (initial | sides)
        face = np.any((np.abs(pts - lo) <= tol) | (np.abs(pts - hi) <= tol), axis=1)
        return within & (face | self.on_slit(pts))

    # -- boundary pieces ----------------------------------------------------

    def boundary_segments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Boundary as (start, end) segments; only meaningful for d = 2.

        The slit is listed once (both faces carry the same Dirichlet data).
        """
        if self.dim == 1:
            raise ValueError("1D boundaries are points, not segments")
        if self.dim != 2:
            raise ValueError("boundary segments are only defined for 2D domains")
        (x0, x1), (y0, y1) = self.bounds
        if self.kind == "spacetime-strip":
            return [
                (np.array([x0, y0]), np.array([x1, y0])),
                (np.array([x0, y0]), np.array([x0, y1])),
                (np.array([x1, y0]), np.array([x1, y1])),
            ]
        segs = [
            (np.array([x0, y0]), np.array([x1, y0])),
            (np.array([x1, y0]), np.array([x1, y1])),
            (np.array([x1, y1]), np.array([x0, y1])),
            (np.array([x0, y1]), np.array([x0, y0])),
        ]
        if self.has_slit:
            segs.append((np.array([0.0, 0.0]), np.array([1.0, 0.0])))
        return segs


@dataclass(frozen=True)
class PdeProblem:
    """A PDE with Dirichlet data.

    ``residual(x, u, grad, hess)`` returns L(u) - f at each point.
    ``residual_partials`` returns (dR/du, dR/dgrad, dR/dhess); entries may be
    None when the residual does not depend on that argument.
    ``boundary_value(x)`` is the Dirichlet datum g.
    """

    name: str
    domain: DomainSpec
    residual: Callable
    residual_partials: Callable
    boundary_value: Callable
    exact: Optional[Callable] = None
    exact_derivs: Optional[Callable] = None
    needs_hessian: bool = True
    initial_value: Optional[Callable] = None

    def boundary_residual(self, x, u) -> np.ndarray:
        return np.asarray(u) - self.boundary_value(np.atleast_2d(x))


# -- Poisson: -lap u = 5 pi^2 sin(2 pi x) sin(pi y) on [-1, 1]^2 -------------


def _laplacian_residual_partials(coeff: float):
    def partials(x, u, g, H):
        k, d = g.shape
        dH = np.broadcast_to(coeff * np.eye(d), (k, d, d))
        return None, None, dH

    return partials


def poisson2d() -> PdeProblem:
    def source(x):
        return 5 * PI**2 * np.sin(2 * PI * x[:, 0]) * np.sin(PI * x[:, 1])

    def residual(x, u, g, H):
        return -(H[:, 0, 0] + H[:, 1, 1]) - source(x)

    def exact(x):
        x = np.atleast_2d(x)
        return np.sin(2 * PI * x[:, 0]) * np.sin(PI * x[:, 1])

    def exact_derivs(x):
        x = np.atleast_2d(x)
        sx, cx = np.sin(2 * PI * x[:, 0]), np.cos(2 * PI * x[:, 0])
        sy, cy = np.sin(PI * x[:, 1]), np.cos(PI * x[:, 1])
        u = sx * sy
        g = np.stack([2 * PI * cx * sy, PI * sx * cy], axis=1)
        H = np.empty((len(x), 2, 2))
        H[:, 0, 0] = -4 * PI**2 * u
        H[:, 1, 1] = -(PI**2) * u
        H[:, 0, 1] = H[:, 1, 0] = 2 * PI**2 * cx * cy
        return u, g, H

    return PdeProblem(
        name="poisson2d",
        domain=DomainSpec("box", ((-1, 1), (-1, 1))),
        residual=residual,
        residual_partials=_laplacian_residual_partials(-1.0),
        boundary_value=lambda x: np.zeros(len(np.atleast_2d(x))),
        exact=exact,
        exact_derivs=exact_derivs,
    )


# -- static ripple ------------------------------------------------------------


def _ripple_stack(x):
    """u, grad, hess of (1 - x^2)(1 - y^2) cos(2 pi (2 x^2 + y^2))."""
    x = np.atleast_2d(x)
    X, Y = x[:, 0], x[:, 1]
    P = (1 - X**2) * (1 - Y**2)
    Px, Py = -2 * X * (1 - Y**2), -2 * Y * (1 - X**2)
    Pxx, Pyy, Pxy = -2 * (1 - Y**2), -2 * (1 - X**2), 4 * X * Y
    th = 2 * PI * (2 * X**2 + Y**2)
    thx, thy = 8 * PI * X, 4 * PI * Y
    thxx, thyy = 8 * PI, 4 * PI
    c, s = np.cos(th), np.sin(th)
    u = P * c
    ux = Px * c - P * s * thx
    uy = Py * c - P * s * thy
    uxx = Pxx * c - 2 * Px * s * thx - P * c * thx**2 - P * s * thxx
    uyy = Pyy * c - 2 * Py * s * thy - P * c * thy**2 - P * s * thyy
    uxy = Pxy * c - Px * s * thy - Py * s * thx - P * c * thx * thy
    H = np.empty((len(x), 2, 2))
    H[:, 0, 0], H[:, 1, 1] = uxx, uyy
    H[:, 0, 1] = H[:, 1, 0] = uxy
    return u, np.stack([ux, uy], axis=1), H


def ripple2d() -> PdeProblem:
    def potential(x):
        return 16 * PI**2 * (4 * x[:, 0] ** 2 + x[:, 1] ** 2)

    def operator(x, u, H):
        return -(H[:, 0, 0] + H[:, 1, 1]) + potential(x) * u

    def source(x):
        u, _, H = _ripple_stack(x)
        return operator(x, u, H)

    def residual(x, u, g, H):
        return operator(x, u, H) - source(x)

    def partials(x, u, g, H):
        k = len(x)
        dH = np.broadcast_to(-np.eye(2), (k, 2, 2))
        return potential(x), None, dH

    return PdeProblem(
        name="ripple2d",
        domain=DomainSpec("box", ((-1, 1), (-1, 1))),
        residual=residual,
        residual_partials=partials,
        boundary_value=lambda x: np.zeros(len(np.atleast_2d(x))),
        exact=lambda x: _ripple_stack(x)[0],
        exact_derivs=_ripple_stack,
    )


# -- Poisson on the slit square: lap u + 1 = 0 ---------------------------------


def square_slit() -> PdeProblem:
    def residual(x, u, g, H):
        return H[:, 0, 0] + H[:, 1, 1] + 1.0

    return PdeProblem(
        name="square_slit",
        domain=DomainSpec("box-minus-slit", ((-1, 1), (-1, 1))),
        residual=residual,
        residual_partials=_laplacian_residual_partials(1.0),
        boundary_value=lambda x: np.zeros(len(np.atleast_2d(x))),
    )


# -- linear advection in spacetime ----------------------------------------------


def advection_initial(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-((x - ADVECTION_MU) ** 2) / (2 * ADVECTION_SIGMA**2))


def advection1d(speed: float = ADVECTION_SPEED, horizon: float = ADVECTION_T) -> PdeProblem:
    sig2 = ADVECTION_SIGMA**2

    def exact(x):
        x = np.atleast_2d(x)
        return advection_initial(x[:, 0] - speed * x[:, 1])

    def exact_derivs(x):
        x = np.atleast_2d(x)
        xi = x[:, 0] - speed * x[:, 1] - ADVECTION_MU
        u = np.exp(-(xi**2) / (2 * sig2))
        du = -xi / sig2 * u
        d2u = (xi**2 / sig2**2 - 1 / sig2) * u
        g = np.stack([du, -speed * du], axis=1)
        H = np.empty((len(x), 2, 2))
        H[:, 0, 0] = d2u
        H[:, 0, 1] = H[:, 1, 0] = -speed * d2u
        H[:, 1, 1] = speed**2 * d2u
        return u, g, H

    def residual(x, u, g, H):
        return g[:, 1] + speed * g[:, 0]

    def partials(x, u, g, H):
        dg = np.zeros_like(g)
        dg[:, 0] = speed
        dg[:, 1] = 1.0
        return None, dg, None

    def boundary_value(x):
        # initial profile on t = 0; exact (vanishingly small) values on the ends
        return exact(x)

    return PdeProblem(
        name="advection1d",
        domain=DomainSpec("spacetime-strip", ((-1, 1), (0, horizon)), time_horizon=horizon),
        residual=residual,
        residual_partials=partials,
        boundary_value=boundary_value,
        exact=exact,
        exact_derivs=exact_derivs,
        needs_hessian=False,
        initial_value=advection_initial,
    )


# -- inviscid Burgers in spacetime -----------------------------------------------


def burgers_initial(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) <= 0.5, np.sin(2 * PI * (x + 0.5)), 0.0)


def burgers1d(horizon: float = BURGERS_T) -> PdeProblem:
    def residual(x, u, g, H):
        return g[:, 1] + u * g[:, 0]

    def partials(x, u, g, H):
        dg = np.empty_like(g)
        dg[:, 0] = u
        dg[:, 1] = 1.0
        return g[:, 0].copy(), dg, None

    def boundary_value(x):
        x = np.atleast_2d(x)
        initial = np.abs(x[:, 1]) <= 1e-12
        return np.where(initial, burgers_initial(x[:, 0]), 0.0)

    return PdeProblem(
        name="burgers1d",
        domain=DomainSpec("spacetime-strip", ((-1, 1), (0, horizon)), time_horizon=horizon),
        residual=residual,
        residual_partials=partials,
        boundary_value=boundary_value,
        needs_hessian=False,
        initial_value=burgers_initial,
    )


_REGISTRY = {
    "poisson2d": poisson2d,
    "ripple2d": ripple2d,
    "square_slit": square_slit,
    "advection1d": advection1d,
    "burgers1d": burgers1d,
}


def get_problem(name: str) -> PdeProblem:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(
            f"unknown problem {name!r}; choose one of {', '.join(PROBLEM_NAMES)}"
        ) from None
