"""Classical reference solutions: finite differences on the slit square and
a first-order Godunov scheme for inviscid Burgers.

Both return a :class:`GridSolution` that can be interpolated at arbitrary
points and written to or read from the reference CSV format::

    # ref d=2 nx=257 ny=257 T=0
    x,y,value
    ...

Rows are in row-major order (last axis fastest); invalid nodes carry ``nan``.
"""

from __future__ import annotations

import itertools
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ReferenceError(ValueError):
    pass


@dataclass(frozen=True)
class GridSolution:
    """Values on a tensor grid; ``mask`` is True where a value is valid."""

    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    mask: np.ndarray
    time_horizon: float = 0.0

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        values = np.asarray(self.values, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        shape = tuple(len(a) for a in axes)
        if values.shape != shape or mask.shape != shape:
            raise ReferenceError(f"values {values.shape} / mask {mask.shape} do not match axes {shape}")
        for a in axes:
            if len(a) < 1 or not np.all(np.diff(a) > 0):
                raise ReferenceError("grid axes must be non-empty and strictly increasing")
        if not np.all(np.isfinite(values[mask])):
            raise ReferenceError("grid values must be finite where the mask is valid")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def dim(self) -> int:
        return len(self.axes)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


# -- finite differences on [-1, 1]^2 -------------------------------------------


def _fd_poisson(n: int, source: Callable, slit: bool, tol: float = 1e-10) -> GridSolution:
    """Solve -lap u = source with u = 0 on the square boundary (and slit)."""
    x = np.linspace(-1.0, 1.0, n)
    h = x[1] - x[0]
    X, Y = np.meshgrid(x, x, indexing="ij")
    fixed = np.zeros((n, n), dtype=bool)
    fixed[0, :] = fixed[-1, :] = fixed[:, 0] = fixed[:, -1] = True
    on_slit = np.zeros((n, n), dtype=bool)
    if slit:
        on_slit = (np.abs(Y) < 0.5 * h) & (X >= -0.5 * h) & (X <= 1.0)
        fixed |= on_slit
    free = ~fixed
    index = -np.ones((n, n), dtype=np.int64)
    index[free] = np.arange(free.sum())
    rows, cols, vals = [], [], []
    ii, jj = np.nonzero(free)
    me = index[ii, jj]
    rows.append(me)
    cols.append(me)
    vals.append(np.full(me.size, 4.0 / h**2))
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = index[ii + di, jj + dj]
        keep = nb >= 0  # fixed neighbours carry u = 0
        rows.append(me[keep])
        cols.append(nb[keep])
        vals.append(np.full(keep.sum(), -1.0 / h**2))
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(me.size, me.size),
    )
    rhs = source(X[free], Y[free])
    sol = spla.spsolve(A.tocsc(), rhs)
    residual = np.max(np.abs(A @ sol - rhs))
    if not residual < tol * max(1.0, np.max(np.abs(rhs))):
        raise ReferenceError(f"finite-difference solve residual {residual:.3e} exceeds {tol}")
    values = np.zeros((n, n))
    values[free] = sol
    return GridSolution((x, x.copy()), values, ~on_slit)


def fd_poisson_slit(n: int = 257) -> GridSolution:
    """5-point finite-difference solution of lap u + 1 = 0 on the slit square.

    ``n`` must be odd so that y = 0 is a grid line.  Slit nodes hold the
    imposed value 0 and are flagged invalid in ``mask``.
    """
    if n < 17 or n % 2 == 0:
        raise ReferenceError(f"n must be odd and >= 17, got {n}")
    return _fd_poisson(n, lambda X, Y: np.ones_like(X), slit=True)


# -- Godunov for u_t + (u^2 / 2)_x = 0 -------------------------------------------


def godunov_flux(ul: np.ndarray, ur: np.ndarray) -> np.ndarray:
    """Exact Riemann-solver flux for the Burgers flux f(u) = u^2 / 2."""
    f = lambda u: 0.5 * u * u  # noqa: E731
    shock = ul > ur
    speed = 0.5 * (ul + ur)
    shock_flux = np.where(speed > 0, f(ul), f(ur))
    rare_flux = np.where(ul > 0, f(ul), np.where(ur < 0, f(ur), 0.0))
    return np.where(shock, shock_flux, rare_flux)


def godunov_step(u: np.ndarray, dt: float, dx: float):
    """One conservative update with zero ghost states.

    Returns the new cell averages and the (left, right) boundary fluxes so
    callers can audit conservation.
    """
    padded = np.concatenate([[0.0], u, [0.0]])
    F = godunov_flux(padded[:-1], padded[1:])
    return u - dt / dx * (F[1:] - F[:-1]), F[0], F[-1]


def godunov_burgers(
    nx: int = 2000,
    cfl: float = 0.5,
    T: float = 0.6,
    u0: Callable | None = None,
    times: Sequence[float] | None = None,
    domain: tuple[float, float] = (-1.0, 1.0),
) -> GridSolution:
    """Snapshots of the Godunov solution at ``times`` (default 121 instants).

    Cell averages start from midpoint values of ``u0``.  Snapshots between
    steps are linear in time.  The result has axes (cell centers, times).
    """
    if nx < 100:
        raise ReferenceError(f"nx must be at least 100, got {nx}")
    if not 0 < cfl <= 0.9:
        raise ReferenceError(f"cfl must be in (0, 0.9], got {cfl}")
    if not T > 0:
        raise ReferenceError("T must be positive")
    if u0 is None:
        from .problems import burgers_initial

        u0 = burgers_initial
    times = np.linspace(0.0, T, 121) if times is None else np.asarray(sorted(times), dtype=float)
    if times[0] < 0 or times[-1] > T + 1e-14:
        raise ReferenceError("snapshot times must lie in [0, T]")
    a, b = domain
    dx = (b - a) / nx
    xc = a + (np.arange(nx) + 0.5) * dx
    u = np.asarray(u0(xc), dtype=np.float64).copy()
    snaps = np.empty((nx, len(times)))
    t = 0.0
    k = 0
    while k < len(times) and times[k] <= t:
        snaps[:, k] = u
        k += 1
    while k < len(times):
        umax = np.max(np.abs(u))
        dt = cfl * dx / umax if umax > 0 else T - t
        dt = min(dt, T - t) if T - t > 0 else dt
        new, _, _ = godunov_step(u, dt, dx)
        t_new = t + dt
        while k < len(times) and times[k] <= t_new + 1e-14:
            theta = (times[k] - t) / dt if dt > 0 else 1.0
            snaps[:, k] = (1 - theta) * u + theta * new
            k += 1
        u, t = new, t_new
    return GridSolution((xc, times), snaps, np.ones_like(snaps, dtype=bool), time_horizon=T)


# -- interpolation ----------------------------------------------------------------


def resample(reference: GridSolution, points) -> np.ndarray:
    """Multilinear interpolation; errors for points outside the grid or in
    cells touching an invalid node (unless that node has zero weight)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[1] != reference.dim:
        raise ReferenceError(f"points have dimension {pts.shape[1]}, grid has {reference.dim}")
    idx, frac = [], []
    for j, ax in enumerate(reference.axes):
        p = pts[:, j]
        if len(ax) == 1:
            outside = np.abs(p - ax[0]) > 1e-12
        else:
            outside = (p < ax[0]) | (p > ax[-1])
        if outside.any():
            bad = pts[np.flatnonzero(outside)[0]]
            raise ReferenceError(f"point {bad.tolist()} lies outside the reference grid")
        if len(ax) == 1:
            i, t = np.zeros(len(p), dtype=np.int64), np.zeros(len(p))
        else:
            i = np.clip(np.searchsorted(ax, p, side="right") - 1, 0, len(ax) - 2)
            t = (p - ax[i]) / (ax[i + 1] - ax[i])
        idx.append(i)
        frac.append(t)
    out = np.zeros(len(pts))
    invalid = np.zeros(len(pts), dtype=bool)
    for corner in itertools.product((0, 1), repeat=reference.dim):
        weight = np.ones(len(pts))
        where = []
        for j, c in enumerate(corner):
            weight = weight * (frac[j] if c else 1.0 - frac[j])
            where.append(np.minimum(idx[j] + c, len(reference.axes[j]) - 1))
        where = tuple(where)
        live = weight != 0
        ok = reference.mask[where]
        invalid |= live & ~ok
        out += np.where(live & ok, weight * np.where(ok, reference.values[where], 0.0), 0.0)
    if invalid.any():
        bad = pts[np.flatnonzero(invalid)[0]]
        raise ReferenceError(f"point {bad.tolist()} falls in a masked region of the reference")
    return out


def slice_at(reference: GridSolution, t: float, x: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Spatial profile of a spacetime reference at time ``t``."""
    if reference.dim != 2:
        raise ReferenceError("time slices need a (x, t) grid")
    x = reference.axes[0] if x is None else np.asarray(x, dtype=np.float64)
    pts = np.column_stack([x, np.full(len(x), float(t))])
    return x, resample(reference, pts)


# -- CSV ----------------------------------------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_reference_csv(reference: GridSolution, path: str) -> None:
    names = ["nx", "ny", "nz"][: reference.dim]
    sizes = " ".join(f"{k}={len(a)}" for k, a in zip(names, reference.axes))
    coord_names = ["x", "y", "z"][: reference.dim]
    lines = [
        f"# ref d={reference.dim} {sizes} T={reference.time_horizon!r}",
        ",".join(coord_names + ["value"]),
    ]
    pts = reference.points()
    vals = np.where(reference.mask, reference.values, np.nan).reshape(-1)
    for p, v in zip(pts, vals):
        lines.append(",".join(repr(float(c)) for c in p) + "," + ("nan" if math.isnan(v) else repr(float(v))))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_reference_csv(path: str) -> GridSolution:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# ref"):
            raise ReferenceError(f"{path}: missing '# ref' header")
        meta = dict(tok.split("=", 1) for tok in header[len("# ref") :].split())
        try:
            dim = int(meta["d"])
            sizes = [int(meta[k]) for k in ["nx", "ny", "nz"][:dim]]
        except KeyError as exc:
            raise ReferenceError(f"{path}: header lacks {exc.args[0]}") from None
        T = float(meta.get("T", 0.0))
        rows = []
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line[0].isalpha():
                continue
            rows.append([float(tok) for tok in line.split(",")])
    data = np.asarray(rows, dtype=np.float64)
    if data.shape != (int(np.prod(sizes)), dim + 1):
        raise ReferenceError(f"{path}: expected {np.prod(sizes)} rows of {dim + 1} columns")
    coords = data[:, :dim].reshape(*sizes, dim)
    axes = []
    for j in range(dim):
        sl = [0] * dim
        sl[j] = slice(None)
        axes.append(coords[tuple(sl) + (j,)])
    values = data[:, dim].reshape(sizes)
    mask = np.isfinite(values)
    return GridSolution(tuple(axes), values, mask, time_horizon=T)
