"""Anisotropic Gaussian kernel expansion and its spatial derivatives.

A model is a sum of N Gaussian bumps

    u(x) = sum_i U_i exp(-|Sigma_i^{-1} (x - X_i)|^2)

where each Sigma_i = L_i L_i^T is assembled from an unconstrained lower
triangular factor whose diagonal is exponentiated with a fixed scale ``s``.

Flattening order of the trainable scalars is, node by node,
``(weight, center[0..d-1], factor[0..d(d+1)/2-1])`` and the factor entries
are the lower triangle stored row-major (l11, l21, l22, l31, l32, l33).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

DIAG_CLAMP = 30.0
DEFAULT_SCALE = 0.5


class NonFiniteError(FloatingPointError):
    """Raised when an evaluation produces inf/nan.

    ``index`` names the offending node (model evaluation) or sample
    (loss evaluation), whichever the raiser knows about.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def n_factor_entries(dim: int) -> int:
    return dim * (dim + 1) // 2


def tril_indices(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major lower-triangle indices, the storage order of a factor."""
    rows, cols = [], []
    for j in range(dim):
        for k in range(j + 1):
            rows.append(j)
            cols.append(k)
    return np.array(rows), np.array(cols)


def diag_positions(dim: int) -> np.ndarray:
    """Positions of the diagonal entries inside a stored factor."""
    return np.array([j * (j + 1) // 2 + j for j in range(dim)])


@dataclass(frozen=True)
class LogCholeskyFactor:
    dim: int
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64).reshape(-1)
        if not 1 <= self.dim <= 3:
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if entries.size != n_factor_entries(self.dim):
            raise ValueError(
                f"expected {n_factor_entries(self.dim)} factor entries for dim={self.dim}, "
                f"got {entries.size}"
            )
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)

    @classmethod
    def isotropic(cls, dim: int, h: float, s: float = DEFAULT_SCALE) -> "LogCholeskyFactor":
        """Factor whose assembled Sigma is ``h * I``."""
        entries = np.zeros(n_factor_entries(dim))
        entries[diag_positions(dim)] = np.log(h) / (2.0 * s)
        return cls(dim, entries)

    @classmethod
    def from_sigma(cls, sigma: np.ndarray, s: float = DEFAULT_SCALE) -> "LogCholeskyFactor":
        """Inverse of :func:`sigma` (re-factorizes an SPD matrix)."""
        sigma = np.asarray(sigma, dtype=np.float64)
        chol = np.linalg.cholesky(sigma)
        dim = sigma.shape[0]
        rows, cols = tril_indices(dim)
        entries = chol[rows, cols].copy()
        diag = diag_positions(dim)
        entries[diag] = np.log(np.diag(chol)) / s
        return cls(dim, entries)


@dataclass(frozen=True)
class Node:
    center: np.ndarray
    weight: float
    factor: LogCholeskyFactor

    def __post_init__(self):
        center = np.array(self.center, dtype=np.float64).reshape(-1)
        if center.size != self.factor.dim:
            raise ValueError(
                f"center has dimension {center.size} but factor has dim {self.factor.dim}"
            )
        center.flags.writeable = False
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "weight", float(self.weight))

    @property
    def dim(self) -> int:
        return self.factor.dim


@dataclass(frozen=True)
class Ellipse:
    center: np.ndarray
    semi_axes: np.ndarray
    axes: np.ndarray  # rows are unit direction vectors


@dataclass(frozen=True)
class ModelParams:
    """Immutable array-of-nodes storage.

    ``weights`` has shape (N,), ``centers`` (N, d), ``factors`` (N, d(d+1)/2).
    """

    weights: np.ndarray
    centers: np.ndarray
    factors: np.ndarray
    scale: float = DEFAULT_SCALE
    kernel: str = "gaussian"

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        centers = np.array(self.centers, dtype=np.float64)
        if centers.ndim == 1:
            centers = centers.reshape(-1, 1)
        factors = np.array(self.factors, dtype=np.float64)
        n = weights.size
        if n < 1:
            raise ValueError("a model needs at least one node")
        if centers.shape[0] != n:
            raise ValueError(f"{n} weights but {centers.shape[0]} centers")
        dim = centers.shape[1]
        if not 1 <= dim <= 3:
            raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")
        factors = factors.reshape(n, -1)
        if factors.shape[1] != n_factor_entries(dim):
            raise ValueError(
                f"factors need {n_factor_entries(dim)} entries per node for d={dim}"
            )
        if self.kernel != "gaussian":
            raise ValueError(f"unsupported kernel {self.kernel!r}")
        for arr in (weights, centers, factors):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def n_nodes(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def params_per_node(self) -> int:
        return 1 + self.dim + n_factor_entries(self.dim)

    @property
    def size(self) -> int:
        return self.n_nodes * self.params_per_node

    @classmethod
    def from_nodes(
        cls, nodes: Sequence[Node], scale: float = DEFAULT_SCALE, kernel: str = "gaussian"
    ) -> "ModelParams":
        if not nodes:
            raise ValueError("a model needs at least one node")
        dims = {node.dim for node in nodes}
        if len(dims) != 1:
            raise ValueError(f"nodes disagree on dimension: {sorted(dims)}")
        return cls(
            weights=[node.weight for node in nodes],
            centers=np.stack([node.center for node in nodes]),
            factors=np.stack([node.factor.entries for node in nodes]),
            scale=scale,
            kernel=kernel,
        )

    def node(self, i: int) -> Node:
        return Node(self.centers[i], self.weights[i], LogCholeskyFactor(self.dim, self.factors[i]))

    @property
    def nodes(self) -> list[Node]:
        return [self.node(i) for i in range(self.n_nodes)]

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.weights[:, None], self.centers, self.factors], axis=1
        ).reshape(-1)

    def unflatten(self, theta: np.ndarray) -> "ModelParams":
        """New params with the same layout, scale and kernel, values from ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.size:
            raise ValueError(f"expected {self.size} values, got {theta.size}")
        block = theta.reshape(self.n_nodes, self.params_per_node)
        d = self.dim
        return ModelParams(
            weights=block[:, 0],
            centers=block[:, 1 : 1 + d],
            factors=block[:, 1 + d :],
            scale=self.scale,
            kernel=self.kernel,
        )

    def layout(self) -> list[str]:
        """Human-readable names of the flattened parameters, in order."""
        d = self.dim
        rows, cols = tril_indices(d)
        names = []
        for i in range(self.n_nodes):
            names.append(f"node{i}.weight")
            names.extend(f"node{i}.center{j}" for j in range(d))
            names.extend(f"node{i}.factor{r + 1}{c + 1}" for r, c in zip(rows, cols))
        return names


# -- factor assembly --------------------------------------------------------


def assemble_L(factor: LogCholeskyFactor, s: float = DEFAULT_SCALE) -> np.ndarray:
    return _assemble(factor.entries[None, :], factor.dim, s)[0]


def sigma(node: Node, s: float = DEFAULT_SCALE) -> np.ndarray:
    L = assemble_L(node.factor, s)
    d = node.dim
    out = np.empty((d, d))
    for j in range(d):
        for k in range(j + 1):
            out[j, k] = out[k, j] = L[j, : k + 1] @ L[k, : k + 1]
    return out


def whiten(node: Node, s: float, x) -> np.ndarray:
    """Return Sigma^{-1} (x - X) via two triangular solves with L."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != node.dim:
        raise ValueError(f"point has dimension {x.size}, node has {node.dim}")
    L = assemble_L(node.factor, s)
    y = solve_triangular(L, x - node.center, lower=True)
    return solve_triangular(L, y, lower=True, trans="T")


def zone_of_influence(node: Node, s: float = DEFAULT_SCALE) -> Ellipse:
    evals, evecs = np.linalg.eigh(sigma(node, s))
    order = np.argsort(evals)[::-1]
    return Ellipse(center=node.center.copy(), semi_axes=evals[order], axes=evecs[:, order].T)


def _assemble(factors: np.ndarray, dim: int, s: float) -> np.ndarray:
    """Batched L from stored factors of shape (N, d(d+1)/2)."""
    rows, cols = tril_indices(dim)
    diag = diag_positions(dim)
    vals = factors.copy()
    vals[:, diag] = np.exp(s * np.clip(vals[:, diag], -DIAG_CLAMP, DIAG_CLAMP))
    L = np.zeros((factors.shape[0], dim, dim))
    L[:, rows, cols] = vals
    return L


def _tri_solve(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Forward substitution L y = rhs, batched.

    ``L`` is (N, d, d); ``rhs`` is (..., N, d) and broadcasts over leading axes.
    """
    d = L.shape[-1]
    y = np.empty_like(rhs)
    for j in range(d):
        acc = rhs[..., j]
        for k in range(j):
            acc = acc - L[:, j, k] * y[..., k]
        y[..., j] = acc / L[:, j, j]
    return y


def _tri_solve_T(L: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Back substitution L^T y = rhs, batched like :func:`_tri_solve`."""
    d = L.shape[-1]
    y = np.empty_like(rhs)
    for j in reversed(range(d)):
        acc = rhs[..., j]
        for k in range(j + 1, d):
            acc = acc - L[:, k, j] * y[..., k]
        y[..., j] = acc / L[:, j, j]
    return y


class Geometry:
    """Per-node matrices derived from the factors, shared across a batch.

    ``inv`` is Sigma^{-1} and ``inv2`` is Sigma^{-2}; both come from
    triangular solves against the identity.
    """

    def __init__(self, params: ModelParams):
        d = params.dim
        self.dim = d
        self.scale = params.scale
        self.L = _assemble(params.factors, d, params.scale)
        eye = np.broadcast_to(np.eye(d), (params.n_nodes, d, d))
        # columns of the identity as a trailing axis: solve for each column
        cols = np.swapaxes(eye, -1, -2)  # (N, d(col), d)
        cols = np.swapaxes(cols, 0, 1)  # (d(col), N, d)
        inv = _tri_solve_T(self.L, _tri_solve(self.L, cols))  # (d(col), N, d)
        inv = np.swapaxes(inv, 0, 1)  # (N, col, row)
        inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
        self.inv = inv
        self.inv2 = inv @ inv
        self.inv2 = 0.5 * (self.inv2 + np.swapaxes(self.inv2, -1, -2))
        self.clamped = np.abs(params.factors[:, diag_positions(d)]) > DIAG_CLAMP


class Expansion:
    """Per (point, node) quantities for a batch of points.

    ``r`` is x - X_i with shape (K, N, d), ``w`` = Sigma^{-2} r, ``z`` the
    whitened displacement and ``phi`` = exp(-|z|^2) with shape (K, N).
    """

    def __init__(self, params: ModelParams, x: np.ndarray, geometry: Geometry | None = None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, params.dim) if params.dim > 1 else x.reshape(-1, 1)
        if x.shape[-1] != params.dim:
            raise ValueError(f"points have dimension {x.shape[-1]}, model has {params.dim}")
        self.params = params
        self.geometry = geometry if geometry is not None else Geometry(params)
        L = self.geometry.L
        self.x = x
        self.r = x[:, None, :] - params.centers[None, :, :]
        self.z = _tri_solve_T(L, _tri_solve(L, self.r))
        self.w = _tri_solve_T(L, _tri_solve(L, self.z))
        self.q = np.einsum("knd,knd->kn", self.z, self.z)
        self.phi = np.exp(-self.q)
        self.uphi = self.phi * params.weights[None, :]

    def value(self) -> np.ndarray:
        return self.uphi.sum(axis=1)

    def grad(self) -> np.ndarray:
        return -2.0 * np.einsum("kn,knd->kd", self.uphi, self.w)

    def hess(self) -> np.ndarray:
        uw = self.uphi[..., None] * self.w
        ww = np.swapaxes(uw, 1, 2) @ self.w
        b = np.einsum("kn,nij->kij", self.uphi, self.geometry.inv2)
        H = 4.0 * ww - 2.0 * b
        return 0.5 * (H + np.swapaxes(H, -1, -2))


def _check_finite(params: ModelParams, *arrays) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            geom = Geometry(params)
            bad = np.where(
                ~np.isfinite(geom.L).all(axis=(1, 2))
                | ~np.isfinite(params.weights)
                | ~np.isfinite(params.centers).all(axis=1)
            )[0]
            index = int(bad[0]) if bad.size else None
            raise NonFiniteError(f"model evaluation is not finite (node {index})", index)


def eval_points(params: ModelParams, x) -> np.ndarray:
    """u at each row of ``x`` (shape (K, d)); returns shape (K,)."""
    with np.errstate(invalid="ignore", over="ignore"):
        out = Expansion(params, x).value()
    _check_finite(params, out)
    return out


def eval_derivs_points(params: ModelParams, x, hessian: bool = True):
    """(u, grad, hess) at each row of ``x``; ``hess`` is None if not requested."""
    with np.errstate(invalid="ignore", over="ignore"):
        exp = Expansion(params, x)
        u, g = exp.value(), exp.grad()
        H = exp.hess() if hessian else None
    _check_finite(params, u, g, *(() if H is None else (H,)))
    return u, g, H


def eval(params: ModelParams, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return float(eval_points(params, x)[0])


def eval_derivs(params: ModelParams, x):
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    u, g, H = eval_derivs_points(params, x)
    return float(u[0]), g[0], H[0]
