"""Collocation loss and its exact gradient with respect to all model scalars.

The loss is

    (1/M) sum_k R_k^2 + alpha / (2 M~) sum_k S_k^2

with interior residuals R_k = L(u)(xi_k) - f(xi_k) and boundary residuals
S_k = u(xi~_k) - g(xi~_k).  The gradient is assembled in closed form: the
residual partials give per-point adjoint weights (a, b, C) on (u, grad u,
hess u) and the derivatives of each Gaussian bump with respect to its
weight, center and Sigma^{-2} are contracted against those weights, then
chained through Sigma^{-2} -> Sigma -> L -> stored factor.
"""

from __future__ import annotations

import numpy as np

from .model import (
    DIAG_CLAMP,
    Expansion,
    Geometry,
    ModelParams,
    NonFiniteError,
    diag_positions,
    tril_indices,
)
from .problems import PdeProblem


def _first_bad(arr: np.ndarray) -> int:
    bad = ~np.isfinite(arr)
    if bad.ndim > 1:
        bad = bad.reshape(len(bad), -1).any(axis=1)
    return int(np.flatnonzero(bad)[0])


def _interior_terms(params, geom, problem, x):
    exp = Expansion(params, x, geom)
    u, g = exp.value(), exp.grad()
    H = exp.hess() if problem.needs_hessian else None
    R = problem.residual(x, u, g, H)
    if not np.all(np.isfinite(R)):
        k = _first_bad(R)
        raise NonFiniteError(f"interior residual is not finite at sample {k}", k)
    return exp, u, g, H, R


def _boundary_terms(params, geom, problem, x):
    exp = Expansion(params, x, geom)
    S = problem.boundary_residual(x, exp.value())
    if not np.all(np.isfinite(S)):
        k = _first_bad(S)
        raise NonFiniteError(f"boundary residual is not finite at sample {k}", k)
    return exp, S


def loss(params: ModelParams, problem: PdeProblem, batch, boundary_batch, alpha: float) -> float:
    """Loss value only (no gradient)."""
    batch, boundary_batch = _check_inputs(params, batch, boundary_batch, alpha)
    geom = Geometry(params)
    R = _interior_terms(params, geom, problem, batch)[-1]
    _, S = _boundary_terms(params, geom, problem, boundary_batch)
    return float(np.mean(R**2) + alpha / (2 * len(S)) * np.sum(S**2))


def interior_loss(params: ModelParams, problem: PdeProblem, batch) -> float:
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    R = _interior_terms(params, Geometry(params), problem, batch)[-1]
    return float(np.mean(R**2))


def _check_inputs(params, batch, boundary_batch, alpha):
    batch = np.asarray(batch, dtype=np.float64).reshape(-1, params.dim)
    boundary_batch = np.asarray(boundary_batch, dtype=np.float64).reshape(-1, params.dim)
    if len(batch) == 0:
        raise ValueError("interior batch is empty")
    if len(boundary_batch) == 0:
        raise ValueError("boundary batch is empty")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return batch, boundary_batch


def loss_and_grad(
    params: ModelParams, problem: PdeProblem, batch, boundary_batch, alpha: float
) -> tuple[float, np.ndarray]:
    """Loss and its gradient in :meth:`ModelParams.flatten` order."""
    batch, boundary_batch = _check_inputs(params, batch, boundary_batch, alpha)
    geom = Geometry(params)
    n, d = params.n_nodes, params.dim

    exp_i, u, g, H, R = _interior_terms(params, geom, problem, batch)
    exp_b, S = _boundary_terms(params, geom, problem, boundary_batch)
    M, Mb = len(batch), len(boundary_batch)
    value = float(np.mean(R**2) + alpha / (2 * Mb) * np.sum(S**2))

    du, dg, dH = problem.residual_partials(batch, u, g, H)
    scale = 2.0 * R / M
    a = None if du is None else scale * du
    b = None if dg is None else scale[:, None] * dg
    C = None
    if dH is not None:
        C = scale[:, None, None] * dH
        C = 0.5 * (C + np.swapaxes(C, -1, -2))

    gU_i, gX_i, gB_i = _bump_adjoint(exp_i, geom, a, b, C)
    gU_b, gX_b, gB_b = _bump_adjoint(exp_b, geom, (alpha / Mb) * S, None, None)
    gU = gU_i + gU_b
    gX = gX_i + gX_b
    gB = gB_i + gB_b

    gF = _chain_to_factor(params, geom, gB)
    grad = np.concatenate([gU[:, None], gX, gF], axis=1).reshape(-1)
    if not np.all(np.isfinite(grad)):
        per_sample = np.concatenate([R, S])
        k = _first_bad(per_sample) if not np.all(np.isfinite(per_sample)) else 0
        raise NonFiniteError(f"loss gradient is not finite (sample {k})", k)
    return value, grad


def _bump_adjoint(exp: Expansion, geom: Geometry, a, b, C):
    """Contract per-point adjoints against each bump's parameter derivatives.

    Returns (dJ/dU, dJ/dX, dJ/dB) per node with B = Sigma^{-2} treated as a
    general matrix, where J = sum_k a_k u + b_k . grad u + C_k : hess u.
    """
    phi, uphi = exp.phi, exp.uphi
    r, w = exp.r, exp.w
    B = geom.inv2
    K, N, d = r.shape
    U = exp.params.weights

    # coefficient of u_i / U_i per (k, n): phi * (a - 2 b.w + 4 w.C.w - 2 C:B)
    coef = np.zeros((K, N))
    gX = np.zeros((N, d))
    gB = np.zeros((N, d, d))
    rr = np.einsum("kni,knj->knij", r, r)
    if a is not None:
        coef += a[:, None]
        # d/dX (a u) = -a grad_i u = 2 a U phi w
        gX += 2.0 * np.einsum("kn,knd->nd", a[:, None] * uphi, w)
        gB -= np.einsum("k,kn,knij->nij", a, uphi, rr)
    if b is not None:
        bw = np.einsum("kd,knd->kn", b, w)
        coef -= 2.0 * bw
        # hess_i b = U phi (4 w (w.b) - 2 B b)
        Bb = np.swapaxes(b @ np.swapaxes(B, 1, 2), 0, 1)
        Hb = 4.0 * w * bw[..., None] - 2.0 * Bb
        gX -= np.einsum("kn,kni->ni", uphi, Hb)
        # d(b.g)/dB = -2 U phi (b r^T - (b.w) r r^T)
        brT = np.einsum("ki,knj->knij", b, r)
        gB -= 2.0 * np.einsum("kn,knij->nij", uphi, brT - bw[..., None, None] * rr)
    if C is not None:
        Cw = w @ np.swapaxes(C, 1, 2)  # (K, N, d)
        wCw = np.einsum("kni,kni->kn", w, Cw)
        CB = C.reshape(K, d * d) @ B.reshape(N, d * d).T
        ch = 4.0 * wCw - 2.0 * CB  # C:hess_i / (U phi)
        coef += ch
        # C : third derivative = U phi (-2 w ch + 8 B C w)
        BCw = np.swapaxes(np.swapaxes(Cw, 0, 1) @ np.swapaxes(B, 1, 2), 0, 1)
        T = -2.0 * w * ch[..., None] + 8.0 * BCw
        gX -= np.einsum("kn,kni->ni", uphi, T)
        # d(C:H)/dB = -r r^T (C:H) + U phi (4 (r v^T + v r^T) - 2 C), v = C w
        rv = np.einsum("kni,knj->knij", r, Cw)
        gB += np.einsum(
            "kn,knij->nij",
            uphi,
            -ch[..., None, None] * rr + 4.0 * (rv + np.swapaxes(rv, -1, -2)),
        )
        gB -= 2.0 * (uphi.T @ C.reshape(K, d * d)).reshape(N, d, d)
    gU = np.einsum("kn,kn->n", phi, coef)
    del U
    return gU, gX, gB


def _chain_to_factor(params: ModelParams, geom: Geometry, gB: np.ndarray) -> np.ndarray:
    """Map dJ/d(Sigma^{-2}) to dJ/d(stored factor entries)."""
    A, B, L = geom.inv, geom.inv2, geom.L
    # dB = -A dS B - B dS A  =>  G_S = -(A G_B B + B G_B A)
    gS = -(A @ gB @ B + B @ gB @ A)
    # Sigma = L L^T  =>  G_L = (G_S + G_S^T) L
    gL = (gS + np.swapaxes(gS, -1, -2)) @ L
    d = params.dim
    rows, cols = tril_indices(d)
    gF = gL[:, rows, cols]
    diag = diag_positions(d)
    raw = params.factors[:, diag]
    # d exp(s l)/dl = s exp(s l); zero where the clamp is active
    gF[:, diag] *= params.scale * np.diagonal(L, axis1=1, axis2=2)
    gF[:, diag] *= np.abs(raw) <= DIAG_CLAMP
    return gF


def fd_grad_oracle(
    params: ModelParams, problem: PdeProblem, batch, boundary_batch, alpha: float, step: float = 1e-5
) -> np.ndarray:
    """Central differences of :func:`loss`; test-only, 2 * size loss calls."""
    if not step > 0:
        raise ValueError("step must be positive")
    theta = params.flatten()
    out = np.empty_like(theta)
    for j in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[j] += step
        minus[j] -= step
        fp = loss(params.unflatten(plus), problem, batch, boundary_batch, alpha)
        fm = loss(params.unflatten(minus), problem, batch, boundary_batch, alpha)
        out[j] = (fp - fm) / (2 * step)
    return out
