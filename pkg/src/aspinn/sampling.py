"""Collocation point sets, initial node layout and minibatch partitioning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DEFAULT_SCALE, LogCholeskyFactor, Node
from .problems import SLIT_CLEARANCE, SLIT_TOL, DomainSpec

MAX_DRAWS = 10**6
WEIGHT_INIT = 0.1
SLIT_NODE_SHIFT = 1e-2


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleSet:
    interior_train: np.ndarray
    boundary_train: np.ndarray
    interior_test: np.ndarray
    boundary_test: np.ndarray
    seed: int


def default_test_counts(M: int, M_boundary: int) -> tuple[int, int]:
    return math.ceil(M / 4), math.ceil(M_boundary / 4)


def _sample_interior(domain: DomainSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = domain.lo, domain.hi
    out = []
    have = drawn = 0
    while have < n:
        want = max(2 * (n - have), 16)
        drawn += want
        if drawn > MAX_DRAWS:
            raise SamplingError(
                f"rejection sampling gave {have} of {n} interior points after {MAX_DRAWS} draws"
            )
        pts = rng.uniform(lo, hi, size=(want, domain.dim))
        ok = domain.is_interior(pts)
        if domain.has_slit:
            ok &= domain.slit_distance(pts) >= SLIT_CLEARANCE
        pts = pts[ok][: n - have]
        out.append(pts)
        have += len(pts)
    return np.concatenate(out)


def _sample_boundary(domain: DomainSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if domain.dim == 1:
        return rng.choice(domain.bounds[0], size=n).reshape(-1, 1)
    segs = domain.boundary_segments()
    lengths = np.array([np.linalg.norm(b - a) for a, b in segs])
    which = rng.choice(len(segs), size=n, p=lengths / lengths.sum())
    frac = rng.uniform(0.0, 1.0, size=n)
    start = np.stack([segs[i][0] for i in which])
    end = np.stack([segs[i][1] for i in which])
    pts = start + frac[:, None] * (end - start)
    if domain.has_slit:
        # the slit is half-open at x = 1; that end belongs to the outer square
        on_slit = which == len(segs) - 1
        pts[on_slit, 1] = 0.0
        pts[on_slit & (pts[:, 0] >= 1.0), 0] = np.nextafter(1.0, 0.0)
    return pts


def _min_pair_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each row of ``a``, the distance to the nearest row of ``b``."""
    if len(b) == 0:
        return np.full(len(a), np.inf)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.min(np.sum(diff**2, axis=-1), axis=1))


def _disjoint(sampler, domain, train, n, rng):
    pts = sampler(domain, n, rng)
    for _ in range(100):
        clash = _min_pair_distance(pts, train) <= 1e-12
        if not clash.any():
            return pts
        pts[clash] = sampler(domain, int(clash.sum()), rng)
    raise SamplingError("could not draw a test set disjoint from the training set")


def generate_samples(
    domain: DomainSpec,
    M: int,
    M_boundary: int,
    K: int | None = None,
    K_boundary: int | None = None,
    seed: int = 0,
) -> SampleSet:
    """Uniform random interior and boundary points, train and test disjoint.

    Boundary points pick a boundary segment with probability proportional
    to its length.  ``K`` and ``K_boundary`` default to a quarter of the
    training counts.
    """
    dK, dKb = default_test_counts(M, M_boundary)
    K = dK if K is None else K
    K_boundary = dKb if K_boundary is None else K_boundary
    for name, count in (("M", M), ("M_boundary", M_boundary), ("K", K), ("K_boundary", K_boundary)):
        if count < 1:
            raise ValueError(f"{name} must be at least 1, got {count}")
    rng = np.random.default_rng(seed)
    interior_train = _sample_interior(domain, M, rng)
    boundary_train = _sample_boundary(domain, M_boundary, rng)
    interior_test = _disjoint(_sample_interior, domain, interior_train, K, rng)
    boundary_test = _disjoint(_sample_boundary, domain, boundary_train, K_boundary, rng)
    return SampleSet(interior_train, boundary_train, interior_test, boundary_test, seed)


def grid_spacing(domain: DomainSpec, counts) -> np.ndarray:
    counts = np.asarray(counts)
    return (domain.hi - domain.lo) / counts


def init_nodes(
    domain: DomainSpec, counts, s: float = DEFAULT_SCALE, seed: int = 0
) -> list[Node]:
    """Nodes at the cell centers of a uniform grid with isotropic zones.

    The zone size is the geometric mean of the per-dimension spacings so
    every node starts out circular.  Weights are uniform in [-0.1, 0.1].
    Nodes that land on the slit are nudged off it in +y.
    """
    counts = tuple(int(c) for c in counts)
    if len(counts) != domain.dim:
        raise ValueError(f"need {domain.dim} node counts, got {len(counts)}")
    if any(c < 1 for c in counts):
        raise ValueError(f"node counts must be at least 1, got {counts}")
    spacing = grid_spacing(domain, counts)
    h0 = float(np.exp(np.mean(np.log(spacing))))
    axes = [lo + (np.arange(c) + 0.5) * dx for lo, c, dx in zip(domain.lo, counts, spacing)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.reshape(-1) for m in mesh], axis=1)
    if domain.has_slit:
        hit = (np.abs(centers[:, 1]) <= SLIT_TOL) & (centers[:, 0] >= 0) & (centers[:, 0] < 1)
        centers[hit, 1] += SLIT_NODE_SHIFT
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-WEIGHT_INIT, WEIGHT_INIT, size=len(centers))
    factor = LogCholeskyFactor.isotropic(domain.dim, h0, s)
    return [Node(c, w, factor) for c, w in zip(centers, weights)]


@dataclass(frozen=True)
class BatchPlan:
    """``batch_size`` is an int count or a float fraction in (0, 1] of M."""

    batch_size: int | float
    seed: int = 0

    def size_for(self, M: int) -> int:
        bs = self.batch_size
        if isinstance(bs, float):
            if not 0 < bs <= 1:
                raise ValueError(f"batch fraction must be in (0, 1], got {bs}")
            return max(1, int(round(bs * M)))
        if not 1 <= bs <= M:
            raise ValueError(f"batch size must be in [1, {M}], got {bs}")
        return int(bs)


def batches(samples: SampleSet | int, plan: BatchPlan, epoch: int) -> list[np.ndarray]:
    """Index slices covering the interior training points once for this epoch.

    Boundary points are never batched; callers use the full boundary set.
    """
    n_points = samples if isinstance(samples, int) else len(samples.interior_train)
    size = plan.size_for(n_points)
    perm = np.random.default_rng([plan.seed, epoch]).permutation(n_points)
    return [perm[i : i + size] for i in range(0, n_points, size)]
