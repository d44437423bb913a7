"""Adam training loop, test metrics and the run report."""

from __future__ import annotations

import functools
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import reference as ref
from .gradients import loss, loss_and_grad
from .model import DEFAULT_SCALE, ModelParams, NonFiniteError, diag_positions, eval_points
from .problems import PdeProblem, get_problem
from .sampling import BatchPlan, SampleSet, batches, generate_samples, init_nodes

log = logging.getLogger(__name__)

DEFAULT_NODES = {
    "poisson2d": (4, 2),
    "ripple2d": (8, 8),
    "square_slit": (7, 7),
    "advection1d": (8, 5),
    "burgers1d": (10, 8),
}
DEFAULT_SAMPLES = {
    "poisson2d": 200,
    "ripple2d": 1600,
    "square_slit": 1200,
    "advection1d": 600,
    "burgers1d": 600,
}
DEFAULT_BOUNDARY_SAMPLES = 128
L2_GRID = 101
TIP_RADIUS = 0.1
SLIT_REFERENCE_N = 257


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    problem: str
    nodes: tuple[int, ...] | None = None
    samples: int | None = None
    boundary_samples: int = DEFAULT_BOUNDARY_SAMPLES
    test_samples: int | None = None
    boundary_test_samples: int | None = None
    batch: int | float = 1.0
    alpha: float | None = None
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 20000
    seed: int = 0
    scale: float = DEFAULT_SCALE
    eval_every: int = 100
    isotropic: bool = False
    batch_boundary: bool = False

    def resolved(self) -> "TrainConfig":
        """Fill problem-dependent defaults and validate."""
        if self.problem not in DEFAULT_NODES:
            raise ConfigError(
                f"unknown problem {self.problem!r}; choose one of {', '.join(DEFAULT_NODES)}"
            )
        cfg = self
        if cfg.nodes is None:
            cfg = replace(cfg, nodes=DEFAULT_NODES[cfg.problem])
        if cfg.samples is None:
            cfg = replace(cfg, samples=DEFAULT_SAMPLES[cfg.problem])
        if cfg.alpha is None:
            cfg = replace(cfg, alpha=10.0 * cfg.boundary_samples)
        cfg = replace(cfg, nodes=tuple(int(n) for n in cfg.nodes))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.iterations is None or self.iterations < 1:
            raise ConfigError(f"iterations must be at least 1, got {self.iterations}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.alpha is not None and not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.samples is not None and self.samples < 1:
            raise ConfigError(f"samples must be at least 1, got {self.samples}")
        if self.boundary_samples < 1:
            raise ConfigError(f"boundary samples must be at least 1, got {self.boundary_samples}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be at least 1, got {self.eval_every}")
        if self.nodes is not None and any(int(n) < 1 for n in self.nodes):
            raise ConfigError(f"node counts must be positive, got {self.nodes}")
        if isinstance(self.batch, float) and not 0 < self.batch <= 1:
            raise ConfigError(f"batch fraction must be in (0, 1], got {self.batch}")
        if isinstance(self.batch, int) and self.samples is not None and not 1 <= self.batch <= self.samples:
            raise ConfigError(f"batch size must be in [1, {self.samples}], got {self.batch}")
        if self.alpha is not None and self.alpha <= self.boundary_samples:
            warnings.warn(
                f"alpha={self.alpha} does not exceed the boundary sample count "
                f"{self.boundary_samples}; boundary data may be poorly enforced",
                stacklevel=3,
            )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["nodes"] = list(self.nodes) if self.nodes is not None else None
        return out


# -- optimizer ------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(state: AdamState, theta: np.ndarray, grad: np.ndarray, lr, beta1, beta2, eps):
    """Flat-vector Adam step; returns (new state, new theta)."""
    if not (len(state.m) == len(theta) == len(grad)):
        raise ValueError("gradient, parameters and optimizer state lengths differ")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    new = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(new)):
        raise NonFiniteError("Adam update produced non-finite parameters")
    return AdamState(m, v, t), new


def adam_step(
    state: AdamState,
    params: ModelParams,
    grad: np.ndarray,
    lr: float = 5e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[AdamState, ModelParams]:
    state, theta = adam_update(state, params.flatten(), np.asarray(grad, float), lr, beta1, beta2, eps)
    return state, params.unflatten(theta)


def isotropic_mask(params: ModelParams) -> Callable[[np.ndarray], np.ndarray]:
    """Gradient projection that ties each node's diagonal factor entries and
    freezes the off-diagonal ones, keeping every zone a circle."""
    per = params.params_per_node
    d = params.dim
    diag = 1 + d + diag_positions(d)
    off = np.setdiff1d(np.arange(1 + d, per), diag)

    def project(grad: np.ndarray) -> np.ndarray:
        g = grad.reshape(params.n_nodes, per).copy()
        g[:, diag] = g[:, diag].sum(axis=1, keepdims=True)
        g[:, off] = 0.0
        return g.reshape(-1)

    return project


# -- metrics ----------------------------------------------------------------------------


def relative_l2(pred: np.ndarray, truth: np.ndarray) -> tuple[float, bool]:
    """(error, is_relative); falls back to absolute RMS when truth is zero."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    norm = np.sqrt(np.sum(truth**2))
    diff = np.sqrt(np.sum((pred - truth) ** 2))
    if norm == 0:
        return float(diff / np.sqrt(max(truth.size, 1))), False
    return float(diff / norm), True


def l2_error(params: ModelParams, truth, points) -> float:
    """Relative L2 error of the model against ``truth`` on ``points``.

    ``truth`` is a callable, a GridSolution (interpolated) or an array of
    values at ``points``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if callable(truth):
        values = truth(points)
    elif isinstance(truth, ref.GridSolution):
        values = ref.resample(truth, points)
    else:
        values = np.asarray(truth, dtype=np.float64)
    err, relative = relative_l2(eval_points(params, points), values)
    if not relative:
        log.warning("truth vanishes on the evaluation grid; reporting absolute RMS error")
    return err


@functools.lru_cache(maxsize=4)
def slit_reference(n: int = SLIT_REFERENCE_N) -> ref.GridSolution:
    return ref.fd_poisson_slit(n)


@functools.lru_cache(maxsize=4)
def burgers_reference(T: float, nx: int = 2000, cfl: float = 0.5) -> ref.GridSolution:
    return ref.godunov_burgers(nx=nx, cfl=cfl, T=T, times=np.linspace(0.0, T, 121))


def reference_for(problem: PdeProblem, reference: ref.GridSolution | None = None):
    """Ground truth used for L2: exact callable, or a GridSolution."""
    if reference is not None:
        return reference
    if problem.exact is not None:
        return problem.exact
    if problem.name == "square_slit":
        return slit_reference()
    if problem.name == "burgers1d":
        return burgers_reference(problem.domain.time_horizon)
    return None


def evaluation_set(problem: PdeProblem, truth, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Points and true values used for the L2 metric.

    Exact solutions use a uniform 101-per-axis grid over the bounding box.
    Grid references use their own valid nodes, minus a disc of radius 0.1
    around the slit tip for the slit problem.
    """
    if callable(truth):
        axes = [np.linspace(a, b, L2_GRID) for a, b in problem.domain.bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        if problem.domain.has_slit:
            pts = pts[~problem.domain.on_slit(pts)]
        return pts, truth(pts)
    grid = truth
    if grid.dim == 2 and problem.domain.kind == "spacetime-strip":
        xs = grid.axes[0][::stride * 20 if len(grid.axes[0]) > 400 else stride]
        ts = grid.axes[1][::stride]
        mesh = np.meshgrid(xs, ts, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        return pts, ref.resample(grid, pts)
    sl = tuple(slice(None, None, stride) for _ in grid.axes)
    mesh = np.meshgrid(*[a[sl[0]] for a in grid.axes], indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    vals = grid.values[sl].reshape(-1)
    keep = grid.mask[sl].reshape(-1)
    if problem.domain.has_slit:
        keep &= np.hypot(pts[:, 0], pts[:, 1]) > TIP_RADIUS
    return pts[keep], vals[keep]


def slice_errors(params: ModelParams, problem: PdeProblem, times, truth=None, nx: int = 401) -> dict:
    """Relative L2 of fixed-time profiles of a spacetime solution."""
    if problem.domain.kind != "spacetime-strip":
        raise ValueError("time slices only apply to spacetime problems")
    truth = reference_for(problem, truth)
    out = {}
    for t in times:
        if isinstance(truth, ref.GridSolution):
            x = truth.axes[0]
            x = x[(x >= problem.domain.lo[0]) & (x <= problem.domain.hi[0])]
            pts = np.column_stack([x, np.full(len(x), float(t))])
            values = ref.resample(truth, pts)
        else:
            x = np.linspace(problem.domain.lo[0], problem.domain.hi[0], nx)
            pts = np.column_stack([x, np.full(len(x), float(t))])
            values = truth(pts)
        out[float(t)] = relative_l2(eval_points(params, pts), values)[0]
    return out


# -- training ------------------------------------------------------------------------------


@dataclass
class TrainReport:
    config: TrainConfig
    params: ModelParams
    loss_history: np.ndarray
    eval_iterations: np.ndarray
    test_loss_history: np.ndarray
    l2_history: np.ndarray
    samples: SampleSet
    initial_params: ModelParams
    wall_time: float = 0.0
    failed: bool = False
    message: str = ""
    clamped: bool = False
    l2_relative: bool = True

    @property
    def final_l2(self) -> float:
        return float(self.l2_history[-1]) if len(self.l2_history) else float("nan")


def _seeds(seed: int) -> tuple[int, int, int]:
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(c.generate_state(1)[0]) for c in children)


def initial_model(cfg: TrainConfig, problem: PdeProblem | None = None) -> ModelParams:
    problem = problem or get_problem(cfg.problem)
    _, node_seed, _ = _seeds(cfg.seed)
    nodes = init_nodes(problem.domain, cfg.nodes, cfg.scale, seed=node_seed)
    return ModelParams.from_nodes(nodes, scale=cfg.scale)


def make_samples(cfg: TrainConfig, problem: PdeProblem | None = None) -> SampleSet:
    problem = problem or get_problem(cfg.problem)
    sample_seed, _, _ = _seeds(cfg.seed)
    return generate_samples(
        problem.domain,
        cfg.samples,
        cfg.boundary_samples,
        cfg.test_samples,
        cfg.boundary_test_samples,
        seed=sample_seed,
    )


def train(
    config: TrainConfig,
    problem: PdeProblem | None = None,
    reference: ref.GridSolution | None = None,
    params: ModelParams | None = None,
    l2_stride: int = 2,
    callback: Callable | None = None,
) -> TrainReport:
    """Run ``config.iterations`` Adam steps over minibatches of interior points.

    Train loss is recorded every step; test loss and L2 every
    ``eval_every`` steps and after the last one.  A non-finite loss stops
    the run and returns the partial report with ``failed`` set.
    """
    cfg = config.resolved()
    problem = problem or get_problem(cfg.problem)
    samples = make_samples(cfg, problem)
    params = params if params is not None else initial_model(cfg, problem)
    initial = params
    _, _, batch_seed = _seeds(cfg.seed)
    plan = BatchPlan(cfg.batch, seed=batch_seed)
    bplan = BatchPlan(cfg.batch, seed=batch_seed + 1)

    truth = reference_for(problem, reference)
    eval_pts = eval_vals = None
    if truth is not None:
        eval_pts, eval_vals = evaluation_set(problem, truth, stride=1 if callable(truth) else l2_stride)

    project = isotropic_mask(params) if cfg.isotropic else None
    theta = params.flatten()
    state = AdamState.zeros(theta.size)
    X, Xb = samples.interior_train, samples.boundary_train

    losses = np.empty(cfg.iterations)
    eval_iters, test_losses, l2s = [], [], []
    l2_relative = True
    clamped_reported = False
    failed, message = False, ""
    epoch, bepoch, queue, bqueue = 0, 0, [], []
    start = time.perf_counter()
    it = 0
    try:
        for it in range(cfg.iterations):
            if not queue:
                queue = batches(samples, plan, epoch)
                epoch += 1
            idx = queue.pop(0)
            boundary = Xb
            if cfg.batch_boundary:
                if not bqueue:
                    bqueue = batches(len(Xb), bplan, bepoch)
                    bepoch += 1
                boundary = Xb[bqueue.pop(0)]
            current = params.unflatten(theta) if it else params
            value, grad = loss_and_grad(current, problem, X[idx], boundary, cfg.alpha)
            losses[it] = value
            if not clamped_reported and np.any(np.abs(current.factors[:, diag_positions(current.dim)]) > 30):
                log.warning("anisotropy factor hit the clamp at iteration %d", it)
                clamped_reported = True
            if project is not None:
                grad = project(grad)
            state, theta = adam_update(state, theta, grad, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
            if (it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations:
                snapshot = params.unflatten(theta)
                eval_iters.append(it + 1)
                test_losses.append(
                    loss(snapshot, problem, samples.interior_test, samples.boundary_test, cfg.alpha)
                )
                if eval_pts is not None:
                    err, l2_relative = relative_l2(eval_points(snapshot, eval_pts), eval_vals)
                    l2s.append(err)
                if callback is not None:
                    callback(it + 1, snapshot, test_losses[-1], l2s[-1] if l2s else None)
    except NonFiniteError as exc:
        failed = True
        message = f"iteration {it}: {exc}"
        losses = losses[:it]
        log.error("training aborted: %s", message)
    else:
        losses = losses[: cfg.iterations]
    return TrainReport(
        config=cfg,
        params=params.unflatten(theta),
        loss_history=losses,
        eval_iterations=np.asarray(eval_iters, dtype=int),
        test_loss_history=np.asarray(test_losses),
        l2_history=np.asarray(l2s),
        samples=samples,
        initial_params=initial,
        wall_time=time.perf_counter() - start,
        failed=failed,
        message=message,
        clamped=clamped_reported,
        l2_relative=l2_relative,
    )
