"""
Monte Carlo simulation of controlled liquidation with dark-pool fills.

Cost conventions on a grid t_0 < ... < t_n:
    impact    sum_i eta(t_i, y_i) xi_i^2 dt_i                  (xi_i: realized step rate)
    risk      sum_i (lambda_i x_i^2 + lambda_{i+1} x_{i+1}^-^2) dt_i / 2
    slippage  sum_i sum_k gamma_k(t_i, y_i) rho_{i,k}^2 mu_k dt_i  (requested orders)

Dark-pool events falling in (t_i, t_{i+1}] execute at t_{i+1} against the
pre-jump inventory x_{i+1}^-. For forcing policies the last step sells the
whole remainder and carries no dark-pool orders.
"""

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from model.model_spec import ModelSpec
from simulation.policies import CustomPolicy, Policy, ValueSource, build_policy
from simulation.rng import draw_path_noise
from solvers.value_field import Grid1D
from utils.errors import PolicyError

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 256
THREADS_ENV = "SINGULAR_HJB_THREADS"


def time_nodes(grid: Union[Grid1D, Sequence[float]]) -> np.ndarray:
    """Simulation times from a Grid1D or an explicit increasing sequence."""
    if isinstance(grid, Grid1D):
        return grid.times
    times = np.asarray(grid, dtype=float)
    if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0.0) or times[0] != 0.0:
        raise ValueError("time grid must be increasing, start at 0 and have at least two nodes")
    return times


def resolve_workers(workers: Optional[int] = None) -> int:
    """Worker count: explicit value, else SINGULAR_HJB_THREADS, else the CPU count."""
    if workers is None:
        raw = os.environ.get(THREADS_ENV)
        if raw:
            try:
                workers = int(raw)
            except ValueError:
                logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        if workers is None:
            workers = os.cpu_count() or 1
    return max(1, int(workers))


@dataclass
class FillEvent:
    node: int
    time: float
    z_id: int
    atom_index: int
    requested: float
    executed: float
    x_minus: float


@dataclass
class CostBreakdown:
    impact: float
    risk: float
    slippage: float

    @property
    def total(self) -> float:
        return self.impact + self.risk + self.slippage


@dataclass
class Trajectory:
    """
    One simulated path. Node arrays have n+1 entries, step arrays n.

    x_pre[i] is the inventory just before the dark-pool events at t_i and
    x_post[i] the inventory just after them.
    """
    times: np.ndarray
    y: np.ndarray
    x_pre: np.ndarray
    x_post: np.ndarray
    xi: np.ndarray
    requested: np.ndarray
    events: List[FillEvent]
    z_ids: Tuple[int, ...]
    policy: str
    step_costs: Optional[np.ndarray] = None

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def write_csv(self, stream) -> None:
        writer = csv.writer(stream)
        writer.writerow(["t", "y", "x_pre", "x_post", "xi", "fill_atom", "fill_size",
                         "cost_impact", "cost_risk", "cost_slippage"])
        fills: Dict[int, List[FillEvent]] = {}
        for event in self.events:
            fills.setdefault(event.node, []).append(event)
        cumulative = np.zeros((self.n_steps + 1, 3))
        if self.step_costs is not None:
            cumulative[1:] = np.cumsum(self.step_costs, axis=0)
        for i, t in enumerate(self.times):
            node_fills = fills.get(i, [])
            # several events on one node are joined with ";" in event order
            atom = ";".join(str(e.z_id) for e in node_fills) or "-1"
            size = ";".join(repr(float(e.executed)) for e in node_fills) or "0.0"
            xi = repr(float(self.xi[i])) if i < self.n_steps else ""
            writer.writerow([repr(float(t)), repr(float(self.y[i])), repr(float(self.x_pre[i])),
                             repr(float(self.x_post[i])), xi, atom, size,
                             repr(float(cumulative[i, 0])), repr(float(cumulative[i, 1])),
                             repr(float(cumulative[i, 2]))])


def _step_costs(spec: ModelSpec, times: np.ndarray, y: np.ndarray, x_pre: np.ndarray,
                x_post: np.ndarray, xi: np.ndarray, requested: np.ndarray) -> np.ndarray:
    """
    Per-step (impact, risk, slippage).

    Shapes: node arrays (n+1, ...), xi (n, ...), requested (n, K, ...).
    Returns an array of shape (n, 3, ...).
    """
    n = len(times) - 1
    h = np.diff(times).reshape((n,) + (1,) * (y.ndim - 1))
    eta = np.stack([spec.eta.evaluate(times[i], y[i]) for i in range(n)])
    lam = np.stack([spec.lam.evaluate(times[i], y[i]) for i in range(n + 1)])
    impact = eta * xi * xi * h
    risk_nodes_left = lam[:-1] * x_post[:-1] ** 2
    risk_nodes_right = lam[1:] * x_pre[1:] ** 2
    risk = 0.5 * (risk_nodes_left + risk_nodes_right) * h
    slippage = np.zeros_like(impact)
    for k, atom in enumerate(spec.dark_pool.active_atoms):
        if atom.gamma.is_infinite:
            continue
        gamma = np.stack([atom.gamma.evaluate(times[i], y[i]) for i in range(n)])
        rho = requested[:, k]
        slippage = slippage + gamma * rho * rho * atom.mu * h
    return np.stack([impact, risk, slippage], axis=1)


def evaluate_cost(trajectory: Trajectory, spec: ModelSpec) -> CostBreakdown:
    """Cost of a trajectory; slippage uses the compensator form."""
    steps = _step_costs(spec, trajectory.times, trajectory.y, trajectory.x_pre,
                        trajectory.x_post, trajectory.xi, trajectory.requested)
    impact, risk, slippage = (float(v) for v in steps.sum(axis=0))
    return CostBreakdown(impact, risk, slippage)


def _factor_step(spec: ModelSpec, t: float, y: np.ndarray, h: float,
                 normals: np.ndarray) -> np.ndarray:
    root = math.sqrt(h)
    return (y + spec.b.evaluate(t, y) * h
            + spec.sigma_bar.evaluate(t, y) * root * normals[..., 1]
            + spec.sigma.evaluate(t, y) * root * normals[..., 0])


def _draw_batch(spec: ModelSpec, times: np.ndarray, seed: int, path_indices: Sequence[int]):
    atoms = spec.dark_pool.active_atoms
    mu_total = spec.mu_total
    probabilities = spec.dark_pool.probabilities()
    noises = [draw_path_noise(seed, index, len(times) - 1, float(times[-1]), mu_total, probabilities)
              for index in path_indices]
    return atoms, noises


def simulate_factor_paths(spec: ModelSpec, y0: float, grid: Union[Grid1D, Sequence[float]],
                          seed: int, path_indices: Sequence[int]) -> np.ndarray:
    """Euler-Maruyama factor paths, shape (n+1, len(path_indices))."""
    times = time_nodes(grid)
    _, noises = _draw_batch(spec, times, seed, path_indices)
    normals = np.stack([noise.normals for noise in noises], axis=1)
    y = np.empty((len(times), len(noises)))
    y[0] = y0
    for i in range(len(times) - 1):
        y[i + 1] = _factor_step(spec, times[i], y[i], times[i + 1] - times[i], normals[i])
    return y


def simulate_factor_path(spec: ModelSpec, y0: float, grid: Union[Grid1D, Sequence[float]],
                         seed: int, path_index: int) -> np.ndarray:
    """
    Factor path y_{i+1} = y_i + b dt + sigma_bar dB + sigma dW on the grid.

    Both drivers are simulated from the path's own stream.
    """
    return simulate_factor_paths(spec, y0, grid, seed, [path_index])[:, 0]


@dataclass
class _Batch:
    times: np.ndarray
    y: np.ndarray
    x_pre: np.ndarray
    x_post: np.ndarray
    xi: np.ndarray
    requested: np.ndarray
    step_costs: np.ndarray
    events: List[List[FillEvent]]


def _run_batch(spec: ModelSpec, policy: Policy, x0: float, y0: float, times: np.ndarray,
               seed: int, path_indices: Sequence[int], record: bool) -> _Batch:
    atoms, noises = _draw_batch(spec, times, seed, path_indices)
    n = len(times) - 1
    batch = len(noises)
    n_atoms = len(atoms)
    normals = np.stack([noise.normals for noise in noises], axis=1)

    last_node = n - 1 if policy.forcing else n
    schedule: Dict[int, List[Tuple[float, int, int]]] = {}
    for b, noise in enumerate(noises):
        for tau, k in zip(noise.event_times, noise.event_atoms):
            node = min(int(np.searchsorted(times, tau, side="left")), n)
            if node <= last_node:
                schedule.setdefault(node, []).append((float(tau), b, int(k)))

    y = np.empty((n + 1, batch))
    x_pre = np.empty((n + 1, batch))
    x_post = np.empty((n + 1, batch))
    xi = np.empty((n, batch))
    requested = np.zeros((n, n_atoms, batch))
    events: List[List[FillEvent]] = [[] for _ in range(batch)]
    y[0] = y0
    x_pre[0] = x0
    x_post[0] = x0

    for i in range(n):
        t0, t1 = times[i], times[i + 1]
        h = t1 - t0
        x = x_post[i]
        if policy.forcing and i == n - 1:
            x_next = np.zeros(batch)
        else:
            x_next = policy.evolve(t0, t1, y[i], x)
            requested[i] = policy.requested_fills(t0, y[i], x)
        xi[i] = (x - x_next) / h
        y[i + 1] = _factor_step(spec, t0, y[i], h, normals[i])
        x_pre[i + 1] = x_next
        x_after = np.array(x_next, dtype=float)
        for tau, b, k in sorted(schedule.get(i + 1, ())):
            x_minus = x_after[b]
            fill = float(policy.executed_fill(t1, y[i + 1, b:b + 1], x_after[b:b + 1], k)[0])
            if policy.monotone and abs(fill) > abs(x_minus) * (1.0 + 1e-12):
                raise PolicyError(f"fill {fill:.6g} at atom {atoms[k].z_id} overshoots "
                                  f"inventory {x_minus:.6g} at t={t1:.6g}")
            x_after[b] = x_minus - fill
            if record:
                events[b].append(FillEvent(i + 1, tau, atoms[k].z_id, k, fill, fill, x_minus))
        x_post[i + 1] = x_after

    step_costs = _step_costs(spec, times, y, x_pre, x_post, xi, requested)
    return _Batch(times, y, x_pre, x_post, xi, requested, step_costs, events)


def _as_policy(policy: Union[Policy, str], source: Optional[ValueSource]) -> Policy:
    if isinstance(policy, Policy):
        return policy
    return build_policy(policy, source)


def simulate_liquidation(spec: ModelSpec, source: Optional[ValueSource], x0: float, y0: float,
                         grid: Union[Grid1D, Sequence[float]], policy: Union[Policy, str],
                         seed: int, path_index: int) -> Trajectory:
    """
    Simulate one path under a policy.

    Args:
        spec: Model
        source: Value source for a feedback policy given by name (ignored otherwise)
        x0: Initial inventory
        y0: Initial factor
        grid: Grid1D or increasing times starting at 0
        policy: Policy instance or "feedback" / "twap"
        seed: Master seed
        path_index: Path counter

    Returns:
        Trajectory with per-step costs attached

    Raises:
        PolicyError: If a monotone policy's fill exceeds the pre-jump inventory
    """
    return simulate_trajectories(spec, source, x0, y0, grid, policy, seed, [path_index])[0]


def simulate_trajectories(spec: ModelSpec, source: Optional[ValueSource], x0: float, y0: float,
                          grid: Union[Grid1D, Sequence[float]], policy: Union[Policy, str],
                          seed: int, path_indices: Sequence[int]) -> List[Trajectory]:
    """simulate_liquidation for several paths in one vectorized batch."""
    times = time_nodes(grid)
    bound = _as_policy(policy, source).prepare(spec, x0)
    result = _run_batch(spec, bound, x0, y0, times, seed, path_indices, record=True)
    z_ids = tuple(a.z_id for a in spec.dark_pool.active_atoms)
    return [Trajectory(times=times, y=result.y[:, b], x_pre=result.x_pre[:, b],
                       x_post=result.x_post[:, b], xi=result.xi[:, b],
                       requested=result.requested[:, :, b], events=result.events[b],
                       z_ids=z_ids, policy=bound.name, step_costs=result.step_costs[:, :, b])
            for b in range(len(path_indices))]


@dataclass
class McEstimate:
    mean: float
    se: float
    n: int
    seed: int

    def format_line(self) -> str:
        return f"mean={self.mean:.10f} se={self.se:.10f} n={self.n} seed={self.seed}"

    @classmethod
    def from_samples(cls, samples: np.ndarray, seed: int) -> "McEstimate":
        samples = np.asarray(samples, dtype=float)
        n = len(samples)
        if n < 2:
            raise ValueError("an estimate needs at least two samples")
        se = float(np.std(samples, ddof=1) / math.sqrt(n))
        return cls(mean=float(np.mean(samples)), se=se, n=n, seed=int(seed))


def simulate_costs(spec: ModelSpec, source: Optional[ValueSource], x0: float, y0: float,
                   grid: Union[Grid1D, Sequence[float]], policy: Union[Policy, str],
                   paths: int, seed: int, workers: Optional[int] = None,
                   chunk_size: int = DEFAULT_CHUNK_SIZE) -> np.ndarray:
    """
    Total cost of paths 0..paths-1, in path order.

    Paths are split into fixed-size chunks run on a thread pool; the chunking
    does not depend on the worker count, so results are bit-identical for any
    number of workers.
    """
    times = time_nodes(grid)
    bound = _as_policy(policy, source).prepare(spec, x0)
    starts = range(0, paths, chunk_size)

    def run_chunk(start: int) -> np.ndarray:
        indices = range(start, min(start + chunk_size, paths))
        result = _run_batch(spec, bound, x0, y0, times, seed, indices, record=False)
        return result.step_costs.sum(axis=1).sum(axis=0)

    n_workers = min(resolve_workers(workers), max(1, len(starts)))
    if n_workers == 1:
        chunks = [run_chunk(start) for start in starts]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            chunks = list(pool.map(run_chunk, starts))
    return np.concatenate(chunks) if chunks else np.zeros(0)


def mc_value_estimate(spec: ModelSpec, source: Optional[ValueSource], x0: float, y0: float,
                      grid: Union[Grid1D, Sequence[float]], policy: Union[Policy, str],
                      paths: int, seed: int, workers: Optional[int] = None,
                      chunk_size: int = DEFAULT_CHUNK_SIZE) -> McEstimate:
    """
    Mean and standard error of the cost over independent paths.

    Raises:
        ValueError: If paths < 2
    """
    if paths < 2:
        raise ValueError(f"need at least two paths, got {paths}")
    costs = simulate_costs(spec, source, x0, y0, grid, policy, paths, seed,
                           workers=workers, chunk_size=chunk_size)
    return McEstimate.from_samples(costs, seed)


def paired_gap(costs_a: np.ndarray, costs_b: np.ndarray, seed: int) -> McEstimate:
    """Estimate of E[cost_b - cost_a] from paths sharing their random streams."""
    return McEstimate.from_samples(np.asarray(costs_b) - np.asarray(costs_a), seed)


def explicit_state_path(x0: float, u_means: np.ndarray, etas: np.ndarray, dts: np.ndarray,
                        fill_factors: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Optimal inventory in product form,
    x_{i+1} = x0 prod_{j<=i} exp(-ubar_j dt_j / eta_j) f_{j+1},
    where f is the product of gamma/(gamma+u) over the events at a node.

    Returns the post-event inventory at every node.
    """
    decay = np.exp(-np.asarray(u_means, dtype=float) * np.asarray(dts, dtype=float)
                   / np.asarray(etas, dtype=float))
    if fill_factors is not None:
        decay = decay * np.asarray(fill_factors, dtype=float)
    return float(x0) * np.concatenate(([1.0], np.cumprod(decay)))


# Monotonization

@dataclass
class MonotonizationResult:
    raw: Trajectory
    monotone: Trajectory
    raw_cost: CostBreakdown
    monotone_cost: CostBreakdown

    @property
    def xi_hat(self) -> np.ndarray:
        return self.monotone.xi

    @property
    def rho_hat(self) -> np.ndarray:
        return self.monotone.requested


def _monotone_from_raw(spec: ModelSpec, raw: Trajectory) -> Trajectory:
    times = raw.times
    n = raw.n_steps
    x_pre = np.empty(n + 1)
    x_post = np.empty(n + 1)
    xi_hat = np.zeros(n)
    rho_hat = np.zeros_like(raw.requested)
    x_pre[0] = x_post[0] = raw.x_post[0]
    by_node: Dict[int, List[FillEvent]] = {}
    for event in raw.events:
        by_node.setdefault(event.node, []).append(event)
    events: List[FillEvent] = []

    for i in range(n):
        h = times[i + 1] - times[i]
        x = x_post[i]
        rho_hat[i] = np.minimum(np.maximum(raw.requested[i], 0.0), max(x, 0.0))
        x_next = x
        if x > 0.0:
            rate = max(raw.xi[i], 0.0)
            if rate * h >= x:
                xi_hat[i] = x / h
                x_next = 0.0
            else:
                xi_hat[i] = rate
                x_next = x - rate * h
        x_pre[i + 1] = x_next
        for event in by_node.get(i + 1, ()):
            fill = min(max(event.requested, 0.0), x_next)
            events.append(FillEvent(event.node, event.time, event.z_id, event.atom_index,
                                    min(max(event.requested, 0.0), max(x_next, 0.0)), fill, x_next))
            x_next = x_next - fill
        x_post[i + 1] = x_next

    trajectory = Trajectory(times=times, y=raw.y, x_pre=x_pre, x_post=x_post, xi=xi_hat,
                            requested=rho_hat, events=events, z_ids=raw.z_ids,
                            policy=f"monotone({raw.policy})")
    trajectory.step_costs = _step_costs(spec, times, raw.y, x_pre, x_post, xi_hat, rho_hat)
    return trajectory


def monotonize_control(spec: ModelSpec, policy: CustomPolicy, x0: float,
                       grid: Union[Grid1D, Sequence[float]], seed: int, path_index: int,
                       y0: float = 0.0) -> MonotonizationResult:
    """
    Replace a raw control by xi_hat = xi^+ 1{x~ > 0}, rho_hat = rho^+ ^ x~^-,
    where x~ is the inventory driven by the transformed control itself.

    The raw path is simulated first; the transformed one reuses its factor
    path, dark-pool events and control values.

    Raises:
        PolicyError: If x0 < 0 (use monotonize_signed)
    """
    if x0 < 0.0:
        raise PolicyError("monotonize_control needs x0 >= 0; use monotonize_signed for short positions")
    raw = simulate_liquidation(spec, None, x0, y0, grid, policy, seed, path_index)
    monotone = _monotone_from_raw(spec, raw)
    return MonotonizationResult(raw, monotone, evaluate_cost(raw, spec), evaluate_cost(monotone, spec))


def _negated(trajectory: Trajectory) -> Trajectory:
    events = [FillEvent(e.node, e.time, e.z_id, e.atom_index, -e.requested, -e.executed, -e.x_minus)
              for e in trajectory.events]
    return Trajectory(times=trajectory.times, y=trajectory.y, x_pre=-trajectory.x_pre,
                      x_post=-trajectory.x_post, xi=-trajectory.xi, requested=-trajectory.requested,
                      events=events, z_ids=trajectory.z_ids, policy=trajectory.policy,
                      step_costs=trajectory.step_costs)


def monotonize_signed(spec: ModelSpec, policy: CustomPolicy, x0: float,
                      grid: Union[Grid1D, Sequence[float]], seed: int, path_index: int,
                      y0: float = 0.0) -> MonotonizationResult:
    """monotonize_control for either sign of x0, by reflecting x -> -x."""
    if x0 >= 0.0:
        return monotonize_control(spec, policy, x0, grid, seed, path_index, y0)
    rate_fn, fill_fn = policy.rate_fn, policy.fill_fn
    flipped = CustomPolicy(
        lambda t, y, x: -np.asarray(rate_fn(t, y, -x)),
        None if fill_fn is None else (lambda t, y, x_minus, k: -np.asarray(fill_fn(t, y, -x_minus, k))),
        name=policy.name,
    )
    result = monotonize_control(spec, flipped, -x0, grid, seed, path_index, y0)
    return MonotonizationResult(_negated(result.raw), _negated(result.monotone),
                                result.raw_cost, result.monotone_cost)
