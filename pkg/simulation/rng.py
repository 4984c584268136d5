"""
Counter-based random streams for reproducible parallel Monte Carlo.

Each path owns a Philox stream keyed by (master seed, path index), so a
path's draws never depend on which worker simulates it or in what order.
Within a path the draw order is fixed: every diffusion normal first, then
one (exponential spacing, atom uniform) pair per dark-pool event until the
event time passes T.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Generator for one path."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.Philox(sequence))


@dataclass
class PathNoise:
    """
    Noise of one path.

    Attributes:
        normals: Standard normals of shape (n_steps, 2); column 0 drives W, column 1 drives B
        event_times: Dark-pool event times in (0, T], increasing
        event_atoms: Index of the active atom hit by each event
    """
    normals: np.ndarray
    event_times: np.ndarray
    event_atoms: np.ndarray


def draw_path_noise(seed: int, path_index: int, n_steps: int, T: float,
                    mu_total: float, atom_probabilities: Sequence[float]) -> PathNoise:
    """
    Draw all randomness of one path in the fixed order.

    Args:
        seed: Master seed
        path_index: Path counter
        n_steps: Number of time steps
        T: Horizon
        mu_total: Total event intensity mu(Z); 0 disables events
        atom_probabilities: mu_k / mu(Z) over the active atoms

    Returns:
        PathNoise
    """
    generator = path_generator(seed, path_index)
    normals = generator.standard_normal((n_steps, 2))
    times = []
    atoms = []
    if mu_total > 0.0 and len(atom_probabilities):
        cumulative = np.cumsum(atom_probabilities)
        last = len(cumulative) - 1
        t = 0.0
        while True:
            t += generator.exponential(1.0 / mu_total)
            pick = generator.random()
            if t > T:
                break
            times.append(t)
            atoms.append(min(int(np.searchsorted(cumulative, pick, side="right")), last))
    return PathNoise(normals, np.asarray(times, dtype=float), np.asarray(atoms, dtype=int))
