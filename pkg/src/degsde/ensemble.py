"""Monte Carlo path bundles."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Ball:
    """Open ball ``B(center, radius)`` used as a stopping domain."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "radius", float(self.radius))

    def outside(self, Z):
        return np.linalg.norm(Z - self.center, axis=-1) >= self.radius


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Recorded paths.

    ``states`` has shape ``(n_paths, n_times, d)``.  ``exit_time`` is
    ``inf`` for paths that never left the stopping domain; stopped and
    diverged paths are frozen at their last valid state.  ``max_excursion``
    is the running maximum of ``|Z_t - monitor_center|`` over the
    simulation grid (not just the recorded one).
    """

    times: np.ndarray
    states: np.ndarray
    exit_time: np.ndarray
    stopped: np.ndarray
    diverged: np.ndarray
    max_excursion: np.ndarray
    seed: int
    scheme: str
    step: float
    z0: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def d(self):
        return self.states.shape[2]

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def diverged_fraction(self):
        return float(np.mean(self.diverged))

    def marginal(self, t):
        """States at recorded time ``t`` (must be on the grid)."""
        i = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[i], t, rtol=0, atol=1e-12 * max(1.0, abs(t))):
            raise ValueError(f"t={t} is not a recorded time")
        return self.states[:, i, :]

    def time_index(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if not np.isclose(self.times[i], t, rtol=0, atol=1e-9 * max(1.0, abs(t))):
            raise ValueError(f"t={t} is not a recorded time")
        return i


def concat_blocks(parts):
    """Merge per-block dicts of arrays in block order."""
    keys = parts[0].keys()
    return {k: np.concatenate([p[k] for p in parts], axis=0) for k in keys}
