"""Struct-of-arrays container for tracer particles."""

from dataclasses import dataclass, fields

import numpy as np


@dataclass
class ParticleSet:
    """Particles owned by one rank.

    Attributes:
        dof_index: DoF the particle was created at.
        origin_primitive: Macro primitive owning that DoF.
        origin_rank: Rank owning ``origin_primitive``; departure values return there.
        start: Physical position at the start of the current integration interval.
        position: Current physical position.
        volume: Macro volume containing ``position`` (search hint).
        element: Micro element containing ``position``.
        lam: Barycentric coordinates of ``position`` in ``element``.
        stage_values: ``(n, S, d)`` Runge-Kutta stage velocities.
        departure_value: Field value evaluated at the departure point (NaN before evaluation).
    """

    dof_index: np.ndarray
    origin_primitive: np.ndarray
    origin_rank: np.ndarray
    start: np.ndarray
    position: np.ndarray
    volume: np.ndarray
    element: np.ndarray
    lam: np.ndarray
    stage_values: np.ndarray
    departure_value: np.ndarray

    def __len__(self) -> int:
        return len(self.dof_index)

    @property
    def dim(self) -> int:
        return int(self.position.shape[1])

    @property
    def stages(self) -> int:
        return int(self.stage_values.shape[1])

    @classmethod
    def empty(cls, dim: int, stages: int) -> "ParticleSet":
        i = np.zeros(0, dtype=np.int64)
        return cls(
            dof_index=i, origin_primitive=i.copy(), origin_rank=i.copy(),
            start=np.zeros((0, dim)), position=np.zeros((0, dim)), volume=i.copy(),
            element=i.copy(), lam=np.zeros((0, dim + 1)),
            stage_values=np.zeros((0, stages, dim)), departure_value=np.zeros(0),
        )

    def take(self, index: np.ndarray) -> "ParticleSet":
        return ParticleSet(**{f.name: getattr(self, f.name)[index] for f in fields(self)})

    @classmethod
    def concat(cls, parts: list["ParticleSet"]) -> "ParticleSet":
        return cls(**{f.name: np.concatenate([getattr(p, f.name) for p in parts])
                      for f in fields(cls)})

    def key_order(self) -> np.ndarray:
        """Permutation sorting by (origin_primitive, dof_index)."""
        return np.lexsort((self.dof_index, self.origin_primitive))

    def sorted(self) -> "ParticleSet":
        return self.take(self.key_order())

    def resize_stages(self, stages: int) -> None:
        if self.stages != stages:
            self.stage_values = np.zeros((len(self), stages, self.dim))

    @property
    def bytes_per_particle(self) -> int:
        total = 0
        for f in fields(self):
            arr = getattr(self, f.name)
            total += arr.itemsize * int(np.prod(arr.shape[1:], dtype=np.int64))
        return total
