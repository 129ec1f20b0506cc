"""Decomposition of macro primitives over ranks and particle synchronization.

Ranks are in-process workers.  Every exchange is a barrier: each rank
decides the destination of the particles it currently owns, hands them over
as :class:`MigrationBatch` objects, and every receiver applies its incoming
batches in source-rank order before re-sorting by (origin primitive, DoF).
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from mmoc.errors import ConfigurationError
from mmoc.services.fem import locate_physical
from mmoc.services.mesh import MacroPrimitive, MeshHierarchy, PrimitiveKind
from mmoc.services.particles import ParticleSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PartitionLayout:
    """Assignment of primitives to ranks.

    Attributes:
        n_ranks: Rank count R.
        primitive_rank: Owner rank per primitive id.
        volume_rank: Owner rank per macro volume index.
        neighbors: Ranks sharing at least one coarse vertex with each rank.
    """

    n_ranks: int
    primitive_rank: np.ndarray
    volume_rank: np.ndarray
    neighbors: dict[int, tuple[int, ...]]

    def volumes_of(self, rank: int) -> np.ndarray:
        return np.flatnonzero(self.volume_rank == rank)

    def apply(self, hierarchy: MeshHierarchy) -> list[MacroPrimitive]:
        """Primitives of ``hierarchy`` with their ``owner`` set from this layout."""
        return [replace(p, owner=int(self.primitive_rank[p.id])) for p in hierarchy.primitives]


def partition_mesh(hierarchy: MeshHierarchy, n_ranks: int) -> PartitionLayout:
    """Contiguous blocks of volume primitives; interfaces go to the lowest adjacent rank.

    Raises:
        ConfigurationError: If ``n_ranks`` is below 1 or exceeds the volume count.
    """
    n_vol = hierarchy.n_macros
    if n_ranks < 1:
        raise ConfigurationError(f"Rank count must be at least 1, got {n_ranks}")
    if n_ranks > n_vol:
        raise ConfigurationError(f"Cannot split {n_vol} volume primitives over {n_ranks} ranks")

    volume_rank = np.empty(n_vol, dtype=np.int64)
    for rank, block in enumerate(np.array_split(np.arange(n_vol), n_ranks)):
        volume_rank[block] = rank

    primitive_rank = np.empty(len(hierarchy.primitives), dtype=np.int64)
    offset = hierarchy.volume_offset
    for prim in hierarchy.primitives:
        if prim.kind is PrimitiveKind.VOLUME:
            primitive_rank[prim.id] = volume_rank[prim.id - offset]
        else:
            primitive_rank[prim.id] = min(volume_rank[v - offset] for v in prim.neighbors)

    neighbors: dict[int, set[int]] = {r: set() for r in range(n_ranks)}
    for m, near in enumerate(hierarchy.macro_neighbors):
        for k in near[near >= 0]:
            a, b = int(volume_rank[m]), int(volume_rank[k])
            if a != b:
                neighbors[a].add(b)
                neighbors[b].add(a)

    layout = PartitionLayout(
        n_ranks=n_ranks,
        primitive_rank=primitive_rank,
        volume_rank=volume_rank,
        neighbors={r: tuple(sorted(s)) for r, s in neighbors.items()},
    )
    logger.info("Partitioned mesh — ranks=%d volumes=%d", n_ranks, n_vol)
    return layout


@dataclass(frozen=True)
class MigrationBatch:
    """Particles leaving ``source`` for ``destination``, in key order."""

    source: int
    destination: int
    particles: ParticleSet

    def __len__(self) -> int:
        return len(self.particles)


@dataclass
class ExchangeStats:
    """Counters accumulated over synchronizations."""

    exchanges: int = 0
    migrated: int = 0
    clamps: int = 0
    escalations: int = 0
    payload_bytes: int = 0
    values_returned: int = 0
    per_exchange: list[int] = field(default_factory=list)

    def merge(self, other: "ExchangeStats") -> None:
        self.exchanges += other.exchanges
        self.migrated += other.migrated
        self.clamps += other.clamps
        self.escalations += other.escalations
        self.payload_bytes += other.payload_bytes
        self.values_returned += other.values_returned
        self.per_exchange.extend(other.per_exchange)


def _relocate(particles: ParticleSet, hierarchy: MeshHierarchy) -> tuple[int, int]:
    """Locate every particle, clamping escaped ones onto the boundary."""
    if not len(particles):
        return 0, 0
    loc, comp, clamped = locate_physical(hierarchy, particles.position, particles.volume, clamp=True)
    n_clamped = int(clamped.sum())
    if n_clamped:
        particles.position = particles.position.copy()
        particles.position[clamped] = hierarchy.blending.forward(comp[clamped])
    particles.volume = loc.macro
    particles.element = loc.element
    particles.lam = loc.lam
    return n_clamped, loc.escalations


def sync_particles(
    rank_sets: list[ParticleSet],
    layout: PartitionLayout,
    hierarchy: MeshHierarchy,
) -> tuple[list[ParticleSet], ExchangeStats]:
    """Give every particle to the rank owning the macro volume containing it.

    Each rank locates its own particles (starting from their last volume),
    so the destination is decided by the previous owner only.

    Returns:
        The new per-rank sets and the statistics of this exchange.
    """
    stats = ExchangeStats(exchanges=1)
    kept: list[ParticleSet] = []
    outgoing: list[list[MigrationBatch]] = [[] for _ in range(layout.n_ranks)]
    for rank, particles in enumerate(rank_sets):
        clamps, escalations = _relocate(particles, hierarchy)
        stats.clamps += clamps
        stats.escalations += escalations
        dest = layout.volume_rank[particles.volume] if len(particles) else np.zeros(0, dtype=np.int64)
        kept.append(particles.take(np.flatnonzero(dest == rank)) if np.any(dest != rank) else particles)
        for target in np.unique(dest[dest != rank]):
            moving = particles.take(np.flatnonzero(dest == target)).sorted()
            outgoing[int(target)].append(MigrationBatch(rank, int(target), moving))

    new_sets: list[ParticleSet] = []
    moved_total = 0
    for rank in range(layout.n_ranks):
        incoming = outgoing[rank]
        if not incoming:
            new_sets.append(kept[rank])
            continue
        moved = sum(len(b) for b in incoming)
        moved_total += moved
        stats.payload_bytes += moved * incoming[0].particles.bytes_per_particle
        new_sets.append(ParticleSet.concat([kept[rank]] + [b.particles for b in incoming]).sorted())
    stats.migrated = moved_total
    stats.per_exchange.append(moved_total)
    if stats.clamps:
        logger.debug("Synchronization clamped %d particles", stats.clamps)
    return new_sets, stats
