"""Edge/user topology: which user reports to which edge server.

Users are addressed as (m, n): edge index m in 1..M and the user's 1-based
position n within that edge.  All iteration is in ascending (m, n) order,
which fixes the global summation order for aggregation and metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class Topology:
    num_edges: int
    user_to_edge: tuple[int, ...]  # global user g (0-based) -> edge m (1-based)

    def __post_init__(self):
        if self.num_edges < 1:
            raise ConfigError("topology needs at least one edge server")
        if len(self.user_to_edge) < self.num_edges:
            raise ConfigError("topology needs at least as many users as edges")
        if any(not 1 <= m <= self.num_edges for m in self.user_to_edge):
            raise ConfigError("user assigned to an unknown edge")
        present = set(self.user_to_edge)
        if len(present) != self.num_edges:
            raise ConfigError("every edge must serve at least one user")

    @property
    def num_users(self) -> int:
        return len(self.user_to_edge)

    def users_of(self, m: int) -> list[int]:
        """Global user ids served by edge m, in ascending order."""
        return [g for g, e in enumerate(self.user_to_edge) if e == m]

    def pairs(self) -> list[tuple[int, int, int]]:
        """All (m, n, global_user) triples in ascending (m, n) order."""
        out = []
        for m in range(1, self.num_edges + 1):
            for n, g in enumerate(self.users_of(m), start=1):
                out.append((m, n, g))
        return out

    @classmethod
    def block(cls, num_edges: int, num_users: int) -> "Topology":
        """Contiguous blocks of users per edge, sizes differing by <= 1."""
        if num_edges < 1 or num_users < num_edges:
            raise ConfigError(
                f"need 1 <= edges <= users, got edges={num_edges} users={num_users}"
            )
        base, extra = divmod(num_users, num_edges)
        assignment = []
        for m in range(1, num_edges + 1):
            assignment.extend([m] * (base + (1 if m <= extra else 0)))
        return cls(num_edges, tuple(assignment))

    @classmethod
    def round_robin(cls, num_edges: int, num_users: int) -> "Topology":
        if num_edges < 1 or num_users < num_edges:
            raise ConfigError(
                f"need 1 <= edges <= users, got edges={num_edges} users={num_users}"
            )
        return cls(num_edges, tuple(g % num_edges + 1 for g in range(num_users)))
