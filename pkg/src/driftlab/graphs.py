"""Environment graphs: catalogs, snapshots, deltas, and relocation events.

A household is a fixed catalog of objects and locations. The state at one
timestamp is an in-tree: every object sits in exactly one location ("is-in"
edge), locations hang off a designated root. Consecutive snapshots are
compared through minimal deltas, and relocations over a horizon are the
net parent changes between the two endpoint snapshots: churn inside the
window is unobservable to a model that predicts future snapshots.

All types are immutable values; treat parent maps as read-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MINUTES_PER_DAY = 1440
DAYS_PER_WEEK = 7

# harmonics of the daily cycle; the highest one distinguishes ten-minute
# windows, which a single daily sinusoid cannot resolve
DAY_FREQUENCIES = (1, 2, 4, 8, 16, 32)
TIME_ENCODING_DIM = 2 * len(DAY_FREQUENCIES) + 2


class GraphError(Exception):
    """Raised on catalog mismatches and stale or malformed deltas."""


def time_encoding(t_minutes: int) -> np.ndarray:
    """Sinusoidal features of a timestamp, periodic over the day and week.

    sin/cos pairs at several harmonics of the minute-of-day angle plus one
    pair for the day-of-week angle. Deterministic, so two snapshots at equal
    timestamps always carry equal encodings.
    """
    minute = t_minutes % MINUTES_PER_DAY
    dow = (t_minutes // MINUTES_PER_DAY) % DAYS_PER_WEEK
    day_angle = 2.0 * np.pi * minute / MINUTES_PER_DAY
    week_angle = 2.0 * np.pi * dow / DAYS_PER_WEEK
    parts = []
    for f in DAY_FREQUENCIES:
        parts.append(np.sin(f * day_angle))
        parts.append(np.cos(f * day_angle))
    parts.append(np.sin(week_angle))
    parts.append(np.cos(week_angle))
    return np.array(parts)


@dataclass(frozen=True)
class EntityCatalog:
    """Identity universe for one task stream: object ids, location ids, root."""

    objects: tuple[str, ...]
    locations: tuple[str, ...]
    root: str

    def __post_init__(self):
        ids = list(self.objects) + list(self.locations)
        if len(set(ids)) != len(ids):
            raise GraphError("catalog ids must be unique")
        if self.root not in self.locations:
            raise GraphError(f"root {self.root!r} is not a catalog location")

    def object_index(self, object_id: str) -> int:
        return self.objects.index(object_id)

    def location_index(self, location_id: str) -> int:
        return self.locations.index(location_id)


@dataclass(frozen=True)
class GraphSnapshot:
    """In-tree state of one household at one timestamp.

    ``parents`` maps every object id to the location id it is in. The
    timestamp is minutes since stream start; minute-of-day and day-of-week
    derive from it.
    """

    catalog: EntityCatalog
    task: int
    t: int
    parents: dict[str, str]

    @property
    def minute_of_day(self) -> int:
        return self.t % MINUTES_PER_DAY

    @property
    def day(self) -> int:
        return self.t // MINUTES_PER_DAY

    @property
    def time_encoding(self) -> np.ndarray:
        return time_encoding(self.t)

    def parent_indices(self) -> np.ndarray:
        """Location index of each object, in catalog object order."""
        loc_index = {l: i for i, l in enumerate(self.catalog.locations)}
        return np.array([loc_index[self.parents[o]] for o in self.catalog.objects],
                        dtype=np.intp)


@dataclass(frozen=True)
class GraphDelta:
    """Minimal parent changes between two snapshots of the same task."""

    changes: tuple[tuple[str, str, str], ...]  # (object, old_location, new_location)

    def __len__(self) -> int:
        return len(self.changes)


@dataclass(frozen=True)
class RelocationEvent:
    """One object moving between two distinct locations inside [t_from, t_to]."""

    object_id: str
    from_location: str
    to_location: str
    t_from: int
    t_to: int

    def __post_init__(self):
        if self.from_location == self.to_location:
            raise GraphError("relocation endpoints must differ")


def _require_same_catalog(a: GraphSnapshot, b: GraphSnapshot) -> None:
    if a.catalog != b.catalog:
        raise GraphError("snapshots come from different catalogs")


def snapshot_diff(later: GraphSnapshot, earlier: GraphSnapshot) -> GraphDelta:
    """Minimal set of parent changes turning ``earlier`` into ``later``."""
    _require_same_catalog(later, earlier)
    if later.task != earlier.task:
        raise GraphError("snapshots come from different tasks")
    if later.t < earlier.t:
        raise GraphError("later snapshot precedes earlier snapshot")
    changes = []
    for obj in earlier.catalog.objects:
        old = earlier.parents[obj]
        new = later.parents[obj]
        if old != new:
            changes.append((obj, old, new))
    return GraphDelta(changes=tuple(changes))


def apply_delta(base: GraphSnapshot, delta: GraphDelta,
                t: int | None = None) -> GraphSnapshot:
    """Apply parent changes to a snapshot; errors on stale old-locations."""
    parents = dict(base.parents)
    for obj, old, new in delta.changes:
        current = parents.get(obj)
        if current != old:
            raise GraphError(
                f"stale delta: {obj} is in {current!r}, expected {old!r}")
        parents[obj] = new
    return GraphSnapshot(catalog=base.catalog, task=base.task,
                         t=base.t if t is None else t, parents=parents)


def extract_relocations(at_t: GraphSnapshot,
                        at_t_plus_delta: GraphSnapshot) -> list[RelocationEvent]:
    """Net relocation per object whose parent differs between the endpoints.

    An object that leaves and returns inside the window produces nothing;
    only the endpoint parents are compared.
    """
    _require_same_catalog(at_t, at_t_plus_delta)
    events = []
    for obj in at_t.catalog.objects:
        before = at_t.parents[obj]
        after = at_t_plus_delta.parents[obj]
        if before != after:
            events.append(RelocationEvent(
                object_id=obj, from_location=before, to_location=after,
                t_from=at_t.t, t_to=at_t_plus_delta.t))
    return events


def validate_snapshot(g: GraphSnapshot) -> list[str]:
    """Diagnostic in-tree check. Returns a list of violations; empty means ok."""
    violations = []
    locations = set(g.catalog.locations)
    objects = set(g.catalog.objects)
    for obj in g.catalog.objects:
        if obj not in g.parents:
            violations.append(f"missing parent for object {obj!r}")
    for obj, parent in g.parents.items():
        if obj not in objects:
            violations.append(f"unknown object id {obj!r}")
        if parent not in locations:
            violations.append(f"parent of {obj!r} is not a location: {parent!r}")
    return violations
