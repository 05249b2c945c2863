"""Station layout: field elements, neighbour slots and structural checks.

A topology is loaded once and never mutated; live element state lives in
:mod:`railguard.fe_detection`.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

from railguard.protocol import PointState


class ElementKind(enum.Enum):
    SIGNAL = "signal"
    POINT = "point"
    TRACK_SECTION_TDS = "tds"
    POINT_TDS = "pointtds"

    @property
    def is_tds(self) -> bool:
        return self in (ElementKind.TRACK_SECTION_TDS, ElementKind.POINT_TDS)


SLOTS: dict[ElementKind, tuple[str, ...]] = {
    ElementKind.SIGNAL: ("succ",),
    ElementKind.POINT: ("tds",),
    ElementKind.TRACK_SECTION_TDS: ("pred_a", "succ_a", "pred_b", "succ_b"),
    ElementKind.POINT_TDS: ("point", "pred_a", "succ_a", "pred_b", "succ_b", "pred_c", "succ_c"),
}

PRED_SLOTS = ("pred_a", "pred_b", "pred_c")
SUCC_SLOTS = ("succ_a", "succ_b", "succ_c")
TRACK_SLOTS = PRED_SLOTS + SUCC_SLOTS


class TopologyError(Exception):
    """Raised for topology files that cannot be loaded."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TopologySyntaxError(TopologyError):
    pass


class DuplicateIdError(TopologyError):
    pass


class UnknownReferenceError(TopologyError):
    pass


class SlotNotPermittedError(TopologyError):
    pass


class CyclicTopology(TopologyError):
    pass


@dataclass(frozen=True)
class TopologyNode:
    id: str
    kind: ElementKind
    slots: Mapping[str, str | None]

    def __post_init__(self):
        if not self.id:
            raise TopologyError("element id must be non-empty")
        if set(self.slots) != set(SLOTS[self.kind]):
            raise SlotNotPermittedError(
                f"{self.id}: {self.kind.value} needs slots {SLOTS[self.kind]}, got {tuple(self.slots)}"
            )
        object.__setattr__(self, "slots", MappingProxyType(dict(self.slots)))

    def __getitem__(self, slot: str) -> str | None:
        return self.slots[slot]

    def track_slots(self) -> Iterator[tuple[str, str]]:
        """Yield ``(slot, target)`` for every present pred/succ slot."""
        for slot in SLOTS[self.kind]:
            if slot in TRACK_SLOTS and self.slots[slot] is not None:
                yield slot, self.slots[slot]


@dataclass(frozen=True)
class Violation:
    node: str
    slot: str | None
    rule: str
    detail: str = ""

    def __str__(self) -> str:
        where = f"{self.node}.{self.slot}" if self.slot else self.node
        return f"{self.rule}({where}){': ' + self.detail if self.detail else ''}"


def MutualReferenceBroken(node: str, slot: str | None = None) -> Violation:
    return Violation(node, slot, "MutualReferenceBroken")


def ReciprocityBroken(node: str, slot: str) -> Violation:
    return Violation(node, slot, "ReciprocityBroken")


class Topology:
    """Immutable set of :class:`TopologyNode` keyed by id."""

    def __init__(self, nodes: Iterable[TopologyNode]):
        table: dict[str, TopologyNode] = {}
        for node in nodes:
            if node.id in table:
                raise DuplicateIdError(f"duplicate element id {node.id!r}")
            table[node.id] = node
        for node in table.values():
            for slot, target in node.slots.items():
                if target is not None and target not in table:
                    raise UnknownReferenceError(f"{node.id}.{slot} names unknown element {target!r}")
        self._nodes = MappingProxyType(table)
        self._neighbours: dict[str, frozenset[str]] | None = None

    def __getitem__(self, element_id: str) -> TopologyNode:
        return self._nodes[element_id]

    def __contains__(self, element_id: object) -> bool:
        return element_id in self._nodes

    def __iter__(self) -> Iterator[TopologyNode]:
        return iter(self._nodes.values())

    def __len__(self) -> int:
        return len(self._nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Topology):
            return NotImplemented
        return dict(self._nodes) == dict(other._nodes)

    @property
    def ids(self) -> list[str]:
        return sorted(self._nodes)

    def kind(self, element_id: str) -> ElementKind:
        return self._nodes[element_id].kind

    def of_kind(self, *kinds: ElementKind) -> list[str]:
        return sorted(n.id for n in self._nodes.values() if n.kind in kinds)

    def neighbours(self, element_id: str) -> frozenset[str]:
        """Elements sharing a security channel with ``element_id``."""
        if self._neighbours is None:
            adj: dict[str, set[str]] = {k: set() for k in self._nodes}
            for node in self._nodes.values():
                for target in node.slots.values():
                    if target is not None:
                        adj[node.id].add(target)
                        adj[target].add(node.id)
            self._neighbours = {k: frozenset(v) for k, v in adj.items()}
        return self._neighbours[element_id]

    def signals_feeding(self, tds: str) -> list[str]:
        """Signals whose ``succ`` is ``tds`` (the entry signals of that section)."""
        node = self._nodes[tds]
        return sorted(
            t for s, t in node.track_slots()
            if s.startswith("pred") and self._nodes[t].kind is ElementKind.SIGNAL
        )


# -- file format ---------------------------------------------------------------

_KIND_BY_WORD = {k.value: k for k in ElementKind}


def parse_topology(text: str) -> Topology:
    nodes: list[TopologyNode] = []
    seen: dict[str, int] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        if len(words) < 2:
            raise TopologySyntaxError("expected '<kind> <id> <slot>=<id|-> ...'", lineno)
        kind_word, element_id, *assignments = words
        kind = _KIND_BY_WORD.get(kind_word)
        if kind is None:
            raise TopologySyntaxError(f"unknown element kind {kind_word!r}", lineno)
        if element_id in seen:
            raise DuplicateIdError(
                f"duplicate element id {element_id!r} (first declared on line {seen[element_id]})", lineno
            )
        seen[element_id] = lineno
        slots: dict[str, str | None] = {}
        for item in assignments:
            name, sep, value = item.partition("=")
            if not sep or not name or not value:
                raise TopologySyntaxError(f"malformed slot assignment {item!r}", lineno)
            if name not in SLOTS[kind]:
                raise SlotNotPermittedError(f"slot {name!r} not permitted for {kind_word}", lineno)
            if name in slots:
                raise TopologySyntaxError(f"slot {name!r} given twice", lineno)
            slots[name] = None if value == "-" else value
        missing = [s for s in SLOTS[kind] if s not in slots]
        if missing:
            raise TopologySyntaxError(f"{element_id}: missing slots {', '.join(missing)}", lineno)
        nodes.append(TopologyNode(element_id, kind, slots))
        lines[element_id] = lineno
    resolved = []
    for node in nodes:
        slots = dict(node.slots)
        for slot, target in slots.items():
            if target is None or target in seen:
                continue
            # drawings label sections by number alone: "1001" means TDS1001
            if target.isdigit() and f"TDS{target}" in seen:
                slots[slot] = f"TDS{target}"
                continue
            raise UnknownReferenceError(f"{node.id}.{slot} names unknown element {target!r}", lines[node.id])
        resolved.append(TopologyNode(node.id, node.kind, slots))
    return Topology(resolved)


def serialize_topology(t: Topology) -> str:
    order = [ElementKind.SIGNAL, ElementKind.POINT, ElementKind.TRACK_SECTION_TDS, ElementKind.POINT_TDS]
    out = []
    for kind in order:
        for element_id in t.of_kind(kind):
            node = t[element_id]
            slots = " ".join(f"{s}={node.slots[s] or '-'}" for s in SLOTS[kind])
            out.append(f"{kind.value} {element_id} {slots}")
    return "\n".join(out) + "\n"


# -- validation ----------------------------------------------------------------

_ALLOWED_TARGETS = {
    "succ": (ElementKind.TRACK_SECTION_TDS, ElementKind.POINT_TDS),
    "tds": (ElementKind.POINT_TDS,),
    "point": (ElementKind.POINT,),
}
_TRACK_TARGETS = (ElementKind.TRACK_SECTION_TDS, ElementKind.POINT_TDS, ElementKind.SIGNAL)


def validate(t: Topology) -> list[Violation]:
    violations: list[Violation] = []
    for node in t:
        for slot, target in node.slots.items():
            if target is None:
                continue
            allowed = _TRACK_TARGETS if slot in TRACK_SLOTS else _ALLOWED_TARGETS[slot]
            if t.kind(target) not in allowed:
                violations.append(Violation(node.id, slot, "KindMismatch", f"{target} is {t.kind(target).value}"))
        if node.kind is ElementKind.POINT:
            tds = node["tds"]
            if tds is not None and t.kind(tds) is ElementKind.POINT_TDS and t[tds]["point"] != node.id:
                violations.append(MutualReferenceBroken(node.id, "tds"))
            if tds is None:
                violations.append(Violation(node.id, "tds", "UnpairedPoint"))
        elif node.kind is ElementKind.POINT_TDS:
            point = node["point"]
            if point is None:
                violations.append(Violation(node.id, "point", "UnpairedPoint"))
            elif t.kind(point) is ElementKind.POINT and t[point]["tds"] != node.id:
                violations.append(MutualReferenceBroken(node.id, "point"))
        elif node.kind is ElementKind.SIGNAL:
            succ = node["succ"]
            if succ is not None and t.kind(succ).is_tds:
                if _count_refs(t[succ], node.id, PRED_SLOTS) != 1:
                    violations.append(ReciprocityBroken(node.id, "succ"))
        if node.kind.is_tds:
            violations.extend(_check_tds(t, node))
    return violations


def _count_refs(node: TopologyNode, target: str, slots: tuple[str, ...]) -> int:
    return sum(1 for s in slots if node.slots.get(s) == target)


def _check_tds(t: Topology, node: TopologyNode) -> Iterator[Violation]:
    for slot, target in node.track_slots():
        other = t[target]
        if slot.startswith("succ"):
            if other.kind.is_tds:
                if _count_refs(other, node.id, PRED_SLOTS) != 1:
                    yield ReciprocityBroken(node.id, slot)
            elif other.kind is ElementKind.SIGNAL and other["succ"] == node.id:
                # an exit signal faces away from the section it terminates
                yield Violation(node.id, slot, "SignalFacesBack")
        else:
            if other.kind.is_tds:
                if _count_refs(other, node.id, SUCC_SLOTS) < 1:
                    yield ReciprocityBroken(node.id, slot)
            elif other.kind is ElementKind.SIGNAL and other["succ"] != node.id:
                yield ReciprocityBroken(node.id, slot)
    # The dispatch compares the sender against pred slots in order;
    # a neighbour in two pred slots would make the travel direction ambiguous.
    preds = [node.slots[s] for s in PRED_SLOTS if node.slots.get(s) is not None]
    for dup in sorted({p for p in preds if preds.count(p) > 1}):
        yield Violation(node.id, None, "AmbiguousPredecessor", dup)


# -- routes --------------------------------------------------------------------

@dataclass(frozen=True)
class Route:
    """A signal-to-signal (or signal-to-dead-end) path through the layout.

    ``sections`` lists the TDS elements in travel order; ``points`` the
    position each traversed point must hold; ``exit`` is the terminating
    signal, or ``None`` when the path runs off the supervised area.
    """

    entry: str
    exit: str | None
    sections: tuple[str, ...]
    points: tuple[tuple[str, PointState], ...] = field(default=())

    @property
    def point_map(self) -> dict[str, PointState]:
        return dict(self.points)

    def query_requests(self, t: Topology) -> int:
        """Security-channel requests a successful query over this route sends."""
        getstate = sum(1 for s in self.sections if t.kind(s) is ElementKind.POINT_TDS)
        return len(self.sections) + (1 if self.exit is not None else 0) + getstate


def next_hop(node: TopologyNode, src: str, point_state: PointState | None) -> tuple[bool, str | None]:
    """Travel-direction lookup shared by route search.

    Returns ``(passable, successor)``; ``point_state`` is only consulted for
    point sections.
    """
    if node.kind is ElementKind.TRACK_SECTION_TDS:
        if src == node["pred_a"]:
            return True, node["succ_b"]
        if src == node["pred_b"]:
            return True, node["succ_a"]
        return False, None
    if src == node["pred_a"]:
        return True, node["succ_b"] if point_state is PointState.RIGHT else node["succ_c"]
    if src == node["pred_b"]:
        return point_state is PointState.RIGHT, node["succ_a"]
    if src == node["pred_c"]:
        return point_state is PointState.LEFT, node["succ_a"]
    return False, None


def routes_from(t: Topology, signal: str) -> list[Route]:
    """Enumerate every route starting at ``signal``.

    Facing points branch the search; trailing points force a position.
    Raises :class:`CyclicTopology` if a travel direction loops back.
    """
    start = t[signal]["succ"]
    if start is None:
        return []
    found: list[Route] = []

    def walk(src: str, here: str, sections: tuple[str, ...], points: tuple):
        if here in sections:
            raise CyclicTopology(f"route from {signal} revisits {here}")
        node = t[here]
        if node.kind is ElementKind.SIGNAL:
            found.append(Route(signal, here, sections, points))
            return
        sections = sections + (here,)
        if node.kind is ElementKind.TRACK_SECTION_TDS:
            ok, nxt = next_hop(node, src, None)
            options = [(ok, nxt, points)]
        else:
            point = node["point"]
            options = []
            for state in (PointState.LEFT, PointState.RIGHT):
                ok, nxt = next_hop(node, src, state)
                if ok:
                    options.append((ok, nxt, points + ((point, state),)))
            if src == node["pred_a"] and node["succ_b"] == node["succ_c"]:
                options = options[:1]
        for ok, nxt, pts in options:
            if not ok:
                continue
            if nxt is None:
                found.append(Route(signal, None, sections, pts))
            else:
                walk(here, nxt, sections, pts)

    walk(signal, start, (), ())
    return sorted(found, key=lambda r: (r.exit or "", r.sections))


def enumerate_routes(t: Topology) -> list[Route]:
    routes = []
    for s in t.of_kind(ElementKind.SIGNAL):
        routes.extend(routes_from(t, s))
    return routes


def longest_query_path(t: Topology) -> int:
    """Largest number of security-channel requests any successful query sends."""
    return max((r.query_requests(t) for r in enumerate_routes(t)), default=0)


def find_route(t: Topology, entry: str, exit: str | None, points: Mapping | None = None) -> Route | None:
    """Deterministic route lookup; ties broken by the lexicographic section list."""
    candidates = [r for r in routes_from(t, entry) if r.exit == exit]
    if points:
        candidates = [r for r in candidates if all(r.point_map.get(p) == v for p, v in points.items())]
    if not candidates:
        return None
    return min(candidates, key=lambda r: r.sections)
