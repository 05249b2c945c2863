"""Reference station layout and a generator for random valid layouts."""
from __future__ import annotations

import random
from dataclasses import dataclass

from railguard.topology import SLOTS, ElementKind, Topology, TopologyNode, parse_topology

# Two-track station with a passing loop between points W1 and W2.
STATION_TEXT = """\
# 16 elements: 6 signals, 2 points, 6 track sections, 2 point sections
signal A succ=TDS1001
signal F succ=TDS1002
signal N1 succ=TDSW2
signal N2 succ=TDSW2
signal P1 succ=TDSW1
signal P2 succ=TDSW1
point W1 tds=TDSW1
point W2 tds=TDSW2
tds TDS1000 pred_a=- succ_a=- pred_b=TDS1001 succ_b=A
tds TDS1001 pred_a=A succ_a=TDS1000 pred_b=TDSW1 succ_b=TDSW1
pointtds TDSW1 point=W1 pred_a=TDS1001 succ_a=TDS1001 pred_b=P1 succ_b=TDS1 pred_c=P2 succ_c=TDS2
tds TDS1 pred_a=TDSW1 succ_a=P1 pred_b=TDSW2 succ_b=N1
tds TDS2 pred_a=TDSW1 succ_a=P2 pred_b=TDSW2 succ_b=N2
pointtds TDSW2 point=W2 pred_a=TDS1002 succ_a=TDS1002 pred_b=N1 succ_b=TDS1 pred_c=N2 succ_c=TDS2
tds TDS1002 pred_a=TDSW2 succ_a=TDSW2 pred_b=F succ_b=TDS1003
tds TDS1003 pred_a=TDS1002 succ_a=F pred_b=- succ_b=-
"""


def example_station() -> Topology:
    return parse_topology(STATION_TEXT)


class LayoutBuilder:
    """Assembles a layout by joining section ends.

    A plain section has ends ``a`` and ``b``; a point section has its toe at
    ``a`` and branches at ``b`` (right) and ``c`` (left).
    """

    def __init__(self):
        self._kinds: dict[str, ElementKind] = {}
        self._slots: dict[str, dict[str, str | None]] = {}

    def _add(self, element_id: str, kind: ElementKind) -> str:
        if element_id in self._kinds:
            raise ValueError(f"duplicate id {element_id}")
        self._kinds[element_id] = kind
        self._slots[element_id] = {s: None for s in SLOTS[kind]}
        return element_id

    def section(self, element_id: str) -> str:
        return self._add(element_id, ElementKind.TRACK_SECTION_TDS)

    def point(self, point_id: str, tds_id: str) -> str:
        self._add(point_id, ElementKind.POINT)
        self._add(tds_id, ElementKind.POINT_TDS)
        self._slots[point_id]["tds"] = tds_id
        self._slots[tds_id]["point"] = point_id
        return tds_id

    def join(self, x: str, ex: str, y: str, ey: str, forward: str | None = None, backward: str | None = None):
        """Connect end ``ex`` of ``x`` to end ``ey`` of ``y``.

        ``forward`` names a signal at the joint facing travel from x into y;
        ``backward`` one facing the other way.
        """
        if forward is not None:
            self._add(forward, ElementKind.SIGNAL)
            self._slots[forward]["succ"] = y
        if backward is not None:
            self._add(backward, ElementKind.SIGNAL)
            self._slots[backward]["succ"] = x
        self._slots[x][f"succ_{ex}"] = forward or y
        self._slots[y][f"pred_{ey}"] = forward or x
        self._slots[y][f"succ_{ey}"] = backward or x
        self._slots[x][f"pred_{ex}"] = backward or y

    def build(self) -> Topology:
        return Topology(TopologyNode(i, k, self._slots[i]) for i, k in self._kinds.items())

    def __len__(self) -> int:
        return len(self._kinds)


@dataclass
class _Ids:
    t: int = 0
    w: int = 0
    s: int = 0

    def tds(self) -> str:
        self.t += 1
        return f"T{self.t}"

    def point(self) -> tuple[str, str]:
        self.w += 1
        return f"W{self.w}", f"TW{self.w}"

    def signal(self) -> str:
        self.s += 1
        return f"S{self.s}"


def random_layout(seed: int, target_size: int) -> Topology:
    """A corridor of plain sections, passing loops and sidings.

    The result never exceeds ``target_size`` elements (minimum 4) and always
    has at least one route.
    """
    if target_size < 4:
        raise ValueError("a layout needs at least 4 elements")
    rng = random.Random(seed)
    ids = _Ids()
    b = LayoutBuilder()
    first = b.section(ids.tds())
    open_end = (first, "b")
    first_joint = True
    # cost of the closing section plus a guaranteed signal
    reserve = 2

    def sig(p: float) -> str | None:
        return ids.signal() if rng.random() < p else None

    while True:
        room = target_size - len(b) - reserve
        choices = ["plain"]
        if room >= 11:
            choices += ["loop", "loop"]
        if room >= 5:
            choices.append("siding")
        if room < 2:
            break
        kind = rng.choice(choices)
        if kind == "plain":
            t = b.section(ids.tds())
            fwd = ids.signal() if first_joint else sig(0.4)
            b.join(*open_end, t, "a", fwd, sig(0.4) if room >= 3 else None)
            open_end = (t, "b")
        elif kind == "loop":
            w1, tw1 = ids.point()
            b.point(w1, tw1)
            b.join(*open_end, tw1, "a", ids.signal() if first_joint else sig(0.5), None)
            w2, tw2 = ids.point()
            branches = []
            for end in ("b", "c"):
                t = b.section(ids.tds())
                b.join(tw1, end, t, "a", None, sig(0.6))
                branches.append((t, end))
            b.point(w2, tw2)
            for t, end in branches:
                b.join(t, "b", tw2, end, sig(0.6), None)
            open_end = (tw2, "a")
        else:
            w, tw = ids.point()
            b.point(w, tw)
            b.join(*open_end, tw, "a", ids.signal() if first_joint else sig(0.5), None)
            dead = b.section(ids.tds())
            b.join(tw, "c", dead, "a", None, ids.signal())
            open_end = (tw, "b")
        first_joint = False
    last = b.section(ids.tds())
    b.join(*open_end, last, "a", ids.signal() if first_joint else None, ids.signal())
    return b.build()
