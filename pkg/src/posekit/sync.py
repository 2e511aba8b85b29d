"""Timestamp buffer that pairs leader and follower observations.

Two policies share one buffer:

* ``eager``: an arriving item is paired at once with the nearest buffered
  item of the other source inside the window.
* ``stable``: pairs are released only once no future item can change them.
  Items within ``window`` of each other form a candidate graph; a connected
  component is final when none of its items can still be reached by a later
  arrival (timestamps per source only grow). Final components are matched
  greedily by smallest time difference, which makes the emitted pair set
  independent of how the two streams were interleaved.
"""
import threading
from dataclasses import dataclass
from typing import Any, NamedTuple

from .errors import OrderingError

LEADER = "leader"
FOLLOWER = "follower"


class StampedItem(NamedTuple):
    timestamp: float
    payload: Any = None
    source: str = LEADER


class Pair(NamedTuple):
    leader: StampedItem
    follower: StampedItem

    @property
    def dt(self):
        return abs(self.leader.timestamp - self.follower.timestamp)


@dataclass(frozen=True)
class SyncConfig:
    window: float = 0.05
    buffer_capacity: int = 128

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be positive")
        if self.buffer_capacity < 2:
            raise ValueError("buffer capacity must be at least 2")


def _key(l, f):
    return (abs(l.timestamp - f.timestamp), l.timestamp, f.timestamp)


def greedy_pairs(leaders, followers, window):
    """Offline matcher: all pairs within the window, taken by ascending time difference."""
    cand = [(l, f) for l in leaders for f in followers
            if abs(l.timestamp - f.timestamp) <= window]
    cand.sort(key=lambda c: _key(*c))
    used_l, used_f, out = set(), set(), []
    for l, f in cand:
        if id(l) in used_l or id(f) in used_f:
            continue
        used_l.add(id(l))
        used_f.add(id(f))
        out.append(Pair(l, f))
    return sorted(out, key=lambda p: (p.leader.timestamp, p.follower.timestamp))


class SyncBuffer:
    def __init__(self, cfg=SyncConfig(), mode="eager"):
        if mode not in ("eager", "stable"):
            raise ValueError(f"unknown mode {mode!r}")
        self.cfg = cfg
        self.mode = mode
        self._items = {LEADER: [], FOLLOWER: []}
        self._last = {LEADER: float("-inf"), FOLLOWER: float("-inf")}
        self._lock = threading.Lock()
        self.evicted = 0

    def __len__(self):
        return sum(len(v) for v in self._items.values())

    def pending(self, source):
        return list(self._items[source])

    def push(self, item):
        """Add one item; returns the pairs that became final."""
        item = StampedItem(*item) if not isinstance(item, StampedItem) else item
        if item.source not in self._items:
            raise ValueError(f"unknown source {item.source!r}")
        with self._lock:
            if not item.timestamp > self._last[item.source]:
                raise OrderingError(f"{item.source} timestamp {item.timestamp} does not follow "
                                    f"{self._last[item.source]}", stage="sync")
            self._last[item.source] = item.timestamp
            if self.mode == "eager":
                return self._push_eager(item)
            self._items[item.source].append(item)
            self._evict(item.source)
            return self._release(final_only=True)

    def flush(self):
        """End of stream: match everything still buffered and clear the buffer."""
        with self._lock:
            if self.mode == "eager":
                self._items = {LEADER: [], FOLLOWER: []}
                return []
            return self._release(final_only=False)

    def _evict(self, source):
        buf = self._items[source]
        while len(buf) > self.cfg.buffer_capacity:
            buf.pop(0)
            self.evicted += 1

    def _push_eager(self, item):
        other = FOLLOWER if item.source == LEADER else LEADER
        best = None
        for cand in self._items[other]:
            pair = Pair(item, cand) if item.source == LEADER else Pair(cand, item)
            if pair.dt <= self.cfg.window and (best is None or _key(*pair) < _key(*best)):
                best = pair
        if best is None:
            self._items[item.source].append(item)
            self._evict(item.source)
            return []
        self._items[other] = [c for c in self._items[other]
                              if c is not best.leader and c is not best.follower]
        return [best]

    def _components(self):
        L, F = self._items[LEADER], self._items[FOLLOWER]
        nodes = [(LEADER, i) for i in range(len(L))] + [(FOLLOWER, j) for j in range(len(F))]
        parent = {n: n for n in nodes}

        def find(n):
            while parent[n] != n:
                parent[n] = parent[parent[n]]
                n = parent[n]
            return n

        # both lists are sorted by time, so the window scan is a sliding range
        j0 = 0
        for i, l in enumerate(L):
            while j0 < len(F) and F[j0].timestamp < l.timestamp - self.cfg.window:
                j0 += 1
            j = j0
            while j < len(F) and F[j].timestamp <= l.timestamp + self.cfg.window:
                parent[find((LEADER, i))] = find((FOLLOWER, j))
                j += 1
        comps = {}
        for n in nodes:
            comps.setdefault(find(n), []).append(n)
        return list(comps.values())

    def _reachable(self, source, item):
        """Whether a later arrival from the other source could fall inside the window."""
        other = FOLLOWER if source == LEADER else LEADER
        return item.timestamp + self.cfg.window > self._last[other]

    def _release(self, final_only):
        out, keep = [], {LEADER: set(), FOLLOWER: set()}
        for comp in self._components():
            items = [(s, self._items[s][i]) for s, i in comp]
            if final_only and any(self._reachable(s, it) for s, it in items):
                for s, i in comp:
                    keep[s].add(i)
                continue
            out += greedy_pairs([it for s, it in items if s == LEADER],
                                [it for s, it in items if s == FOLLOWER], self.cfg.window)
        for s in self._items:
            self._items[s] = [it for i, it in enumerate(self._items[s]) if i in keep[s]]
        return sorted(out, key=lambda p: (p.leader.timestamp, p.follower.timestamp))


def replay(items, cfg=SyncConfig(), mode="stable"):
    """Push a whole stream and flush; returns every emitted pair."""
    buf = SyncBuffer(cfg, mode)
    out = []
    for it in items:
        out += buf.push(it)
    return out + buf.flush()
