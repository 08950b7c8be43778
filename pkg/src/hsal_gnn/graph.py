"""Sequel-aware heterogeneous dynamic graph of users, items and series."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class IngestionError(ValueError):
    pass


class CatalogError(ValueError):
    pass


class NodeLookupError(KeyError):
    """Unknown node id."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class Series:
    id: int | str
    items: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(int(i) for i in self.items))
        if len(self.items) < 2:
            raise CatalogError(f"series {self.id!r} has fewer than two items")
        if len(set(self.items)) != len(self.items):
            raise CatalogError(f"series {self.id!r} repeats an item")


class UserItemEdge(NamedTuple):
    user: int
    item: int
    timestamp: int
    p_iu: int
    p_ui: int


class SequelEdge(NamedTuple):
    from_item: int
    to_item: int
    series: int | str
    position: int


def validate_catalog(series_catalog: Iterable[Series]) -> list[Series]:
    catalog = list(series_catalog)
    owner: dict[int, object] = {}
    ids = set()
    for s in catalog:
        if s.id in ids:
            raise CatalogError(f"series id {s.id!r} used twice")
        ids.add(s.id)
        for i in s.items:
            if i in owner:
                raise CatalogError(f"item {i} appears in series {owner[i]!r} and {s.id!r}")
            owner[i] = s.id
    return catalog


class SequelAwareGraph:
    """Immutable graph built by :func:`build_graph`.

    Users and items live in separate dense id spaces ``0..n_users-1`` and
    ``0..n_items-1``. ``series_of[i]`` is -1 for standalone items, otherwise
    the index of the item's series in ``series``; ``position_of[i]`` is its
    1-based position there (0 for standalone items).
    """

    def __init__(self, n_users, n_items, e_user, e_item, e_time, e_piu, e_pui, catalog):
        self.n_users = n_users
        self.n_items = n_items
        self.e_user = e_user
        self.e_item = e_item
        self.e_time = e_time
        self.e_piu = e_piu
        self.e_pui = e_pui
        self.series: list[Series] = catalog
        self.series_of = np.full(n_items, -1, dtype=np.int64)
        self.position_of = np.zeros(n_items, dtype=np.int64)
        for k, s in enumerate(catalog):
            for pos, i in enumerate(s.items, start=1):
                self.series_of[i] = k
                self.position_of[i] = pos

        # adjacency: edge ids per node, ascending by timestamp
        order_u = np.lexsort((e_piu, e_user))
        order_i = np.lexsort((e_piu, e_user, e_time, e_item))
        self._user_edges = _split(order_u, e_user[order_u], n_users)
        self._item_edges = _split(order_i, e_item[order_i], n_items)
        self._user_times = [e_time[ix].tolist() for ix in self._user_edges]
        self._item_times = [e_time[ix].tolist() for ix in self._item_edges]
        self._user_items = [e_item[ix].tolist() for ix in self._user_edges]
        self._item_users = [e_user[ix].tolist() for ix in self._item_edges]
        self._successors = [()] * n_items
        for s in catalog:
            for pos, i in enumerate(s.items, start=1):
                self._successors[i] = s.items[pos:]

    @property
    def n_interactions(self) -> int:
        return len(self.e_user)

    @property
    def users(self) -> range:
        return range(self.n_users)

    @property
    def items(self) -> range:
        return range(self.n_items)

    def is_sequel(self, item: int) -> bool:
        self._check_item(item)
        return self.series_of[item] >= 0

    def item_kind(self, item: int):
        """``None`` for standalone items, else ``(series_id, position)``."""
        self._check_item(item)
        k = self.series_of[item]
        if k < 0:
            return None
        return self.series[k].id, int(self.position_of[item])

    def user_item_edges(self) -> list[UserItemEdge]:
        return [
            UserItemEdge(int(u), int(i), int(t), int(a), int(b))
            for u, i, t, a, b in zip(self.e_user, self.e_item, self.e_time, self.e_piu, self.e_pui)
        ]

    def sequel_edges(self) -> list[SequelEdge]:
        return [
            SequelEdge(a, b, s.id, pos)
            for s in self.series
            for pos, (a, b) in enumerate(zip(s.items, s.items[1:]), start=2)
        ]

    def sequel_successors(self, item: int) -> tuple[int, ...]:
        """Items after ``item`` in its series, in series order."""
        self._check_item(item)
        return self._successors[item]

    def user_degree(self, user: int) -> int:
        self._check_user(user)
        return len(self._user_edges[user])

    def item_degree(self, item: int) -> int:
        self._check_item(item)
        return len(self._item_edges[item])

    def snapshot(self, t_k: float = math.inf) -> "GraphView":
        return GraphView(self, t_k)

    def _check_user(self, u) -> None:
        if not 0 <= u < self.n_users:
            raise NodeLookupError(f"unknown user {u}")

    def _check_item(self, i) -> None:
        if not 0 <= i < self.n_items:
            raise NodeLookupError(f"unknown item {i}")


def _split(order: np.ndarray, keys_sorted: np.ndarray, n: int) -> list[np.ndarray]:
    bounds = np.searchsorted(keys_sorted, np.arange(n + 1))
    return [order[bounds[k] : bounds[k + 1]] for k in range(n)]


class GraphView:
    """Temporal view G^{t_k}: user-item edges with timestamp < t_k, all sequel edges.

    Shares storage with the graph; building one is O(1).
    """

    def __init__(self, graph: SequelAwareGraph, t_k: float = math.inf):
        self.graph = graph
        self.t_k = t_k

    def _cut(self, times: list) -> int:
        if self.t_k == math.inf:
            return len(times)
        return bisect.bisect_left(times, self.t_k)

    def user_items(self, user: int, limit_recent_n: int | None = None) -> list[int]:
        """Items of ``user`` before t_k, ascending by time, optionally the latest n."""
        g = self.graph
        g._check_user(user)
        hi = self._cut(g._user_times[user])
        lo = 0 if limit_recent_n is None else max(0, hi - limit_recent_n)
        return g._user_items[user][lo:hi]

    def item_users(self, item: int, limit_recent_n: int | None = None) -> list[int]:
        g = self.graph
        g._check_item(item)
        hi = self._cut(g._item_times[item])
        lo = 0 if limit_recent_n is None else max(0, hi - limit_recent_n)
        return g._item_users[item][lo:hi]

    def user_edge_ids(self, user: int, limit_recent_n: int | None = None) -> np.ndarray:
        g = self.graph
        g._check_user(user)
        hi = self._cut(g._user_times[user])
        lo = 0 if limit_recent_n is None else max(0, hi - limit_recent_n)
        return g._user_edges[user][lo:hi]

    def edges(self) -> list[UserItemEdge]:
        g = self.graph
        return [e for e in g.user_item_edges() if e.timestamp < self.t_k]

    def n_edges(self) -> int:
        return int(np.count_nonzero(self.graph.e_time < self.t_k))

    def sequel_edges(self) -> list[SequelEdge]:
        return self.graph.sequel_edges()


def snapshot(g: SequelAwareGraph, t_k: float = math.inf) -> GraphView:
    return GraphView(g, t_k)


def sequel_successors(g: SequelAwareGraph, item: int) -> list[int]:
    return list(g.sequel_successors(item))


def neighbors(view: GraphView, kind: str, node: int, limit_recent_n: int | None = None):
    """Neighbors of a user (``kind='user'``) or item (``kind='item'``) with edge attributes.

    Returns ``(neighbor_id, UserItemEdge)`` pairs ascending by timestamp.
    """
    g = view.graph
    if kind == "user":
        ids = view.user_edge_ids(node, limit_recent_n)
        other = g.e_item
    elif kind == "item":
        g._check_item(node)
        ix = g._item_edges[node]
        hi = view._cut(g._item_times[node])
        lo = 0 if limit_recent_n is None else max(0, hi - limit_recent_n)
        ids = ix[lo:hi]
        other = g.e_user
    else:
        raise ValueError(f"kind must be 'user' or 'item', got {kind!r}")
    return [
        (int(other[e]), UserItemEdge(int(g.e_user[e]), int(g.e_item[e]), int(g.e_time[e]),
                                     int(g.e_piu[e]), int(g.e_pui[e])))
        for e in ids
    ]


def build_graph(
    interactions: Sequence[tuple[int, int, int]],
    series_catalog: Iterable[Series] = (),
    n_users: int | None = None,
    n_items: int | None = None,
) -> SequelAwareGraph:
    """Build the graph from ``(user, item, timestamp)`` triples and a series catalog.

    Equal timestamps within one user keep their input order.
    """
    catalog = validate_catalog(series_catalog)
    arr = np.asarray(interactions, dtype=np.int64).reshape(-1, 3)
    users, items, times = arr[:, 0], arr[:, 1], arr[:, 2]
    if arr.size and (users.min() < 0 or items.min() < 0):
        raise IngestionError("user and item ids must be non-negative")

    max_user = int(users.max()) + 1 if arr.size else 0
    max_item = max([int(items.max()) + 1 if arr.size else 0]
                   + [max(s.items) + 1 for s in catalog])
    n_users = max_user if n_users is None else n_users
    n_items = max_item if n_items is None else n_items
    if max_user > n_users:
        raise IngestionError(f"user id {max_user - 1} exceeds n_users={n_users}")
    if max_item > n_items:
        raise IngestionError(f"item id {max_item - 1} exceeds n_items={n_items}")

    if arr.size:
        keyed = arr[np.lexsort((times, items, users))]
        dup = np.all(keyed[1:] == keyed[:-1], axis=1)
        if dup.any():
            u, i, t = keyed[1:][dup][0]
            raise IngestionError(f"duplicate interaction (user={u}, item={i}, timestamp={t})")

    n = len(arr)
    e_piu = np.zeros(n, dtype=np.int64)
    e_pui = np.zeros(n, dtype=np.int64)
    if n:
        # stable: ties within a user keep input order
        by_user = np.lexsort((times, users))
        _rank_within(by_user, users, e_piu)
        # users ordered per item by first interaction time, then user id
        first = {}
        for u, i, t in zip(users.tolist(), items.tolist(), times.tolist()):
            key = (i, u)
            if key not in first or t < first[key]:
                first[key] = t
        pair_rank = {}
        seen_per_item: dict[int, int] = {}
        for i, u in sorted(first, key=lambda k: (k[0], first[k], k[1])):
            seen_per_item[i] = seen_per_item.get(i, 0) + 1
            pair_rank[(i, u)] = seen_per_item[i]
        e_pui[:] = [pair_rank[(i, u)] for u, i in zip(users.tolist(), items.tolist())]

    return SequelAwareGraph(n_users, n_items, users.copy(), items.copy(), times.copy(),
                            e_piu, e_pui, catalog)


def _rank_within(order: np.ndarray, keys: np.ndarray, out: np.ndarray) -> None:
    sorted_keys = keys[order]
    starts = np.r_[True, sorted_keys[1:] != sorted_keys[:-1]]
    group_start = np.maximum.accumulate(np.where(starts, np.arange(len(order)), 0))
    out[order] = np.arange(len(order)) - group_start + 1
