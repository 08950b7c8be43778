"""Sequel-aware m-order sub-graph sampling around an anchor user."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import GraphView, NodeLookupError, SequelAwareGraph, SequelEdge


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingConfig:
    m: int = 4
    recent_n: int = 50
    # apply recent_n to every expanded user's neighborhood, not only the anchor's
    truncate_expansion: bool = True

    def __post_init__(self):
        if self.m < 0:
            raise SamplingError(f"m must be >= 0, got {self.m}")
        if self.recent_n < 1:
            raise SamplingError(f"recent_n must be >= 1, got {self.recent_n}")


@dataclass
class SubGraph:
    anchor_user: int
    t_k: float
    users: tuple[int, ...]
    items: tuple[int, ...]
    history: tuple[int, ...]
    edge_ids: np.ndarray  # ids into the graph's edge arrays, ascending
    sequel_edges: list[SequelEdge] = field(default_factory=list)
    rounds: int = 0

    def user_item_edges(self, graph: SequelAwareGraph) -> list[tuple[int, int, int]]:
        return [(int(graph.e_user[e]), int(graph.e_item[e]), int(graph.e_time[e]))
                for e in self.edge_ids]


def anchor_history(view: GraphView, u: int, recent_n: int) -> list[int]:
    """The anchor's latest ``recent_n`` items before t_k, oldest first."""
    return view.user_items(u, recent_n)


def _with_sequels(graph: SequelAwareGraph, items: Iterable[int], into: set[int]) -> None:
    succ = graph._successors
    for i in items:
        into.add(i)
        if succ[i]:
            into.update(succ[i])


def sample_subgraph(view: GraphView, u: int, history: Sequence[int] | None,
                    cfg: SamplingConfig) -> SubGraph:
    """Grow the anchor's neighborhood by alternating item->user and user->item hops.

    Items entering the frontier pull in all later items of their series. The
    loop runs at most ``cfg.m`` expansion rounds and stops early as soon as a
    hop discovers no new node.
    """
    g = view.graph
    g._check_user(u)
    if history is None:
        history = anchor_history(view, u, cfg.recent_n)
    if not history:
        raise SamplingError(f"user {u} has no interactions before t={view.t_k}")
    visible = set(view.user_items(u))
    missing = [i for i in history if i not in visible]
    if missing:
        raise SamplingError(f"history items {missing} have no edge from user {u} before t={view.t_k}")

    limit = cfg.recent_n if cfg.truncate_expansion else None
    users_m = {u}
    users_tmp = {u}
    items_tmp: set[int] = set()
    _with_sequels(g, history, items_tmp)
    items_m = set(items_tmp)

    rounds = 0
    while rounds < cfg.m:
        for i in items_tmp:
            users_tmp.update(view.item_users(i))
        users_tmp -= users_m
        users_m |= users_tmp
        if not users_tmp:
            break
        for v in sorted(users_tmp):
            _with_sequels(g, view.user_items(v, limit), items_tmp)
        items_tmp -= items_m
        items_m |= items_tmp
        rounds += 1
        if not items_tmp:
            break

    return _materialize(view, u, history, users_m, items_m, rounds)


def _materialize(view: GraphView, u, history, users_m, items_m, rounds) -> SubGraph:
    g = view.graph
    users = tuple(sorted(users_m))
    items = tuple(sorted(items_m))
    umask = np.zeros(g.n_users, dtype=bool)
    umask[list(users)] = True
    imask = np.zeros(g.n_items, dtype=bool)
    imask[list(items)] = True
    keep = umask[g.e_user] & imask[g.e_item]
    if view.t_k != float("inf"):
        keep &= g.e_time < view.t_k
    edge_ids = np.flatnonzero(keep)
    sequel = [e for e in g.sequel_edges() if e.from_item in items_m and e.to_item in items_m]
    return SubGraph(u, view.t_k, users, items, tuple(history), edge_ids, sequel, rounds)


def batch_sample(g: SequelAwareGraph, points: Sequence[tuple[int, float]],
                 cfg: SamplingConfig) -> list[SubGraph]:
    """One sub-graph per ``(user, t_k)`` prediction point, in order."""
    out = []
    for u, t_k in points:
        view = g.snapshot(t_k)
        try:
            out.append(sample_subgraph(view, u, None, cfg))
        except (SamplingError, NodeLookupError) as exc:
            raise type(exc)(f"(user={u}, t_k={t_k}): {exc}") from exc
    return out
