"""Full-ranking leave-one-out evaluation with Hit@K and NDCG@K."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, Split
from .graph import SequelAwareGraph, build_graph
from .model import ModelParams, collate, forward, score
from .sampling import SamplingConfig, SamplingError, sample_subgraph
from .tensor_core import ContractError

DEFAULT_KS = (5, 10, 20)


def rank_of_target(scores, target: int, exclusion=()) -> int:
    """1-based rank of ``target`` among non-excluded items; ties go to the lower id."""
    s = np.asarray(scores, dtype=np.float64)
    excl = np.zeros(len(s), dtype=bool)
    ex = np.fromiter(exclusion, dtype=np.int64) if not isinstance(exclusion, np.ndarray) else exclusion
    excl[ex] = True
    if excl[target]:
        raise ContractError(f"target item {target} is in the exclusion set")
    st = s[target]
    ids = np.arange(len(s))
    ahead = (s > st) | ((s == st) & (ids < target))
    return int(np.count_nonzero(ahead & ~excl)) + 1


def hit_at_k(rank: int, k: int) -> int:
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int) -> float:
    """Single relevant item, so the ideal DCG is 1."""
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


@dataclass
class RankingReport:
    hit: dict[int, float]
    ndcg: dict[int, float]
    n_evaluated: int
    n_skipped: int
    ranks: dict[int, int] = field(default_factory=dict)  # user -> rank
    metadata: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    def to_json(self) -> str:
        d = asdict(self)
        d["hit"] = {f"@{k}": v for k, v in self.hit.items()}
        d["ndcg"] = {f"@{k}": v for k, v in self.ndcg.items()}
        d["ranks"] = {str(u): r for u, r in self.ranks.items()}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RankingReport":
        d = json.loads(text)
        return cls(
            hit={int(k[1:]): v for k, v in d["hit"].items()},
            ndcg={int(k[1:]): v for k, v in d["ndcg"].items()},
            n_evaluated=d["n_evaluated"], n_skipped=d["n_skipped"],
            ranks={int(u): r for u, r in d["ranks"].items()},
            metadata=d["metadata"], wall_clock=d["wall_clock"],
        )

    def table(self) -> str:
        """Aligned text table with one row per metric."""
        lines = [f"{'Metric':<10}{'Value':>10}"]
        for k in sorted(self.hit):
            lines.append(f"{'Hit@' + str(k):<10}{self.hit[k]:>10.4f}")
        for k in sorted(self.ndcg):
            lines.append(f"{'NDCG@' + str(k):<10}{self.ndcg[k]:>10.4f}")
        lines.append(f"{'users':<10}{self.n_evaluated:>10d}")
        return "\n".join(lines)

    @staticmethod
    def parse_table(text: str) -> dict[str, float]:
        out = {}
        for line in text.splitlines()[1:]:
            name, value = line.split()
            out[name] = float(value)
        return out


def summarize(ranks: dict[int, int], ks: Sequence[int], n_skipped: int = 0,
              metadata: dict | None = None) -> RankingReport:
    n = len(ranks)
    hit = {k: (sum(hit_at_k(r, k) for r in ranks.values()) / n if n else 0.0) for k in ks}
    ndcg = {k: (sum(ndcg_at_k(r, k) for r in ranks.values()) / n if n else 0.0) for k in ks}
    return RankingReport(hit, ndcg, n, n_skipped, dict(ranks), metadata or {})


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple[int, ...] = DEFAULT_KS
    exclude_seen: bool = True
    batch_size: int = 50


def rank_targets(params: ModelParams, graph: SequelAwareGraph, targets: Sequence[tuple[int, int, int]],
                 seen: dict[int, set[int]], sampling: SamplingConfig, cfg: EvalConfig
                 ) -> tuple[dict[int, int], list[int]]:
    """Rank each ``(user, item, t)`` target against all items using the snapshot at t."""
    ranks: dict[int, int] = {}
    skipped: list[int] = []
    pending = []
    for u, i, t in targets:
        try:
            sg = sample_subgraph(graph.snapshot(t), u, None, sampling)
        except SamplingError:
            skipped.append(u)
            continue
        pending.append((u, i, sg))
    for start in range(0, len(pending), cfg.batch_size):
        chunk = pending[start : start + cfg.batch_size]
        batch = collate([sg for _, _, sg in chunk], graph, params.cfg.max_order)
        S = score(forward(batch, params, users_only_last=True).h_final, params).values
        for row, (u, i, _) in enumerate(chunk):
            excl = seen.get(u, set()) if cfg.exclude_seen else set()
            excl = np.fromiter((j for j in excl if j != i), dtype=np.int64)
            ranks[u] = rank_of_target(S[row], i, excl)
    return ranks, skipped


def evaluate(params: ModelParams, split: Split, dataset: Dataset, sampling: SamplingConfig,
             cfg: EvalConfig = EvalConfig(), on: str = "test",
             graph: SequelAwareGraph | None = None) -> RankingReport:
    """Leave-one-out ranking of every user's test (or validation) interaction.

    The context graph holds train interactions, plus validation interactions
    when scoring the test set, so no held-out target is visible to any user.
    """
    t0 = time.perf_counter()
    catalog = dataset.series_catalog
    if on == "test":
        held = split.test
        context = split.train + [(u, i, t) for u, (i, t) in split.validation.items()]
    elif on == "validation":
        held = split.validation
        context = split.train
    else:
        raise ValueError(f"on must be 'test' or 'validation', got {on!r}")
    if graph is None:
        graph = build_graph(context, catalog, n_users=dataset.n_users, n_items=dataset.n_items)
    seen: dict[int, set[int]] = {}
    for u, i, _ in context:
        seen.setdefault(u, set()).add(i)
    targets = [(u, i, t) for u, (i, t) in sorted(held.items())]
    ranks, skipped = rank_targets(params, graph, targets, seen, sampling, cfg)
    report = summarize(ranks, cfg.ks, len(skipped), {
        "split": on, "exclude_seen": cfg.exclude_seen, "n_items": dataset.n_items,
        "model": asdict(params.cfg), "sampling": asdict(sampling),
    })
    report.wall_clock = time.perf_counter() - t0
    return report
