"""Synthetic sequel-aware datasets, interaction/series file I/O, leave-one-out splits."""

from __future__ import annotations

import csv
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .graph import CatalogError, IngestionError, Series, validate_catalog

MODES = ("mixed", "sequential", "standalone")


class DataConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    interactions: list[tuple[int, int, int]]
    series_catalog: list[Series]
    n_users: int
    n_items: int
    user_names: list[str] = field(default_factory=list)
    item_names: list[str] = field(default_factory=list)
    malformed_rows: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.user_names:
            self.user_names = [str(u) for u in range(self.n_users)]
        if not self.item_names:
            self.item_names = [str(i) for i in range(self.n_items)]

    def sequences(self) -> dict[int, list[tuple[int, int]]]:
        """user -> [(item, timestamp), ...] ascending by timestamp (input order on ties)."""
        seqs: dict[int, list[tuple[int, int]]] = defaultdict(list)
        for u, i, t in self.interactions:
            seqs[u].append((i, t))
        for u in seqs:
            seqs[u].sort(key=lambda it: it[1])
        return dict(sorted(seqs.items()))

    def without_series(self) -> "Dataset":
        return Dataset(list(self.interactions), [], self.n_users, self.n_items,
                       list(self.user_names), list(self.item_names))

    def sequel_fraction(self) -> float:
        sequel = {i for s in self.series_catalog for i in s.items}
        if not self.interactions:
            return 0.0
        return sum(1 for _, i, _ in self.interactions if i in sequel) / len(self.interactions)


@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 10_000
    n_items: int = 500
    items_per_user_range: tuple[int, int] = (10, 15)
    n_sequential_items: int = 250
    n_series_range: tuple[int, int] = (20, 30)
    max_interactions_per_user: int = 15
    mode: str = "mixed"
    popularity_exponent: float = 1.5
    continuation_prob: float = 0.8
    sequel_share: float = 0.5
    even_series: bool = False
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.items_per_user_range
        if self.mode not in MODES:
            raise DataConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n_users < 1 or self.n_items < 1:
            raise DataConfigError("n_users and n_items must be positive")
        if not 1 <= lo <= hi:
            raise DataConfigError(f"bad items_per_user_range {self.items_per_user_range}")
        if self.max_interactions_per_user < 1:
            raise DataConfigError("max_interactions_per_user must be positive")
        if not 0 <= self.n_sequential_items <= self.n_items:
            raise DataConfigError("n_sequential_items must lie in [0, n_items]")
        s_lo, s_hi = self.n_series_range
        if self.mode != "standalone":
            if not 1 <= s_lo <= s_hi:
                raise DataConfigError(f"bad n_series_range {self.n_series_range}")
            if 2 * s_lo > self.n_sequential_items:
                raise DataConfigError(
                    f"{self.n_sequential_items} sequential items cannot form {s_lo} series of length >= 2"
                )
        if self.mode == "mixed" and self.n_sequential_items == self.n_items:
            raise DataConfigError("mixed mode needs some standalone items")
        if self.popularity_exponent <= 0:
            raise DataConfigError("popularity_exponent must be positive")
        if not 0 <= self.continuation_prob <= 1:
            raise DataConfigError("continuation_prob must lie in [0, 1]")


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    """Normalized mass r^-s for ranks r = 1..n."""
    w = np.arange(1, n + 1, dtype=np.float64) ** -exponent
    return w / w.sum()


def draw_popular(rng: np.random.Generator, n: int, exponent: float, size: int) -> np.ndarray:
    """``size`` independent 0-based ranks from the truncated Zipf law over n ranks."""
    return rng.choice(n, size=size, p=zipf_weights(n, exponent))


def _partition_series(rng, items: np.ndarray, n_series: int, even: bool) -> list[np.ndarray]:
    n = len(items)
    if even:
        lengths = np.full(n_series, n // n_series)
        lengths[: n % n_series] += 1
    else:
        # random composition with every part >= 2
        spare = n - 2 * n_series
        cuts = np.sort(rng.choice(spare + n_series - 1, size=n_series - 1, replace=False))
        parts = np.diff(np.r_[-1, cuts, spare + n_series - 1]) - 1
        lengths = parts + 2
    bounds = np.cumsum(np.r_[0, lengths])
    return [items[bounds[k] : bounds[k + 1]] for k in range(n_series)]


def _expected_run(lengths: Sequence[int], weights: np.ndarray, q: float) -> float:
    if q >= 1.0:
        runs = np.asarray(lengths, dtype=np.float64)
    else:
        runs = (1.0 - q ** np.asarray(lengths, dtype=np.float64)) / (1.0 - q)
    return float(np.dot(weights, runs))


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Simulate per-user interaction sequences with Zipf item popularity.

    Entering a series starts at the user's first unconsumed position; after
    each sequel item the user continues with the next one with probability
    ``continuation_prob`` (always, in sequential mode). Timestamps are
    per-user counters 1..k and no user sees an item twice.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if cfg.mode == "standalone":
        catalog_items: list[np.ndarray] = []
        standalone = np.arange(cfg.n_items)
    else:
        perm = rng.permutation(cfg.n_items)
        seq_items = np.sort(perm[: cfg.n_sequential_items])
        standalone = np.sort(perm[cfg.n_sequential_items :])
        n_series = int(rng.integers(cfg.n_series_range[0], cfg.n_series_range[1] + 1))
        catalog_items = _partition_series(rng, rng.permutation(seq_items), n_series, cfg.even_series)
    catalog = [Series(k, tuple(int(i) for i in s)) for k, s in enumerate(catalog_items)]

    # popularity order: a random permutation of each pool gets Zipf mass by rank
    sa_pop = np.empty(len(standalone))
    if len(standalone):
        sa_pop[rng.permutation(len(standalone))] = zipf_weights(len(standalone), cfg.popularity_exponent)
    se_pop = np.empty(len(catalog))
    if catalog:
        se_pop[rng.permutation(len(catalog))] = zipf_weights(len(catalog), cfg.popularity_exponent)

    if cfg.mode == "sequential":
        q, p_series = 1.0, 1.0
    elif cfg.mode == "standalone":
        q, p_series = 0.0, 0.0
    else:
        q = cfg.continuation_prob
        run = _expected_run([len(s.items) for s in catalog], se_pop, q)
        f = cfg.sequel_share
        p_series = _calibrate_series_rate(cfg, catalog, standalone, sa_pop, se_pop, q,
                                          f / (run * (1.0 - f) + f))

    lo, hi = cfg.items_per_user_range
    interactions: list[tuple[int, int, int]] = []
    for u in range(cfg.n_users):
        k = min(int(rng.integers(lo, hi + 1)), cfg.max_interactions_per_user)
        seq = _simulate_user(rng, k, catalog, standalone, sa_pop, se_pop, q, p_series)
        interactions.extend((u, i, t) for t, i in enumerate(seq, start=1))
    return Dataset(interactions, catalog, cfg.n_users, cfg.n_items)


def _calibrate_series_rate(cfg, catalog, standalone, sa_pop, se_pop, q, p0, pilots=2000, rounds=4):
    """Correct the closed-form series-entry rate for truncated runs.

    Runs pilot users on a separate RNG stream and rescales the odds of
    entering a series until the realized sequel share matches the target.
    """
    lo, hi = cfg.items_per_user_range
    target = cfg.sequel_share
    sequel = {i for s in catalog for i in s.items}
    p = p0
    for r in range(rounds):
        rng = np.random.default_rng([cfg.seed, 7919, r])
        hits = total = 0
        for _ in range(pilots):
            k = min(int(rng.integers(lo, hi + 1)), cfg.max_interactions_per_user)
            seq = _simulate_user(rng, k, catalog, standalone, sa_pop, se_pop, q, p)
            hits += sum(1 for i in seq if i in sequel)
            total += len(seq)
        share = min(max(hits / max(total, 1), 1e-6), 1 - 1e-6)
        odds = (p / (1 - p)) * (target / (1 - target)) / (share / (1 - share))
        p = min(max(odds / (1 + odds), 1e-6), 1 - 1e-6)
    return p


def _simulate_user(rng, k, catalog, standalone, sa_pop, se_pop, q, p_series) -> list[int]:
    progress = [0] * len(catalog)  # items consumed per series
    sa_left = np.ones(len(standalone), dtype=bool)
    seq: list[int] = []
    current = -1
    while len(seq) < k:
        if current >= 0 and progress[current] < len(catalog[current].items) and rng.random() < q:
            s = current
        else:
            open_series = np.array([progress[j] < len(catalog[j].items) for j in range(len(catalog))],
                                   dtype=bool)
            can_series = bool(open_series.any())
            can_sa = bool(sa_left.any())
            if not (can_series or can_sa):
                break
            want_series = can_series and (not can_sa or rng.random() < p_series)
            if want_series:
                w = np.where(open_series, se_pop, 0.0)
                s = int(rng.choice(len(catalog), p=w / w.sum()))
            else:
                w = np.where(sa_left, sa_pop, 0.0)
                j = int(rng.choice(len(standalone), p=w / w.sum()))
                sa_left[j] = False
                seq.append(int(standalone[j]))
                current = -1
                continue
        seq.append(catalog[s].items[progress[s]])
        progress[s] += 1
        current = s
    return seq


# ---------------------------------------------------------------------------
# file formats


def write_interactions(ds: Dataset, path: str | Path) -> None:
    """Headerless ``user_id,item_id,timestamp`` CSV using the dataset's names."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for u, i, t in ds.interactions:
            w.writerow([ds.user_names[u], ds.item_names[i], t])


def write_series(catalog: Iterable[Series], path: str | Path, item_names: Sequence[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for s in catalog:
            names = [item_names[i] if item_names else str(i) for i in s.items]
            w.writerow([s.id, *names])


def _parse_row(line: str, fmt: str):
    if fmt == "movielens":
        parts = line.split("\t") if "\t" in line else line.split("::")
        if len(parts) < 3:
            raise ValueError("expected user, item, rating, timestamp")
        user, item = parts[0].strip(), parts[1].strip()
        ts = parts[3] if len(parts) >= 4 else parts[2]
    elif fmt == "csv":
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError("expected user_id,item_id,timestamp")
        user, item, ts = (p.strip() for p in parts)
    else:
        raise DataConfigError(f"unknown interaction format {fmt!r}")
    if not user or not item:
        raise ValueError("empty id")
    return user, item, int(ts.strip())


def load_interactions(path: str | Path, fmt: str = "csv", tolerance: float = 0.0,
                      sample_users: int | None = None) -> Dataset:
    """Read interactions; ids are densified in order of first appearance.

    Rows that fail to parse are skipped and their 1-based line numbers kept in
    ``malformed_rows``; if their share exceeds ``tolerance`` an
    :class:`IngestionError` lists them. ``sample_users`` keeps the N users with
    the most interactions (ties by first appearance).
    """
    rows: list[tuple[str, str, int]] = []
    bad: list[int] = []
    total = 0
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            total += 1
            try:
                rows.append(_parse_row(line, fmt))
            except ValueError:
                bad.append(lineno)
    if total and len(bad) / total > tolerance:
        raise IngestionError(
            f"{path}: {len(bad)} malformed row(s) of {total} exceed tolerance {tolerance}; lines {bad[:20]}"
        )

    if sample_users is not None:
        counts: dict[str, int] = {}
        for u, _, _ in rows:
            counts[u] = counts.get(u, 0) + 1
        keep = set(sorted(counts, key=lambda u: -counts[u])[:sample_users])
        rows = [r for r in rows if r[0] in keep]

    seen = set()
    for r in rows:
        if r in seen:
            raise IngestionError(f"{path}: duplicate interaction (user={r[0]}, item={r[1]}, timestamp={r[2]})")
        seen.add(r)

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    triples = []
    for u, i, t in rows:
        triples.append((user_index.setdefault(u, len(user_index)),
                        item_index.setdefault(i, len(item_index)), t))
    # per user by timestamp, file order on ties
    order = sorted(range(len(triples)), key=lambda k: (triples[k][0], triples[k][2], k))
    triples = [triples[k] for k in order]
    return Dataset(triples, [], len(user_index), len(item_index),
                   list(user_index), list(item_index), bad)


def load_series(path: str | Path, item_names: list[str] | None = None) -> list[Series]:
    """Parse ``series_id,item_1,item_2,...`` lines.

    With ``item_names`` the raw ids are mapped to dense indices; unseen items
    are appended to ``item_names`` in place. Without it, items must be integers.
    """
    index = {name: k for k, name in enumerate(item_names)} if item_names is not None else None
    catalog = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            row = [c.strip() for c in row]
            if not row or not any(row):
                continue
            if len(row) < 3:
                raise CatalogError(f"{path}:{lineno}: a series needs an id and at least two items")
            sid, raw = row[0], row[1:]
            if index is None:
                try:
                    items = tuple(int(x) for x in raw)
                except ValueError:
                    raise CatalogError(f"{path}:{lineno}: non-integer item id") from None
            else:
                items = []
                for name in raw:
                    if name not in index:
                        index[name] = len(item_names)
                        item_names.append(name)
                    items.append(index[name])
                items = tuple(items)
            catalog.append(Series(int(sid) if sid.lstrip("-").isdigit() else sid, items))
    return validate_catalog(catalog)


# ---------------------------------------------------------------------------
# title matching

_YEAR = re.compile(r"\s*\(\d{4}\)\s*$")
_ROMAN = {"ii": 2, "iii": 3, "iv": 4, "v": 5, "vi": 6, "vii": 7, "viii": 8, "ix": 9, "x": 10}
_MARKERS = [
    re.compile(r"^(?P<base>.+?)\s*[:,\-]?\s*\(part\s+(?P<n>\d+)\)$", re.I),
    re.compile(r"^(?P<base>.+?)\s*[:,\-]?\s*part\s+(?P<n>\d+)$", re.I),
    re.compile(r"^(?P<base>.+?)\s*[:,\-]?\s+(?P<n>\d{1,2})$"),
    re.compile(r"^(?P<base>.+?)\s*[:,\-]?\s+(?P<roman>ii|iii|iv|v|vi|vii|viii|ix|x)$", re.I),
]


def _split_title(title: str) -> tuple[str, int | None]:
    t = _YEAR.sub("", title.strip())
    for pat in _MARKERS:
        m = pat.match(t)
        if m:
            n = int(m.group("n")) if "n" in m.groupdict() and m.group("n") else _ROMAN[m.group("roman").lower()]
            return m.group("base").strip().casefold(), n
    return t.casefold(), None


def infer_series_by_title(titles: dict[int, str]) -> list[Series]:
    """Group titles that share a base name and differ by a trailing part number.

    Recognized markers: ``(Part N)``, ``Part N``, a trailing number up to two
    digits and Roman numerals II-X; a trailing ``(YYYY)`` year is ignored. A
    bare base title counts as part 1. Groups with a repeated part number, or
    fewer than two members, stay standalone.
    """
    groups: dict[str, list[tuple[int, int]]] = defaultdict(list)
    bare: dict[str, list[int]] = defaultdict(list)
    for item, title in sorted(titles.items()):
        base, n = _split_title(title)
        if n is None:
            bare[base].append(item)
        else:
            groups[base].append((n, item))
    catalog = []
    for base in sorted(groups):
        members = list(groups[base])
        if len(bare.get(base, [])) == 1:
            members.append((1, bare[base][0]))
        elif len(bare.get(base, [])) > 1:
            continue
        numbers = [n for n, _ in members]
        if len(members) < 2 or len(set(numbers)) != len(numbers):
            continue
        members.sort()
        catalog.append(Series(base, tuple(i for _, i in members)))
    return catalog


# ---------------------------------------------------------------------------
# splitting


@dataclass
class Split:
    train: list[tuple[int, int, int]]
    validation: dict[int, tuple[int, int]]  # user -> (item, timestamp)
    test: dict[int, tuple[int, int]]
    train_only_users: list[int]

    def eval_users(self) -> list[int]:
        return sorted(self.test)

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def leave_one_out(ds: Dataset) -> Split:
    """Per user: last interaction to test, second-to-last to validation, rest to train.

    Users with fewer than three interactions go entirely to train.
    """
    train, val, test, short = [], {}, {}, []
    for u, seq in ds.sequences().items():
        if len(seq) < 3:
            train.extend((u, i, t) for i, t in seq)
            short.append(u)
            continue
        train.extend((u, i, t) for i, t in seq[:-2])
        val[u] = seq[-2]
        test[u] = seq[-1]
    return Split(train, val, test, short)
