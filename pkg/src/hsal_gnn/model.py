"""Model layers: sequel, long-term and short-term propagation, fusion, scoring, loss.

Sub-graphs are processed as a disjoint union (:class:`GraphBatch`) so one tape
covers a whole mini-batch. Row-vector convention throughout: a column-vector
product ``W h`` with ``W`` of shape (out, in) is computed as ``H @ W.T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor_core as tc
from .encoding import ROTARY, SINUSOIDAL, encode_sinusoidal, rotary_tables, swap_matrix
from .graph import SequelAwareGraph
from .sampling import SubGraph
from .tensor_core import Tensor

FUSIONS = ("sum", "mean", "concat", "semantic")
PROPAGATIONS = ("hsal", "gcn")
LOG_CLAMP = 1e-12


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_users: int
    n_items: int
    d: int = 50
    n_layers: int = 3
    max_order: int = 50
    fusion: str = "sum"
    positional: str = SINUSOIDAL
    propagation: str = "hsal"
    init_std: float = 0.01

    def __post_init__(self):
        if min(self.n_users, self.n_items, self.d, self.max_order) < 1:
            raise ModelConfigError("n_users, n_items, d and max_order must all be >= 1")
        if self.n_layers < 0:
            raise ModelConfigError(f"n_layers must be >= 0, got {self.n_layers}")
        if self.fusion not in FUSIONS:
            raise ModelConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.positional not in (SINUSOIDAL, ROTARY):
            raise ModelConfigError(f"unknown positional kind {self.positional!r}")
        if self.propagation not in PROPAGATIONS:
            raise ModelConfigError(f"propagation must be one of {PROPAGATIONS}")
        if self.d % 2:
            raise ModelConfigError(f"d must be even for the positional encodings, got {self.d}")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor, in registration order."""
    d, L = cfg.d, cfg.n_layers
    shapes: dict[str, tuple[int, ...]] = {
        "E_U": (cfg.n_users, d),
        "E_I": (cfg.n_items, d),
    }
    for l in range(1, L + 1):
        shapes[f"W1_{l}"] = (d, d)
        shapes[f"W2_{l}"] = (d, d)
        shapes[f"Wq_user_long_{l}"] = (d, d)
        shapes[f"Wq_item_long_{l}"] = (d, d)
        shapes[f"Wq_user_short_{l}"] = (d, d)
        shapes[f"Wq_item_short_{l}"] = (d, d)
        shapes[f"W3_{l}"] = (d, 2 * d)
        shapes[f"W4u_{l}"] = (d, 3 * d)
    shapes["P_iu"] = (cfg.max_order, d)
    shapes["P_ui"] = (cfg.max_order, d)
    shapes["mlp_W"] = (d, 2 * d)
    shapes["mlp_b"] = (1, d)
    shapes["W4c"] = (d, 3 * d)
    shapes["sem_W"] = (d, d)
    shapes["sem_q"] = (d, 1)
    shapes["W_P"] = ((L + 1) * d, d)
    return shapes


class ModelParams:
    """Ordered collection of named parameter tensors."""

    def __init__(self, cfg: ModelConfig, tensors: dict[str, Tensor]):
        self.cfg = cfg
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def count(self) -> int:
        return sum(t.values.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams(self.cfg, {
            k: Tensor(v.values.copy(), requires_grad=True, name=k) for k, v in self.tensors.items()
        })


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Draw every tensor i.i.d. from Normal(0, init_std^2)."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        tensors[name] = Tensor(rng.normal(0.0, cfg.init_std, size=shape), requires_grad=True, name=name)
    return ModelParams(cfg, tensors)


# ---------------------------------------------------------------------------
# batched sub-graphs


@dataclass
class GraphBatch:
    """Disjoint union of sub-graphs with local (batch) node indices."""

    user_ids: np.ndarray  # global id per local user
    item_ids: np.ndarray
    anchors: np.ndarray  # local user index of each sub-graph's anchor
    edge_user: np.ndarray  # local indices, one entry per user-item edge
    edge_item: np.ndarray
    order_iu: np.ndarray  # 0-based recency rank of the edge within its user (0 = latest)
    order_ui: np.ndarray  # 0-based recency rank within its item
    last_item: np.ndarray  # per local user: local index of its latest item, -1 if none
    last_user: np.ndarray
    seq_src: np.ndarray  # sequel pairs (item, later item of the same series)
    seq_dst: np.ndarray
    seq_pos: np.ndarray  # 1-based series position of seq_dst
    targets: np.ndarray | None = None

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def size(self) -> int:
        return len(self.anchors)


def _recency_rank(group: np.ndarray, keys: Sequence[np.ndarray]) -> np.ndarray:
    """0-based rank inside each group when sorted by ``keys`` descending."""
    n = len(group)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    # lexsort: last key is primary; negate for descending order
    order = np.lexsort(tuple(-k for k in reversed(keys)) + (group,))
    g_sorted = group[order]
    starts = np.r_[True, g_sorted[1:] != g_sorted[:-1]]
    first = np.maximum.accumulate(np.where(starts, np.arange(n), 0))
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n) - first
    return rank


def collate(subgraphs: Sequence[SubGraph], graph: SequelAwareGraph, max_order: int,
            targets: Sequence[int] | None = None) -> GraphBatch:
    """Relabel and stack sub-graphs into one :class:`GraphBatch`."""
    user_ids, item_ids, anchors = [], [], []
    eu, ei, t_all, ug_all = [], [], [], []
    s_src, s_dst, s_pos = [], [], []
    u_off = i_off = 0
    for sg in subgraphs:
        users = np.asarray(sg.users, dtype=np.int64)
        items = np.asarray(sg.items, dtype=np.int64)
        user_ids.append(users)
        item_ids.append(items)
        anchors.append(u_off + int(np.searchsorted(users, sg.anchor_user)))
        ids = sg.edge_ids
        ug = graph.e_user[ids]
        eu.append(u_off + np.searchsorted(users, ug))
        ei.append(i_off + np.searchsorted(items, graph.e_item[ids]))
        t_all.append(graph.e_time[ids])
        ug_all.append(ug)
        ser = graph.series_of[items]
        for a in np.flatnonzero(ser >= 0):
            succ = graph._successors[items[a]]
            if not succ:
                continue
            loc = np.searchsorted(items, succ)
            keep = (loc < len(items))
            keep[keep] = items[loc[keep]] == np.asarray(succ)[keep]
            s_src.extend([i_off + a] * int(keep.sum()))
            s_dst.extend((i_off + loc[keep]).tolist())
            s_pos.extend(graph.position_of[np.asarray(succ)[keep]].tolist())
        u_off += len(users)
        i_off += len(items)

    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)
    edge_user, edge_item, times, ug = cat(eu), cat(ei), cat(t_all), cat(ug_all)
    n_u, n_i = u_off, i_off
    r_iu = _recency_rank(edge_user, [times])
    r_ui = _recency_rank(edge_item, [times, ug])
    last_item = np.full(n_u, -1, dtype=np.int64)
    last_user = np.full(n_i, -1, dtype=np.int64)
    last_item[edge_user[r_iu == 0]] = edge_item[r_iu == 0]
    last_user[edge_item[r_ui == 0]] = edge_user[r_ui == 0]
    return GraphBatch(
        user_ids=cat(user_ids), item_ids=cat(item_ids), anchors=np.asarray(anchors, dtype=np.int64),
        edge_user=edge_user, edge_item=edge_item,
        order_iu=np.minimum(r_iu, max_order - 1), order_ui=np.minimum(r_ui, max_order - 1),
        last_item=last_item, last_user=last_user,
        seq_src=np.asarray(s_src, dtype=np.int64), seq_dst=np.asarray(s_dst, dtype=np.int64),
        seq_pos=np.asarray(s_pos, dtype=np.int64),
        targets=None if targets is None else np.asarray(targets, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# building blocks


def linear(x: Tensor, W: Tensor) -> Tensor:
    """x @ W.T for a weight stored as (out, in)."""
    return tc.matmul(x, tc.transpose(W))


def _const(arr) -> Tensor:
    return Tensor._wrap(np.asarray(arr, dtype=np.float64), False)


def _zeros(n: int, d: int) -> Tensor:
    return _const(np.zeros((n, d)))


def attention(query: Tensor, keys: Tensor, values: Tensor, seg: np.ndarray, n_seg: int):
    """Scaled dot-product attention normalized within each segment.

    ``query``, ``keys`` and ``values`` hold one row per edge; rows sharing a
    segment id compete in one softmax. Returns ``(aggregated, weights)`` where
    segments without edges aggregate to zero rows.
    """
    d = keys.shape[1]
    logits = tc.scale(tc.rowdot(query, keys), 1.0 / math.sqrt(d))
    weights = tc.segment_softmax(logits, seg, n_seg)
    agg = tc.segment_sum(tc.scale_rows(weights, values), seg, n_seg)
    return agg, weights


def long_term(H_dst: Tensor, H_src: Tensor, dst: np.ndarray, src: np.ndarray, order: np.ndarray,
              W: Tensor, P: Tensor, Wq: Tensor, n_dst: int):
    """sum_j a_j (W h_j + p_{r_j}) with query Wq h_dst and keys equal to the messages."""
    # project once per node, then copy onto edges
    msg = tc.add(tc.gather(linear(H_src, W), src), tc.gather(P, order))
    q = tc.gather(linear(H_dst, Wq), dst)
    return attention(q, msg, msg, dst, n_dst)


def short_term(H_src: Tensor, dst: np.ndarray, src: np.ndarray, last_src: np.ndarray,
               Wq: Tensor, n_dst: int):
    """sum_j a_j h_j with the query taken from the destination's latest neighbor."""
    vals = tc.gather(H_src, src)
    q = tc.gather(linear(H_src, Wq), last_src[dst])
    return attention(q, vals, vals, dst, n_dst)


def sequel_message(H_items: Tensor, batch: GraphBatch, positional: str) -> Tensor:
    """Mean over later series items j of h_j (.) P(j); zero for items without any."""
    n, d = H_items.shape
    if len(batch.seq_src) == 0:
        return _zeros(n, d)
    h_j = tc.gather(H_items, batch.seq_dst)
    if positional == SINUSOIDAL:
        msg = tc.mul(h_j, _const(encode_sinusoidal(batch.seq_pos, d)))
    else:
        cos, sin = rotary_tables(batch.seq_pos, d)
        swapped = tc.matmul(h_j, _const(swap_matrix(d)))
        msg = tc.add(tc.mul(h_j, _const(cos)), tc.mul(swapped, _const(sin)))
    counts = np.bincount(batch.seq_src, minlength=n).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros(n), where=counts > 0)
    return tc.scale_rows(_const(inv), tc.segment_sum(msg, batch.seq_src, n))


def _bias_rows(b: Tensor, n: int) -> Tensor:
    return tc.gather(b, np.zeros(n, dtype=np.int64))


def mlp_aggregate(h_L: Tensor, h_S: Tensor, params: ModelParams) -> Tensor:
    x = linear(tc.concat([h_L, h_S]), params["mlp_W"])
    return tc.relu(tc.add(x, _bias_rows(params["mlp_b"], x.shape[0])))


def fuse(h_L: Tensor, h_S: Tensor, h_seq: Tensor, strategy: str, params: ModelParams) -> Tensor:
    """Combine long-term, short-term and sequel item vectors into one d-vector per row."""
    if not (h_L.shape == h_S.shape == h_seq.shape):
        raise tc.ContractError(f"fuse: shapes {h_L.shape}, {h_S.shape}, {h_seq.shape} differ")
    if strategy == "sum":
        return tc.add(mlp_aggregate(h_L, h_S, params), h_seq)
    if strategy == "mean":
        return tc.scale(tc.add(mlp_aggregate(h_L, h_S, params), h_seq), 0.5)
    if strategy == "concat":
        return tc.relu(linear(tc.concat([h_L, h_S, h_seq]), params["W4c"]))
    if strategy == "semantic":
        return semantic_fusion([h_L, h_S, h_seq], params)
    raise tc.ContractError(f"unknown fusion strategy {strategy!r}")


def semantic_fusion(parts: Sequence[Tensor], params: ModelParams) -> Tensor:
    """Project each input with a shared map, then mix with per-row softmax gates."""
    n, d = parts[0].shape
    proj = [linear(p, params["sem_W"]) for p in parts]
    scores = [tc.matmul(tc.tanh(z), params["sem_q"]) for z in proj]  # (n, 1) each
    gate = tc.softmax(tc.concat(scores))  # (n, k)
    out = None
    for k, z in enumerate(proj):
        w = tc.expand_cols(tc.reshape(tc.slice_cols(gate, k, k + 1), (n,)), d)
        term = tc.mul(w, z)
        out = term if out is None else tc.add(out, term)
    return out


def update_item(h_fused: Tensor, h_prev: Tensor, W3: Tensor) -> Tensor:
    return tc.tanh(linear(tc.concat([h_fused, h_prev]), W3))


def update_user(h_L: Tensor, h_S: Tensor, h_prev: Tensor, W4u: Tensor) -> Tensor:
    return tc.tanh(linear(tc.concat([h_L, h_S, h_prev]), W4u))


# ---------------------------------------------------------------------------
# forward, scoring, loss


@dataclass
class LayerState:
    h_u: Tensor
    h_i: Tensor


@dataclass
class ForwardResult:
    h_final: Tensor  # (batch, (L+1) d)
    layers: list[LayerState]
    attention: list[dict[str, Tensor]] = field(default_factory=list)
    fused: list[Tensor] = field(default_factory=list)
    aggregated: list[Tensor] = field(default_factory=list)


def _segment_mean(x: Tensor, seg: np.ndarray, n: int) -> Tensor:
    counts = np.bincount(seg, minlength=n).astype(np.float64)
    inv = np.divide(1.0, counts, out=np.zeros(n), where=counts > 0)
    return tc.scale_rows(_const(inv), tc.segment_sum(x, seg, n))


def forward(batch: GraphBatch, params: ModelParams, users_only_last: bool = False) -> ForwardResult:
    """Run the L propagation layers and concatenate the anchors' per-layer vectors.

    With ``users_only_last`` the item update of the final layer is skipped,
    since scoring reads only user states; the last ``LayerState.h_i`` is then
    the previous layer's item matrix.
    """
    cfg = params.cfg
    n_u, n_i = batch.n_users, batch.n_items
    eu, ei = batch.edge_user, batch.edge_item
    if len(eu) == 0 or np.any(np.bincount(eu, minlength=n_u)[batch.anchors] == 0):
        raise tc.ContractError("forward: every anchor user needs at least one item neighbor")

    H_u = tc.gather(params["E_U"], batch.user_ids)
    H_i = tc.gather(params["E_I"], batch.item_ids)
    layers = [LayerState(H_u, H_i)]
    att_log, fused_log, agg_log = [], [], []
    for l in range(1, cfg.n_layers + 1):
        if cfg.propagation == "gcn":
            new_u = _segment_mean(tc.gather(linear(H_i, params[f"W1_{l}"]), ei), eu, n_u)
            new_i = _segment_mean(tc.gather(linear(H_u, params[f"W2_{l}"]), eu), ei, n_i)
            H_u, H_i = new_u, new_i
            layers.append(LayerState(H_u, H_i))
            continue
        skip_items = users_only_last and l == cfg.n_layers
        hL_u, a_u = long_term(H_u, H_i, eu, ei, batch.order_iu, params[f"W1_{l}"],
                              params["P_iu"], params[f"Wq_user_long_{l}"], n_u)
        hS_u, ah_u = short_term(H_i, eu, ei, batch.last_item, params[f"Wq_user_short_{l}"], n_u)
        new_u = update_user(hL_u, hS_u, H_u, params[f"W4u_{l}"])
        if skip_items:
            H_u = new_u
            layers.append(LayerState(H_u, H_i))
            att_log.append({"alpha": a_u, "alpha_hat": ah_u})
            break
        hL_i, b_i = long_term(H_i, H_u, ei, eu, batch.order_ui, params[f"W2_{l}"],
                              params["P_ui"], params[f"Wq_item_long_{l}"], n_i)
        hS_i, bh_i = short_term(H_u, ei, eu, batch.last_user, params[f"Wq_item_short_{l}"], n_i)
        h_seq = sequel_message(H_i, batch, cfg.positional)
        fused = fuse(hL_i, hS_i, h_seq, cfg.fusion, params)
        new_i = update_item(fused, H_i, params[f"W3_{l}"])
        H_u, H_i = new_u, new_i
        layers.append(LayerState(H_u, H_i))
        att_log.append({"alpha": a_u, "beta": b_i, "alpha_hat": ah_u, "beta_hat": bh_i})
        fused_log.append(fused)
        agg_log.append((hL_i, hS_i, h_seq))

    per_layer = [tc.gather(s.h_u, batch.anchors) for s in layers]
    h_final = tc.concat(per_layer) if len(per_layer) > 1 else per_layer[0]
    return ForwardResult(h_final, layers, att_log, fused_log, agg_log)


def score(h_final: Tensor, params: ModelParams, candidates: Sequence[int] | None = None) -> Tensor:
    """s_ui = h_u^T W_P e_i for every candidate (all items by default)."""
    E = params["E_I"] if candidates is None else tc.gather(params["E_I"], candidates)
    return tc.matmul(tc.matmul(h_final, params["W_P"]), tc.transpose(E))


def predict(scores: np.ndarray) -> np.ndarray:
    """Arg-max per row; np.argmax already picks the lowest index among ties."""
    return np.argmax(np.atleast_2d(scores), axis=1)


def loss(scores: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean over rows of the binary cross-entropy between softmax(scores) and one-hot targets.

    Probabilities are clamped to [1e-12, 1 - 1e-12] before taking logs. The
    L2 term is applied by the optimizer, not here.
    """
    S = scores.values
    if not np.all(np.isfinite(S)):
        raise tc.NumericError("loss: non-finite scores")
    scores2 = scores if S.ndim == 2 else tc.reshape(scores, (1, S.shape[0]))
    B, n = scores2.shape
    tgt = np.asarray(targets, dtype=np.int64).reshape(-1)
    if len(tgt) != B or tgt.min() < 0 or tgt.max() >= n:
        raise tc.ContractError(f"loss: targets {tgt.tolist()} invalid for scores of shape {(B, n)}")
    Y = np.zeros((B, n))
    Y[np.arange(B), tgt] = 1.0
    y_hat = tc.clip(tc.softmax(scores2), LOG_CLAMP, 1.0 - LOG_CLAMP)
    one = _const(np.ones((B, n)))
    pos = tc.mul(_const(Y), tc.log(y_hat))
    negp = tc.mul(_const(1.0 - Y), tc.log(tc.sub(one, y_hat)))
    total = tc.reduce("sum", tc.add(pos, negp))
    return tc.scale(total, -1.0 / B)


def batch_loss(batch: GraphBatch, params: ModelParams) -> Tensor:
    out = forward(batch, params, users_only_last=True)
    return loss(score(out.h_final, params), batch.targets)
