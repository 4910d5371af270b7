"""Dynamic-hypergraph state encoder.

Every turn the session is turned into a small hypergraph: the user, each asked
attribute, and every item still present (rejected or candidate). Each asked
attribute spans one hyperedge tying the user (+1 if accepted, -1 if rejected),
the attribute itself and the present items carrying it. Messages go
node -> hyperedge, through per-channel self-attention, and back to nodes.

The state vector is ``history (GRU) | user connectivity | size bits``.

All tensor work happens on padded batches so training can encode a whole
minibatch at once; a single state is just a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import ACC, REJ, SessionState
from .numcore import (
    ShapeError,
    Tensor,
    concat,
    gather,
    gru_cell,
    init_gru,
    init_mhsa,
    multi_head_self_attention,
    relu,
    sum_,
    uniform_fan_in,
)

EVENTS = {("ask", ACC): 0, ("ask", REJ): 1, ("rec", REJ): 2}
LEN_BITS = 10


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 64
    hidden_dim: int = 100
    layers: int = 2
    heads: int = 1
    item_cap: int = 3000
    residual: bool = False
    use_hypergraph: bool = True

    def validate(self) -> None:
        if self.layers not in (1, 2, 3, 4):
            raise ValueError("layers must be in 1..4")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.item_cap < 1:
            raise ValueError("item_cap must be positive")

    @property
    def state_dim(self) -> int:
        return self.hidden_dim + self.embed_dim + 2 * LEN_BITS


@dataclass
class Hypergraph:
    """Canonical hypergraph for one session.

    ``nodes`` holds global node ids ordered user, attributes ascending, items
    ascending. ``edges`` lists the asked attribute ids ascending and
    ``accepted`` tags each hyperedge's channel.
    """

    nodes: np.ndarray
    edges: np.ndarray
    accepted: np.ndarray
    incidence: np.ndarray
    degrees: np.ndarray
    items: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def position(self) -> dict[int, int]:
        """Global node id -> row in ``nodes``."""
        pos = self.__dict__.get("_position")
        if pos is None:
            pos = self.__dict__["_position"] = {int(n): i for i, n in enumerate(self.nodes.tolist())}
        return pos


def _present_items(state: SessionState, cap: int) -> np.ndarray:
    items = np.array(sorted(state.v_rej | state.v_cand), dtype=np.int64)
    if len(items) <= cap:
        return items
    # Keep the items that best match the conversation so far; ties by id.
    M = state.catalog.membership[items]
    score = M[:, sorted(state.p_acc)].sum(axis=1) - M[:, sorted(state.p_rej)].sum(axis=1)
    keep = np.lexsort((items, -score))[:cap]
    return np.sort(items[keep])


def build_hypergraph(state: SessionState, item_cap: int = 3000) -> Hypergraph:
    cat = state.catalog
    attrs = np.array(sorted(state.p_acc | state.p_rej), dtype=np.int64)
    items = _present_items(state, item_cap)
    nodes = np.concatenate(
        [[cat.user_node(state.user)], [cat.attribute_node(p) for p in attrs], [cat.item_node(v) for v in items]]
    ).astype(np.int64)
    n_a = len(attrs)
    A = np.zeros((len(nodes), n_a))
    accepted = np.array([p in state.p_acc for p in attrs], dtype=bool)
    has = cat.membership[items][:, attrs] if len(items) else np.zeros((0, n_a), dtype=bool)
    for j in range(n_a):
        A[0, j] = 1.0 if accepted[j] else -1.0
        A[1 + j, j] = 1.0
        members = np.flatnonzero(has[:, j])
        if len(members):
            A[1 + n_a + members, j] = 1.0 / len(members)
    degrees = (A != 0).sum(axis=0).astype(np.float64)
    return Hypergraph(nodes, attrs, accepted, A, degrees, items)


def cached_hypergraph(state: SessionState, item_cap: int = 3000) -> Hypergraph:
    """``build_hypergraph`` memoized on the (immutable) state object."""
    memo = state.__dict__.setdefault("_hypergraphs", {})
    g = memo.get(item_cap)
    if g is None:
        g = memo[item_cap] = build_hypergraph(state, item_cap)
    return g


def length_binary(n: int) -> np.ndarray:
    n = min(max(int(n), 0), 2**LEN_BITS - 1)
    return np.array([(n >> (LEN_BITS - 1 - i)) & 1 for i in range(LEN_BITS)], dtype=np.float64)


def history_events(history: Sequence[tuple[str, str]]) -> list[int]:
    out = []
    for ev in history:
        key = (str(getattr(ev[0], "value", ev[0])), ev[1])
        if key not in EVENTS:
            raise ValueError(f"unknown history event {ev!r}")
        out.append(EVENTS[key])
    return out


# --------------------------------------------------------------------------
# parameters


def init_encoder(rng: np.random.Generator, config: EncoderConfig, dtype=np.float32) -> dict[str, Tensor]:
    config.validate()
    d = config.embed_dim
    p = {"event_emb": Tensor(rng.normal(0, 0.1, size=(len(EVENTS), d)).astype(dtype), requires_grad=True)}
    for k, v in init_gru(rng, d, config.hidden_dim, dtype).items():
        p[f"gru.{k}"] = v
    p["W_n"] = uniform_fan_in(rng, d, (d, d), dtype)
    for layer in range(config.layers):
        for ch in ("acc", "rej"):
            for k, v in init_mhsa(rng, d, dtype).items():
                p[f"mhsa.{layer}.{ch}.{k}"] = v
    return p


def _sub(params: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


# --------------------------------------------------------------------------
# padded batches


@dataclass
class GraphBatch:
    """Padded incidence blocks split by channel.

    Padding rows/columns are zero, so they never leak into real nodes.
    """

    node_ids: np.ndarray  # (B, N) global ids, -1 for padding
    node_mask: np.ndarray  # (B, N)
    A_acc: np.ndarray  # (B, N, Ha)
    A_rej: np.ndarray  # (B, N, Hr)
    D_acc: np.ndarray  # (B, Ha), padding = 1
    D_rej: np.ndarray
    mask_acc: np.ndarray  # (B, Ha)
    mask_rej: np.ndarray
    graphs: list

    @property
    def size(self) -> int:
        return len(self.graphs)


def batch_graphs(graphs: Sequence[Hypergraph], dtype=np.float64) -> GraphBatch:
    B = len(graphs)
    N = max(g.n_nodes for g in graphs)
    Ha = max(int(g.accepted.sum()) for g in graphs)
    Hr = max(int((~g.accepted).sum()) for g in graphs)
    ids = np.full((B, N), -1, dtype=np.int64)
    nmask = np.zeros((B, N), dtype=bool)
    A_acc, A_rej = np.zeros((B, N, Ha), dtype), np.zeros((B, N, Hr), dtype)
    D_acc, D_rej = np.ones((B, Ha), dtype), np.ones((B, Hr), dtype)
    m_acc, m_rej = np.zeros((B, Ha), dtype=bool), np.zeros((B, Hr), dtype=bool)
    for b, g in enumerate(graphs):
        n = g.n_nodes
        ids[b, :n] = g.nodes
        nmask[b, :n] = True
        acc, rej = np.flatnonzero(g.accepted), np.flatnonzero(~g.accepted)
        A_acc[b, :n, : len(acc)] = g.incidence[:, acc]
        A_rej[b, :n, : len(rej)] = g.incidence[:, rej]
        D_acc[b, : len(acc)] = g.degrees[acc]
        D_rej[b, : len(rej)] = g.degrees[rej]
        m_acc[b, : len(acc)] = True
        m_rej[b, : len(rej)] = True
    return GraphBatch(ids, nmask, A_acc, A_rej, D_acc, D_rej, m_acc, m_rej, list(graphs))


def node_embeddings(batch: GraphBatch, emb: np.ndarray) -> np.ndarray:
    E = emb[np.maximum(batch.node_ids, 0)]
    return E * batch.node_mask[..., None]


# --------------------------------------------------------------------------
# message passing


def hyperedge_aggregate(A, D, E, W_n) -> Tensor:
    """Node -> hyperedge: ``D^-1 A^T E W_n`` (batched over a leading axis)."""
    A = A if isinstance(A, Tensor) else Tensor(np.asarray(A))
    E = E if isinstance(E, Tensor) else Tensor(np.asarray(E))
    if A.shape[-2] != E.shape[-2]:
        raise ShapeError(f"incidence has {A.shape[-2]} node rows, embeddings {E.shape[-2]}")
    if E.shape[-1] != W_n.shape[0]:
        raise ShapeError(f"embedding width {E.shape[-1]} != W_n rows {W_n.shape[0]}")
    inv_d = Tensor((1.0 / np.asarray(D, dtype=A.dtype))[..., None])
    # (A^T E) W_n: the hyperedge count is far below the node count.
    return ((A.T @ E) @ W_n) * inv_d


def hyperedge_interact(H_acc: Tensor, H_rej: Tensor, layer_params: dict, heads: int = 1, mask_acc=None, mask_rej=None, residual: bool = False):
    """Self-attention within each channel, with separate parameters per channel."""
    out = []
    for H, ch, mask in ((H_acc, "acc", mask_acc), (H_rej, "rej", mask_rej)):
        if H.shape[-2] == 0:
            out.append(H)
            continue
        Y = multi_head_self_attention(H, _sub(layer_params, f"{ch}."), heads=heads, key_mask=mask)
        out.append(Y + H if residual else Y)
    return tuple(out)


def refine_nodes(A_acc, A_rej, H_acc: Tensor, H_rej: Tensor) -> Tensor:
    """Hyperedge -> node: ``ReLU(A H)`` with the two channels summed."""
    A_acc = A_acc if isinstance(A_acc, Tensor) else Tensor(np.asarray(A_acc, dtype=H_acc.dtype))
    A_rej = A_rej if isinstance(A_rej, Tensor) else Tensor(np.asarray(A_rej, dtype=H_acc.dtype))
    if A_acc.shape[-1] != H_acc.shape[-2] or A_rej.shape[-1] != H_rej.shape[-2]:
        raise ShapeError("incidence columns do not match hyperedge rows")
    return relu(A_acc @ H_acc + A_rej @ H_rej)


def connectivity_state(gammas: Sequence[Tensor]) -> Tensor:
    """Sum of the user row (row 0) over layers."""
    if not gammas:
        raise ValueError("need at least one layer")
    total = gammas[0][..., 0, :]
    for g in gammas[1:]:
        total = total + g[..., 0, :]
    return total


def propagate_edges(batch: GraphBatch, E: np.ndarray, params: dict, config: EncoderConfig) -> list[tuple[Tensor, Tensor]]:
    """Hyperedge states ``(H_acc, H_rej)`` after each attention layer."""
    dt = params["W_n"].dtype
    Et = Tensor(E.astype(dt))
    A_acc, A_rej = Tensor(batch.A_acc.astype(dt)), Tensor(batch.A_rej.astype(dt))
    H_acc = hyperedge_aggregate(A_acc, batch.D_acc, Et, params["W_n"])
    H_rej = hyperedge_aggregate(A_rej, batch.D_rej, Et, params["W_n"])
    out = []
    for layer in range(config.layers):
        H_acc, H_rej = hyperedge_interact(
            H_acc,
            H_rej,
            _sub(params, f"mhsa.{layer}."),
            config.heads,
            batch.mask_acc,
            batch.mask_rej,
            config.residual,
        )
        out.append((H_acc, H_rej))
    return out


def propagate(batch: GraphBatch, E: np.ndarray, params: dict, config: EncoderConfig) -> list[Tensor]:
    """Per-layer node refinements for every node of every graph."""
    dt = params["W_n"].dtype
    A_acc, A_rej = Tensor(batch.A_acc.astype(dt)), Tensor(batch.A_rej.astype(dt))
    return [refine_nodes(A_acc, A_rej, H_acc, H_rej) for H_acc, H_rej in propagate_edges(batch, E, params, config)]


def refine_rows(batch: GraphBatch, layers, b_idx: np.ndarray, pos: np.ndarray) -> Tensor:
    """``sum_l Gamma_l`` for selected (graph, node-row) pairs only.

    Rows with ``pos < 0`` are nodes outside the graph and get zeros. Same
    values as slicing the full :func:`propagate` output, without paying for
    nodes nobody asks about.
    """
    b_idx = np.asarray(b_idx, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    present = pos >= 0
    safe = np.where(present, pos, 0)
    total = None
    for H_acc, H_rej in layers:
        dt = H_acc.dtype
        z = None
        for H, A in ((H_acc, batch.A_acc), (H_rej, batch.A_rej)):
            if H.shape[-2] == 0:
                continue
            w = (A[b_idx, safe] * present[:, None]).astype(dt)
            part = sum_(Tensor(w[:, :, None]) * H[b_idx], axis=1)
            z = part if z is None else z + part
        g = relu(z)
        total = g if total is None else total + g
    return total


def encode_history(histories: Sequence[Sequence], params: dict, hidden_dim: int | None = None) -> Tensor:
    """GRU fold over event embeddings from a zero state; returns ``(B, hidden)``.

    Shorter histories in the batch stop updating once they run out.
    """
    seqs = [history_events(h) for h in histories]
    hidden = hidden_dim or params["gru.W_h"].shape[0]
    dt = params["gru.W_h"].dtype
    B, T = len(seqs), max((len(s) for s in seqs), default=0)
    h = Tensor(np.zeros((B, hidden), dtype=dt))
    if T == 0:
        return h
    idx = np.zeros((B, T), dtype=np.int64)
    lengths = np.array([len(s) for s in seqs])
    for b, s in enumerate(seqs):
        idx[b, : len(s)] = s
    X = gather(params["event_emb"], idx)
    gru = _sub(params, "gru.")
    for t in range(T):
        h_new = gru_cell(h, X[:, t, :], gru)
        live = (lengths > t).astype(dt)[:, None]
        if live.all():
            h = h_new
        else:
            h = h_new * Tensor(live) + h * Tensor(1.0 - live)
    return h


@dataclass
class EncodedBatch:
    state: Tensor  # (B, state_dim)
    layers: list | None  # per-layer (H_acc, H_rej); None without hypergraph
    batch: GraphBatch
    emb: np.ndarray

    def representations(self, b_idx: np.ndarray, ids: np.ndarray) -> Tensor:
        """Refined representation ``E(n) + sum_l Gamma_l(n)`` for a flat list of
        (row, global node id) queries. Nodes outside the graph keep ``E(n)``."""
        b_idx = np.asarray(b_idx, dtype=np.int64)
        ids = np.asarray(ids, dtype=np.int64)
        dt = self.state.dtype
        base = Tensor(self.emb[ids].astype(dt))
        if self.layers is None or len(ids) == 0:
            return base
        graphs = self.batch.graphs
        pos = np.array([graphs[b].position.get(n, -1) for b, n in zip(b_idx.tolist(), ids.tolist())], dtype=np.int64)
        return base + refine_rows(self.batch, self.layers, b_idx, pos)


def size_bits(states: Sequence[SessionState]) -> np.ndarray:
    counts = np.array([[len(s.v_cand), len(s.p_cand)] for s in states], dtype=np.int64).reshape(-1, 2)
    counts = np.clip(counts, 0, 2**LEN_BITS - 1)
    shifts = np.arange(LEN_BITS - 1, -1, -1)
    bits = (counts[:, :, None] >> shifts) & 1
    return bits.reshape(len(states), 2 * LEN_BITS).astype(np.float64)


def encode_batch(states: Sequence[SessionState], params: dict, emb: np.ndarray, config: EncoderConfig) -> EncodedBatch:
    graphs = [cached_hypergraph(s, config.item_cap) for s in states]
    batch = batch_graphs(graphs)
    E = node_embeddings(batch, emb)
    dt = params["W_n"].dtype
    s_h = encode_history([s.history for s in states], params, config.hidden_dim)
    if config.use_hypergraph:
        layers = propagate_edges(batch, E, params, config)
        s_g = refine_rows(batch, layers, np.arange(len(states)), np.zeros(len(states), dtype=np.int64))
    else:
        counts = batch.node_mask.sum(axis=1, keepdims=True)
        s_g = Tensor((E.sum(axis=1) / counts).astype(dt))
        layers = None
    s_len = Tensor(size_bits(states).astype(dt))
    s = concat([s_h, s_g, s_len], axis=-1)
    return EncodedBatch(s, layers, batch, emb)


def encode_state(state: SessionState, params: dict, emb: np.ndarray, config: EncoderConfig) -> EncodedBatch:
    """Encode a single session (a batch of one)."""
    return encode_batch([state], params, emb, config)
