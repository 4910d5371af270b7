"""Two-level dueling Q-learning agent.

The director scores the two options (ask / recommend); the actor scores the
concrete attributes or items available under the chosen option. The director's
relaxed option probability scales every actor value, which is the only
coupling between the levels. Training alternates between the director loss
and the actor loss on replayed transitions, with double-Q targets.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .encoder import EncodedBatch, EncoderConfig, encode_batch, init_encoder
from .env import REC_SIZE, AgentMove, OptionKind, SessionState, rank_items
from .numcore import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    init_mlp,
    mean,
    reshape,
    softmax,
)
from .numcore.tensor import relu

OPTIONS = (OptionKind.ASK, OptionKind.REC)
ASK, REC = 0, 1


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.999
    tau: float = 0.3
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 1e-6
    target_sync: int = 100
    eps_start: float = 1.0
    eps_end: float = 0.01
    eps_steps: int = 10_000
    rec_size: int = REC_SIZE
    buffer_capacity: int = 50_000
    head_hidden: int = 100
    option_dim: int = 64
    hierarchy: bool = True
    hypergraph: bool = True
    gumbel: bool = True
    intrinsic: bool = True
    mean_advantage: bool = False
    director_updates_encoder: bool = True
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def validate(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.batch_size < 1 or self.target_sync < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size, target_sync and buffer_capacity must be positive")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if self.rec_size < 1:
            raise ValueError("rec_size must be positive")
        self.encoder.validate()

    @property
    def encoder_config(self) -> EncoderConfig:
        return replace(self.encoder, use_hypergraph=self.hypergraph)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "AgentConfig":
        d = dict(d)
        enc = EncoderConfig(**d.pop("encoder", {}))
        known = set(AgentConfig.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown agent config keys: {sorted(unknown)}")
        return AgentConfig(encoder=enc, **d)


def epsilon_at(step: int, config: AgentConfig) -> float:
    """Linear anneal from eps_start to eps_end over eps_steps environment steps."""
    if config.eps_steps <= 0:
        return config.eps_end
    frac = min(max(step, 0) / config.eps_steps, 1.0)
    return config.eps_start + frac * (config.eps_end - config.eps_start)


# --------------------------------------------------------------------------
# networks

HEADS = ("dir_v", "dir_a", "act_v", "act_a")


def init_policy(rng: np.random.Generator, config: AgentConfig, dtype=np.float32) -> dict[str, Tensor]:
    config.validate()
    enc = config.encoder_config
    params = {f"enc.{k}": v for k, v in init_encoder(rng, enc, dtype).items()}
    S, d, h = enc.state_dim, enc.embed_dim, config.head_hidden
    sizes = {"dir_v": [S, h, 1], "dir_a": [S + config.option_dim, h, 1], "act_v": [S, h, 1], "act_a": [S + d, h, 1]}
    for name in HEADS:
        for i, layer in enumerate(init_mlp(rng, sizes[name], dtype)):
            params[f"{name}.{i}.W"] = layer["W"]
            params[f"{name}.{i}.b"] = layer["b"]
    params["opt_emb"] = Tensor(rng.normal(0, 0.1, size=(2, config.option_dim)).astype(dtype), requires_grad=True)
    return params


def clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in params.items()}


def _layers(params: dict, name: str) -> list[dict]:
    out, i = [], 0
    while f"{name}.{i}.W" in params:
        out.append({"W": params[f"{name}.{i}.W"], "b": params[f"{name}.{i}.b"]})
        i += 1
    return out


def _enc_params(params: dict) -> dict:
    return {k[4:]: v for k, v in params.items() if k.startswith("enc.")}


def _run(x: Tensor, layers: list[dict], start: int = 0) -> Tensor:
    for i in range(start, len(layers)):
        x = x @ layers[i]["W"] + layers[i]["b"]
        if i < len(layers) - 1:
            x = relu(x)
    return x


def value_head(s: Tensor, params: dict, name: str) -> Tensor:
    """``f_V(s)`` as a ``(B,)`` vector."""
    out = _run(s, _layers(params, name))
    return reshape(out, (out.shape[0],))


def advantage_head(s: Tensor, reps: Tensor, rows: np.ndarray, params: dict, name: str) -> Tensor:
    """``f_A(s[rows[q]], reps[q])`` for every query ``q``.

    Same as running the MLP on the concatenation ``s | rep``: the first layer's
    weight is split so the state half is computed once per row.
    """
    layers = _layers(params, name)
    W, b = layers[0]["W"], layers[0]["b"]
    S = s.shape[-1]
    hs = s @ W[:S]
    x = hs[np.asarray(rows, dtype=np.int64)] + reps @ W[S:] + b
    if len(layers) > 1:
        x = _run(relu(x), layers, 1)
    return reshape(x, (x.shape[0],))


@dataclass
class PolicyNetworks:
    online: dict[str, Tensor]
    target: dict[str, Tensor]
    config: AgentConfig
    emb: np.ndarray

    @staticmethod
    def create(config: AgentConfig, emb: np.ndarray, seed: int = 0, dtype=np.float32) -> "PolicyNetworks":
        rng = np.random.default_rng(seed)
        online = init_policy(rng, config, dtype)
        return PolicyNetworks(online, clone_params(online), config, np.asarray(emb, dtype=dtype))

    def sync_target(self) -> None:
        self.target = clone_params(self.online)

    def encode(self, states: Sequence[SessionState], which: str = "online") -> EncodedBatch:
        params = self.online if which == "online" else self.target
        return encode_batch(states, _enc_params(params), self.emb, self.config.encoder_config)


# --------------------------------------------------------------------------
# director


def director_q(s: Tensor, params: dict, config: AgentConfig) -> Tensor:
    """``Q_o = f_V(s) + f_A(s, o)`` for both options, shape ``(B, 2)``."""
    B = s.shape[0]
    v = value_head(s, params, "dir_v")
    rows = np.repeat(np.arange(B), 2)
    reps = params["opt_emb"][np.tile([0, 1], B)]
    a = reshape(advantage_head(s, reps, rows, params, "dir_a"), (B, 2))
    if config.mean_advantage:
        a = a - mean(a, axis=1, keepdims=True)
    return reshape(v, (B, 1)) + a


def option_probabilities(q_o) -> np.ndarray:
    q = np.asarray(q_o, dtype=np.float64)
    z = np.exp(q - q.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0)
    return -np.log(-np.log(u))


def gumbel_relaxation(P, tau: float, rng: np.random.Generator | None = None, noise=None) -> np.ndarray:
    """``softmax((log P + eps) / tau)`` with fresh Gumbel noise per option."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    P = np.asarray(P, dtype=np.float64)
    if noise is None:
        noise = gumbel_noise(rng, P.shape)
    logits = (np.log(np.maximum(P, 1e-12)) + noise) / tau
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def relaxed_probabilities(q_o: Tensor, noise: np.ndarray, tau: float) -> Tensor:
    """Differentiable ``P*`` from ``Q_o`` and stored noise.

    The log-normalizer of ``softmax(Q_o)`` is shared by both options and
    cancels inside the outer softmax, so ``P* = softmax((Q_o + eps) / tau)``.
    """
    return softmax((q_o + Tensor(noise.astype(q_o.dtype))) * (1.0 / tau))


@dataclass
class OptionChoice:
    option: int
    p_star: np.ndarray
    noise: np.ndarray | None
    forced: bool = False
    explored: bool = False


def select_option(q_o: np.ndarray, can_ask: bool, config: AgentConfig, rng: np.random.Generator, mode: str = "greedy", eps: float = 0.0) -> OptionChoice:
    q_o = np.asarray(q_o, dtype=np.float64).reshape(2)
    if mode == "greedy" or not config.gumbel:
        option = int(np.argmax(q_o))
        noise, p_star = None, np.eye(2)[option]
    else:
        noise = gumbel_noise(rng, 2)
        p_star = gumbel_relaxation(option_probabilities(q_o), config.tau, noise=noise)
        option = int(np.argmax(p_star))
    explored = False
    if mode == "train" and eps > 0 and rng.random() < eps:
        option = int(rng.integers(2))
        explored = True
    forced = not can_ask and option == ASK
    if forced:
        option = REC
    return OptionChoice(option, p_star, noise, forced, explored)


# --------------------------------------------------------------------------
# actor


@dataclass
class Candidates:
    """Flattened (row, kind, id) queries for a batch of states."""

    rows: np.ndarray
    node_ids: np.ndarray
    ids: np.ndarray  # attribute or item ids
    is_item: np.ndarray


def candidate_queries(states: Sequence[SessionState], options: Sequence[int | None]) -> Candidates:
    """Candidates per row: attributes for ask, items for rec, both for None."""
    rows, nodes, ids, items = [], [], [], []
    for b, (st, o) in enumerate(zip(states, options)):
        cat = st.catalog
        if o in (ASK, None):
            for p in sorted(st.p_cand):
                rows.append(b), nodes.append(cat.attribute_node(p)), ids.append(p), items.append(False)
        if o in (REC, None):
            for v in sorted(st.v_cand):
                rows.append(b), nodes.append(cat.item_node(v)), ids.append(v), items.append(True)
    return Candidates(
        np.array(rows, dtype=np.int64),
        np.array(nodes, dtype=np.int64),
        np.array(ids, dtype=np.int64),
        np.array(items, dtype=bool),
    )


def _segment_mean(values: Tensor, rows: np.ndarray, n_rows: int) -> Tensor:
    S = np.zeros((n_rows, len(rows)), dtype=values.dtype)
    S[rows, np.arange(len(rows))] = 1.0
    S /= np.maximum(S.sum(axis=1, keepdims=True), 1.0)
    return Tensor(S) @ values


def actor_q(enc: EncodedBatch, params: dict, cands: Candidates, config: AgentConfig, p_star=None) -> Tensor:
    """``Q_a = P*(s, o) * (f_V(s) + f_A(s, r(a)))`` for each flattened candidate.

    ``p_star`` is a per-query scale (Tensor or array); ``None`` means 1.
    """
    s = enc.state
    reps = enc.representations(cands.rows, cands.node_ids)
    v = value_head(s, params, "act_v")
    a = advantage_head(s, reps, cands.rows, params, "act_a")
    if config.mean_advantage and len(cands.rows):
        a = a - _segment_mean(a, cands.rows, s.shape[0])[cands.rows]
    q = v[cands.rows] + a
    if p_star is not None:
        q = q * (p_star if isinstance(p_star, Tensor) else Tensor(np.asarray(p_star, dtype=q.dtype)))
    return q


def rank_actions(ids: np.ndarray, q: np.ndarray) -> list[int]:
    """Descending Q, ties by ascending id."""
    return rank_items(list(zip(ids.tolist(), np.asarray(q, dtype=np.float64).tolist())))


def select_action(q_map: dict, option: int, k: int, rng: np.random.Generator, mode: str = "greedy", eps: float = 0.0) -> AgentMove:
    """Argmax attribute for ask, top-k items for rec; uniform pick under exploration."""
    if not q_map:
        raise ValueError("no candidate actions")
    ranked = rank_items(q_map)
    explore = mode == "train" and eps > 0 and rng.random() < eps
    if option == ASK:
        pick = ranked[int(rng.integers(len(ranked)))] if explore else ranked[0]
        return AgentMove.ask(pick)
    if explore:
        chosen = rng.permutation(len(ranked))[: min(k, len(ranked))]
        return AgentMove.rec(ranked[i] for i in sorted(chosen))
    return AgentMove.rec(ranked[:k])


@dataclass
class Decision:
    move: AgentMove
    ranking: list[int]  # actor's ordering of every candidate item
    option: int
    p_star: np.ndarray
    noise: np.ndarray | None
    q_o: np.ndarray | None = None


def act(nets: PolicyNetworks, state: SessionState, rng: np.random.Generator, mode: str = "greedy", eps: float = 0.0) -> Decision:
    """One full decision for a live session."""
    cfg = nets.config
    enc = nets.encode([state])
    cands = candidate_queries([state], [None])
    q = actor_q(enc, nets.online, cands, cfg).data
    items = cands.is_item
    item_q = dict(zip(cands.ids[items].tolist(), q[items].tolist()))
    attr_q = dict(zip(cands.ids[~items].tolist(), q[~items].tolist()))
    ranking = rank_items(item_q)
    if not cfg.hierarchy:
        return _act_flat(cfg, attr_q, item_q, ranking, rng, mode, eps)
    q_o = director_q(enc.state, nets.online, cfg).data[0]
    choice = select_option(q_o, bool(state.p_cand), cfg, rng, mode, eps)
    # P* is a positive scale, so it never changes which action wins.
    move = select_action(attr_q if choice.option == ASK else item_q, choice.option, cfg.rec_size, rng, mode, eps)
    return Decision(move, ranking, choice.option, choice.p_star, choice.noise, q_o)


def flat_values(attr_q: dict, item_q: dict, k: int) -> tuple[dict, float, list[int]]:
    """Unified action values: one per attribute plus a single recommend action
    worth the mean of the top-k items."""
    top = rank_items(item_q)[:k]
    rec_value = float(np.mean([item_q[v] for v in top])) if top else -np.inf
    return attr_q, rec_value, top


def _act_flat(cfg, attr_q, item_q, ranking, rng, mode, eps) -> Decision:
    attr_q, rec_value, top = flat_values(attr_q, item_q, cfg.rec_size)
    best_attr = max(attr_q.values()) if attr_q else -np.inf
    explore = mode == "train" and eps > 0 and rng.random() < eps
    if explore:
        n = len(attr_q) + 1
        pick = int(rng.integers(n))
        option = REC if pick == n - 1 else ASK
        if option == ASK:
            move = AgentMove.ask(sorted(attr_q)[pick])
        else:
            move = select_action(item_q, REC, cfg.rec_size, rng, mode, eps)
    else:
        option = ASK if best_attr > rec_value else REC
        move = AgentMove.ask(rank_items(attr_q)[0]) if option == ASK else AgentMove.rec(top)
    return Decision(move, ranking, option, np.eye(2)[option], None)


# --------------------------------------------------------------------------
# replay


@dataclass(frozen=True)
class TransitionRecord:
    state: SessionState
    option: int
    move: AgentMove
    r_option: float
    r_action: float
    next_state: SessionState
    done: bool
    noise: np.ndarray | None = None  # Gumbel draw behind P* at decision time

    def next_candidates(self) -> dict[int, tuple]:
        return {ASK: tuple(sorted(self.next_state.p_cand)), REC: tuple(sorted(self.next_state.v_cand))}

    def __post_init__(self):
        if not (np.isfinite(self.r_option) and np.isfinite(self.r_action)):
            raise ValueError("non-finite reward")


class ReplayBuffer:
    """Fixed-capacity FIFO ring sampled uniformly with replacement."""

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list = []
        self._start = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, record) -> None:
        if len(self._items) < self.capacity:
            self._items.append(record)
        else:
            self._items[self._start] = record
            self._start = (self._start + 1) % self.capacity

    def __iter__(self):
        n = len(self._items)
        for i in range(n):
            yield self._items[(self._start + i) % n]

    def sample(self, n: int, rng: np.random.Generator) -> list:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(len(self._items), size=n)
        return [self._items[i] for i in idx]


# --------------------------------------------------------------------------
# targets and losses


def _greedy_option(q_o: np.ndarray, state: SessionState) -> int:
    o = int(np.argmax(q_o))
    return REC if (o == ASK and not state.p_cand) else o


def _row_groups(cands: Candidates, n: int) -> list[np.ndarray]:
    order = np.argsort(cands.rows, kind="stable")
    bounds = np.searchsorted(cands.rows[order], np.arange(n + 1))
    return [order[bounds[b] : bounds[b + 1]] for b in range(n)]


def _greedy_action_value(ids, is_item, q_sel, q_eval, k) -> float:
    """Pick with ``q_sel`` (online), value with ``q_eval`` (target)."""
    if len(ids) == 0:
        raise ValueError("no candidate actions for bootstrap")
    order = rank_actions(np.arange(len(ids)), q_sel)
    if is_item.all():
        top = order[:k]
        return float(np.mean(q_eval[top]))
    return float(q_eval[order[0]])


def compute_targets(records: Sequence[TransitionRecord], nets: PolicyNetworks, config: AgentConfig | None = None, which: str = "both"):
    """Double-Q targets ``(y_o, y_a)``.

    The online networks choose the next option (greedy, P* one-hot) and the
    next action within that option; the target networks evaluate them.
    Terminal records bootstrap nothing.
    """
    cfg = config or nets.config
    n = len(records)
    r_o = np.array([r.r_option if cfg.intrinsic else r.r_action for r in records], dtype=np.float64)
    r_a = np.array([r.r_action for r in records], dtype=np.float64)
    y_o, y_a = r_o.copy(), r_a.copy()
    live = [i for i, r in enumerate(records) if not r.done]
    if not live:
        return y_o, y_a
    nxt = [records[i].next_state for i in live]
    enc_on = nets.encode(nxt, "online")
    enc_tg = nets.encode(nxt, "target")
    if not cfg.hierarchy:
        cands = candidate_queries(nxt, [None] * len(nxt))
        q_on = actor_q(enc_on, nets.online, cands, cfg).data.astype(np.float64)
        q_tg = actor_q(enc_tg, nets.target, cands, cfg).data.astype(np.float64)
        for j, idx in enumerate(_row_groups(cands, len(nxt))):
            val = _flat_bootstrap(cands, idx, q_on, q_tg, cfg.rec_size)
            y_a[live[j]] += cfg.gamma * val
            y_o[live[j]] += cfg.gamma * val
        return y_o, y_a
    qo_on = director_q(enc_on.state, nets.online, cfg).data.astype(np.float64)
    qo_tg = director_q(enc_tg.state, nets.target, cfg).data.astype(np.float64)
    opts = [_greedy_option(qo_on[j], st) for j, st in enumerate(nxt)]
    for j, i in enumerate(live):
        y_o[i] += cfg.gamma * qo_tg[j, opts[j]]
    if which == "director":
        return y_o, y_a
    cands = candidate_queries(nxt, opts)
    q_on = actor_q(enc_on, nets.online, cands, cfg).data.astype(np.float64)
    q_tg = actor_q(enc_tg, nets.target, cands, cfg).data.astype(np.float64)
    for j, idx in enumerate(_row_groups(cands, len(nxt))):
        val = _greedy_action_value(cands.ids[idx], cands.is_item[idx], q_on[idx], q_tg[idx], cfg.rec_size)
        y_a[live[j]] += cfg.gamma * val
    return y_o, y_a


def _flat_bootstrap(cands, idx, q_on, q_tg, k) -> float:
    items = cands.is_item[idx]
    a_idx, i_idx = idx[~items], idx[items]
    best_attr = (-np.inf, None)
    if len(a_idx):
        j = rank_actions(np.arange(len(a_idx)), q_on[a_idx])[0]
        best_attr = (q_on[a_idx][j], q_tg[a_idx][j])
    rec = (-np.inf, None)
    if len(i_idx):
        top = rank_actions(np.arange(len(i_idx)), q_on[i_idx])[:k]
        rec = (float(np.mean(q_on[i_idx][top])), float(np.mean(q_tg[i_idx][top])))
    return best_attr[1] if best_attr[0] > rec[0] else rec[1]


def _taken_queries(records: Sequence[TransitionRecord]) -> tuple[Candidates, np.ndarray]:
    """Queries for the executed action(s) and the averaging matrix that turns
    them into one value per record (a recommendation is worth the mean of its
    items)."""
    rows, nodes, ids, items = [], [], [], []
    for b, r in enumerate(records):
        cat = r.state.catalog
        if r.move.option is OptionKind.ASK:
            rows.append(b), nodes.append(cat.attribute_node(r.move.payload)), ids.append(r.move.payload), items.append(False)
        else:
            for v in r.move.payload:
                rows.append(b), nodes.append(cat.item_node(v)), ids.append(v), items.append(True)
    c = Candidates(np.array(rows, dtype=np.int64), np.array(nodes, dtype=np.int64), np.array(ids, dtype=np.int64), np.array(items, dtype=bool))
    avg = np.zeros((len(records), len(rows)))
    avg[c.rows, np.arange(len(rows))] = 1.0
    avg /= avg.sum(axis=1, keepdims=True)
    return c, avg


def director_loss(records, nets: PolicyNetworks, y_o: np.ndarray) -> Tensor:
    cfg = nets.config
    enc = nets.encode([r.state for r in records])
    q_o = director_q(enc.state, nets.online, cfg)
    opts = np.array([r.option for r in records])
    q = q_o[np.arange(len(records)), opts]
    diff = q - Tensor(y_o.astype(q.dtype))
    return mean(diff * diff)


def actor_loss(records, nets: PolicyNetworks, y_a: np.ndarray) -> Tensor:
    cfg = nets.config
    enc = nets.encode([r.state for r in records])
    cands, avg = _taken_queries(records)
    p_star = None
    if cfg.hierarchy:
        q_o = director_q(enc.state, nets.online, cfg)
        opts = np.array([r.option for r in records])
        if cfg.gumbel:
            noise = np.stack([r.noise if r.noise is not None else _hard_noise(r.option) for r in records])
            rel = relaxed_probabilities(q_o, noise, cfg.tau)
        else:
            rel = Tensor(np.eye(2, dtype=q_o.dtype)[opts])
        p_star = rel[np.arange(len(records)), opts][cands.rows]
    q = actor_q(enc, nets.online, cands, cfg, p_star)
    q_rec = Tensor(avg.astype(q.dtype)) @ q
    diff = q_rec - Tensor(y_a.astype(q.dtype))
    return mean(diff * diff)


def _hard_noise(option: int) -> np.ndarray:
    # Records chosen without a Gumbel draw (greedy) carry a one-hot-like P*.
    out = np.zeros(2)
    out[option] = 1e6
    return out


DIRECTOR_GROUP = ("enc.", "dir_v.", "dir_a.", "opt_emb")
ACTOR_GROUP = ("enc.", "act_v.", "act_a.", "dir_v.", "dir_a.", "opt_emb")


def param_group(params: dict, prefixes) -> list[str]:
    return [k for k in params if k.startswith(tuple(prefixes))]


@dataclass
class Trainer:
    nets: PolicyNetworks
    buffer: ReplayBuffer
    optimizer: AdamState
    rng: np.random.Generator
    grad_steps: int = 0

    @staticmethod
    def create(nets: PolicyNetworks, seed: int = 0) -> "Trainer":
        cfg = nets.config
        return Trainer(
            nets,
            ReplayBuffer(cfg.buffer_capacity),
            AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay),
            np.random.default_rng(seed),
        )

    def train_step(self) -> float | None:
        """One alternating update; ``None`` while the buffer is below a batch."""
        cfg = self.nets.config
        if len(self.buffer) < cfg.batch_size:
            return None
        batch = self.buffer.sample(cfg.batch_size, self.rng)
        director_turn = cfg.hierarchy and self.grad_steps % 2 == 0
        y_o, y_a = compute_targets(batch, self.nets, cfg, which="director" if director_turn else "both")
        with Tape() as tape:
            loss = director_loss(batch, self.nets, y_o) if director_turn else actor_loss(batch, self.nets, y_a)
        grads = backward(tape, loss)
        if director_turn:
            prefixes = DIRECTOR_GROUP if cfg.director_updates_encoder else DIRECTOR_GROUP[1:]
        else:
            prefixes = ACTOR_GROUP
        names = set(param_group(self.nets.online, prefixes))
        by_tensor = {id(t): k for k, t in self.nets.online.items() if k in names}
        update = {by_tensor[id(t)]: g for t, g in grads.items() if id(t) in by_tensor}
        adam_step(self.nets.online, update, self.optimizer)
        self.grad_steps += 1
        if self.grad_steps % cfg.target_sync == 0:
            self.nets.sync_target()
        return loss.item()
