"""Sentence/graph encoder with exact hand-derived gradients.

Pipeline: word embeddings -> two unidirectional LSTMs (their final hidden
sequences concatenated per position) -> a fixed number of recurrent updates
over the labeled dependency graph -> mean-pooled mention states -> linear
softmax heads for the relation and (optionally) per-token NE tags.

The graph update at each step sums, for every word, incoming messages from its
dependents (child state + label embedding) and from its heads (head state +
reversed-label embedding), then applies an LSTM-style gated cell update.  When
confidence weighting is on, each message is scaled by the arc's probability;
those scalars are constants and receive no gradient.  ROOT-anchored arcs never
enter the graph.

Everything is float64 numpy.  ``backward`` consumes the trace recorded by
``forward_instance`` and returns exact reverse-mode gradients for every
parameter tensor; message summation follows the canonical edge order so equal
inputs reproduce bitwise-equal outputs.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .core import DependencyForest, LabelVocab, Sentence, UNK_TOKEN

STRUCTURES = ("textonly", "tree", "forest")

_GATES = ("in", "out", "forget", "cand")


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and switches of the encoder.

    ``dim_hidden`` is the size of one LSTM direction; graph states have twice
    that size and are consumed by the graph update without any projection.
    """

    dim_word: int = 100
    dim_label: int = 32
    dim_hidden: int = 100
    steps: int = 2
    dropout: float = 0.1
    weighted: bool = False
    ner_head: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.dim_word, self.dim_label, self.dim_hidden) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def dim_state(self) -> int:
        return 2 * self.dim_hidden


class ModelParams:
    """Named float64 tensors with a fixed iteration order."""

    def __init__(self, tensors: dict[str, np.ndarray]) -> None:
        self.tensors = {name: np.asarray(t, dtype=np.float64) for name, t in tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self) -> list[str]:
        return list(self.tensors)

    def items(self) -> Iterable[tuple[str, np.ndarray]]:
        return self.tensors.items()

    def copy(self) -> "ModelParams":
        return ModelParams({name: t.copy() for name, t in self.tensors.items()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(t) for name, t in self.tensors.items()}

    def param_count(self) -> int:
        return sum(t.size for t in self.tensors.values())


def init_params(
    config: ModelConfig, vocab: LabelVocab, num_words: int
) -> ModelParams:
    """Seeded initialization; creation order is fixed so results are reproducible.

    Matrices use uniform Glorot ranges, biases start at zero, embeddings are
    small uniform.
    """
    rng = np.random.default_rng(config.seed)
    dw, dl, dr = config.dim_word, config.dim_label, config.dim_hidden
    ds = config.dim_state

    def glorot(rows: int, cols: int) -> np.ndarray:
        bound = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-bound, bound, size=(rows, cols))

    tensors: dict[str, np.ndarray] = {}
    tensors["word_emb"] = rng.uniform(-0.1, 0.1, size=(num_words, dw))
    tensors["label_emb"] = rng.uniform(-0.1, 0.1, size=(2 * vocab.num_dep_labels, dl))
    for direction in ("l", "r"):
        tensors[f"lstm_{direction}.Wx"] = glorot(4 * dr, dw)
        tensors[f"lstm_{direction}.Wh"] = glorot(4 * dr, dr)
        tensors[f"lstm_{direction}.b"] = np.zeros(4 * dr)
    for gate in _GATES:
        tensors[f"grn.Wup_{gate}"] = glorot(ds, ds + dl)
        tensors[f"grn.Wdn_{gate}"] = glorot(ds, ds + dl)
        tensors[f"grn.b_{gate}"] = np.zeros(ds)
    tensors["cls.W"] = glorot(len(vocab.relations), 2 * ds)
    tensors["cls.b"] = np.zeros(len(vocab.relations))
    if config.ner_head:
        tensors["ner.W"] = glorot(len(vocab.ne_tags), ds)
        tensors["ner.b"] = np.zeros(len(vocab.ne_tags))
    return ModelParams(tensors)


class GraphEdge(NamedTuple):
    """A word-to-word arc prepared for message passing."""

    head: int
    modifier: int
    fwd_row: int
    rev_row: int
    prob: float


@dataclass(frozen=True)
class EncoderGraph:
    n: int
    edges: tuple[GraphEdge, ...]


def build_gnn_graph(forest: DependencyForest, vocab: LabelVocab) -> EncoderGraph:
    """Drop ROOT-anchored arcs and resolve label embedding rows.

    Forest edges are already deduplicated and canonically ordered, which fixes
    the message summation order.
    """
    num = vocab.num_dep_labels
    edges = tuple(
        GraphEdge(e.head, e.modifier, vocab.dep_index(e.label), num + vocab.dep_index(e.label), e.prob)
        for e in forest.edges
        if e.head != 0
    )
    return EncoderGraph(forest.n, edges)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def embed(params: ModelParams, token_ids: np.ndarray) -> np.ndarray:
    """Row lookup into the word embedding table (ids already UNK-resolved)."""
    return params["word_emb"][token_ids]


@dataclass
class _LstmCache:
    x: np.ndarray
    gate_in: np.ndarray
    gate_forget: np.ndarray
    gate_out: np.ndarray
    cand: np.ndarray
    cell: np.ndarray
    hidden: np.ndarray
    reverse: bool


def _lstm_forward(
    wx: np.ndarray, wh: np.ndarray, b: np.ndarray, inputs: np.ndarray, reverse: bool
) -> _LstmCache:
    n = inputs.shape[0]
    dr = wh.shape[1]
    gi = np.empty((n, dr))
    gf = np.empty((n, dr))
    go = np.empty((n, dr))
    gu = np.empty((n, dr))
    cell = np.empty((n, dr))
    hidden = np.empty((n, dr))
    h = np.zeros(dr)
    c = np.zeros(dr)
    order = range(n - 1, -1, -1) if reverse else range(n)
    for t in order:
        z = wx @ inputs[t] + wh @ h + b
        gi[t] = _sigmoid(z[:dr])
        gf[t] = _sigmoid(z[dr : 2 * dr])
        go[t] = _sigmoid(z[2 * dr : 3 * dr])
        gu[t] = np.tanh(z[3 * dr :])
        c = gf[t] * c + gi[t] * gu[t]
        h = go[t] * np.tanh(c)
        cell[t] = c
        hidden[t] = h
    return _LstmCache(inputs, gi, gf, go, gu, cell, hidden, reverse)


def _lstm_backward(
    wx: np.ndarray, wh: np.ndarray, cache: _LstmCache, d_hidden: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n, dr = cache.hidden.shape
    d_wx = np.zeros_like(wx)
    d_wh = np.zeros_like(wh)
    d_b = np.zeros(4 * dr)
    d_x = np.zeros_like(cache.x)
    dh_carry = np.zeros(dr)
    dc_carry = np.zeros(dr)
    order = range(n) if cache.reverse else range(n - 1, -1, -1)
    zeros = np.zeros(dr)
    for t in order:
        prev = t + 1 if cache.reverse else t - 1
        first = (prev == n) if cache.reverse else (prev < 0)
        c_prev = zeros if first else cache.cell[prev]
        h_prev = zeros if first else cache.hidden[prev]
        gi, gf, go, gu = cache.gate_in[t], cache.gate_forget[t], cache.gate_out[t], cache.cand[t]
        dh = d_hidden[t] + dh_carry
        tc = np.tanh(cache.cell[t])
        d_go = dh * tc
        dc = dc_carry + dh * go * (1.0 - tc * tc)
        d_gf = dc * c_prev
        d_gi = dc * gu
        d_gu = dc * gi
        dz = np.concatenate(
            [
                d_gi * gi * (1.0 - gi),
                d_gf * gf * (1.0 - gf),
                d_go * go * (1.0 - go),
                d_gu * (1.0 - gu * gu),
            ]
        )
        d_wx += np.outer(dz, cache.x[t])
        d_wh += np.outer(dz, h_prev)
        d_b += dz
        d_x[t] += dz @ wx
        dh_carry = dz @ wh
        dc_carry = dc * gf
    return d_wx, d_wh, d_b, d_x


def bilstm_forward(
    params: ModelParams, emb: np.ndarray
) -> tuple[np.ndarray, _LstmCache, _LstmCache]:
    """Run both directions over the embedded sentence.

    Returns the per-position concatenation [right-to-left state; left-to-right
    state] plus the two direction caches.
    """
    left = _lstm_forward(
        params["lstm_l.Wx"], params["lstm_l.Wh"], params["lstm_l.b"], emb, reverse=True
    )
    right = _lstm_forward(
        params["lstm_r.Wx"], params["lstm_r.Wh"], params["lstm_r.b"], emb, reverse=False
    )
    return np.concatenate([left.hidden, right.hidden], axis=1), left, right


def compute_messages(
    h_states: np.ndarray,
    label_emb: np.ndarray,
    graph: EncoderGraph,
    weighted: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-word sums of incoming messages from dependents and from heads.

    A word's dependent message stacks the dependent's state with the arc
    label's embedding; its head message stacks the head's state with the
    reversed label's embedding.  Edges are visited in canonical order, so the
    sums are bitwise reproducible.
    """
    n, ds = h_states.shape
    dl = label_emb.shape[1]
    m_dep = np.zeros((n, ds + dl))
    m_head = np.zeros((n, ds + dl))
    for e in graph.edges:
        w = e.prob if weighted else 1.0
        m_dep[e.head - 1, :ds] += w * h_states[e.modifier - 1]
        m_dep[e.head - 1, ds:] += w * label_emb[e.fwd_row]
        m_head[e.modifier - 1, :ds] += w * h_states[e.head - 1]
        m_head[e.modifier - 1, ds:] += w * label_emb[e.rev_row]
    return m_dep, m_head


@dataclass
class GrnStepCache:
    h_prev: np.ndarray
    c_prev: np.ndarray
    m_dep: np.ndarray
    m_head: np.ndarray
    gate_in: np.ndarray
    gate_out: np.ndarray
    gate_forget: np.ndarray
    cand: np.ndarray
    cell: np.ndarray


def grn_step(
    params: ModelParams,
    h_prev: np.ndarray,
    c_prev: np.ndarray,
    m_dep: np.ndarray,
    m_head: np.ndarray,
) -> tuple[np.ndarray, GrnStepCache]:
    """One gated update of all word states from their summed messages."""

    def pre(gate: str) -> np.ndarray:
        return (
            m_dep @ params[f"grn.Wup_{gate}"].T
            + m_head @ params[f"grn.Wdn_{gate}"].T
            + params[f"grn.b_{gate}"]
        )

    gi = _sigmoid(pre("in"))
    go = _sigmoid(pre("out"))
    gf = _sigmoid(pre("forget"))
    gu = np.tanh(pre("cand"))
    cell = gf * c_prev + gi * gu
    h_new = go * np.tanh(cell)
    return h_new, GrnStepCache(h_prev, c_prev, m_dep, m_head, gi, go, gf, gu, cell)


def grn_forward(
    params: ModelParams,
    h0: np.ndarray,
    graph: EncoderGraph,
    steps: int,
    weighted: bool,
) -> tuple[np.ndarray, list[GrnStepCache]]:
    """Iterate the graph update ``steps`` times from zero cells.

    With ``steps == 0`` the input states pass through unchanged.
    """
    h = h0
    c = np.zeros_like(h0)
    caches: list[GrnStepCache] = []
    for _ in range(steps):
        m_dep, m_head = compute_messages(h, params["label_emb"], graph, weighted)
        h, cache = grn_step(params, h, c, m_dep, m_head)
        c = cache.cell
        caches.append(cache)
    return h, caches


def mention_pool(h_states: np.ndarray, span: tuple[int, int]) -> np.ndarray:
    """Mean of the state rows covered by a half-open 1-based span."""
    start, end = span
    if not (1 <= start < end <= h_states.shape[0] + 1):
        raise ValueError(f"span [{start}, {end}) invalid for {h_states.shape[0]} positions")
    return h_states[start - 1 : end - 1].mean(axis=0)


def relation_distribution(
    params: ModelParams, h_first: np.ndarray, h_second: np.ndarray
) -> np.ndarray:
    """Softmax over relations from the two pooled mention states."""
    logits = params["cls.W"] @ np.concatenate([h_first, h_second]) + params["cls.b"]
    return softmax(logits)


def ner_distributions(params: ModelParams, h_states: np.ndarray) -> np.ndarray:
    """Per-token softmax over NE tags; requires the NER head to be present."""
    if "ner.W" not in params:
        raise ValueError("model has no NER head")
    return softmax(h_states @ params["ner.W"].T + params["ner.b"])


@dataclass
class ForwardTrace:
    """Everything ``backward`` needs to replay one instance exactly."""

    token_ids: np.ndarray
    span1: tuple[int, int]
    span2: tuple[int, int]
    graph: EncoderGraph | None
    weighted: bool
    emb: np.ndarray
    emb_mask: np.ndarray | None
    lstm_left: _LstmCache = field(repr=False, default=None)  # type: ignore[assignment]
    lstm_right: _LstmCache = field(repr=False, default=None)  # type: ignore[assignment]
    h0: np.ndarray = None  # type: ignore[assignment]
    grn_caches: list[GrnStepCache] = field(default_factory=list, repr=False)
    h_final: np.ndarray = None  # type: ignore[assignment]
    pooled: np.ndarray = None  # type: ignore[assignment]
    pooled_mask: np.ndarray | None = None
    pooled_dropped: np.ndarray = None  # type: ignore[assignment]
    rel_logits: np.ndarray = None  # type: ignore[assignment]
    rel_log_probs: np.ndarray = None  # type: ignore[assignment]
    rel_probs: np.ndarray = None  # type: ignore[assignment]
    ner_logits: np.ndarray | None = None
    ner_log_probs: np.ndarray | None = None
    ner_probs: np.ndarray | None = None


def forward_instance(
    params: ModelParams,
    config: ModelConfig,
    token_ids: np.ndarray,
    span1: tuple[int, int],
    span2: tuple[int, int],
    graph: EncoderGraph | None,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    """Full forward pass over one instance.

    ``graph=None`` selects the text-only path: mention pooling and the NER head
    read the sequence states directly and the graph update is skipped entirely.
    Inverted dropout is applied to the word embeddings and to the concatenated
    mention vector only when ``train`` is true (``rng`` required then).
    """
    token_ids = np.asarray(token_ids, dtype=np.int64)
    use_dropout = train and config.dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("training-mode forward with dropout needs an rng")
    emb = embed(params, token_ids)
    emb_mask = None
    if use_dropout:
        keep = 1.0 - config.dropout
        emb_mask = (rng.random(emb.shape) < keep) / keep
        emb = emb * emb_mask
    h0, lstm_left, lstm_right = bilstm_forward(params, emb)
    if graph is not None:
        h_final, grn_caches = grn_forward(params, h0, graph, config.steps, config.weighted)
    else:
        h_final, grn_caches = h0, []
    pooled = np.concatenate([mention_pool(h_final, span1), mention_pool(h_final, span2)])
    pooled_mask = None
    pooled_dropped = pooled
    if use_dropout:
        keep = 1.0 - config.dropout
        pooled_mask = (rng.random(pooled.shape) < keep) / keep
        pooled_dropped = pooled * pooled_mask
    rel_logits = params["cls.W"] @ pooled_dropped + params["cls.b"]
    trace = ForwardTrace(
        token_ids=token_ids,
        span1=tuple(span1),
        span2=tuple(span2),
        graph=graph,
        weighted=config.weighted,
        emb=emb,
        emb_mask=emb_mask,
        lstm_left=lstm_left,
        lstm_right=lstm_right,
        h0=h0,
        grn_caches=grn_caches,
        h_final=h_final,
        pooled=pooled,
        pooled_mask=pooled_mask,
        pooled_dropped=pooled_dropped,
        rel_logits=rel_logits,
        rel_log_probs=log_softmax(rel_logits),
        rel_probs=softmax(rel_logits),
    )
    if config.ner_head:
        trace.ner_logits = h_final @ params["ner.W"].T + params["ner.b"]
        trace.ner_log_probs = log_softmax(trace.ner_logits)
        trace.ner_probs = softmax(trace.ner_logits)
    return trace


def backward(
    params: ModelParams,
    config: ModelConfig,
    trace: ForwardTrace,
    d_rel_logits: np.ndarray,
    d_ner_logits: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Exact gradients of every parameter given loss seeds on the head logits.

    Zero seeds produce all-zero gradients.  Arc probabilities used as message
    weights are constants and never receive a gradient.
    """
    grads = params.zero_grads()
    ds = config.dim_state
    dr = config.dim_hidden

    grads["cls.W"] += np.outer(d_rel_logits, trace.pooled_dropped)
    grads["cls.b"] += d_rel_logits
    d_pooled = d_rel_logits @ params["cls.W"]
    if trace.pooled_mask is not None:
        d_pooled = d_pooled * trace.pooled_mask

    n = trace.h_final.shape[0]
    d_h_final = np.zeros((n, ds))
    s1, e1 = trace.span1
    s2, e2 = trace.span2
    d_h_final[s1 - 1 : e1 - 1] += d_pooled[:ds] / (e1 - s1)
    d_h_final[s2 - 1 : e2 - 1] += d_pooled[ds:] / (e2 - s2)

    if d_ner_logits is not None:
        if "ner.W" not in params:
            raise ValueError("NER loss seed given but the model has no NER head")
        grads["ner.W"] += d_ner_logits.T @ trace.h_final
        grads["ner.b"] += d_ner_logits.sum(axis=0)
        d_h_final = d_h_final + d_ner_logits @ params["ner.W"]

    if trace.graph is not None and trace.grn_caches:
        dh = d_h_final
        dc = np.zeros_like(dh)
        d_label = grads["label_emb"]
        for cache in reversed(trace.grn_caches):
            tc = np.tanh(cache.cell)
            d_go = dh * tc
            dc = dc + dh * cache.gate_out * (1.0 - tc * tc)
            d_gf = dc * cache.c_prev
            d_gi = dc * cache.cand
            d_gu = dc * cache.gate_in
            dz = {
                "in": d_gi * cache.gate_in * (1.0 - cache.gate_in),
                "out": d_go * cache.gate_out * (1.0 - cache.gate_out),
                "forget": d_gf * cache.gate_forget * (1.0 - cache.gate_forget),
                "cand": d_gu * (1.0 - cache.cand * cache.cand),
            }
            d_m_dep = np.zeros_like(cache.m_dep)
            d_m_head = np.zeros_like(cache.m_head)
            for gate in _GATES:
                grads[f"grn.Wup_{gate}"] += dz[gate].T @ cache.m_dep
                grads[f"grn.Wdn_{gate}"] += dz[gate].T @ cache.m_head
                grads[f"grn.b_{gate}"] += dz[gate].sum(axis=0)
                d_m_dep += dz[gate] @ params[f"grn.Wup_{gate}"]
                d_m_head += dz[gate] @ params[f"grn.Wdn_{gate}"]
            dh_prev = np.zeros_like(dh)
            for e in trace.graph.edges:
                w = e.prob if trace.weighted else 1.0
                g_dep = d_m_dep[e.head - 1]
                dh_prev[e.modifier - 1] += w * g_dep[:ds]
                d_label[e.fwd_row] += w * g_dep[ds:]
                g_head = d_m_head[e.modifier - 1]
                dh_prev[e.head - 1] += w * g_head[:ds]
                d_label[e.rev_row] += w * g_head[ds:]
            dh = dh_prev
            dc = dc * cache.gate_forget
        d_h0 = dh
    else:
        d_h0 = d_h_final

    d_wx_l, d_wh_l, d_b_l, d_emb_l = _lstm_backward(
        params["lstm_l.Wx"], params["lstm_l.Wh"], trace.lstm_left, d_h0[:, :dr]
    )
    d_wx_r, d_wh_r, d_b_r, d_emb_r = _lstm_backward(
        params["lstm_r.Wx"], params["lstm_r.Wh"], trace.lstm_right, d_h0[:, dr:]
    )
    grads["lstm_l.Wx"] += d_wx_l
    grads["lstm_l.Wh"] += d_wh_l
    grads["lstm_l.b"] += d_b_l
    grads["lstm_r.Wx"] += d_wx_r
    grads["lstm_r.Wh"] += d_wh_r
    grads["lstm_r.b"] += d_b_r
    d_emb = d_emb_l + d_emb_r
    if trace.emb_mask is not None:
        d_emb = d_emb * trace.emb_mask
    np.add.at(grads["word_emb"], trace.token_ids, d_emb)
    return grads


# --------------------------------------------------------------------------
# Checkpoints


@dataclass(frozen=True)
class Checkpoint:
    """A trained model: config, structure mode, vocabularies, parameters."""

    config: ModelConfig
    structure: str
    vocab: LabelVocab
    words: tuple[str, ...]
    params: ModelParams

    def __post_init__(self) -> None:
        if self.structure not in STRUCTURES:
            raise ValueError(f"structure must be one of {STRUCTURES}, got {self.structure!r}")
        if not self.words or self.words[0] != UNK_TOKEN:
            raise ValueError(f"word list must start with the {UNK_TOKEN!r} row")


def vocab_fingerprint(vocab: LabelVocab, words: tuple[str, ...]) -> str:
    payload = json.dumps(
        {
            "dep_labels": list(vocab.dep_labels),
            "relations": list(vocab.relations),
            "ne_tags": list(vocab.ne_tags),
            "words": list(words),
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    """Self-describing canonical serialization (exact float64 round-trip)."""
    tensors = {}
    for name, tensor in sorted(ckpt.params.items()):
        tensors[name] = {
            "shape": list(tensor.shape),
            "dtype": "float64",
            "data": base64.b64encode(np.ascontiguousarray(tensor, dtype=np.float64).tobytes()).decode("ascii"),
        }
    payload = {
        "format": "forestrel-checkpoint-v1",
        "config": {
            "dim_word": ckpt.config.dim_word,
            "dim_label": ckpt.config.dim_label,
            "dim_hidden": ckpt.config.dim_hidden,
            "steps": ckpt.config.steps,
            "dropout": ckpt.config.dropout,
            "weighted": ckpt.config.weighted,
            "ner_head": ckpt.config.ner_head,
            "seed": ckpt.config.seed,
        },
        "structure": ckpt.structure,
        "vocab": {
            "dep_labels": list(ckpt.vocab.dep_labels),
            "relations": list(ckpt.vocab.relations),
            "ne_tags": list(ckpt.vocab.ne_tags),
        },
        "words": list(ckpt.words),
        "vocab_sha256": vocab_fingerprint(ckpt.vocab, ckpt.words),
        "tensors": tensors,
    }
    return (json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    payload = json.loads(blob.decode("utf-8"))
    if payload.get("format") != "forestrel-checkpoint-v1":
        raise ValueError(f"unrecognized checkpoint format {payload.get('format')!r}")
    config = ModelConfig(**payload["config"])
    vocab = LabelVocab(
        tuple(payload["vocab"]["dep_labels"]),
        tuple(payload["vocab"]["relations"]),
        tuple(payload["vocab"]["ne_tags"]),
    )
    words = tuple(payload["words"])
    expected = payload.get("vocab_sha256")
    actual = vocab_fingerprint(vocab, words)
    if expected is not None and expected != actual:
        raise ValueError("checkpoint vocabulary fingerprint mismatch")
    tensors = {}
    for name, spec in payload["tensors"].items():
        if spec["dtype"] != "float64":
            raise ValueError(f"tensor {name!r} has unsupported dtype {spec['dtype']!r}")
        raw = base64.b64decode(spec["data"])
        tensors[name] = np.frombuffer(raw, dtype=np.float64).reshape(spec["shape"]).copy()
    return Checkpoint(config, payload["structure"], vocab, words, ModelParams(tensors))


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(ckpt))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


def build_word_index(words: tuple[str, ...]) -> dict[str, int]:
    return {w: i for i, w in enumerate(words)}


def token_ids_for(sentence: Sentence, word_index: dict[str, int]) -> np.ndarray:
    unk = word_index[UNK_TOKEN]
    return np.array([word_index.get(tok, unk) for tok in sentence.tokens], dtype=np.int64)
