"""Losses, Adam, the training loop, evaluation, and the gradient checker.

The per-instance loss is the relation negative log-likelihood plus, when the
NER flag is on, the mean per-token tag negative log-likelihood.  Batch loss is
the mean over the batch's instances.  L2 regularization enters Adam as
``2 * l2 * theta`` added to the incoming gradient of weight matrices only
(never biases or embedding tables).

All randomness (parameter init, epoch shuffling, dropout) derives from the
single seed in TrainConfig, so identical configurations reproduce identical
models and metric curves bitwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import (
    DependencyForest,
    LabelVocab,
    NONE_RELATION,
    RelationInstance,
    UNK_TOKEN,
)
from .encoder import (
    Checkpoint,
    EncoderGraph,
    ModelConfig,
    ModelParams,
    STRUCTURES,
    backward,
    build_gnn_graph,
    build_word_index,
    forward_instance,
    init_params,
    log_softmax,
    softmax,
    token_ids_for,
)


class VocabMismatchError(ValueError):
    """Data references labels or relations outside the model's vocabulary."""


class OptimizationError(RuntimeError):
    """A non-finite gradient reached the optimizer."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 20
    l2: float = 1e-8
    dropout: float = 0.1
    epochs: int = 100
    use_ner_loss: bool = False
    seed: int = 0
    patience: int = 10

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class OptimizerState:
    """Adam first/second moment estimates plus the shared step counter."""

    first: dict[str, np.ndarray]
    second: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ModelParams) -> "OptimizerState":
        return cls(
            first={name: np.zeros_like(t) for name, t in params.items()},
            second={name: np.zeros_like(t) for name, t in params.items()},
        )


def _l2_applies(name: str, tensor: np.ndarray) -> bool:
    # Weight matrices only: 2-D tensors that are not embedding tables.
    return tensor.ndim == 2 and not name.endswith("_emb")


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    config: TrainConfig,
) -> None:
    """Apply one Adam update in place (bias-corrected moments)."""
    state.step += 1
    t = state.step
    for name, theta in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite gradient for parameter {name!r}")
        if config.l2 > 0.0 and _l2_applies(name, theta):
            g = g + 2.0 * config.l2 * theta
        m = state.first[name]
        v = state.second[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        theta -= config.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def relation_loss(rel_logits: np.ndarray, gold_index: int) -> float:
    """Negative log-likelihood of the gold relation, via log-softmax."""
    if not 0 <= gold_index < rel_logits.shape[0]:
        raise ValueError(f"relation index {gold_index} outside 0..{rel_logits.shape[0] - 1}")
    return float(-log_softmax(rel_logits)[gold_index])


def relation_loss_grad(rel_logits: np.ndarray, gold_index: int) -> np.ndarray:
    grad = softmax(rel_logits)
    grad[gold_index] -= 1.0
    return grad


def ner_loss(ner_logits: np.ndarray, gold_tags: Sequence[int]) -> float:
    """Mean per-token negative log-likelihood of the gold tag sequence."""
    n = ner_logits.shape[0]
    if len(gold_tags) != n:
        raise ValueError(f"{len(gold_tags)} gold tags for {n} tokens")
    logp = log_softmax(ner_logits)
    return float(-sum(logp[i, tag] for i, tag in enumerate(gold_tags)) / n)


def ner_loss_grad(ner_logits: np.ndarray, gold_tags: Sequence[int]) -> np.ndarray:
    n = ner_logits.shape[0]
    grad = softmax(ner_logits)
    grad[np.arange(n), np.asarray(gold_tags)] -= 1.0
    return grad / n


def total_loss(rel: float, ner: float | None, use_ner: bool) -> float:
    """Plain sum of the two terms when the NER flag is on, else the relation term."""
    if use_ner:
        if ner is None:
            raise ValueError("NER loss requested but no NER term given")
        return rel + ner
    return rel


@dataclass(frozen=True)
class EvalReport:
    """Micro precision/recall/F1 over non-None predictions."""

    precision: float
    recall: float
    f1: float
    correct: int
    predicted: int
    gold: int
    recall_denominator: int
    per_relation: dict[str, dict[str, int]]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    precision: float
    recall: float
    f1: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    epochs: list[EpochRecord]
    best_epoch: int
    wall_seconds: float


@dataclass(frozen=True)
class _Encoded:
    token_ids: np.ndarray
    span1: tuple[int, int]
    span2: tuple[int, int]
    graph: EncoderGraph | None
    relation_index: int
    tag_indices: tuple[int, ...] | None


def _encode_instances(
    instances: Sequence[RelationInstance],
    forests: Sequence[DependencyForest] | None,
    vocab: LabelVocab,
    word_index: dict[str, int],
    structure: str,
    need_tags: bool,
) -> list[_Encoded]:
    if structure not in STRUCTURES:
        raise ValueError(f"structure must be one of {STRUCTURES}, got {structure!r}")
    use_graph = structure != "textonly"
    if use_graph:
        if forests is None:
            raise ValueError(f"structure {structure!r} requires forests")
        if len(forests) != len(instances):
            raise ValueError(
                f"{len(forests)} forests vs {len(instances)} instances: collections misaligned"
            )
    encoded = []
    for idx, inst in enumerate(instances):
        try:
            rel_idx = vocab.relation_index(inst.relation)
        except KeyError as exc:
            raise VocabMismatchError(str(exc)) from exc
        graph = None
        if use_graph:
            forest = forests[idx]
            if forest.sentence_id and forest.sentence_id != inst.sentence.id:
                raise ValueError(
                    f"forest {forest.sentence_id!r} aligned with instance {inst.sentence.id!r}"
                )
            if forest.n != inst.sentence.n:
                raise ValueError(
                    f"forest for {inst.sentence.id!r} has {forest.n} tokens, "
                    f"sentence has {inst.sentence.n}"
                )
            try:
                graph = build_gnn_graph(forest, vocab)
            except KeyError as exc:
                raise VocabMismatchError(str(exc)) from exc
        tags = None
        if need_tags:
            if inst.ne_tags is None:
                raise ValueError(
                    f"instance {inst.sentence.id!r} has no NE tags but the NER loss is on"
                )
            try:
                tags = tuple(vocab.tag_index(t) for t in inst.ne_tags)
            except KeyError as exc:
                raise VocabMismatchError(str(exc)) from exc
        encoded.append(
            _Encoded(
                token_ids=token_ids_for(inst.sentence, word_index),
                span1=inst.mention1,
                span2=inst.mention2,
                graph=graph,
                relation_index=rel_idx,
                tag_indices=tags,
            )
        )
    return encoded


def _instance_loss_and_grads(
    params: ModelParams,
    config: ModelConfig,
    enc: _Encoded,
    use_ner: bool,
    train: bool,
    rng: np.random.Generator | None,
) -> tuple[float, dict[str, np.ndarray]]:
    trace = forward_instance(
        params, config, enc.token_ids, enc.span1, enc.span2, enc.graph, train=train, rng=rng
    )
    l_rel = relation_loss(trace.rel_logits, enc.relation_index)
    d_rel = relation_loss_grad(trace.rel_logits, enc.relation_index)
    d_ner = None
    l_ner = None
    if use_ner:
        l_ner = ner_loss(trace.ner_logits, enc.tag_indices)
        d_ner = ner_loss_grad(trace.ner_logits, enc.tag_indices)
    loss = total_loss(l_rel, l_ner, use_ner)
    grads = backward(params, config, trace, d_rel, d_ner)
    return loss, grads


def _build_words(instances: Sequence[RelationInstance]) -> tuple[str, ...]:
    seen = sorted({tok for inst in instances for tok in inst.sentence.tokens})
    return (UNK_TOKEN, *seen)


def train(
    train_instances: Sequence[RelationInstance],
    train_forests: Sequence[DependencyForest] | None,
    dev_instances: Sequence[RelationInstance],
    dev_forests: Sequence[DependencyForest] | None,
    vocab: LabelVocab,
    model_config: ModelConfig,
    train_config: TrainConfig,
    structure: str,
) -> TrainResult:
    """Train with Adam and early stopping on dev F1.

    The checkpoint with the best dev F1 (earliest epoch on ties) is returned;
    training stops once ``patience`` epochs pass without improvement.
    """
    if not train_instances:
        raise ValueError("no training instances")
    start = time.perf_counter()
    model_config = replace(
        model_config,
        dropout=train_config.dropout,
        ner_head=model_config.ner_head or train_config.use_ner_loss,
        seed=train_config.seed,
    )
    words = _build_words(train_instances)
    word_index = build_word_index(words)
    train_enc = _encode_instances(
        train_instances, train_forests, vocab, word_index, structure, train_config.use_ner_loss
    )
    dev_enc = _encode_instances(dev_instances, dev_forests, vocab, word_index, structure, False)
    dev_gold = [vocab.relation_index(inst.relation) for inst in dev_instances]
    none_index = vocab.relation_index(NONE_RELATION)

    params = init_params(model_config, vocab, len(words))
    state = OptimizerState.for_params(params)
    seeds = np.random.SeedSequence(train_config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])

    records: list[EpochRecord] = []
    best_f1 = -1.0
    best_epoch = 0
    best_params = params.copy()
    for epoch in range(1, train_config.epochs + 1):
        order = shuffle_rng.permutation(len(train_enc))
        loss_sum = 0.0
        for lo in range(0, len(order), train_config.batch_size):
            batch = order[lo : lo + train_config.batch_size]
            acc = params.zero_grads()
            for idx in batch:
                loss, grads = _instance_loss_and_grads(
                    params,
                    model_config,
                    train_enc[idx],
                    train_config.use_ner_loss,
                    train=True,
                    rng=dropout_rng,
                )
                loss_sum += loss
                for name in acc:
                    acc[name] += grads[name]
            scale = 1.0 / len(batch)
            for name in acc:
                acc[name] *= scale
            adam_step(params, acc, state, train_config)
        train_loss = loss_sum / len(train_enc)
        report = _evaluate_encoded(params, model_config, dev_enc, dev_gold, none_index, None)
        records.append(
            EpochRecord(epoch, train_loss, report.precision, report.recall, report.f1)
        )
        if report.f1 > best_f1:
            best_f1 = report.f1
            best_epoch = epoch
            best_params = params.copy()
        elif epoch - best_epoch >= train_config.patience:
            break
    checkpoint = Checkpoint(model_config, structure, vocab, words, best_params)
    return TrainResult(checkpoint, records, best_epoch, time.perf_counter() - start)


def _evaluate_encoded(
    params: ModelParams,
    config: ModelConfig,
    encoded: Sequence[_Encoded],
    gold_indices: Sequence[int],
    none_index: int,
    external_gold_count: int | None,
) -> EvalReport:
    predictions = []
    for enc in encoded:
        trace = forward_instance(
            params, config, enc.token_ids, enc.span1, enc.span2, enc.graph, train=False
        )
        predictions.append(int(np.argmax(trace.rel_probs)))
    return score_predictions(predictions, gold_indices, none_index, external_gold_count)


def score_predictions(
    predicted: Sequence[int],
    gold: Sequence[int],
    none_index: int,
    external_gold_count: int | None = None,
    relation_names: Sequence[str] | None = None,
) -> EvalReport:
    """Micro P/R/F1 where only non-None predictions count as positives.

    ``external_gold_count`` replaces the recall denominator when the evaluated
    collection covers only part of the gold annotation.  An undefined precision
    or recall (zero denominator) scores 0 by convention.
    """
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} predictions vs {len(gold)} gold labels")
    correct = sum(1 for p, g in zip(predicted, gold) if p == g and p != none_index)
    pred_pos = sum(1 for p in predicted if p != none_index)
    gold_pos = sum(1 for g in gold if g != none_index)
    denom_r = external_gold_count if external_gold_count is not None else gold_pos
    if external_gold_count is not None and external_gold_count < correct:
        raise ValueError(
            f"external gold count {external_gold_count} below matched count {correct}"
        )
    precision = correct / pred_pos if pred_pos else 0.0
    recall = correct / denom_r if denom_r else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    per_relation: dict[str, dict[str, int]] = {}
    if relation_names is not None:
        for ridx, name in enumerate(relation_names):
            per_relation[name] = {
                "gold": sum(1 for g in gold if g == ridx),
                "predicted": sum(1 for p in predicted if p == ridx),
                "correct": sum(
                    1 for p, g in zip(predicted, gold) if p == g == ridx
                ),
            }
    return EvalReport(
        precision, recall, f1, correct, pred_pos, gold_pos, denom_r, per_relation
    )


def evaluate(
    checkpoint: Checkpoint,
    instances: Sequence[RelationInstance],
    forests: Sequence[DependencyForest] | None,
    external_gold_count: int | None = None,
) -> EvalReport:
    """Score a checkpoint on labeled instances."""
    word_index = build_word_index(checkpoint.words)
    encoded = _encode_instances(
        instances, forests, checkpoint.vocab, word_index, checkpoint.structure, False
    )
    gold = [checkpoint.vocab.relation_index(inst.relation) for inst in instances]
    none_index = checkpoint.vocab.relation_index(NONE_RELATION)
    predictions = []
    for enc in encoded:
        trace = forward_instance(
            checkpoint.params,
            checkpoint.config,
            enc.token_ids,
            enc.span1,
            enc.span2,
            enc.graph,
            train=False,
        )
        predictions.append(int(np.argmax(trace.rel_probs)))
    return score_predictions(
        predictions, gold, none_index, external_gold_count, checkpoint.vocab.relations
    )


def predict(
    checkpoint: Checkpoint,
    instances: Sequence[RelationInstance],
    forests: Sequence[DependencyForest] | None,
) -> list[tuple[str, str, float]]:
    """Per-instance (sentence id, predicted relation, probability)."""
    word_index = build_word_index(checkpoint.words)
    encoded = _encode_instances(
        instances, forests, checkpoint.vocab, word_index, checkpoint.structure, False
    )
    out = []
    for inst, enc in zip(instances, encoded):
        trace = forward_instance(
            checkpoint.params,
            checkpoint.config,
            enc.token_ids,
            enc.span1,
            enc.span2,
            enc.graph,
            train=False,
        )
        ridx = int(np.argmax(trace.rel_probs))
        out.append(
            (inst.sentence.id, checkpoint.vocab.relations[ridx], float(trace.rel_probs[ridx]))
        )
    return out


def format_metric_log(records: Sequence[EpochRecord]) -> str:
    """Machine-parseable per-epoch metrics (tab-separated, exact floats)."""
    lines = ["epoch\ttrain_loss\tdev_precision\tdev_recall\tdev_f1"]
    for r in records:
        lines.append(
            f"{r.epoch}\t{r.train_loss!r}\t{r.precision!r}\t{r.recall!r}\t{r.f1!r}"
        )
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Gradient checking


def _gradcheck_fixture(seed: int):
    """A tiny deterministic instance exercising every model path."""
    from .core import DependencyEdge, Sentence

    vocab = LabelVocab(
        dep_labels=("amod", "nsubj", "obj"),
        relations=("A", "B", NONE_RELATION),
        ne_tags=("O", "B-X", "I-X"),
    )
    sentence = Sentence("g0", ("w1", "w2", "w3", "w1", "w4"))
    rng = np.random.default_rng(seed)
    tree_edges = (
        DependencyEdge(0, "nsubj", 2, 0.9),
        DependencyEdge(2, "amod", 1, 0.8),
        DependencyEdge(2, "obj", 4, 0.7),
        DependencyEdge(4, "amod", 3, 0.6),
        DependencyEdge(4, "obj", 5, 0.5),
    )
    extra_edges = (
        DependencyEdge(3, "nsubj", 1, 0.3),
        DependencyEdge(5, "amod", 4, 0.25),
    )
    tree = DependencyForest.from_edges("g0", 5, tree_edges, vocab)
    forest = DependencyForest.from_edges("g0", 5, tree_edges + extra_edges, vocab)
    instance = RelationInstance(sentence, (1, 2), (4, 6), "A", ("O", "B-X", "I-X", "O", "O"))
    return vocab, instance, tree, forest, rng


def gradient_check(seed: int = 0, step: float = 1e-5) -> list[tuple[str, float]]:
    """Compare analytic gradients against central finite differences.

    Runs every combination of structure mode, message weighting, and NER head
    on a tiny fixture (dropout off) and reports the maximum relative error per
    combination.  The relative error denominator is floored at 1e-4 so that
    finite-difference noise on near-zero gradients is judged absolutely.
    """
    vocab, instance, tree, forest, _ = _gradcheck_fixture(seed)
    words = _build_words([instance])
    word_index = build_word_index(words)
    results: list[tuple[str, float]] = []
    for structure in STRUCTURES:
        for weighted in (False, True):
            for use_ner in (False, True):
                config = ModelConfig(
                    dim_word=3,
                    dim_label=3,
                    dim_hidden=4,
                    steps=2,
                    dropout=0.0,
                    weighted=weighted,
                    ner_head=use_ner,
                    seed=seed,
                )
                forests = None
                if structure == "tree":
                    forests = [tree]
                elif structure == "forest":
                    forests = [forest]
                enc = _encode_instances(
                    [instance], forests, vocab, word_index, structure, use_ner
                )[0]
                params = init_params(config, vocab, len(words))

                def loss_value() -> float:
                    trace = forward_instance(
                        params, config, enc.token_ids, enc.span1, enc.span2, enc.graph
                    )
                    l_rel = relation_loss(trace.rel_logits, enc.relation_index)
                    l_ner = (
                        ner_loss(trace.ner_logits, enc.tag_indices) if use_ner else None
                    )
                    return total_loss(l_rel, l_ner, use_ner)

                _, grads = _instance_loss_and_grads(
                    params, config, enc, use_ner, train=False, rng=None
                )
                worst = 0.0
                for name, tensor in params.items():
                    flat = tensor.reshape(-1)
                    for i in range(flat.size):
                        orig = flat[i]
                        flat[i] = orig + step
                        up = loss_value()
                        flat[i] = orig - step
                        down = loss_value()
                        flat[i] = orig
                        numeric = (up - down) / (2.0 * step)
                        analytic = grads[name].reshape(-1)[i]
                        err = abs(analytic - numeric) / max(
                            abs(analytic), abs(numeric), 1e-4
                        )
                        worst = max(worst, err)
                results.append(
                    (
                        f"structure={structure} weighted={int(weighted)} ner={int(use_ner)}",
                        worst,
                    )
                )
    return results
