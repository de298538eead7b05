"""Shared fixtures: a small label vocabulary and a seeded sparse-grid factory."""

import numpy as np
import pytest

from forestrel.core import ArcProbabilities, LabelVocab


@pytest.fixture
def vocab5():
    return LabelVocab(
        dep_labels=("amod", "nsubj", "obj", "prep", "conj"),
        relations=("R-A", "R-B", "None"),
        ne_tags=("O", "B-CHEM", "I-CHEM", "B-GENE", "I-GENE"),
    )


def make_arc_probs(rng, vocab, n, sentence_id="t0", extra=0.4, max_labels=2):
    """Random sparse per-modifier candidate grid that always admits a tree.

    The left-neighbour chain (head = m - 1) is always included, so a projective
    spanning tree exists; extra head candidates and label alternatives are
    sprinkled on top.  Per-modifier mass is scaled strictly below 1.
    """
    entries = []
    for m in range(1, n + 1):
        heads = {m - 1}
        for h in range(0, n + 1):
            if h != m and rng.random() < extra:
                heads.add(h)
        cells = []
        for h in sorted(heads):
            count = 1 + int(rng.integers(0, max_labels))
            labels = rng.choice(len(vocab.dep_labels), size=count, replace=False)
            for li in sorted(int(x) for x in labels):
                cells.append((h, li))
        raw = rng.random(len(cells)) + 0.05
        raw = raw / raw.sum() * float(rng.uniform(0.55, 0.98))
        for (h, li), p in zip(cells, raw):
            entries.append((m, h, vocab.dep_labels[li], float(p)))
    return ArcProbabilities(sentence_id, n, vocab, entries)


@pytest.fixture
def arc_grid_factory():
    return make_arc_probs
