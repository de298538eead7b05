"""File formats (round trips, error reporting) and the synthetic generator."""

import json

import numpy as np
import pytest

from forestrel.core import check_tree
from forestrel.dataio import (
    DataFormatError,
    SynthSpec,
    load_arc_probs,
    load_corpus,
    load_forests,
    load_trees,
    load_vocab,
    save_arc_probs,
    save_corpus,
    save_trees,
    save_vocab,
    synth_generate,
    synth_vocab,
    synth_write,
    write_forests,
)
from forestrel.forest import decode_1best, edgewise_forest, merge_trees, oracle_las


class TestVocabFile:
    def test_round_trip(self, vocab5, tmp_path):
        path = tmp_path / "vocab.json"
        save_vocab(vocab5, path)
        assert load_vocab(path) == vocab5

    def test_invalid_file_reports_path(self, tmp_path):
        path = tmp_path / "vocab.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(DataFormatError, match="vocab.json"):
            load_vocab(path)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "vocab.json"
        path.write_text('{"dep_labels": ["amod"]}', encoding="utf-8")
        with pytest.raises(DataFormatError):
            load_vocab(path)


class TestCorpusFile:
    def _write_lines(self, path, lines):
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    def test_round_trip_preserves_instances(self, tmp_path):
        data = synth_generate(SynthSpec(n_sentences=6, seed=0))
        path = tmp_path / "corpus.jsonl"
        save_corpus(data.instances, path)
        result = load_corpus(path, data.vocab)
        assert result.skipped == ()
        assert result.instances == data.instances

    def test_rewrite_is_byte_identical(self, tmp_path):
        data = synth_generate(SynthSpec(n_sentences=6, seed=1))
        first = tmp_path / "a.jsonl"
        second = tmp_path / "b.jsonl"
        save_corpus(data.instances, first)
        save_corpus(load_corpus(first, data.vocab).instances, second)
        assert first.read_bytes() == second.read_bytes()

    def test_invalid_record_skipped_with_line_number(self, vocab5, tmp_path):
        good = {
            "id": "s0",
            "tokens": ["a", "b"],
            "mention1": {"start": 1, "end": 2},
            "mention2": {"start": 2, "end": 3},
            "relation": "R-A",
        }
        bad = dict(good, id="s1", relation="R-UNSEEN")
        path = tmp_path / "corpus.jsonl"
        self._write_lines(path, [json.dumps(good), json.dumps(bad), json.dumps(good)])
        result = load_corpus(path, vocab5)
        assert len(result.instances) == 2
        assert len(result.skipped) == 1
        assert ":2:" in result.skipped[0]
        assert "unknown relation" in result.skipped[0]

    def test_fail_fast_raises_immediately(self, vocab5, tmp_path):
        path = tmp_path / "corpus.jsonl"
        self._write_lines(path, ["{broken"])
        with pytest.raises(DataFormatError, match=":1:"):
            load_corpus(path, vocab5, fail_fast=True)

    def test_blank_lines_ignored(self, vocab5, tmp_path):
        good = {
            "id": "s0",
            "tokens": ["a"],
            "mention1": {"start": 1, "end": 2},
            "mention2": {"start": 1, "end": 2},
            "relation": "None",
        }
        path = tmp_path / "corpus.jsonl"
        path.write_text("\n" + json.dumps(good) + "\n\n", encoding="utf-8")
        result = load_corpus(path, vocab5)
        assert len(result.instances) == 1


class TestArcFile:
    def test_round_trip_and_rewrite(self, tmp_path):
        data = synth_generate(SynthSpec(n_sentences=5, seed=2))
        first = tmp_path / "a.jsonl"
        second = tmp_path / "b.jsonl"
        save_arc_probs(data.arc_probs, first)
        loaded = load_arc_probs(first, data.vocab)
        assert loaded == data.arc_probs
        save_arc_probs(loaded, second)
        assert first.read_bytes() == second.read_bytes()

    def test_duplicate_id_rejected(self, vocab5, tmp_path):
        record = json.dumps({"id": "s0", "n": 1, "arcs": [[1, 0, "amod", 0.5]]})
        path = tmp_path / "arcs.jsonl"
        path.write_text(record + "\n" + record + "\n", encoding="utf-8")
        with pytest.raises(DataFormatError, match="duplicate sentence id"):
            load_arc_probs(path, vocab5)

    def test_mass_violation_reported_with_line(self, vocab5, tmp_path):
        path = tmp_path / "arcs.jsonl"
        path.write_text(
            json.dumps({"id": "s0", "n": 2, "arcs": [[1, 0, "amod", 0.8], [1, 2, "obj", 0.5]]})
            + "\n",
            encoding="utf-8",
        )
        with pytest.raises(DataFormatError, match=":1:.*stored mass"):
            load_arc_probs(path, vocab5)

    def test_unknown_label_fails_fast(self, vocab5, tmp_path):
        path = tmp_path / "arcs.jsonl"
        path.write_text(
            json.dumps({"id": "s0", "n": 1, "arcs": [[1, 0, "punct", 0.5]]}) + "\n",
            encoding="utf-8",
        )
        with pytest.raises(DataFormatError, match="punct"):
            load_arc_probs(path, vocab5)


class TestForestAndTreeFiles:
    def test_forest_round_trip(self, tmp_path):
        data = synth_generate(SynthSpec(n_sentences=5, seed=3))
        forests = {
            sid: edgewise_forest(probs, 0.1) for sid, probs in data.arc_probs.items()
        }
        first = tmp_path / "a.jsonl"
        second = tmp_path / "b.jsonl"
        write_forests(forests, first)
        loaded = load_forests(first, data.vocab)
        assert loaded == forests
        write_forests(loaded, second)
        assert first.read_bytes() == second.read_bytes()

    def test_tree_round_trip(self, tmp_path):
        data = synth_generate(SynthSpec(n_sentences=5, seed=4))
        first = tmp_path / "a.jsonl"
        second = tmp_path / "b.jsonl"
        save_trees(data.gold_trees, first)
        loaded = load_trees(first, data.vocab)
        assert loaded == data.gold_trees
        save_trees(loaded, second)
        assert first.read_bytes() == second.read_bytes()

    def test_tree_file_rejects_cycles(self, vocab5, tmp_path):
        path = tmp_path / "trees.jsonl"
        path.write_text(
            json.dumps(
                {"id": "s0", "n": 2,
                 "edges": [[2, "amod", 1, 0.5], [1, "obj", 2, 0.5]]}
            ) + "\n",
            encoding="utf-8",
        )
        with pytest.raises(DataFormatError, match="cyclic or non-projective"):
            load_trees(path, vocab5)

    def test_tree_file_rejects_wrong_edge_count(self, vocab5, tmp_path):
        path = tmp_path / "trees.jsonl"
        path.write_text(
            json.dumps({"id": "s0", "n": 3, "edges": [[0, "amod", 1, 0.5]]}) + "\n",
            encoding="utf-8",
        )
        with pytest.raises(DataFormatError, match="1 edges for 3 tokens"):
            load_trees(path, vocab5)


class TestSynthSpecValidation:
    def test_bad_parameters_rejected(self):
        with pytest.raises(ValueError):
            SynthSpec(n_sentences=0)
        with pytest.raises(ValueError):
            SynthSpec(n_sentences=1, min_len=2)
        with pytest.raises(ValueError):
            SynthSpec(n_sentences=1, n_dep_labels=2, relation_rows=2)
        with pytest.raises(ValueError):
            SynthSpec(n_sentences=1, temperature=0.0)
        with pytest.raises(ValueError):
            SynthSpec(n_sentences=1, prob_floor=1.0)


class TestSynthGenerator:
    def test_same_seed_is_byte_identical(self, tmp_path):
        spec = SynthSpec(n_sentences=8, seed=12)
        dir_a = tmp_path / "a"
        dir_b = tmp_path / "b"
        paths_a = synth_write(synth_generate(spec), dir_a)
        paths_b = synth_write(synth_generate(spec), dir_b)
        for name in paths_a:
            assert paths_a[name].read_bytes() == paths_b[name].read_bytes(), name

    def test_gold_trees_are_valid(self):
        data = synth_generate(SynthSpec(n_sentences=10, seed=13))
        for tree in data.gold_trees.values():
            assert check_tree(tree) == []

    def test_relation_is_a_function_of_gold_arc_labels(self):
        spec = SynthSpec(n_sentences=15, seed=14)
        data = synth_generate(spec)
        vocab = data.vocab
        for inst in data.instances:
            gold = data.gold_trees[inst.sentence.id]
            a = inst.mention1[0]
            b = inst.mention2[0]
            label_a = vocab.dep_index(gold.edges[a - 1].label)
            label_b = vocab.dep_index(gold.edges[b - 1].label)
            row = label_a % (spec.relation_rows + 1)
            if row == spec.relation_rows:
                expected = "None"
            else:
                expected = f"R{row}{label_b % spec.relation_cols}"
            assert inst.relation == expected

    def test_mentions_are_marked_and_structurally_sound(self):
        data = synth_generate(SynthSpec(n_sentences=15, seed=15))
        for inst in data.instances:
            a = inst.mention1[0]
            b = inst.mention2[0]
            assert a < b
            assert inst.mention1 == (a, a + 1) and inst.mention2 == (b, b + 1)
            assert inst.sentence.tokens[a - 1].startswith("chem")
            assert inst.sentence.tokens[b - 1].startswith("gene")
            assert inst.ne_tags[a - 1] == "B-CHEM"
            assert inst.ne_tags[b - 1] == "B-GENE"
            parents = data.gold_trees[inst.sentence.id].parents()
            assert parents[a - 1] != 0 and parents[b - 1] != 0
            # neither mention may sit in the other's subtree
            for lo, hi in ((a, b), (b, a)):
                node = parents[lo - 1]
                while node != 0:
                    assert node != hi
                    node = parents[node - 1]

    def test_stored_mass_is_nearly_one(self):
        spec = SynthSpec(n_sentences=6, seed=16)
        data = synth_generate(spec)
        for probs in data.arc_probs.values():
            cells = probs.n * spec.n_dep_labels
            for m in range(1, probs.n + 1):
                mass = probs.modifier_mass(m)
                assert mass <= 1.0 + 1e-9
                assert mass >= 1.0 - spec.prob_floor * cells

    def test_low_temperature_decoding_recovers_gold(self):
        data = synth_generate(SynthSpec(n_sentences=10, seed=17, temperature=0.05))
        for sid, probs in data.arc_probs.items():
            decoded = decode_1best(probs)
            gold = data.gold_trees[sid]
            assert [e.triple for e in decoded.edges] == [e.triple for e in gold.edges]

    def test_gold_arc_below_floor_is_an_error(self):
        with pytest.raises(RuntimeError, match="storage floor"):
            synth_generate(SynthSpec(n_sentences=2, seed=18, temperature=50.0, prob_floor=0.5))

    def test_vocab_layout(self):
        vocab = synth_vocab(SynthSpec(n_sentences=1))
        assert vocab.dep_labels == tuple(f"dep{i}" for i in range(6))
        assert vocab.relations == ("R00", "R01", "R10", "R11", "None")
        assert vocab.ne_tags == ("O", "B-CHEM", "I-CHEM", "B-GENE", "I-GENE")


class TestForestQualityOrdering:
    def test_keeping_all_stored_arcs_dominates_any_tree(self):
        # every arc of the 1-best tree is stored, so a gamma=0 forest can only
        # contain more gold arcs than the tree does
        data = synth_generate(SynthSpec(n_sentences=12, seed=19, temperature=0.4))
        for sid, probs in data.arc_probs.items():
            gold = data.gold_trees[sid]
            best = decode_1best(probs)
            tree_forest = merge_trees([best], data.vocab, sentence_id=sid)
            full = edgewise_forest(probs, 0.0)
            assert oracle_las(full, gold) >= oracle_las(tree_forest, gold)

    def test_noisy_parses_leave_headroom_for_forests(self):
        # at high temperature the 1-best tree misses gold arcs that a loose
        # edgewise forest still carries (seeded, deterministic margin)
        data = synth_generate(SynthSpec(n_sentences=30, seed=20, temperature=0.35))
        las_tree = []
        las_forest = []
        for sid, probs in data.arc_probs.items():
            gold = data.gold_trees[sid]
            best = merge_trees([decode_1best(probs)], data.vocab, sentence_id=sid)
            las_tree.append(oracle_las(best, gold))
            las_forest.append(oracle_las(edgewise_forest(probs, 0.05), gold))
        assert np.mean(las_forest) > np.mean(las_tree)
