"""End-to-end command-line behaviour driven through cli.main."""

import json

import pytest

from forestrel.cli import main
from forestrel.core import ArcProbabilities
from forestrel.dataio import save_arc_probs, synth_vocab, SynthSpec, save_vocab


@pytest.fixture
def synth_dir(tmp_path):
    out = tmp_path / "data"
    code = main(["synth", "--out-dir", str(out), "--count", "12", "--seed", "3"])
    assert code == 0
    return out


def _make_forests(synth_dir, out_name="forests.jsonl", extra=()):
    out = synth_dir / out_name
    code = main(
        [
            "forest",
            "--vocab", str(synth_dir / "vocab.json"),
            "--arcs", str(synth_dir / "arcs.jsonl"),
            "--out", str(out),
            *extra,
        ]
    )
    assert code == 0
    return out


class TestArgumentValidation:
    def test_kbest_rejects_gamma(self, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(["forest", "--vocab", "v", "--arcs", "a", "--out", "o",
                  "--algo", "kbest", "--k", "2", "--gamma", "0.1"])
        assert excinfo.value.code == 2

    def test_edgewise_requires_gamma(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["forest", "--vocab", "v", "--arcs", "a", "--out", "o",
                  "--algo", "edgewise"])
        assert excinfo.value.code == 2

    def test_kbest_requires_k(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["forest", "--vocab", "v", "--arcs", "a", "--out", "o",
                  "--algo", "kbest"])
        assert excinfo.value.code == 2

    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["synth", "--out-dir", "x", "--count", "1", "--frobnicate"])
        assert excinfo.value.code == 2

    def test_every_run_prints_resolved_config(self, tmp_path, capsys):
        assert main(["synth", "--out-dir", str(tmp_path / "d"), "--count", "2",
                     "--seed", "3"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("config {")
        resolved = json.loads(out.splitlines()[0][len("config "):])
        assert resolved["count"] == 2
        assert resolved["seed"] == 3


class TestForestCommand:
    def test_edgewise_writes_forests(self, synth_dir, capsys):
        path = _make_forests(synth_dir, extra=("--algo", "edgewise", "--gamma", "0.2"))
        lines = path.read_text(encoding="utf-8").strip().split("\n")
        assert len(lines) == 12
        assert "wrote 12 forests" in capsys.readouterr().out

    def test_kbest_k1_reports_unit_density(self, synth_dir, capsys):
        _make_forests(synth_dir, out_name="k1.jsonl", extra=("--algo", "kbest", "--k", "1"))
        assert "mean density 1.0000" in capsys.readouterr().out

    def test_uncovered_positions_fail_without_fallback(self, tmp_path, capsys):
        vocab = synth_vocab(SynthSpec(n_sentences=1))
        save_vocab(vocab, tmp_path / "vocab.json")
        sparse = ArcProbabilities("s0", 2, vocab, [(2, 0, "dep0", 0.9)])
        save_arc_probs({"s0": sparse}, tmp_path / "arcs.jsonl")
        args = ["forest", "--vocab", str(tmp_path / "vocab.json"),
                "--arcs", str(tmp_path / "arcs.jsonl"),
                "--out", str(tmp_path / "f.jsonl"), "--algo", "kbest", "--k", "2"]
        assert main(args) == 1
        assert "uncovered modifiers" in capsys.readouterr().err
        assert main(args + ["--fallback-eps", "0.3"]) == 0

    def test_bad_vocab_path_is_reported(self, tmp_path, capsys):
        code = main(["forest", "--vocab", str(tmp_path / "nope.json"),
                     "--arcs", "a", "--out", "o", "--algo", "edgewise", "--gamma", "0.1"])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestStatsCommand:
    def test_table_with_gold(self, synth_dir, capsys):
        forests = _make_forests(synth_dir, extra=("--algo", "edgewise", "--gamma", "0.1"))
        code = main(["stats", "--vocab", str(synth_dir / "vocab.json"),
                     "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--forests", str(forests),
                     "--gold", str(synth_dir / "gold.jsonl")])
        assert code == 0
        out = capsys.readouterr().out.splitlines()
        assert out[-2].split("\t") == ["#Edge/#Node", "LAS", "Conn.Ratio(%)"]
        density, las, conn = (float(x) for x in out[-1].split("\t"))
        assert density > 0
        assert 0.0 <= las <= 100.0
        assert 0.0 <= conn <= 100.0

    def test_table_without_gold(self, synth_dir, capsys):
        forests = _make_forests(synth_dir, extra=("--algo", "edgewise", "--gamma", "0.1"))
        code = main(["stats", "--vocab", str(synth_dir / "vocab.json"),
                     "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--forests", str(forests)])
        assert code == 0
        out = capsys.readouterr().out.splitlines()
        assert out[-2].split("\t") == ["#Edge/#Node", "Conn.Ratio(%)"]

    def test_missing_forest_record(self, synth_dir, capsys):
        forests = _make_forests(synth_dir, extra=("--algo", "edgewise", "--gamma", "0.1"))
        lines = forests.read_text(encoding="utf-8").strip().split("\n")
        forests.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
        code = main(["stats", "--vocab", str(synth_dir / "vocab.json"),
                     "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--forests", str(forests)])
        assert code == 1
        assert "no forest record" in capsys.readouterr().err


class TestTrainEvalPredict:
    def _train(self, synth_dir, forests, ckpt, log, structure="forest", extra=()):
        return main(
            [
                "train",
                "--vocab", str(synth_dir / "vocab.json"),
                "--corpus", str(synth_dir / "corpus.jsonl"),
                "--dev-corpus", str(synth_dir / "corpus.jsonl"),
                "--forests", str(forests),
                "--dev-forests", str(forests),
                "--checkpoint", str(ckpt),
                "--log", str(log),
                "--structure", structure,
                "--dim-word", "8", "--dim-label", "8", "--dim-hidden", "8",
                "--epochs", "2", "--seed", "1",
                *extra,
            ]
        )

    def test_full_pipeline(self, synth_dir, tmp_path, capsys):
        forests = _make_forests(synth_dir, extra=("--algo", "edgewise", "--gamma", "0.2"))
        ckpt = tmp_path / "model.json"
        log = tmp_path / "metrics.tsv"
        assert self._train(synth_dir, forests, ckpt, log, extra=("--weighted",)) == 0
        train_out = capsys.readouterr().out
        assert "best dev F1" in train_out
        header = log.read_text(encoding="utf-8").splitlines()[0]
        assert header == "epoch\ttrain_loss\tdev_precision\tdev_recall\tdev_f1"

        code = main(["eval", "--checkpoint", str(ckpt),
                     "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--forests", str(forests)])
        assert code == 0
        eval_out = capsys.readouterr().out
        assert "precision" in eval_out and "f1" in eval_out

        pred_path = tmp_path / "pred.jsonl"
        code = main(["predict", "--checkpoint", str(ckpt),
                     "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--forests", str(forests),
                     "--out", str(pred_path)])
        assert code == 0
        rows = [json.loads(line) for line in pred_path.read_text().strip().split("\n")]
        assert len(rows) == 12
        assert set(rows[0]) == {"id", "relation", "prob"}

    def test_eval_forest_model_requires_forests(self, synth_dir, tmp_path, capsys):
        forests = _make_forests(synth_dir, extra=("--algo", "edgewise", "--gamma", "0.2"))
        ckpt = tmp_path / "model.json"
        assert self._train(synth_dir, forests, ckpt, tmp_path / "m.tsv") == 0
        capsys.readouterr()
        code = main(["eval", "--checkpoint", str(ckpt),
                     "--corpus", str(synth_dir / "corpus.jsonl")])
        assert code == 1
        assert "requires a forest file" in capsys.readouterr().err

    def test_textonly_ignores_forests_with_note(self, synth_dir, tmp_path, capsys):
        forests = _make_forests(synth_dir, extra=("--algo", "edgewise", "--gamma", "0.2"))
        ckpt = tmp_path / "model.json"
        code = self._train(synth_dir, forests, ckpt, tmp_path / "m.tsv", structure="textonly")
        assert code == 0
        captured = capsys.readouterr()
        assert "ignores forests" in captured.err

    def test_external_gold_flag(self, synth_dir, tmp_path, capsys):
        forests = _make_forests(synth_dir, extra=("--algo", "edgewise", "--gamma", "0.2"))
        ckpt = tmp_path / "model.json"
        assert self._train(synth_dir, forests, ckpt, tmp_path / "m.tsv") == 0
        code = main(["eval", "--checkpoint", str(ckpt),
                     "--corpus", str(synth_dir / "corpus.jsonl"),
                     "--forests", str(forests),
                     "--external-gold", "500"])
        assert code == 0
        out = capsys.readouterr().out
        assert "recall_denominator 500" in out


class TestGradcheckCommand:
    def test_passes_at_default_tolerance(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "gradient check passed" in out
        assert out.count("max_rel_err") == 12

    def test_exit_code_reflects_tolerance(self, capsys, monkeypatch):
        # exit-path logic only; the heavy numeric sweep runs in the test above
        monkeypatch.setattr(
            "forestrel.training.gradient_check",
            lambda seed: [("structure=tree weighted=0 ner=0", 2e-3)],
        )
        assert main(["gradcheck"]) == 1
        assert "FAILED" in capsys.readouterr().err
        assert main(["gradcheck", "--tolerance", "0.01"]) == 0
