import json

import pytest

from qabot.cli import main


@pytest.fixture()
def tiny_corpus(tmp_path):
    path = tmp_path / "tiny.tsv"
    rows = [
        ("এক কত ?", "এক"),
        ("দুই কত ?", "দুই"),
        ("তিন কত ?", "তিন"),
        ("চার কত ?", "চার"),
    ]
    path.write_text("\n".join(f"{q}\t{a}" for q, a in rows) + "\n", encoding="utf-8")
    return path


class TestStats:
    def test_five_row_report(self, tiny_corpus, capsys):
        assert main(["stats", "--data", str(tiny_corpus)]) == 0
        out = capsys.readouterr().out
        for label in ("Question tokens", "Answer tokens", "Max input length",
                      "Max output length", "Total pairs"):
            assert label in out
        assert "4" in out

    def test_missing_file_is_operational_failure(self, tmp_path, capsys):
        missing = tmp_path / "absent.tsv"
        assert main(["stats", "--data", str(missing)]) == 1
        assert str(missing) in capsys.readouterr().err


class TestUsageErrors:
    def test_unknown_flag_exits_2(self, capsys):
        assert main(["stats", "--nonsense"]) == 2

    def test_unknown_subcommand_exits_2(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_missing_required_exits_2(self, capsys):
        assert main(["train", "--data", "x.tsv"]) == 2  # --out required

    def test_bad_preset_exits_2(self, tiny_corpus, capsys):
        assert main([
            "train", "--data", str(tiny_corpus), "--out", "x.ckpt",
            "--preset", "megatron",
        ]) == 2


class TestTrainEvaluateCycle:
    def test_train_then_evaluate_then_report(self, tiny_corpus, tmp_path, capsys):
        ckpt = tmp_path / "model.ckpt"
        status = main([
            "train", "--data", str(tiny_corpus), "--preset", "simple-rnn",
            "--out", str(ckpt), "--epochs", "2", "--batch-size", "4",
            "--schedule", "constant", "--lr", "0.001", "--quiet",
            "--max-input-len", "4", "--max-output-len", "3",
        ])
        assert status == 0 and ckpt.exists()
        out = capsys.readouterr().out
        assert "final loss" in out

        report_path = tmp_path / "eval.json"
        status = main([
            "evaluate", "--checkpoint", str(ckpt), "--data", str(tiny_corpus),
            "--report", str(report_path),
        ])
        assert status == 0
        out = capsys.readouterr().out
        assert "BLEU" in out
        payload = json.loads(report_path.read_text())
        assert set(payload) >= {"bleu", "precisions", "brevity_penalty"}

    def test_split_evaluation_requires_fraction(self, tiny_corpus, tmp_path, capsys):
        ckpt = tmp_path / "model.ckpt"
        main([
            "train", "--data", str(tiny_corpus), "--preset", "simple-rnn",
            "--out", str(ckpt), "--epochs", "1", "--batch-size", "4",
            "--schedule", "constant", "--quiet",
            "--max-input-len", "4", "--max-output-len", "3",
        ])
        capsys.readouterr()
        assert main([
            "evaluate", "--checkpoint", str(ckpt), "--data", str(tiny_corpus),
            "--split", "test",
        ]) == 1
        assert "--train-fraction" in capsys.readouterr().err

    def test_train_metrics_file(self, tiny_corpus, tmp_path, capsys):
        ckpt = tmp_path / "model.ckpt"
        metrics = tmp_path / "metrics.log"
        main([
            "train", "--data", str(tiny_corpus), "--preset", "simple-rnn",
            "--out", str(ckpt), "--epochs", "1", "--batch-size", "2",
            "--schedule", "constant", "--quiet", "--metrics", str(metrics),
            "--max-input-len", "4", "--max-output-len", "3",
        ])
        lines = metrics.read_text().splitlines()
        assert len(lines) == 2
        assert len(lines[0].split("\t")) == 3


class TestCompare:
    def test_subset_compare_writes_report(self, tiny_corpus, tmp_path, capsys):
        report_path = tmp_path / "compare.json"
        status = main([
            "compare", "--data", str(tiny_corpus),
            "--presets", "simple-rnn,gru",
            "--epochs", "2", "--batch-size", "4", "--schedule", "constant",
            "--report", str(report_path),
            "--max-input-len", "4", "--max-output-len", "3",
        ])
        assert status == 0
        out = capsys.readouterr().out
        assert "simple-rnn" in out and "gru" in out
        rows = json.loads(report_path.read_text())
        assert [row["name"] for row in rows] == ["simple-rnn", "gru"]
        for row in rows:
            assert 0.0 <= row["bleu"] <= 100.0

    def test_all_presets_give_six_row_report(self, tiny_corpus, tmp_path, capsys):
        report_path = tmp_path / "table.json"
        status = main([
            "compare", "--data", str(tiny_corpus),
            "--epochs", "2", "--batch-size", "4", "--schedule", "constant",
            "--report", str(report_path),
            "--max-input-len", "4", "--max-output-len", "3",
        ])
        assert status == 0
        rows = json.loads(report_path.read_text())
        assert len(rows) == 6
        assert [row["name"] for row in rows] == [
            "simple-rnn", "lstm", "gru", "bi-rnn", "seq2seq-attention", "transformer",
        ]

    def test_unknown_preset_name_fails(self, tiny_corpus, capsys):
        assert main([
            "compare", "--data", str(tiny_corpus), "--presets", "nope",
        ]) == 1
        assert "nope" in capsys.readouterr().err


class TestBindResolution:
    def test_flag_beats_env_beats_default(self, monkeypatch):
        from qabot.cli import resolve_bind

        monkeypatch.delenv("QABOT_BIND", raising=False)
        assert resolve_bind(None) == ("127.0.0.1", 8080)
        monkeypatch.setenv("QABOT_BIND", "0.0.0.0:9001")
        assert resolve_bind(None) == ("0.0.0.0", 9001)
        assert resolve_bind("10.1.2.3:7000") == ("10.1.2.3", 7000)

    def test_malformed_bind_rejected(self):
        from qabot.cli import resolve_bind
        from qabot.errors import QabotError

        with pytest.raises(QabotError):
            resolve_bind("no-port")


class TestServeAndChatErrors:
    def test_serve_missing_checkpoint_exits_1(self, tmp_path, capsys):
        missing = tmp_path / "missing.ckpt"
        assert main(["serve", "--checkpoint", str(missing)]) == 1
        assert str(missing) in capsys.readouterr().err

    def test_chat_loop_reads_until_blank(self, tiny_corpus, tmp_path, capsys, monkeypatch):
        ckpt = tmp_path / "model.ckpt"
        main([
            "train", "--data", str(tiny_corpus), "--preset", "simple-rnn",
            "--out", str(ckpt), "--epochs", "1", "--batch-size", "4",
            "--schedule", "constant", "--quiet",
            "--max-input-len", "4", "--max-output-len", "3",
        ])
        capsys.readouterr()
        prompts = iter(["এক কত ?", ""])
        monkeypatch.setattr("builtins.input", lambda *_: next(prompts))
        assert main(["chat", "--checkpoint", str(ckpt)]) == 0
        out = capsys.readouterr().out
        assert "bot>" in out
