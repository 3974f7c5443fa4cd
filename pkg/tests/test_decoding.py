import json
import math
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qabot.checkpoint import build_model
from qabot.decoding import (
    InferenceSession,
    bleu,
    compare,
    evaluate,
    format_compare_table,
    greedy_decode,
)
from qabot.errors import ContractError
from qabot.text import END_ID, QADataset, QAPair, build_vocab
from qabot.training import TrainConfig, train
from qabot.transformer import TransformerConfig

FIXTURE = json.loads(
    (Path(__file__).parent / "fixtures" / "bleu_fixture.json").read_text()
)


class TestBleuFixtures:
    @pytest.mark.parametrize("case", FIXTURE["cases"], ids=lambda c: c["name"])
    def test_frozen_case(self, case):
        report = bleu(case["hypotheses"], case["references"])
        expected = case["expected"]
        assert abs(report.score - expected["score"]) < 1e-6
        assert abs(report.brevity_penalty - expected["brevity_penalty"]) < 1e-6
        assert report.hypothesis_length == expected["hypothesis_length"]
        assert report.reference_length == expected["reference_length"]
        for got, want in zip(report.precisions, expected["precisions"]):
            assert abs(got - want) < 1e-6

    def test_invariant_formula_holds(self):
        case = FIXTURE["cases"][0]
        report = bleu(case["hypotheses"], case["references"])
        log_sum = sum(
            math.log(p) / report.max_n for p in report.precisions if p > 0
        )
        recomputed = report.brevity_penalty * math.exp(log_sum) * 100.0
        assert abs(report.score - recomputed) < 1e-9
        assert 0.0 <= report.brevity_penalty <= 1.0


class TestBleuProperties:
    def test_perfect_match_scores_100(self):
        hyps = [["এটা", "একটা", "উত্তর"], ["মালদ্বীপ"]]
        report = bleu(hyps, [list(h) for h in hyps])
        assert abs(report.score - 100.0) < 1e-9

    def test_disjoint_unigrams_score_zero(self):
        report = bleu([["a", "b"]], [["c", "d"]])
        assert report.score == 0.0

    def test_permutation_invariance(self):
        hyps = [["a", "b"], ["c"], ["d", "e", "f"]]
        refs = [["a", "x"], ["c"], ["d", "e", "y"]]
        base = bleu(hyps, refs).score
        order = [2, 0, 1]
        shuffled = bleu([hyps[i] for i in order], [refs[i] for i in order]).score
        assert abs(base - shuffled) < 1e-12

    @given(st.lists(st.sampled_from("abcde"), min_size=1, max_size=8))
    def test_self_bleu_is_100(self, tokens):
        assert abs(bleu([tokens], [list(tokens)]).score - 100.0) < 1e-9

    def test_appending_wrong_token_strictly_lowers(self):
        perfect = [["x", "y", "z"]]
        refs = [["x", "y", "z"]]
        base = bleu(perfect, refs).score
        worse = bleu([["x", "y", "z", "WRONG"]], refs).score
        assert worse < base

    def test_empty_hypothesis_is_not_an_error(self):
        report = bleu([[]], [["a"]])
        assert report.score == 0.0

    def test_count_mismatch_rejected(self):
        with pytest.raises(ContractError):
            bleu([["a"]], [["a"], ["b"]])
        with pytest.raises(ContractError):
            bleu([], [])


def overfit_session(tmp_path_factory=None):
    pairs = [
        QAPair(("কত",), ("পাঁচ",)),
        QAPair(("কে",), ("আমি",)),
        QAPair(("কোথায়",), ("ঢাকায়",)),
        QAPair(("কখন", "হবে"), ("কালকে",)),
    ]
    dataset = QADataset(pairs)
    vocab = build_vocab(dataset)
    cfg = TransformerConfig(
        vocab_size=vocab.size, max_encoder_len=6, max_decoder_len=5,
        num_layers=1, d_model=16, ffn_units=32, num_heads=2, dropout=0.0,
    )
    model = build_model(cfg, seed=0)
    result = train(model, vocab, dataset, TrainConfig(
        batch_size=4, epochs=250, schedule="constant", base_lr=3e-3, seed=0,
    ))
    return InferenceSession(result.checkpoint), dataset


@pytest.fixture(scope="module")
def memorized():
    return overfit_session()


class TestGreedyDecode:
    def test_immediate_end_gives_empty_answer(self, memorized):
        session, _ = memorized
        fake = InferenceSession.__new__(InferenceSession)
        fake.checkpoint = session.checkpoint
        fake.vocab = session.vocab
        fake.config = session.config
        # output projection pinned so END always wins the first argmax
        fake.model = build_model(session.config, seed=9)
        fake.model.params["out.w"].data[:] = 0.0
        fake.model.params["out.b"].data[:] = 0.0
        fake.model.params["out.b"].data[END_ID] = 10.0
        result = greedy_decode(fake, "কত")
        assert result.answer == "" and result.token_ids == [END_ID]

    def test_memorized_answers_recovered(self, memorized):
        session, dataset = memorized
        for pair in dataset:
            result = greedy_decode(session, " ".join(pair.question))
            assert result.tokens == list(pair.answer)

    def test_step_budget_respected(self, memorized):
        session, _ = memorized
        for budget in (1, 2, 3):
            result = greedy_decode(session, "কত", max_steps=budget)
            assert len(result.token_ids) <= budget

    def test_deterministic(self, memorized):
        session, _ = memorized
        a = greedy_decode(session, "কোথায়")
        b = greedy_decode(session, "কোথায়")
        assert a.token_ids == b.token_ids

    def test_max_steps_validated(self, memorized):
        session, _ = memorized
        with pytest.raises(ContractError):
            greedy_decode(session, "কত", max_steps=0)

    def test_recurrent_decode_path(self):
        pairs = [QAPair(("এক",), ("দুই",)), QAPair(("তিন",), ("চার",))]
        dataset = QADataset(pairs)
        vocab = build_vocab(dataset)
        from qabot.recurrent import RecurrentConfig

        cfg = RecurrentConfig(
            vocab_size=vocab.size, max_encoder_len=4, max_decoder_len=4,
            cell_kind="lstm", hidden_size=16, embedding_size=8,
            attention="dot", dropout=0.0,
        )
        model = build_model(cfg, seed=1)
        result = train(model, vocab, dataset, TrainConfig(
            batch_size=2, epochs=150, schedule="constant", base_lr=5e-3, seed=1,
        ))
        session = InferenceSession(result.checkpoint)
        assert greedy_decode(session, "এক").tokens == ["দুই"]
        assert greedy_decode(session, "তিন").tokens == ["চার"]


class TestEvaluate:
    def test_memorized_model_scores_100_on_training_set(self, memorized):
        session, dataset = memorized
        report = evaluate(session, dataset)
        assert abs(report.score - 100.0) < 1e-9

    def test_empty_set_rejected(self, memorized):
        session, _ = memorized
        with pytest.raises(ContractError):
            evaluate(session, QADataset([]))

    def test_raw_checkpoint_accepted(self, memorized):
        session, dataset = memorized
        report = evaluate(session.checkpoint, dataset)
        assert abs(report.score - 100.0) < 1e-9
        result = greedy_decode(session.checkpoint, " ".join(dataset.pairs[0].question))
        assert result.tokens == list(dataset.pairs[0].answer)


class TestCompare:
    def test_rows_and_table(self):
        pairs = [QAPair(("এক",), ("দুই",)), QAPair(("তিন",), ("চার",))]
        dataset = QADataset(pairs)
        vocab = build_vocab(dataset)
        from qabot.recurrent import RecurrentConfig

        small = dict(
            vocab_size=vocab.size, max_encoder_len=4, max_decoder_len=4,
            hidden_size=8, embedding_size=8, dropout=0.0,
        )
        presets = [
            ("tiny-rnn", RecurrentConfig(cell_kind="rnn", **small)),
            ("tiny-gru", RecurrentConfig(cell_kind="gru", **small)),
        ]
        rows = compare(
            presets, dataset,
            TrainConfig(batch_size=2, epochs=5, schedule="constant", seed=0),
            vocab=vocab,
        )
        assert [row.name for row in rows] == ["tiny-rnn", "tiny-gru"]
        for row in rows:
            assert 0.0 <= row.report.score <= 100.0
            payload = row.to_json_dict()
            assert payload["name"] == row.name and "bleu" in payload
        table = format_compare_table(rows)
        assert "tiny-rnn" in table and "BLEU" in table.splitlines()[0]
