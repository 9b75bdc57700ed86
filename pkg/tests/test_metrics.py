import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import brute_force_auroc
from newsbias.corpus import SplitManifest
from newsbias.errors import ConfigError, DataError
from newsbias.metrics import (
    TrialResult,
    append_trial,
    auroc_multiclass,
    evaluate,
    macro_f1,
    read_trials,
)


class TestAuroc:
    def test_perfect_ranking_is_one(self):
        labels = [0, 0, 1, 1, 2, 2]
        scores = np.zeros((6, 3))
        for i, c in enumerate(labels):
            scores[i, c] = 10 + i
        assert auroc_multiclass(scores, labels) == 1.0

    def test_constant_scores_give_half(self):
        labels = [0, 1, 2, 0, 1, 2]
        scores = np.full((6, 3), 0.5)
        assert auroc_multiclass(scores, labels) == pytest.approx(0.5)

    def test_six_sample_hand_case_matches_oracle(self):
        rng = np.random.default_rng(42)
        scores = rng.random((6, 3))
        labels = np.array([0, 1, 2, 0, 1, 2])
        assert auroc_multiclass(scores, labels) == pytest.approx(
            brute_force_auroc(scores, labels), abs=1e-12
        )

    @pytest.mark.filterwarnings("ignore:class \\d absent")
    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            m = int(rng.integers(3, 51))
            labels = rng.integers(0, 3, size=m)
            while len(np.unique(labels)) < 2:
                labels = rng.integers(0, 3, size=m)
            scores = np.round(rng.random((m, 3)), 2)  # force ties sometimes
            assert auroc_multiclass(scores, labels) == pytest.approx(
                brute_force_auroc(scores, labels), abs=1e-12
            )

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(3)
        scores = rng.random((30, 3))
        labels = rng.integers(0, 3, size=30)
        before = auroc_multiclass(scores, labels)
        after = auroc_multiclass(np.exp(5 * scores) + 7, labels)
        assert before == pytest.approx(after, abs=1e-12)

    def test_absent_class_skipped_with_warning(self):
        labels = [0, 0, 1, 1]
        scores = np.random.default_rng(0).random((4, 3))
        with pytest.warns(UserWarning, match="class 2 absent"):
            value = auroc_multiclass(scores, labels)
        assert 0.0 <= value <= 1.0

    def test_single_class_rejected(self):
        scores = np.random.default_rng(0).random((4, 3))
        with pytest.raises(DataError, match="two classes"):
            auroc_multiclass(scores, [1, 1, 1, 1])

    def test_too_few_samples_rejected(self):
        with pytest.raises(DataError):
            auroc_multiclass(np.zeros((1, 3)), [0])


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1([0, 1, 2], [0, 1, 2]) == 1.0

    def test_all_one_class_on_balanced_labels(self):
        labels = [0, 1, 2] * 4
        pred = [0] * 12
        assert macro_f1(pred, labels) == pytest.approx(1 / 6)

    def test_empty_class_contributes_zero(self):
        # class 2 never predicted, never true -> F1 = 0 by definition
        assert macro_f1([0, 1, 0, 1], [0, 1, 1, 0]) == pytest.approx(
            (0.5 + 0.5 + 0.0) / 3
        )

    @given(st.permutations([0, 1, 2]))
    @settings(max_examples=6, deadline=None)
    def test_invariant_under_class_permutation(self, perm):
        rng = np.random.default_rng(11)
        labels = rng.integers(0, 3, size=40)
        pred = rng.integers(0, 3, size=40)
        mapped = np.array(perm)
        assert macro_f1(pred, labels) == pytest.approx(
            macro_f1(mapped[pred], mapped[labels]), abs=1e-12
        )

    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            macro_f1([0], [0, 1])


class TestTrialResultIO:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "results.jsonl"
        r1 = TrialResult("ours", 1, "test1", 150, 0.91, 0.85, "hash64@1", "abc")
        r2 = TrialResult("ours", 2, "test2", 150, 0.88, 0.80, "hash64@1", "abc")
        append_trial(path, r1)
        append_trial(path, r2)
        assert read_trials(path) == [r1, r2]

    def test_range_validation(self):
        with pytest.raises(ConfigError):
            TrialResult("m", 0, "test1", 10, 1.5, 0.5)

    def test_bad_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"model_tag": "m"}\n', encoding="utf-8")
        with pytest.raises(DataError, match=":1:"):
            read_trials(path)


class TestEvaluate:
    def test_deterministic(self, trained):
        a = evaluate(trained.checkpoint_path, trained.manifest, "test1", trained.articles)
        b = evaluate(trained.checkpoint_path, trained.manifest, "test1", trained.articles)
        assert a == b

    def test_separable_corpus_scores_high(self, trained):
        result = evaluate(trained.checkpoint_path, trained.manifest, "test1",
                          trained.articles)
        assert result.auroc >= 0.95
        assert result.macro_f1 >= 0.90
        assert result.test_set == "test1"
        assert result.train_size == 150
        assert result.seed == 1
        assert result.encoder == "hash64@1"

    def test_encoder_mismatch_rejected(self, trained):
        with pytest.raises(ConfigError, match="does not match checkpoint"):
            evaluate(trained.checkpoint_path, trained.manifest, "test1",
                     trained.articles, encoder_name="hash8")

    def test_single_class_split_propagates_error(self, trained):
        left_ids = [
            i for i in trained.manifest.splits["test1"]
            if trained.manifest.labels[i] == "left"
        ]
        broken = SplitManifest(
            config=trained.manifest.config,
            seed=0,
            splits={"train": [], "test1": left_ids, "test2": [], "valid": []},
            outlets=trained.manifest.outlets,
            per_class_counts={},
            labels=trained.manifest.labels,
        )
        with pytest.raises(DataError, match="two classes"):
            evaluate(trained.checkpoint_path, broken, "test1", trained.articles)

    def test_empty_split_rejected(self, trained):
        with pytest.raises(ConfigError, match="empty"):
            evaluate(trained.checkpoint_path, trained.manifest, "valid",
                     trained.articles)

    def test_model_tag_override(self, trained):
        result = evaluate(trained.checkpoint_path, trained.manifest, "test1",
                          trained.articles, model_tag="renamed")
        assert result.model_tag == "renamed"
