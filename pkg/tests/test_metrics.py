"""BLEU against a count-and-clip oracle, greedy-match embedding scores
against a hand-looped oracle, and the t-test against direct quadrature."""

import math

import numpy as np
import pytest

from cxrgen.errors import ConfigError, ContractError, DegenerateInputError
from cxrgen.metrics import (Corpus, EmbeddingTable, EvaluationReport, bleu,
                            embedding_f1, evaluate_corpus, paired_t_test)

from oracles import (count_and_clip_bleu, greedy_match_scores, paired_t_statistic,
                     t_distribution_two_sided_p)


def corpus(hyps, refs):
    return Corpus.from_lists(hyps, refs)


def random_corpus(rng, n_pairs=6, vocab=("a", "b", "c", "d", "e"), max_len=10):
    hyps, refs = [], []
    for _ in range(n_pairs):
        hyps.append([vocab[i] for i in rng.integers(0, len(vocab),
                                                    size=rng.integers(1, max_len + 1))])
        refs.append([vocab[i] for i in rng.integers(0, len(vocab),
                                                    size=rng.integers(1, max_len + 1))])
    return corpus(hyps, refs)


class TestBleu:
    def test_identity_corpus_is_exactly_one(self):
        c = corpus([["the", "cat", "sat", "down"], ["on", "the", "mat", "it", "sat"]],
                   [["the", "cat", "sat", "down"], ["on", "the", "mat", "it", "sat"]])
        assert bleu(c) == [1.0, 1.0, 1.0, 1.0]

    def test_sequences_shorter_than_n_floor_that_order(self):
        # no 4-grams exist, so BLEU-4 falls to the epsilon-smoothed floor
        c = corpus([["a", "b"]], [["a", "b"]])
        scores = bleu(c)
        assert scores[:2] == [1.0, 1.0]
        assert scores[3] < 1e-2

    def test_disjoint_corpus_floors_at_epsilon(self):
        c = corpus([["a", "b", "c"]], [["x", "y", "z"]])
        scores = bleu(c)
        assert scores[0] <= 1e-6

    def test_brevity_penalty_hand_case(self):
        # hyp "the cat sat" vs ref "the cat sat down": p1 = 1, BP = exp(1 - 4/3)
        c = corpus([["the", "cat", "sat"]], [["the", "cat", "sat", "down"]])
        scores = bleu(c)
        assert scores[0] == pytest.approx(math.exp(1.0 - 4.0 / 3.0), abs=1e-12)

    def test_clipping_hand_case(self):
        # hyp repeats "the" 4x, ref has it twice: clipped p1 = 2/4, c=r so BP=1
        c = corpus([["the", "the", "the", "the"]], [["the", "cat", "the", "sat"]])
        assert bleu(c)[0] == pytest.approx(0.5, abs=1e-12)

    def test_matches_count_and_clip_oracle_on_random_corpora(self):
        rng = np.random.default_rng(1234)
        for _ in range(200):
            c = random_corpus(rng)
            ours = bleu(c)
            expected = count_and_clip_bleu(c.hypotheses, c.references)
            for a, b in zip(ours, expected):
                assert abs(a - b) < 1e-9

    def test_invariant_under_pair_reordering(self):
        rng = np.random.default_rng(5)
        c = random_corpus(rng, n_pairs=8)
        order = rng.permutation(len(c))
        shuffled = corpus([c.hypotheses[i] for i in order],
                          [c.references[i] for i in order])
        np.testing.assert_allclose(bleu(c), bleu(shuffled), rtol=0, atol=0)

    def test_scores_stay_in_unit_interval(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            c = random_corpus(rng, n_pairs=4, vocab=("a", "b"), max_len=8)
            for score in bleu(c):
                assert 0.0 <= score <= 1.0

    def test_monotonicity_in_n_admits_counterexamples(self):
        """BLEU-n is usually non-increasing in n, but not always: with a tiny
        vocabulary, bigram precision can exceed unigram precision. Pin one
        such corpus so the behavior (shared with the oracle) stays fixed."""
        hyps = [["a", "b", "b", "a", "a", "b", "a"], ["a", "b", "a", "a"],
                ["a"], ["a", "a", "b", "a", "b", "b", "a", "b"]]
        refs = [["b", "a", "b", "b", "b", "a", "b"], ["b", "a", "b", "a"],
                ["b", "b"], ["a", "b", "a"]]
        scores = bleu(corpus(hyps, refs))
        expected = count_and_clip_bleu(hyps, refs)
        np.testing.assert_allclose(scores, expected, atol=1e-9)
        assert scores[1] > scores[0]

    def test_empty_corpus_rejected(self):
        with pytest.raises(ContractError):
            Corpus.from_lists([], [])

    def test_empty_sequence_rejected(self):
        with pytest.raises(ContractError):
            Corpus.from_lists([[]], [["a"]])

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ContractError):
            Corpus.from_lists([["a"]], [["a"], ["b"]])


class TestEmbeddingF1:
    def unit_table(self, dim=4):
        vectors = {t: np.eye(dim)[i] for i, t in enumerate(["a", "b", "c", "d"])}
        return EmbeddingTable(vectors)

    def test_identity_is_exactly_one(self):
        table = self.unit_table()
        c = corpus([["a", "b", "c"]], [["a", "b", "c"]])
        p, r, f1 = embedding_f1(c, table)
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_orthogonal_disjoint_is_zero(self):
        table = self.unit_table()
        c = corpus([["a", "b"]], [["c", "d"]])
        p, r, f1 = embedding_f1(c, table)
        assert (p, r, f1) == (0.0, 0.0, 0.0)

    def test_two_token_toy_case_against_oracle(self):
        vectors = {
            "warm": [1.0, 0.0],
            "hot": [0.8, 0.6],
            "cold": [0.0, 1.0],
        }
        table = EmbeddingTable({k: np.asarray(v) for k, v in vectors.items()})
        hyp, ref = ["warm", "cold"], ["hot"]
        expected_p, expected_r = greedy_match_scores(hyp, ref, vectors)
        c = corpus([hyp], [ref])
        p, r, f1 = embedding_f1(c, table)
        assert p == pytest.approx(expected_p, abs=1e-12)
        assert r == pytest.approx(expected_r, abs=1e-12)
        assert f1 == pytest.approx(2 * p * r / (p + r), abs=1e-12)

    def test_random_corpora_against_oracle(self):
        rng = np.random.default_rng(42)
        tokens = ["a", "b", "c", "d", "e"]
        vectors = {t: rng.normal(size=3) for t in tokens}
        table = EmbeddingTable({t: v.copy() for t, v in vectors.items()})
        for _ in range(20):
            c = random_corpus(rng, n_pairs=3, vocab=tuple(tokens), max_len=6)
            p_terms, r_terms = [], []
            for hyp, ref in zip(c.hypotheses, c.references):
                vec_map = {t: list(vectors[t]) for t in tokens}
                pp, rr = greedy_match_scores(list(hyp), list(ref), vec_map)
                p_terms.append(pp)
                r_terms.append(rr)
            p, r, _ = embedding_f1(c, table)
            assert p == pytest.approx(np.mean(p_terms), abs=1e-9)
            assert r == pytest.approx(np.mean(r_terms), abs=1e-9)

    def test_symmetry_under_corpus_swap(self):
        table = self.unit_table()
        c = corpus([["a", "b"], ["c"]], [["b", "d"], ["c", "a"]])
        swapped = corpus([["b", "d"], ["c", "a"]], [["a", "b"], ["c"]])
        p1, r1, f1a = embedding_f1(c, table)
        p2, r2, f1b = embedding_f1(swapped, table)
        assert p1 == pytest.approx(r2) and r1 == pytest.approx(p2)
        assert f1a == pytest.approx(f1b)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            EmbeddingTable({"a": np.ones(2), "b": np.ones(3)})

    def test_unknown_token_policies(self):
        table = self.unit_table()
        c = corpus([["zebra"]], [["a"]])
        with pytest.raises(ContractError):
            embedding_f1(c, table)
        lenient = EmbeddingTable(table.vectors, unknown_policy="zero")
        p, r, f1 = embedding_f1(c, lenient)
        assert p == 0.0

    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("a 1.0 0.0\nb 0.0 1.0\n")
        table = EmbeddingTable.from_file(path)
        assert table.dim == 2
        np.testing.assert_array_equal(table.lookup("a"), [1.0, 0.0])


class TestPairedTTest:
    def test_identical_inputs_degenerate(self):
        with pytest.raises(DegenerateInputError):
            paired_t_test([0.3, 0.4, 0.5], [0.3, 0.4, 0.5])

    def test_jitter_below_tolerance_degenerate(self):
        a = [0.3, 0.4, 0.5, 0.6]
        b = [x + 1e-15 for x in a]
        with pytest.raises(DegenerateInputError):
            paired_t_test(a, b)

    def test_constant_shift_is_significant(self):
        rng = np.random.default_rng(3)
        base = rng.normal(size=6)
        shifted = base + 1.0 + rng.normal(scale=1e-6, size=6)
        result = paired_t_test(shifted, base)
        assert abs(result.t) > 1e4
        assert result.p < 1e-10
        assert result.significant

    def test_against_direct_formula_and_quadrature(self):
        a = [0.5, -0.3, 0.8, 0.1]
        b = [0.0, 0.0, 0.0, 0.0]
        result = paired_t_test(a, b)
        expected_t = paired_t_statistic(a, b)
        expected_p = t_distribution_two_sided_p(expected_t, df=3)
        assert result.t == pytest.approx(expected_t, rel=1e-12)
        assert result.p == pytest.approx(expected_p, rel=1e-6)
        assert result.significant == (result.p < 0.05)

    def test_antisymmetry(self):
        a = [0.9, 0.7, 0.8, 0.75]
        b = [0.6, 0.72, 0.71, 0.69]
        ab = paired_t_test(a, b)
        ba = paired_t_test(b, a)
        assert ab.t == pytest.approx(-ba.t, rel=1e-12)
        assert ab.p == pytest.approx(ba.p, rel=1e-12)

    def test_preconditions(self):
        with pytest.raises(ContractError):
            paired_t_test([1.0], [0.5])
        with pytest.raises(ContractError):
            paired_t_test([1.0, 2.0], [0.5])
        with pytest.raises(ConfigError):
            paired_t_test([1.0, 2.0], [0.5, 0.1], alpha=1.5)


class TestEvaluationReport:
    def test_round_trip_and_fixed_keys(self, tmp_path):
        c = corpus([["a", "b"]], [["a", "b"]])
        table = EmbeddingTable({"a": np.asarray([1.0, 0.0]), "b": np.asarray([0.0, 1.0])})
        report = evaluate_corpus(c, table)
        assert report.bleu_1 == 1.0 and report.f1_embed == 1.0
        path = tmp_path / "report.json"
        report.to_json(path)
        again = EvaluationReport.from_json(path)
        assert again == report
        assert "embedding" in report.note

    def test_f1_is_harmonic_mean(self):
        table = EmbeddingTable({"a": np.asarray([1.0, 0.0]), "b": np.asarray([0.0, 1.0]),
                                "c": np.asarray([1.0, 1.0])})
        c = corpus([["a", "c"]], [["a", "b"]])
        report = evaluate_corpus(c, table)
        p, r = report.p_embed, report.r_embed
        assert report.f1_embed == pytest.approx(2 * p * r / (p + r), rel=1e-12)
