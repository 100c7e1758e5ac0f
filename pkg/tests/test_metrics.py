from __future__ import annotations

import json
import math
import random
import string
from pathlib import Path

import numpy as np
import pytest

import oracles
from synthdial.errors import SchemaError
from synthdial.gateway import mock_embedding
from synthdial.metrics import (
    cider,
    corpus_bleu,
    corpus_rouge_l,
    corpus_rouge_n,
    distinct_n,
    embedding_prf,
    evaluate_all,
    lcs_length,
    rouge_l_sentence,
    rouge_n_sentence,
    tokenize,
)

DATA = Path(__file__).parent / "data"


def mock_embed_fn(tokens: list[str]) -> np.ndarray:
    return np.stack([mock_embedding(t) for t in tokens])


def random_corpus(rng: random.Random, max_pairs=20, max_tokens=15, vocab=None):
    vocab = vocab or list(string.ascii_lowercase[:8])
    n = rng.randrange(1, max_pairs + 1)
    def sentence():
        return [rng.choice(vocab) for _ in range(rng.randrange(1, max_tokens + 1))]
    return [sentence() for _ in range(n)], [sentence() for _ in range(n)]


class TestTokenize:
    def test_contraction(self):
        assert tokenize("I'm fine.") == ["i", "'", "m", "fine", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_punctuation_and_spacing(self):
        assert tokenize("Hello,  world") == ["hello", ",", "world"]

    def test_idempotent_on_joined_output(self):
        rng = random.Random(0)
        samples = [
            "Well... I didn't expect THAT!",
            "It's 2-for-1 (really).",
            "quote: \"yes\" -- she said",
        ]
        for text in samples:
            tokens = tokenize(text)
            assert tokenize(" ".join(tokens)) == tokens


class TestBleu:
    def test_identity_corpus_is_100(self):
        hyps = [tokenize("the quick brown fox jumps"), tokenize("a stitch in time saves nine")]
        scores = corpus_bleu(hyps, hyps, 4)
        assert scores == [100.0, 100.0, 100.0, 100.0]

    def test_hand_computed_brevity_penalty(self):
        out = corpus_bleu([["the", "cat"]], [["the", "cat", "sat"]], 1)
        assert abs(out[0] - 100.0 * math.exp(1 - 3 / 2)) < 1e-9
        assert abs(out[0] - 60.65) < 0.01

    def test_disjoint_vocabulary_smoothed_to_near_zero(self):
        out = corpus_bleu([["a", "b"]], [["c", "d"]], 1)
        assert 0.0 < out[0] < 0.01

    def test_agrees_with_oracle_on_random_corpora(self):
        rng = random.Random(123)
        for _ in range(200):
            hyps, refs = random_corpus(rng)
            mine = corpus_bleu(hyps, refs, 4)
            ref = oracles.bleu_oracle(hyps, refs, 4)
            for a, b in zip(mine, ref):
                assert abs(a - b) < 1e-9 * 100  # 1e-9 pre-scaling

    def test_empty_corpus_rejected(self):
        with pytest.raises(SchemaError):
            corpus_bleu([], [], 4)


class TestDistinct:
    def test_repeated_token(self):
        assert abs(distinct_n([["a", "a", "a"]], 1) - 100 / 3) < 0.01

    def test_all_distinct(self):
        assert distinct_n([["a", "b"], ["c", "d"]], 1) == 100.0

    def test_two_identical_hyps(self):
        assert distinct_n([["a", "b"], ["a", "b"]], 1) == 50.0

    def test_agrees_with_oracle(self):
        rng = random.Random(7)
        for _ in range(100):
            hyps, _ = random_corpus(rng)
            for n in (1, 2):
                if all(len(h) < n for h in hyps):
                    continue
                assert abs(distinct_n(hyps, n) - oracles.distinct_oracle(hyps, n)) < 1e-9 * 100

    def test_no_ngrams_error(self):
        with pytest.raises(SchemaError):
            distinct_n([["a"]], 2)


class TestRougeN:
    def test_identity(self):
        toks = tokenize("so glad to hear that")
        assert rouge_n_sentence(toks, toks, 1) == 100.0
        assert rouge_n_sentence(toks, toks, 2) == 100.0

    def test_hand_counted_overlap(self):
        got = rouge_n_sentence(["a", "b", "c"], ["a", "c", "d"], 1)
        assert abs(got - 100 * (2 / 3)) < 0.01

    def test_no_overlap(self):
        assert rouge_n_sentence(["a"], ["b"], 1) == 0.0

    def test_agrees_with_oracle(self):
        rng = random.Random(99)
        for _ in range(200):
            hyps, refs = random_corpus(rng)
            for n in (1, 2):
                mine = corpus_rouge_n(hyps, refs, n)
                ref = oracles.corpus_rouge_n_oracle(hyps, refs, n)
                assert abs(mine - ref) < 1e-9 * 100


class TestRougeL:
    def test_identity(self):
        toks = tokenize("every little thing is gonna be alright")
        assert rouge_l_sentence(toks, toks) == 100.0

    def test_transposition_fixture(self):
        got = rouge_l_sentence(["a", "b", "c", "d"], ["a", "c", "b", "d"])
        assert got == 75.0

    def test_empty_hyp(self):
        assert rouge_l_sentence([], ["a"]) == 0.0

    def test_lcs_agrees_with_dp_oracle_on_random_strings(self):
        rng = random.Random(31)
        for _ in range(200):
            a = [rng.choice("abcde") for _ in range(rng.randrange(0, 31))]
            b = [rng.choice("abcde") for _ in range(rng.randrange(0, 31))]
            assert lcs_length(a, b) == oracles.lcs_oracle(a, b)

    def test_corpus_agrees_with_oracle(self):
        rng = random.Random(17)
        for _ in range(100):
            hyps, refs = random_corpus(rng)
            assert abs(corpus_rouge_l(hyps, refs) - oracles.corpus_rouge_l_oracle(hyps, refs)) < 1e-9 * 100


class TestCider:
    def test_no_shared_ngrams_scores_zero(self):
        hyps = [["x", "y"], ["p", "q"]]
        refs = [[["a", "b"]], [["c", "d"]]]
        assert cider(hyps, refs) == 0.0

    def test_two_item_disjoint_vocab_identity_is_maximal(self):
        # candidate 0 identical to its only reference; candidate 1 unrelated
        hyps = [
            tokenize("the mountain air is cold and clear"),
            tokenize("completely different words entirely here now"),
        ]
        refs = [
            [tokenize("the mountain air is cold and clear")],
            [tokenize("bright city lights hum all night long")],
        ]
        # hand computation for item 0: identical tf-idf vectors (df=1 -> idf=ln 2)
        # so cosine = 1 for every n, item score = 1 per n
        per_item_0 = []
        for n in range(1, 5):
            per_item_0.append(1.0)
        score = cider(hyps, refs)
        oracle = oracles.cider_oracle(hyps, [list(r) for r in refs])
        assert abs(score - oracle) < 1e-9
        # item 0 attains per-n cosine 1: overall score equals 100 * mean over
        # items of (1.0 + item1)/2 where item1 has no overlap -> 0
        assert abs(score - 100.0 * (sum(per_item_0) / 4 + 0.0) / 2) < 1e-9

    def test_single_item_corpus_scores_zero_with_warning(self, caplog):
        import logging

        with caplog.at_level(logging.WARNING, logger="synthdial.metrics"):
            score = cider([["a", "b"]], [[["a", "b"]]])
        assert score == 0.0
        assert any("single item" in r.message for r in caplog.records)

    def test_bag_of_ngrams_property(self):
        # permuting sentences identically in candidate and reference leaves
        # per-n counts intact only for n=1; verify the n=1-only corpus
        rng = random.Random(5)
        for _ in range(20):
            vocab = ["a", "b", "c", "d"]
            hyp = [rng.choice(vocab) for _ in range(8)]
            ref = [rng.choice(vocab) for _ in range(8)]
            other = [[rng.choice(["x", "y"]) for _ in range(4)]]
            perm = list(range(8))
            rng.shuffle(perm)
            hyp_p = [hyp[i] for i in perm]
            ref_p = [ref[i] for i in perm]
            base = cider([hyp, other[0]], [[ref], [other[0]]], max_n=1)
            permuted = cider([hyp_p, other[0]], [[ref_p], [other[0]]], max_n=1)
            assert abs(base - permuted) < 1e-9

    def test_agrees_with_oracle_on_random_corpora(self):
        rng = random.Random(55)
        for _ in range(100):
            hyps, refs = random_corpus(rng, max_pairs=8, max_tokens=10)
            ref_sets = [[r] for r in refs]
            assert abs(cider(hyps, ref_sets) - oracles.cider_oracle(hyps, ref_sets)) < 1e-9

    def test_multi_reference_sets(self):
        hyps = [["a", "b"], ["c", "d"]]
        refs = [[["a", "b"], ["a", "x"]], [["c", "d"]]]
        score = cider(hyps, refs)
        assert score == pytest.approx(oracles.cider_oracle(hyps, refs), abs=1e-12)


class TestEmbeddingPrf:
    def test_identity_is_exactly_100(self):
        toks = tokenize("warm words help a lot")
        p, r, f1 = embedding_prf(toks, toks, mock_embed_fn)
        assert (p, r, f1) == (100.0, 100.0, 100.0)

    def test_orthogonal_tokens_score_zero(self):
        def basis_embed(tokens):
            eye = np.eye(len(tokens))
            return eye

        p, r, f1 = embedding_prf(["a", "b"], ["c", "d"], basis_embed)
        assert (p, r, f1) == (0.0, 0.0, 0.0)

    def test_hand_set_cosines(self):
        # two hyp tokens with row maxima 1.0 and 0.5 -> P = 75
        vectors = {
            "h1": np.array([1.0, 0.0, 0.0]),
            "h2": np.array([0.0, 1.0, 0.0]),
            "r1": np.array([1.0, 0.0, 0.0]),
            "r2": np.array([0.0, 0.5, math.sqrt(0.75)]),
        }

        def embed(tokens):
            return np.stack([vectors[t] for t in tokens])

        p, _, _ = embedding_prf(["h1", "h2"], ["r1", "r2"], embed)
        assert abs(p - 75.0) < 1e-9

    def test_empty_side(self):
        assert embedding_prf([], ["a"], mock_embed_fn) == (0.0, 0.0, 0.0)

    def test_agrees_with_oracle(self):
        rng = random.Random(2)
        for _ in range(50):
            hyps, refs = random_corpus(rng, max_pairs=1, max_tokens=8)
            mine = embedding_prf(hyps[0], refs[0], mock_embed_fn)
            ref = oracles.embedding_prf_oracle(hyps[0], refs[0], mock_embed_fn)
            for a, b in zip(mine, ref):
                assert abs(a - b) < 1e-9


def write_pairs(tmp_path, pairs, multi_ref=None):
    hyp_path = tmp_path / "hyps.jsonl"
    ref_path = tmp_path / "refs.jsonl"
    with open(hyp_path, "w", encoding="utf-8") as f:
        for pid, hyp, _ in pairs:
            f.write(json.dumps({"id": pid, "text": hyp}) + "\n")
    with open(ref_path, "w", encoding="utf-8") as f:
        for pid, _, ref in pairs:
            obj = {"id": pid, "text": ref}
            if multi_ref and pid in multi_ref:
                obj["texts"] = multi_ref[pid]
            f.write(json.dumps(obj) + "\n")
    return hyp_path, ref_path


class TestEvaluateAll:
    def test_identity_corpus(self, tmp_path):
        pairs = [
            ("p1", "oh no , that sounds really hard .", "oh no , that sounds really hard ."),
            ("p2", "i am so happy for you !", "i am so happy for you !"),
        ]
        hyp_path, ref_path = write_pairs(tmp_path, pairs)
        report = evaluate_all(hyp_path, ref_path, mock_embed_fn)
        for name in ("b1", "b2", "b3", "b4", "r1", "r2", "rl", "emb_f1"):
            assert getattr(report, name) == 100.0
        assert report.n_pairs == 2

    def test_id_mismatch_lists_offenders(self, tmp_path):
        hyp_path = tmp_path / "h.jsonl"
        ref_path = tmp_path / "r.jsonl"
        hyp_path.write_text('{"id": "a", "text": "x"}\n{"id": "b", "text": "y"}\n')
        ref_path.write_text('{"id": "a", "text": "x"}\n{"id": "c", "text": "y"}\n')
        with pytest.raises(SchemaError) as err:
            evaluate_all(hyp_path, ref_path, mock_embed_fn)
        assert "'b'" in str(err.value) and "'c'" in str(err.value)

    def test_report_fields_complete_and_scaled(self, tmp_path):
        pairs = [
            ("p1", "I'm doing well, thanks!", "i am doing well thank you"),
            ("p2", "that is terrible news", "oh no that is awful news"),
            ("p3", "congratulations on the win", "well done on winning"),
        ]
        hyp_path, ref_path = write_pairs(tmp_path, pairs)
        report = evaluate_all(hyp_path, ref_path, mock_embed_fn)
        d = report.to_dict()
        for key in ("b1", "b2", "b3", "b4", "d1", "d2", "r1", "r2", "rl",
                    "cider", "emb_p", "emb_r", "emb_f1"):
            assert d[key] >= 0.0
        for key in ("b1", "b2", "b3", "b4", "d1", "d2", "r1", "r2", "rl"):
            assert d[key] <= 100.0
        assert d["n_pairs"] == 3
        assert d["conventions"]["tokenizer"]

    def test_golden_fixture_bit_for_bit(self, tmp_path):
        golden = json.loads((DATA / "golden_report.json").read_text(encoding="utf-8"))
        hyp_path = DATA / "golden_hyps.jsonl"
        ref_path = DATA / "golden_refs.jsonl"
        report = evaluate_all(hyp_path, ref_path, mock_embed_fn)
        assert report.to_dict() == golden

    def test_permutation_invariance_of_report(self, tmp_path):
        pairs = [
            ("p1", "a warm reply", "a kind reply"),
            ("p2", "totally different", "unrelated text"),
            ("p3", "the sun is out", "the sun came out"),
        ]
        hyp_path, ref_path = write_pairs(tmp_path, pairs)
        base = evaluate_all(hyp_path, ref_path, mock_embed_fn).to_dict()
        for seed in range(5):
            shuffled = list(pairs)
            random.Random(seed).shuffle(shuffled)
            h2, r2 = write_pairs(tmp_path, shuffled)
            report = evaluate_all(h2, r2, mock_embed_fn).to_dict()
            for key in ("b1", "b2", "b3", "b4", "d1", "d2", "cider"):
                assert report[key] == pytest.approx(base[key], abs=1e-9)
            for key in ("r1", "r2", "rl", "emb_p", "emb_r", "emb_f1"):
                assert report[key] == pytest.approx(base[key], abs=1e-9)
