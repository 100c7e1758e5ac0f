"""Corpus evaluation suite built from first principles.

Implements corpus-level BLEU-1..4, Distinct-1/2, sentence-level ROUGE-1/2/L,
TF-IDF n-gram consensus scoring (CIDEr-style), and greedy embedding-match
precision/recall/F1. Every score is reported on a 0-100 scale.

Floating-point accumulation runs in a fixed order (sorted n-grams, plain
left-to-right sums), so reports are bit-stable across runs and concurrency.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import SchemaError
from .io_utils import read_jsonl
from .quality import cosine_similarity

logger = logging.getLogger(__name__)

TokenSeq = list[str]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
TOKENIZER_VERSION = "lower-punct-split-1"
BLEU_EPSILON = 1e-9
SCALE = 100.0

CONVENTIONS = {
    "tokenizer": TOKENIZER_VERSION,
    "scale": SCALE,
    "bleu_smoothing": f"zero precisions replaced by {BLEU_EPSILON} before the log",
    "rouge_f": "plain F1 (beta = 1)",
    "cider_idf": "ln(N/df) over reference sets, df floored at 1",
    "embedding_match": "greedy max-cosine per token; negative means floored at 0",
}


def tokenize(text: str) -> TokenSeq:
    """Lowercase, split punctuation into standalone tokens, split whitespace."""
    return _TOKEN_RE.findall(text.lower())


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hyps: Sequence[TokenSeq], refs: Sequence[TokenSeq], max_n: int = 4) -> list[float]:
    """Corpus-level BLEU-1..max_n with clipped n-gram precision.

    Brevity penalty uses corpus totals H, R: exp(1 - R/H) when H <= R, else 1.
    B-k = 100 * BP * exp(mean of ln p_n over n <= k); a zero precision is
    replaced by a tiny epsilon so the log stays finite.
    """
    if len(hyps) != len(refs) or not hyps:
        raise SchemaError("corpus_bleu needs equal-length, non-empty hyp/ref lists")
    if not 1 <= max_n <= 4:
        raise SchemaError(f"max_n must lie in 1..4, got {max_n}")
    clipped = [0] * (max_n + 1)
    totals = [0] * (max_n + 1)
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hc = ngram_counts(hyp, n)
            rc = ngram_counts(ref, n)
            clipped[n] += sum(min(count, rc[gram]) for gram, count in hc.items())
            totals[n] += max(len(hyp) - n + 1, 0)
    if hyp_len == 0:
        return [0.0] * max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    precisions = [
        (clipped[n] / totals[n]) if totals[n] else 0.0 for n in range(1, max_n + 1)
    ]
    scores = []
    log_sum = 0.0
    for k in range(1, max_n + 1):
        p = precisions[k - 1]
        log_sum += math.log(p if p > 0.0 else BLEU_EPSILON)
        scores.append(SCALE * bp * math.exp(log_sum / k))
    return scores


def distinct_n(hyps: Sequence[TokenSeq], n: int) -> float:
    """100 x unique n-grams / total n-gram occurrences, corpus-wide."""
    if n not in (1, 2):
        raise SchemaError(f"distinct order must be 1 or 2, got {n}")
    seen: set[tuple] = set()
    total = 0
    for hyp in hyps:
        for i in range(len(hyp) - n + 1):
            seen.add(tuple(hyp[i : i + n]))
            total += 1
    if total == 0:
        raise SchemaError(f"no {n}-grams in the corpus")
    return SCALE * len(seen) / total


def rouge_n_sentence(hyp: TokenSeq, ref: TokenSeq, n: int) -> float:
    """Clipped n-gram overlap F1 for one pair; degenerate pairs score 0."""
    hc = ngram_counts(hyp, n)
    rc = ngram_counts(ref, n)
    overlap = sum(min(count, rc[gram]) for gram, count in hc.items())
    h_total = sum(hc.values())
    r_total = sum(rc.values())
    if overlap == 0 or h_total == 0 or r_total == 0:
        return 0.0
    p = overlap / h_total
    r = overlap / r_total
    return SCALE * 2.0 * p * r / (p + r)


def corpus_rouge_n(hyps: Sequence[TokenSeq], refs: Sequence[TokenSeq], n: int) -> float:
    if len(hyps) != len(refs) or not hyps:
        raise SchemaError("rouge needs equal-length, non-empty hyp/ref lists")
    return sum(rouge_n_sentence(h, r, n) for h, r in zip(hyps, refs)) / len(hyps)


def lcs_length(hyp: TokenSeq, ref: TokenSeq) -> int:
    """Longest common subsequence length, via the interned-id kernel."""
    vocab: dict[str, int] = {}
    a = np.fromiter((vocab.setdefault(t, len(vocab)) for t in hyp), dtype=np.int64, count=len(hyp))
    b = np.fromiter((vocab.setdefault(t, len(vocab)) for t in ref), dtype=np.int64, count=len(ref))
    return int(_kernels.lcs_length(a, b))


def rouge_l_sentence(hyp: TokenSeq, ref: TokenSeq) -> float:
    """LCS-based F1 for one pair; empty sides score 0."""
    if not hyp or not ref:
        return 0.0
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(hyp)
    r = lcs / len(ref)
    return SCALE * 2.0 * p * r / (p + r)


def corpus_rouge_l(hyps: Sequence[TokenSeq], refs: Sequence[TokenSeq]) -> float:
    if len(hyps) != len(refs) or not hyps:
        raise SchemaError("rouge needs equal-length, non-empty hyp/ref lists")
    return sum(rouge_l_sentence(h, r) for h, r in zip(hyps, refs)) / len(hyps)


def _idf_table(ref_sets: Sequence[Sequence[TokenSeq]], n: int) -> tuple[Counter, float]:
    """Document frequency over reference sets; an item counts once per n-gram."""
    df: Counter = Counter()
    for ref_set in ref_sets:
        present: set[tuple] = set()
        for ref in ref_set:
            present.update(ngram_counts(ref, n))
        for gram in present:
            df[gram] += 1
    return df, math.log(len(ref_sets))


def _tfidf_cosine(hc: Counter, rc: Counter, idf: Callable[[tuple], float]) -> float:
    """Cosine of two TF-IDF n-gram vectors; zero vectors give 0.

    Sums run over sorted n-grams for bit-stable results.
    """
    h_norm2 = 0.0
    for gram in sorted(hc):
        h_norm2 += (hc[gram] * idf(gram)) ** 2
    r_norm2 = 0.0
    for gram in sorted(rc):
        r_norm2 += (rc[gram] * idf(gram)) ** 2
    if h_norm2 == 0.0 or r_norm2 == 0.0:
        return 0.0
    dot = 0.0
    for gram in sorted(set(hc) & set(rc)):
        w = idf(gram)
        dot += (hc[gram] * w) * (rc[gram] * w)
    return dot / math.sqrt(h_norm2 * r_norm2)


def cider(
    hyps: Sequence[TokenSeq],
    refs: Sequence[Sequence[TokenSeq]],
    max_n: int = 4,
    scale: float = SCALE,
) -> float:
    """TF-IDF weighted n-gram consensus score.

    TF is the raw n-gram count in a sentence; IDF is ln(N/df) with df the
    number of items whose reference set contains the n-gram (floored at 1).
    The per-n item score is the mean cosine of the hypothesis vector against
    each reference vector; the final score averages over n = 1..max_n and
    items, scaled by `scale`.
    """
    if len(hyps) != len(refs) or not hyps:
        raise SchemaError("cider needs equal-length, non-empty hyp/ref lists")
    n_items = len(hyps)
    if n_items < 2:
        logger.warning("cider over a single item: all IDF weights are 0, score is 0")
    per_n_means = []
    for n in range(1, max_n + 1):
        df, log_n = _idf_table(refs, n)

        def idf(gram: tuple) -> float:
            d = df[gram]
            return log_n - math.log(d) if d > 0 else log_n

        item_scores = []
        for hyp, ref_set in zip(hyps, refs):
            hc = ngram_counts(hyp, n)
            sims = [_tfidf_cosine(hc, ngram_counts(ref, n), idf) for ref in ref_set]
            item_scores.append(sum(sims) / len(sims) if sims else 0.0)
        per_n_means.append(sum(item_scores) / n_items)
    return scale * sum(per_n_means) / len(per_n_means)


def embedding_prf(
    hyp: TokenSeq,
    ref: TokenSeq,
    embed_fn: Callable[[list[str]], np.ndarray],
) -> tuple[float, float, float]:
    """Greedy embedding match for one pair.

    P = mean over hyp tokens of the max cosine to any ref token, R the
    mirror image over ref tokens, F1 their harmonic mean. Negative means are
    floored at 0 so reported values stay nonnegative. Empty sides score 0.
    """
    if not hyp or not ref:
        return 0.0, 0.0, 0.0
    tokens = sorted(set(hyp) | set(ref))
    matrix = np.asarray(embed_fn(tokens), dtype=np.float64)
    index = {tok: i for i, tok in enumerate(tokens)}
    sim = np.empty((len(hyp), len(ref)), dtype=np.float64)
    for i, h_tok in enumerate(hyp):
        for j, r_tok in enumerate(ref):
            sim[i, j] = cosine_similarity(matrix[index[h_tok]], matrix[index[r_tok]])
    p = sum(float(v) for v in sim.max(axis=1)) / len(hyp)
    r = sum(float(v) for v in sim.max(axis=0)) / len(ref)
    p = max(p, 0.0)
    r = max(r, 0.0)
    f1 = 2.0 * p * r / (p + r) if (p + r) > 0.0 else 0.0
    return SCALE * p, SCALE * r, SCALE * f1


@dataclass
class MetricReport:
    """Corpus-level scores, all on a 0-100 scale."""

    b1: float
    b2: float
    b3: float
    b4: float
    d1: float
    d2: float
    r1: float
    r2: float
    rl: float
    cider: float
    emb_p: float
    emb_r: float
    emb_f1: float
    n_pairs: int

    def to_dict(self) -> dict:
        return {
            "b1": self.b1, "b2": self.b2, "b3": self.b3, "b4": self.b4,
            "d1": self.d1, "d2": self.d2,
            "r1": self.r1, "r2": self.r2, "rl": self.rl,
            "cider": self.cider,
            "emb_p": self.emb_p, "emb_r": self.emb_r, "emb_f1": self.emb_f1,
            "n_pairs": self.n_pairs,
            "conventions": dict(CONVENTIONS),
        }


def _load_pairs(hyp_path: str | Path, ref_path: str | Path) -> tuple[list[dict], dict[str, dict]]:
    hyps = []
    seen = set()
    for obj in read_jsonl(hyp_path):
        if "id" not in obj or "text" not in obj:
            raise SchemaError(f"{hyp_path}: records need id and text fields")
        if obj["id"] in seen:
            raise SchemaError(f"{hyp_path}: duplicate id {obj['id']!r}")
        seen.add(obj["id"])
        hyps.append(obj)
    refs: dict[str, dict] = {}
    for obj in read_jsonl(ref_path):
        if "id" not in obj or "text" not in obj:
            raise SchemaError(f"{ref_path}: records need id and text fields")
        if obj["id"] in refs:
            raise SchemaError(f"{ref_path}: duplicate id {obj['id']!r}")
        refs[obj["id"]] = obj
    hyp_ids = {h["id"] for h in hyps}
    missing = sorted(hyp_ids ^ set(refs))
    if missing:
        raise SchemaError(f"hyp/ref id mismatch: {missing}")
    return hyps, refs


def evaluate_all(
    hyp_path: str | Path,
    ref_path: str | Path,
    embed_fn: Callable[[list[str]], np.ndarray],
    *,
    cider_scale: float = SCALE,
) -> MetricReport:
    """Score a hypothesis file against a reference file aligned by id.

    Reference records may carry a "texts" list for multi-reference consensus
    scoring; the pairwise metrics always use the primary "text".
    """
    hyp_records, ref_records = _load_pairs(hyp_path, ref_path)
    if not hyp_records:
        raise SchemaError("empty evaluation corpus")
    hyps = [tokenize(h["text"]) for h in hyp_records]
    ref_texts = [ref_records[h["id"]] for h in hyp_records]
    refs = [tokenize(r["text"]) for r in ref_texts]
    ref_sets = [
        [tokenize(t) for t in (r.get("texts") or [r["text"]])] for r in ref_texts
    ]

    bleu = corpus_bleu(hyps, refs, 4)

    def distinct_or_zero(n: int) -> float:
        try:
            return distinct_n(hyps, n)
        except SchemaError:
            return 0.0

    prf = [embedding_prf(h, r, embed_fn) for h, r in zip(hyps, refs)]
    n = len(hyps)
    return MetricReport(
        b1=bleu[0], b2=bleu[1], b3=bleu[2], b4=bleu[3],
        d1=distinct_or_zero(1),
        d2=distinct_or_zero(2),
        r1=corpus_rouge_n(hyps, refs, 1),
        r2=corpus_rouge_n(hyps, refs, 2),
        rl=corpus_rouge_l(hyps, refs),
        cider=cider(hyps, ref_sets, scale=cider_scale),
        emb_p=sum(x[0] for x in prf) / n,
        emb_r=sum(x[1] for x in prf) / n,
        emb_f1=sum(x[2] for x in prf) / n,
        n_pairs=n,
    )
