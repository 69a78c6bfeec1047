"""Caption evaluation: syntactic distance, embedding cosine, n-gram metrics.

TED is aggregated over aligned (exemplar, prediction) parse pairs after
word leaves are stripped.  COS embeds each sentence as the mean vector of
its non-stop-word, in-table words.  BLEU@4 is corpus-level with a brevity
penalty and uniform weights, no smoothing; ROUGE-L is the per-instance LCS
F-measure (beta = 1.2, max precision/recall over references) averaged;
CIDEr follows the CIDEr-D convention (corpus tf-idf over 1-4-grams,
clipped numerator, gaussian length penalty sigma = 6, x10 scale).
Diversity maps singular/eigenvalue concentration of one video's captions
through -log_K(ratio) so identical captions score 0 and disjoint ones 1.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingTable
from .syntax import SyntaxTree, strip_leaves, tree_edit_distance

CIDER_N = 4
CIDER_SIGMA = 6.0
ROUGE_BETA = 1.2


class MetricError(Exception):
    pass


class LengthMismatch(MetricError):
    pass


class EmptyPrediction(MetricError):
    pass


class EmptyCorpus(MetricError):
    pass


class TooFewCaptions(MetricError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace after stripping terminal punctuation."""
    return text.strip().rstrip(".!?").lower().split()


# --- syntactic ---------------------------------------------------------------


def avg_ted(prediction_parses: list[SyntaxTree], exemplar_parses: list[SyntaxTree]) -> float:
    """Mean edit distance over aligned pairs, word leaves stripped first."""
    if len(prediction_parses) != len(exemplar_parses):
        raise LengthMismatch(
            f"{len(prediction_parses)} predictions vs {len(exemplar_parses)} exemplars"
        )
    if not prediction_parses:
        raise EmptyCorpus("no parse pairs")
    total = 0
    for pred, exemplar in zip(prediction_parses, exemplar_parses):
        total += tree_edit_distance(strip_leaves(pred), strip_leaves(exemplar))
    return total / len(prediction_parses)


# --- embedding cosine ---------------------------------------------------------


def sentence_vector(words, table: EmbeddingTable) -> np.ndarray | None:
    """Mean vector of the embeddable non-stop words; None if there are none."""
    rows = [table.vectors[w] for w in words if w not in table.stop_words and w in table.vectors]
    if not rows:
        return None
    return np.mean(rows, axis=0)


def cos_similarity(prediction, references, table: EmbeddingTable) -> float:
    """Mean over references of the cosine between sentence vectors.

    A sentence with no embeddable words contributes similarity 0.
    """
    if not prediction:
        raise EmptyPrediction("empty prediction word list")
    if not references:
        raise EmptyCorpus("no references")
    pred_vec = sentence_vector(prediction, table)
    total = 0.0
    for ref in references:
        ref_vec = sentence_vector(ref, table)
        if pred_vec is None or ref_vec is None:
            continue
        denom = np.linalg.norm(pred_vec) * np.linalg.norm(ref_vec)
        if denom > 0:
            total += float(np.dot(pred_vec, ref_vec) / denom)
    return total / len(references)


# --- n-gram metrics -------------------------------------------------------------


def _ngram_counts(words, n: int) -> dict[tuple, int]:
    counts: dict[tuple, int] = defaultdict(int)
    for i in range(len(words) - n + 1):
        counts[tuple(words[i : i + n])] += 1
    return counts


def _check_corpus(predictions, references) -> None:
    if not predictions:
        raise EmptyCorpus("no predictions")
    if len(predictions) != len(references):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(references)} reference groups")
    if any(not refs for refs in references):
        raise EmptyCorpus("an instance has no references")


def bleu4(predictions, references) -> float:
    """Corpus BLEU@4: clipped precisions, uniform weights, brevity penalty.

    No smoothing: any empty n-gram order yields 0.
    """
    _check_corpus(predictions, references)
    correct = [0] * 4
    guess = [0] * 4
    cand_len = 0
    ref_len = 0
    for pred, refs in zip(predictions, references):
        cand_len += len(pred)
        ref_len += min((abs(len(r) - len(pred)), len(r)) for r in refs)[1]
        for n in range(1, 5):
            cand = _ngram_counts(pred, n)
            max_ref: dict[tuple, int] = defaultdict(int)
            for ref in refs:
                for gram, count in _ngram_counts(ref, n).items():
                    max_ref[gram] = max(max_ref[gram], count)
            guess[n - 1] += max(0, len(pred) - n + 1)
            correct[n - 1] += sum(min(c, max_ref[g]) for g, c in cand.items())
    if min(guess) == 0 or min(correct) == 0:
        return 0.0
    log_p = sum(math.log(c / g) for c, g in zip(correct, guess)) / 4.0
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(1, cand_len))
    return bp * math.exp(log_p)


def _lcs_length(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(predictions, references) -> float:
    """Mean per-instance LCS F-measure with beta = 1.2."""
    _check_corpus(predictions, references)
    scores = []
    for pred, refs in zip(predictions, references):
        if not pred:
            scores.append(0.0)
            continue
        precisions = []
        recalls = []
        for ref in refs:
            lcs = _lcs_length(ref, pred)
            precisions.append(lcs / len(pred))
            recalls.append(lcs / len(ref) if ref else 0.0)
        p, r = max(precisions), max(recalls)
        if p == 0.0 or r == 0.0:
            scores.append(0.0)
        else:
            beta_sq = ROUGE_BETA**2
            scores.append((1 + beta_sq) * p * r / (r + beta_sq * p))
    return float(np.mean(scores))


def _tfidf_vec(counts: dict[tuple, int], doc_freq: dict[tuple, float], log_docs: float):
    """CIDEr-D tf-idf vectors per n-gram order, their norms, and the length."""
    vec = [defaultdict(float) for _ in range(CIDER_N)]
    norm = [0.0] * CIDER_N
    length = 0
    for gram, term_freq in counts.items():
        idf = log_docs - math.log(max(1.0, doc_freq[gram]))
        n = len(gram) - 1
        vec[n][gram] = term_freq * idf
        norm[n] += vec[n][gram] ** 2
        if n == 0:
            length += term_freq
    return vec, [math.sqrt(x) for x in norm], length


def _cider_sim(vec_h, vec_r, norm_h, norm_r, len_h, len_r) -> np.ndarray:
    delta = float(len_h - len_r)
    penalty = math.exp(-(delta**2) / (2 * CIDER_SIGMA**2))
    val = np.zeros(CIDER_N)
    for n in range(CIDER_N):
        for gram, weight in vec_h[n].items():
            val[n] += min(weight, vec_r[n][gram]) * vec_r[n][gram]
        if norm_h[n] != 0 and norm_r[n] != 0:
            val[n] /= norm_h[n] * norm_r[n]
        val[n] *= penalty
    return val


def cider_d(predictions, references) -> float:
    """CIDEr-D averaged over instances, document frequencies from this corpus."""
    _check_corpus(predictions, references)
    all_counts = [
        ( _all_ngram_counts(pred), [_all_ngram_counts(r) for r in refs] )
        for pred, refs in zip(predictions, references)
    ]
    doc_freq: dict[tuple, float] = defaultdict(float)
    for _, ref_counts in all_counts:
        seen = set()
        for counts in ref_counts:
            seen.update(counts.keys())
        for gram in seen:
            doc_freq[gram] += 1
    log_docs = math.log(len(predictions))
    scores = []
    for pred_counts, ref_counts in all_counts:
        vec_h, norm_h, len_h = _tfidf_vec(pred_counts, doc_freq, log_docs)
        total = np.zeros(CIDER_N)
        for counts in ref_counts:
            vec_r, norm_r, len_r = _tfidf_vec(counts, doc_freq, log_docs)
            total += _cider_sim(vec_h, vec_r, norm_h, norm_r, len_h, len_r)
        scores.append(float(np.mean(total)) / len(ref_counts) * 10.0)
    return float(np.mean(scores))


def _all_ngram_counts(words) -> dict[tuple, int]:
    counts: dict[tuple, int] = defaultdict(int)
    for n in range(1, CIDER_N + 1):
        for i in range(len(words) - n + 1):
            counts[tuple(words[i : i + n])] += 1
    return counts


# --- diversity -------------------------------------------------------------------


def _log_ratio_score(ratio: float, k: int) -> float:
    if ratio <= 0.0:
        return 1.0
    return min(1.0, max(0.0, -math.log(ratio) / math.log(k)))


def diversity(captions) -> tuple[float, float]:
    """(LSA, pairwise-CIDEr) diversity of one video's captions, both in [0, 1].

    LSA stacks bag-of-words rows and measures singular-value concentration;
    the second score eigendecomposes the normalized pairwise CIDEr kernel.
    Both map the concentration ratio through -log_K, so K identical
    captions give exactly (0, 0) and disjoint-vocabulary captions approach 1.
    """
    k = len(captions)
    if k < 2:
        raise TooFewCaptions(f"need at least 2 captions, got {k}")
    first = captions[0]
    if all(c == first for c in captions[1:]):
        return (0.0, 0.0)

    # LSA: singular values of the K x |vocab| bag-of-words matrix
    vocab = sorted({w for caption in captions for w in caption})
    index = {w: i for i, w in enumerate(vocab)}
    bow = np.zeros((k, max(1, len(vocab))))
    for row, caption in enumerate(captions):
        for w in caption:
            bow[row, index[w]] += 1.0
    singular = np.linalg.svd(bow, compute_uv=False)
    total = singular.sum()
    lsa = _log_ratio_score(singular[0] / total, k) if total > 0 else 0.0

    # pairwise CIDEr kernel over the K captions, df over these K documents
    counts = [_all_ngram_counts(c) for c in captions]
    doc_freq: dict[tuple, float] = defaultdict(float)
    for cnt in counts:
        for gram in cnt:
            doc_freq[gram] += 1
    log_docs = math.log(k)
    vecs = [_tfidf_vec(cnt, doc_freq, log_docs) for cnt in counts]
    kernel = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            vi, ni, li = vecs[i]
            vj, nj, lj = vecs[j]
            kernel[i, j] = float(np.mean(_cider_sim(vi, vj, ni, nj, li, lj)))
    diag = np.sqrt(np.clip(np.diag(kernel), 0.0, None))
    normalized = np.eye(k)
    for i in range(k):
        for j in range(k):
            if diag[i] > 0 and diag[j] > 0:
                normalized[i, j] = kernel[i, j] / (diag[i] * diag[j])
    sym = 0.5 * (normalized + normalized.T)
    eig = np.clip(np.linalg.eigvalsh(sym), 0.0, None)
    roots = np.sqrt(eig)
    total = roots.sum()
    self_cider = _log_ratio_score(roots.max() / total, k) if total > 0 else 0.0
    return (lsa, self_cider)


# --- report assembly -----------------------------------------------------------


@dataclass
class VideoPrediction:
    """One generated caption with its syntactic context, if available."""

    words: list[str]
    parse: SyntaxTree | None = None
    exemplar_parse: SyntaxTree | None = None


@dataclass
class VideoEntry:
    video_id: str
    predictions: list[VideoPrediction]
    references: list[list[str]]


@dataclass
class PerVideoMetrics:
    video_id: str
    avg_ted: float | None
    cos: float | None
    lsa: float | None
    self_cider: float | None


@dataclass
class EvalReport:
    """Per-video and corpus-level metric bundle."""

    per_video: list[PerVideoMetrics] = field(default_factory=list)
    bleu4: float = 0.0
    rouge_l: float = 0.0
    cider: float = 0.0
    meteor: str = "n/a"
    mean_ted: float | None = None
    mean_cos: float | None = None
    mean_lsa: float | None = None
    mean_self_cider: float | None = None

    def to_json(self) -> dict:
        return {
            "corpus": {
                "bleu4": self.bleu4,
                "rouge_l": self.rouge_l,
                "cider": self.cider,
                "meteor": self.meteor,
                "mean_ted": self.mean_ted,
                "mean_cos": self.mean_cos,
                "mean_lsa": self.mean_lsa,
                "mean_self_cider": self.mean_self_cider,
            },
            "per_video": [
                {
                    "video_id": v.video_id,
                    "avg_ted": v.avg_ted,
                    "cos": v.cos,
                    "lsa": v.lsa,
                    "self_cider": v.self_cider,
                }
                for v in self.per_video
            ],
        }


def _mean_or_none(values) -> float | None:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def build_report(entries: list[VideoEntry], table: EmbeddingTable | None = None) -> EvalReport:
    """Assemble the full report; TED and COS are skipped where inputs are missing."""
    if not entries:
        raise EmptyCorpus("no videos to evaluate")
    report = EvalReport()
    flat_predictions = []
    flat_references = []
    for entry in entries:
        pairs = [
            (p.parse, p.exemplar_parse)
            for p in entry.predictions
            if p.parse is not None and p.exemplar_parse is not None
        ]
        ted = None
        if pairs:
            ted = avg_ted([a for a, _ in pairs], [b for _, b in pairs])
        cos = None
        if table is not None and entry.references:
            sims = [
                cos_similarity(p.words, entry.references, table)
                for p in entry.predictions
                if p.words
            ]
            cos = float(np.mean(sims)) if sims else None
        lsa = self_cider = None
        if len(entry.predictions) >= 2:
            lsa, self_cider = diversity([p.words for p in entry.predictions])
        report.per_video.append(PerVideoMetrics(entry.video_id, ted, cos, lsa, self_cider))
        for p in entry.predictions:
            flat_predictions.append(p.words)
            flat_references.append(entry.references)
    report.bleu4 = bleu4(flat_predictions, flat_references)
    report.rouge_l = rouge_l(flat_predictions, flat_references)
    report.cider = cider_d(flat_predictions, flat_references)
    report.mean_ted = _mean_or_none(v.avg_ted for v in report.per_video)
    report.mean_cos = _mean_or_none(v.cos for v in report.per_video)
    report.mean_lsa = _mean_or_none(v.lsa for v in report.per_video)
    report.mean_self_cider = _mean_or_none(v.self_cider for v in report.per_video)
    return report
