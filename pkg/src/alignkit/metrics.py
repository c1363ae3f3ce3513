"""Alignment error rate and embedding-space diagnostics.

AER follows the standard sure/possible definition:

    AER = 1 - (|A∩S| + |A∩P|) / (|A| + |S|)

with precision |A∩P|/|A| and recall |A∩S|/|S|.  Corpus scores pool the
counts over pairs before taking ratios (micro-average).

The diagnostics quantify how alignment-shaped the embedding space is:
s_bi is the mean cosine between gold-aligned word embeddings across
languages, s_mono the mean cosine between random word pairs within the
same sentence.  A gap (high s_bi, low s_mono) means the space separates
translation equivalence from mere co-occurrence.
"""

from dataclasses import dataclass

import numpy as np

from .aligner import align_states, encode_pair, encode_pair_layers
from .errors import DataError


@dataclass(frozen=True)
class EvalReport:
    n_pred: int        # |A|
    n_sure: int        # |S|
    n_poss: int        # |P|
    n_hit_sure: int    # |A∩S|
    n_hit_poss: int    # |A∩P|
    vacuous: bool = False  # some ratio had an empty denominator

    def __post_init__(self):
        if not (0 <= self.n_hit_sure <= self.n_hit_poss <= self.n_pred):
            raise DataError(
                f"inconsistent counts: |A∩S|={self.n_hit_sure} "
                f"|A∩P|={self.n_hit_poss} |A|={self.n_pred}"
            )

    @property
    def aer(self):
        denom = self.n_pred + self.n_sure
        if denom == 0:
            return 0.0
        return 1.0 - (self.n_hit_sure + self.n_hit_poss) / denom

    @property
    def precision(self):
        return self.n_hit_poss / self.n_pred if self.n_pred else 1.0

    @property
    def recall(self):
        return self.n_hit_sure / self.n_sure if self.n_sure else 1.0


def aer(pred, gold):
    """Score one predicted AlignmentSet against a gold one."""
    A, S, P = pred.links, gold.sure, gold.links
    return EvalReport(
        n_pred=len(A),
        n_sure=len(S),
        n_poss=len(P),
        n_hit_sure=len(A & S),
        n_hit_poss=len(A & P),
        vacuous=not A or not S,
    )


def aggregate(reports):
    """Pool link counts over pairs, then take the ratios."""
    reports = list(reports)
    n_pred = sum(r.n_pred for r in reports)
    n_sure = sum(r.n_sure for r in reports)
    return EvalReport(
        n_pred=n_pred,
        n_sure=n_sure,
        n_poss=sum(r.n_poss for r in reports),
        n_hit_sure=sum(r.n_hit_sure for r in reports),
        n_hit_poss=sum(r.n_hit_poss for r in reports),
        vacuous=n_pred == 0 or n_sure == 0,
    )


def evaluate_sets(preds, golds):
    """Per-pair reports plus the corpus aggregate."""
    if len(preds) != len(golds):
        raise DataError(
            f"{len(preds)} predictions for {len(golds)} gold alignments"
        )
    per_pair = [aer(p, g) for p, g in zip(preds, golds)]
    return per_pair, aggregate(per_pair)


def _require_gold(pairs):
    for p in pairs:
        if p.gold is None:
            raise DataError(f"pair {p.id or '?'} has no gold alignment")


def corpus_aer(model, pairs, layer, c, apply_adapters=True):
    """Align every pair with the model and aggregate against its gold."""
    from .aligner import align_pair

    _require_gold(pairs)
    reports = [
        aer(align_pair(model, p, layer=layer, c=c, apply_adapters=apply_adapters),
            p.gold)
        for p in pairs
    ]
    return aggregate(reports)


def layer_sweep(model, pairs, c, apply_adapters=True):
    """Corpus AER at every layer, with a per-language breakdown.

    Each pair is encoded once to full depth; extraction then reuses the
    per-layer states.  Returns a list of num_layers+1 rows:
    (layer, overall EvalReport, {lang: EvalReport}).
    """
    _require_gold(pairs)
    n_layers = model.config.num_layers
    by_layer = [[] for _ in range(n_layers + 1)]
    langs = [p.lang or "?" for p in pairs]
    for p in pairs:
        hxs, hys = encode_pair_layers(model, p, apply_adapters=apply_adapters)
        for layer, (hx, hy) in enumerate(zip(hxs, hys)):
            pred = align_states(hx, hy, p.src_word_map, p.tgt_word_map, c)
            by_layer[layer].append(aer(pred, p.gold))
    rows = []
    for layer, reports in enumerate(by_layer):
        by_lang = {}
        for lang in sorted(set(langs)):
            by_lang[lang] = aggregate(
                r for r, lg in zip(reports, langs) if lg == lang
            )
        rows.append((layer, aggregate(reports), by_lang))
    return rows


def cosine(u, v):
    """Cosine similarity in float64; zero vectors score 0."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


def word_embeddings(h, word_map):
    """Mean-pool subword rows into one vector per word."""
    from .tensor import Tensor

    arr = h.data if isinstance(h, Tensor) else np.asarray(h)
    if arr.shape[0] != len(word_map):
        raise DataError(
            f"{arr.shape[0]} subword vectors for a word map of {len(word_map)}"
        )
    n_words = word_map[-1] + 1 if len(word_map) else 0
    wm = np.asarray(word_map)
    return [arr[wm == w].mean(axis=0) for w in range(n_words)]


def rep_analysis(model, pairs, layer, seed=0, apply_adapters=True):
    """(s_bi, s_mono) at one layer.

    s_bi: mean cosine over gold-linked word pairs (sure and possible).
    s_mono: for every sentence side with >= 2 words, draw one seeded
    permutation and take cosines between each word and its image; the
    permutation may have fixed points.  Both sides pool into one mean.
    """
    _require_gold(pairs)
    rng = np.random.default_rng(seed)
    bi, mono = [], []
    for p in pairs:
        hx, hy = encode_pair(model, p, layer=layer, apply_adapters=apply_adapters)
        src = word_embeddings(hx, p.src_word_map)
        tgt = word_embeddings(hy, p.tgt_word_map)
        for u, v in sorted(p.gold.links):
            if u >= len(src) or v >= len(tgt):
                raise DataError(
                    f"pair {p.id or '?'}: gold link ({u},{v}) is outside "
                    f"the sentence ({len(src)}x{len(tgt)} words)"
                )
            bi.append(cosine(src[u], tgt[v]))
        for words in (src, tgt):
            if len(words) < 2:
                continue
            perm = rng.permutation(len(words))
            mono.extend(cosine(words[i], words[perm[i]]) for i in range(len(words)))
    if not bi or not mono:
        raise DataError("corpus too small for representation analysis")
    return float(np.mean(bi)), float(np.mean(mono))
