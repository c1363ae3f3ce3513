"""Alignment induction: similarity, bidirectional thresholding, word merge.

The pipeline is encode → similarity → softmax-in-both-directions →
threshold-intersect → merge subword links up to word links.  Everything
here is a pure function over immutable inputs, so pairs can be processed
in parallel without coordination.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, ShapeError


def _as_link(item):
    i, j = item
    i, j = int(i), int(j)
    if i < 0 or j < 0:
        raise DataError(f"alignment link ({i},{j}) has a negative index")
    return (i, j)


@dataclass(frozen=True)
class AlignmentSet:
    """Word-level links.  `links` is the possible set; `sure` is a subset.

    Predicted alignments carry no sure/possible distinction, so for them
    sure == links.  Gold annotations may mark some links as merely
    possible.
    """

    links: frozenset
    sure: frozenset

    def __post_init__(self):
        if not self.sure <= self.links:
            extra = sorted(self.sure - self.links)
            raise DataError(f"sure links {extra} are missing from the possible set")

    @classmethod
    def of(cls, links, sure=None):
        links = frozenset(_as_link(x) for x in links)
        sure = links if sure is None else frozenset(_as_link(x) for x in sure)
        return cls(links, sure)

    @classmethod
    def empty(cls):
        return cls(frozenset(), frozenset())

    def __len__(self):
        return len(self.links)


def _check_word_map(word_map, n_subwords, what):
    if len(word_map) != n_subwords:
        raise DataError(
            f"{what} word map has {len(word_map)} entries "
            f"for {n_subwords} subwords"
        )
    prev = -1
    for k, w in enumerate(word_map):
        if w < 0:
            raise DataError(f"{what} word map entry {k} is negative")
        if w != prev and w != prev + 1:
            raise DataError(
                f"{what} word map jumps from {prev} to {w} at position {k}; "
                "word indices must be contiguous and non-decreasing from 0"
            )
        prev = w


@dataclass(frozen=True)
class SentencePair:
    """One parallel sentence: subword strings, word maps, optional ids/gold.

    Word maps give, per subword, the index of the word it belongs to
    (0-based, non-decreasing, no gaps).  Token ids are optional — pairs
    loaded for embedding-based extraction don't need them.
    """

    src_subwords: tuple
    tgt_subwords: tuple
    src_word_map: tuple
    tgt_word_map: tuple
    src_ids: tuple = None
    tgt_ids: tuple = None
    id: str = None
    lang: str = None
    gold: AlignmentSet = None

    def __post_init__(self):
        for name in ("src_subwords", "tgt_subwords", "src_word_map", "tgt_word_map",
                     "src_ids", "tgt_ids"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, tuple):
                object.__setattr__(self, name, tuple(v))
        _check_word_map(self.src_word_map, len(self.src_subwords), "source")
        _check_word_map(self.tgt_word_map, len(self.tgt_subwords), "target")
        for ids, subs, what in ((self.src_ids, self.src_subwords, "source"),
                                (self.tgt_ids, self.tgt_subwords, "target")):
            if ids is not None and len(ids) != len(subs):
                raise DataError(
                    f"{what} has {len(ids)} token ids for {len(subs)} subwords"
                )

    @property
    def n_src_words(self):
        return self.src_word_map[-1] + 1 if self.src_word_map else 0

    @property
    def n_tgt_words(self):
        return self.tgt_word_map[-1] + 1 if self.tgt_word_map else 0


def similarity(hx, hy, tape=None):
    """S = hx @ hy^T: dot products between all source/target vectors."""
    if hx.ndim != 2 or hy.ndim != 2:
        raise ShapeError(
            f"similarity expects 2-d inputs, got {hx.shape} and {hy.shape}"
        )
    return T.matmul(hx, T.transpose(hy, tape), tape)


def extract_subword_alignment(S, c):
    """Threshold the row- and column-softmaxed similarity matrix.

    A position is aligned when its probability exceeds c in *both*
    normalization directions.  Returns a boolean numpy matrix.
    """
    if not 0.0 <= c < 1.0:
        raise DataError(f"threshold must be in [0, 1), got {c}")
    if not isinstance(S, T.Tensor):
        S = T.Tensor(np.asarray(S, dtype=np.float32))
    if S.ndim != 2 or S.shape[0] < 1 or S.shape[1] < 1:
        raise ShapeError(f"similarity matrix must be 2-d and non-empty, got {S.shape}")
    p_row = T.row_softmax(S).data
    p_col = T.col_softmax(S).data
    return (p_row > c) & (p_col > c)


def merge_to_words(A_subword, src_word_map, tgt_word_map):
    """Lift subword links to word links: any subword link aligns the words."""
    A = np.asarray(A_subword, dtype=bool)
    n, m = A.shape
    if n != len(src_word_map) or m != len(tgt_word_map):
        raise DataError(
            f"alignment matrix is {n}x{m} but word maps cover "
            f"{len(src_word_map)}x{len(tgt_word_map)} subwords"
        )
    ii, jj = np.nonzero(A)
    return AlignmentSet.of(
        {(src_word_map[i], tgt_word_map[j]) for i, j in zip(ii, jj)}
    )


def align_states(hx, hy, src_word_map, tgt_word_map, c):
    """Run similarity → extract → merge on precomputed hidden states."""
    if hx.shape[0] != len(src_word_map) or hy.shape[0] != len(tgt_word_map):
        raise DataError(
            f"hidden states cover {hx.shape[0]}x{hy.shape[0]} subwords but "
            f"word maps cover {len(src_word_map)}x{len(tgt_word_map)}"
        )
    S = similarity(hx, hy)
    A = extract_subword_alignment(S, c)
    return merge_to_words(A, src_word_map, tgt_word_map)


def encode_pair(model, pair, layer=None, apply_adapters=True, tape=None):
    """Embed both sides, returning hidden states at `layer` with the
    sequence-start/end marker rows stripped off."""
    from .encoder import encode  # local import: avoid cycle at module load

    if layer is None:
        layer = model.config.extract_layer
    if not 0 <= layer <= model.config.num_layers:
        raise DataError(
            f"layer {layer} out of range for a {model.config.num_layers}-layer model"
        )
    if pair.src_ids is None or pair.tgt_ids is None:
        raise DataError(
            f"pair {pair.id or '?'} has no token ids; encoding requires them"
        )
    cfg = model.config
    out = []
    for ids in (pair.src_ids, pair.tgt_ids):
        if len(ids) == 0:
            raise DataError(f"pair {pair.id or '?'} has an empty sentence")
        full = [cfg.cls_id, *ids, cfg.sep_id]
        states = encode(model, full, tape=tape, up_to=layer,
                        apply_adapters=apply_adapters)
        h = T.slice_rows(states[layer], 1, len(full) - 1, tape)
        out.append(h)
    return out[0], out[1]


def encode_pair_layers(model, pair, apply_adapters=True):
    """Like encode_pair but returns all layers: ([hx_0..hx_L], [hy_0..hy_L])."""
    from .encoder import encode

    if pair.src_ids is None or pair.tgt_ids is None:
        raise DataError(
            f"pair {pair.id or '?'} has no token ids; encoding requires them"
        )
    cfg = model.config
    out = []
    for ids in (pair.src_ids, pair.tgt_ids):
        if len(ids) == 0:
            raise DataError(f"pair {pair.id or '?'} has an empty sentence")
        full = [cfg.cls_id, *ids, cfg.sep_id]
        states = encode(model, full, apply_adapters=apply_adapters)
        out.append([T.slice_rows(s, 1, len(full) - 1) for s in states])
    return out[0], out[1]


def align_pair(model, pair, layer=None, c=0.1, apply_adapters=True):
    """Full pipeline for one sentence pair: encode, strip specials, align."""
    hx, hy = encode_pair(model, pair, layer=layer, apply_adapters=apply_adapters)
    return align_states(hx, hy, pair.src_word_map, pair.tgt_word_map, c)


def to_pharaoh(aset):
    """Render links as "i-j" (sure) / "i?j" (possible only), sorted by (i, j)."""
    parts = []
    for i, j in sorted(aset.links):
        sep = "-" if (i, j) in aset.sure else "?"
        parts.append(f"{i}{sep}{j}")
    return " ".join(parts)
