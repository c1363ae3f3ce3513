"""Adapter-only finetuning.

The objective rewards probability mass on labeled subword links:

    L = sum_ij A_ij * 1/2 * (Sxy_ij / n + SyxT_ij / m)

where Sxy is the row-normalized similarity matrix, SyxT the
column-normalized one, and A either gold word links expanded to subword
pairs (supervised) or the model's own thresholded extraction
(self-supervised).  The optimizer minimizes -L, averaged over the
batch.  Only adapter tensors receive updates; everything else in the
encoder stays frozen.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .aligner import encode_pair, extract_subword_alignment, similarity
from .errors import DataError

log = logging.getLogger(__name__)

# AdamW constants (only the learning rate is worth configuring)
BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.01

MODES = ("supervised", "self_supervised")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 40
    max_steps: int = 1500
    mode: str = "supervised"
    threshold: float = 0.1
    extract_layer: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DataError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise DataError(f"batch size must be positive, got {self.batch_size}")
        if self.max_steps < 0:
            raise DataError(f"max_steps must be non-negative, got {self.max_steps}")
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.threshold < 1.0:
            raise DataError(f"threshold must be in [0, 1), got {self.threshold}")
        if self.extract_layer < 0:
            raise DataError(f"extract layer must be non-negative, got {self.extract_layer}")


@dataclass
class TrainState:
    step: int = 0
    m: dict = field(default_factory=dict)   # first-moment buffers by tensor name
    v: dict = field(default_factory=dict)   # second-moment buffers
    rng: np.random.Generator = None
    losses: list = field(default_factory=list)  # mean batch loss (-L) per step


def gold_to_subword(gold, src_word_map, tgt_word_map):
    """Expand word links to a subword-level boolean matrix.

    Every subword of a linked source word pairs with every subword of
    the linked target word.  Sure and possible links both count.
    """
    n, m = len(src_word_map), len(tgt_word_map)
    n_words = src_word_map[-1] + 1 if n else 0
    m_words = tgt_word_map[-1] + 1 if m else 0
    A = np.zeros((n, m), dtype=bool)
    smap = np.asarray(src_word_map)
    tmap = np.asarray(tgt_word_map)
    for u, v in gold.links:
        if u >= n_words or v >= m_words:
            raise DataError(
                f"gold link ({u},{v}) is outside the sentence "
                f"({n_words}x{m_words} words)"
            )
        A[np.ix_(smap == u, tmap == v)] = True
    return A


def make_pseudo_labels(model, pair, c, layer=None):
    """Current-model subword extraction, used as training targets."""
    hx, hy = encode_pair(model, pair, layer=layer)
    S = similarity(hx, hy)
    return extract_subword_alignment(S, c)


def alignment_loss(Sxy, SyxT, labels, tape=None):
    """The objective above, as a scalar Tensor on the tape."""
    labels = np.asarray(labels, dtype=bool)
    if Sxy.shape != labels.shape or SyxT.shape != labels.shape:
        raise DataError(
            f"label matrix {labels.shape} does not match "
            f"similarity matrices {Sxy.shape} / {SyxT.shape}"
        )
    n, m = labels.shape
    a = T.weighted_sum(Sxy, labels * (0.5 / n), tape)
    b = T.weighted_sum(SyxT, labels * (0.5 / m), tape)
    return T.add(a, b, tape)


def _adamw_step(model, state, grads, lr):
    """One decoupled-weight-decay Adam update over the adapter tensors.

    Tensors that received no gradient this step (adapters above the
    extraction layer never enter the graph) are left untouched, moments
    included — same convention as mainstream optimizers.
    """
    t = state.step
    new = {}
    for name, w in model.adapters.items():
        g = grads.get(name)
        if g is None:
            new[name] = w
            continue
        m = state.m[name] = BETA1 * state.m[name] + (1 - BETA1) * g
        v = state.v[name] = BETA2 * state.v[name] + (1 - BETA2) * g * g
        m_hat = m / (1 - BETA1 ** t)
        v_hat = v / (1 - BETA2 ** t)
        step = lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + WEIGHT_DECAY * w.data)
        new[name] = T.Tensor((w.data - step).astype(np.float32))
    return model.with_adapters(new)


def _pair_loss_and_grads(model, pair, labels, cfg, grad_scale):
    """Forward/backward for one pair; returns (loss value, grads by name)."""
    tape = T.Tape()
    tape.watch(*model.adapters.values())
    hx, hy = encode_pair(model, pair, layer=cfg.extract_layer, tape=tape)
    S = similarity(hx, hy, tape)
    Sxy = T.row_softmax(S, tape)
    SyxT = T.col_softmax(S, tape)
    if labels is None:  # self-supervised: extract from the live similarities
        labels = (Sxy.data > cfg.threshold) & (SyxT.data > cfg.threshold)
    loss = alignment_loss(Sxy, SyxT, labels, tape)
    grads = tape.gradients(loss, seed=grad_scale)
    by_name = {
        name: grads[id(w)] for name, w in model.adapters.items() if id(w) in grads
    }
    return loss.item(), by_name


def _validation_aer(model, val_pairs, cfg):
    from .metrics import corpus_aer  # local import; metrics builds on this module's peers

    return corpus_aer(model, val_pairs, layer=cfg.extract_layer, c=cfg.threshold).aer


def train(model, corpus, cfg, val_corpus=None, val_every=100):
    """Run the finetuning loop; returns (finetuned model, TrainState).

    Batches are drawn from a seeded shuffle, reshuffled each epoch; a
    short final slice of an epoch becomes a smaller batch rather than
    mixing epochs.  With val_corpus, the adapters with the best
    validation error rate (checked every val_every steps and at the
    end) are returned instead of the last ones.
    """
    if not corpus:
        raise DataError("training corpus is empty")
    for p in corpus:
        if p.src_ids is None or p.tgt_ids is None:
            raise DataError(f"pair {p.id or '?'} has no token ids")
        if cfg.mode == "supervised" and p.gold is None:
            raise DataError(f"supervised training needs gold for pair {p.id or '?'}")

    labels = None
    if cfg.mode == "supervised":
        labels = [
            gold_to_subword(p.gold, p.src_word_map, p.tgt_word_map) for p in corpus
        ]

    state = TrainState(rng=np.random.default_rng(cfg.seed))
    state.m = {n: np.zeros(w.shape, np.float32) for n, w in model.adapters.items()}
    state.v = {n: np.zeros(w.shape, np.float32) for n, w in model.adapters.items()}

    best = (float("inf"), model)
    order = []
    while state.step < cfg.max_steps:
        if not order:
            order = list(state.rng.permutation(len(corpus)))
        batch = [order.pop() for _ in range(min(cfg.batch_size, len(order)))]
        state.step += 1

        # minimize the batch mean of -L: each pair contributes -1/B of
        # its dL, accumulated across per-pair tapes
        scale = np.float32(-1.0 / len(batch))
        batch_loss = 0.0
        acc = {}
        for k in batch:
            lab = labels[k] if labels is not None else None
            val, grads = _pair_loss_and_grads(model, corpus[k], lab, cfg, scale)
            batch_loss -= val / len(batch)
            for name, g in grads.items():
                if name in acc:
                    acc[name] = acc[name] + g
                else:
                    acc[name] = g

        model = _adamw_step(model, state, acc, cfg.learning_rate)
        state.losses.append(batch_loss)
        if state.step % 100 == 0 or state.step == cfg.max_steps:
            log.info("step %d  loss %.6f", state.step, batch_loss)

        if val_corpus and (state.step % val_every == 0 or state.step == cfg.max_steps):
            aer = _validation_aer(model, val_corpus, cfg)
            log.info("step %d  validation AER %.4f", state.step, aer)
            if aer < best[0]:
                best = (aer, model)

    if val_corpus and best[0] < float("inf"):
        model = best[1]
    return model, state


def write_loss_log(path, losses):
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,loss\n")
        for i, v in enumerate(losses, start=1):
            f.write(f"{i},{v:.8f}\n")


def read_loss_log(path):
    out = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "step,loss":
            raise DataError(f"{path}: expected 'step,loss' header, got {header!r}")
        for line in f:
            _, v = line.strip().split(",")
            out.append(float(v))
    return out
