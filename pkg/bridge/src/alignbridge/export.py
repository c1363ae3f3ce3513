"""Export BERT-family weights and contextual embeddings for alignment.

Two jobs, both one-way:

* export_weights: dump a pretrained post-LN encoder into the consumer's
  named-tensor scheme, adding identity-initialized adapter slots
  (W_down ~ N(0, 1e-3), W_up = 0) so the file loads as a trainable model.
* export_embeddings: tokenize a parallel text corpus with the model's own
  tokenizer, run a deterministic eval-mode forward, and dump per-layer
  hidden states per sentence side, plus the JSONL corpus whose word maps
  come from the tokenizer's word segmentation.

Everything is written float32 regardless of source precision.  Rows for
boundary tokens ([CLS]/[SEP]) are kept in the embedding tensors and
flagged in a per-sentence "special_mask" so the consumer strips them.
"""

import json
import logging
import re
from pathlib import Path

import numpy as np
import torch

from . import acwt
from .errors import DataError, ExportError
from .manifest import build_manifest, write_manifest

log = logging.getLogger(__name__)

ADAPTER_DIM_DEFAULT = 128
ADAPTER_INIT_STD = 1e-3

# header vector of the consumer's model files, in this exact order
CONFIG_FIELDS = (
    "num_layers", "hidden_dim", "num_heads", "ffn_dim", "adapter_dim",
    "vocab_size", "max_positions", "cls_id", "sep_id", "extract_layer",
)

# consumer name -> source checkpoint name (embeddings; per-layer below)
_EMBED_MAP = {
    "embed.token.weight": "embeddings.word_embeddings.weight",
    "embed.position.weight": "embeddings.position_embeddings.weight",
    "embed.segment.weight": "embeddings.token_type_embeddings.weight",
    "embed.norm.gain": "embeddings.LayerNorm.weight",
    "embed.norm.bias": "embeddings.LayerNorm.bias",
}

_LAYER_MAP = {
    "attn.q.weight": "attention.self.query.weight",
    "attn.q.bias": "attention.self.query.bias",
    "attn.k.weight": "attention.self.key.weight",
    "attn.k.bias": "attention.self.key.bias",
    "attn.v.weight": "attention.self.value.weight",
    "attn.v.bias": "attention.self.value.bias",
    "attn.out.weight": "attention.output.dense.weight",
    "attn.out.bias": "attention.output.dense.bias",
    "attn.norm.gain": "attention.output.LayerNorm.weight",
    "attn.norm.bias": "attention.output.LayerNorm.bias",
    "ffn.in.weight": "intermediate.dense.weight",
    "ffn.in.bias": "intermediate.dense.bias",
    "ffn.out.weight": "output.dense.weight",
    "ffn.out.bias": "output.dense.bias",
    "ffn.norm.gain": "output.LayerNorm.weight",
    "ffn.norm.bias": "output.LayerNorm.bias",
}


def load_backbone(model_id, revision=None):
    """Load model + tokenizer in deterministic eval mode.

    Raises ExportError with the offending id if the checkpoint cannot be
    found or is not a plain post-LN BERT-style encoder.
    """
    from transformers import AutoModel, AutoTokenizer
    from transformers.utils import logging as hf_logging

    hf_logging.disable_progress_bar()
    try:
        model = AutoModel.from_pretrained(
            model_id, revision=revision, attn_implementation="eager"
        )
        tokenizer = AutoTokenizer.from_pretrained(model_id, revision=revision)
    except Exception as e:
        raise ExportError(f"cannot load model {model_id!r}: {e}") from None

    cfg = model.config
    for attr in ("hidden_size", "num_hidden_layers", "num_attention_heads",
                 "intermediate_size", "vocab_size", "max_position_embeddings"):
        if not hasattr(cfg, attr):
            raise ExportError(f"{model_id!r} has no {attr}; not a BERT-style encoder")
    if getattr(cfg, "position_embedding_type", "absolute") != "absolute":
        raise ExportError(
            f"{model_id!r} uses {cfg.position_embedding_type} position "
            "embeddings; only absolute is exportable"
        )
    if getattr(cfg, "hidden_act", "gelu") != "gelu":
        raise ExportError(
            f"{model_id!r} uses activation {cfg.hidden_act!r}; the consumer "
            "computes exact-erf gelu, so parity would not hold"
        )
    eps = float(getattr(cfg, "layer_norm_eps", 1e-12))
    if abs(eps - 1e-12) > 0:
        log.warning("layer_norm_eps is %g (consumer uses 1e-12); "
                    "tiny numeric drift expected", eps)
    if tokenizer.cls_token_id is None or tokenizer.sep_token_id is None:
        raise ExportError(f"{model_id!r} tokenizer has no [CLS]/[SEP] tokens")

    model = model.float().eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, tokenizer


def map_backbone_weights(model) -> dict:
    """State dict -> consumer naming scheme, float32 numpy."""
    state = {k: v.detach().float().numpy() for k, v in model.state_dict().items()}

    def grab(key):
        if key not in state:
            raise ExportError(f"checkpoint is missing tensor {key!r}")
        return np.ascontiguousarray(state[key], dtype=np.float32)

    out = {name: grab(src) for name, src in _EMBED_MAP.items()}
    seg = out["embed.segment.weight"]
    if seg.shape[0] > 2:
        out["embed.segment.weight"] = np.ascontiguousarray(seg[:2])
    elif seg.shape[0] == 1:
        # only segment 0 is ever used downstream; pad the unused slot
        out["embed.segment.weight"] = np.vstack([seg, np.zeros_like(seg)])
    for i in range(model.config.num_hidden_layers):
        for name, src in _LAYER_MAP.items():
            out[f"layer.{i}.{name}"] = grab(f"encoder.layer.{i}.{src}")
    return out


def identity_adapters(num_layers, hidden_dim, adapter_dim, seed=0) -> dict:
    """Adapter slots matching the consumer's fresh initialization."""
    rng = np.random.default_rng(seed)
    out = {}
    for i in range(num_layers):
        for sub in ("attn", "ffn"):
            out[f"layer.{i}.adapter.{sub}.down"] = rng.normal(
                0.0, ADAPTER_INIT_STD, (adapter_dim, hidden_dim)
            ).astype(np.float32)
            out[f"layer.{i}.adapter.{sub}.up"] = np.zeros(
                (hidden_dim, adapter_dim), np.float32
            )
    return out


def _config_vector(model, tokenizer, adapter_dim, extract_layer) -> np.ndarray:
    cfg = model.config
    depth = cfg.num_hidden_layers
    if extract_layer is None:
        extract_layer = min(6, depth)
    if not 0 <= extract_layer <= depth:
        raise ExportError(f"extract layer {extract_layer} outside 0..{depth}")
    if not 0 < adapter_dim < cfg.hidden_size:
        raise ExportError(
            f"adapter dim must satisfy 0 < m < {cfg.hidden_size}, got {adapter_dim}"
        )
    values = {
        "num_layers": depth,
        "hidden_dim": cfg.hidden_size,
        "num_heads": cfg.num_attention_heads,
        "ffn_dim": cfg.intermediate_size,
        "adapter_dim": adapter_dim,
        "vocab_size": cfg.vocab_size,
        "max_positions": cfg.max_position_embeddings,
        "cls_id": tokenizer.cls_token_id,
        "sep_id": tokenizer.sep_token_id,
        "extract_layer": extract_layer,
    }
    return np.array([values[f] for f in CONFIG_FIELDS], dtype=np.float32)


def export_weights(model_id, out_dir, adapter_dim=ADAPTER_DIM_DEFAULT,
                   extract_layer=None, seed=0, revision=None) -> dict:
    """Write model.acwt (+ manifest.json) loadable by the consumer toolkit."""
    model, tokenizer = load_backbone(model_id, revision)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    tensors = {"config": _config_vector(model, tokenizer, adapter_dim, extract_layer)}
    tensors.update(map_backbone_weights(model))
    tensors.update(identity_adapters(
        model.config.num_hidden_layers, model.config.hidden_size,
        adapter_dim, seed=seed,
    ))
    acwt.write_tensors(out_dir / "model.acwt", tensors)

    manifest = build_manifest(
        kind="weights",
        model_name=str(model_id),
        revision=revision,
        num_layers=model.config.num_hidden_layers,
        layers=range(model.config.num_hidden_layers + 1),
        tokenizer=tokenizer,
        special_policy={
            "policy": "consumer wraps token ids with cls/sep internally",
            "cls_id": tokenizer.cls_token_id,
            "sep_id": tokenizer.sep_token_id,
        },
        out_dir=out_dir,
        files=["model.acwt"],
        extra={
            "encoder": {
                "layer_norm_eps": float(model.config.layer_norm_eps),
                "activation": model.config.hidden_act,
            },
            "adapter": {"dim": adapter_dim, "seed": seed,
                        "init": "down~N(0,1e-3), up=0"},
        },
    )
    write_manifest(manifest, out_dir)
    log.info("wrote %s (%d tensors)", out_dir / "model.acwt", len(tensors))
    return manifest


# -- corpus -----------------------------------------------------------------

_PHARAOH_RE = re.compile(r"^(\d+)([-?])(\d+)$")


def read_parallel_text(path):
    """Read "source ||| target" lines into (src_words, tgt_words) pairs."""
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            halves = line.split("|||")
            if len(halves) != 2:
                raise DataError(f"{path} line {lineno}: expected 'src ||| tgt'")
            src, tgt = halves[0].split(), halves[1].split()
            if not src or not tgt:
                raise DataError(f"{path} line {lineno}: empty side")
            pairs.append((src, tgt))
    if not pairs:
        raise DataError(f"{path}: no sentence pairs")
    return pairs


def read_gold_pharaoh(path, index_base=0):
    """Per line: {(i, j)} sure and possible-only link sets, 0-based."""
    gold = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            sure, poss = set(), set()
            for token in line.split():
                m = _PHARAOH_RE.match(token)
                if not m:
                    raise DataError(f"{path} line {lineno}: bad link {token!r}")
                link = (int(m.group(1)) - index_base, int(m.group(3)) - index_base)
                if min(link) < 0:
                    raise DataError(f"{path} line {lineno}: index underflow in "
                                    f"{token!r} with base {index_base}")
                (poss if m.group(2) == "?" else sure).add(link)
            gold.append((sure, poss - sure))
    return gold


def _tokenize_side(tokenizer, words, max_positions, what):
    enc = tokenizer(words, is_split_into_words=True, add_special_tokens=True)
    ids = enc.input_ids
    word_ids = enc.word_ids()
    if len(ids) > max_positions:
        raise DataError(
            f"{what}: {len(ids)} tokens exceed the model's {max_positions} positions"
        )
    content = [k for k, w in enumerate(word_ids) if w is not None]
    word_map = [word_ids[k] for k in content]
    expect = 0
    for w in word_map:
        if w == expect:
            expect += 1
        elif w != expect - 1:
            raise DataError(
                f"{what}: word {expect} ({words[expect]!r}) produced no subwords"
            )
    if expect != len(words):
        raise DataError(
            f"{what}: word {expect} ({words[expect]!r}) produced no subwords"
        )
    subwords = tokenizer.convert_ids_to_tokens([ids[k] for k in content])
    mask = np.array([1.0 if w is None else 0.0 for w in word_ids], np.float32)
    return ids, content, word_map, subwords, mask


def export_embeddings(model_id, corpus_path, layers, out_dir, lang=None,
                      gold_path=None, gold_index_base=0, skip_bad=False,
                      max_pairs=None, revision=None) -> dict:
    """Write corpus.jsonl + embeddings.acwt (+ manifest.json).

    `layers` is an iterable of layer indices or the string "all"
    (0 = embedding-layer output, up to the model depth).
    """
    model, tokenizer = load_backbone(model_id, revision)
    depth = model.config.num_hidden_layers
    if isinstance(layers, str):
        if layers != "all":
            raise ExportError(f"layers must be indices or 'all', got {layers!r}")
        layers = range(depth + 1)
    layers = sorted({int(k) for k in layers})
    if not layers or layers[0] < 0 or layers[-1] > depth:
        raise ExportError(f"layer list {layers} outside model depth 0..{depth}")

    text = read_parallel_text(corpus_path)
    if max_pairs is not None:
        text = text[:max_pairs]
    gold = None
    if gold_path is not None:
        gold = read_gold_pharaoh(gold_path, index_base=gold_index_base)
        if len(gold) < len(text):
            raise DataError(
                f"{gold_path}: {len(gold)} gold lines for {len(text)} pairs"
            )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    max_pos = model.config.max_position_embeddings

    @torch.no_grad()
    def states_for(ids):
        out = model(input_ids=torch.tensor([ids]), output_hidden_states=True)
        return [out.hidden_states[k][0].float().numpy() for k in layers]

    records = []
    tensors = {}
    for n, (src_words, tgt_words) in enumerate(text):
        pid = f"p{n}"
        try:
            sides = {}
            for side, words in (("src", src_words), ("tgt", tgt_words)):
                ids, content, word_map, subwords, mask = _tokenize_side(
                    tokenizer, words, max_pos, f"pair {pid} {side}"
                )
                sides[side] = {
                    "ids": ids, "content": content, "word_map": word_map,
                    "subwords": subwords, "mask": mask,
                    "states": states_for(ids),
                }
        except DataError as e:
            if skip_bad:
                log.warning("skipping pair %s: %s", pid, e)
                continue
            raise

        record = {
            "id": pid,
            "src_subwords": sides["src"]["subwords"],
            "tgt_subwords": sides["tgt"]["subwords"],
            "src_word_map": sides["src"]["word_map"],
            "tgt_word_map": sides["tgt"]["word_map"],
        }
        if lang is not None:
            record["lang"] = lang
        record["src_ids"] = [sides["src"]["ids"][k] for k in sides["src"]["content"]]
        record["tgt_ids"] = [sides["tgt"]["ids"][k] for k in sides["tgt"]["content"]]
        if gold is not None:
            sure, poss = gold[n]
            record["gold"] = {"sure": sorted(list(x) for x in sure),
                              "possible": sorted(list(x) for x in poss)}
        records.append(record)

        for side in ("src", "tgt"):
            for k, arr in zip(layers, sides[side]["states"]):
                tensors[f"sent/{pid}/{side}/layer{k}"] = arr
            tensors[f"sent/{pid}/{side}/special_mask"] = sides[side]["mask"]

    if not records:
        raise DataError(f"{corpus_path}: no exportable pairs")

    with open(out_dir / "corpus.jsonl", "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    acwt.write_tensors(out_dir / "embeddings.acwt", tensors)

    manifest = build_manifest(
        kind="embeddings",
        model_name=str(model_id),
        revision=revision,
        num_layers=depth,
        layers=layers,
        tokenizer=tokenizer,
        special_policy={
            "policy": "boundary rows kept, flagged in special_mask",
            "cls_id": tokenizer.cls_token_id,
            "sep_id": tokenizer.sep_token_id,
        },
        out_dir=out_dir,
        files=["corpus.jsonl", "embeddings.acwt"],
        extra={"pairs": len(records)},
    )
    write_manifest(manifest, out_dir)
    log.info("wrote %d pairs x %d layers to %s", len(records), len(layers), out_dir)
    return manifest
