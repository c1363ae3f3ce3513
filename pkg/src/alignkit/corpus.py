"""Corpus, gold-alignment, and embedding-container I/O.

Readers are strict: malformed input raises with the offending line (or
tensor name) rather than being silently repaired.

JSONL corpus schema, one object per line:

    {"id": "...", "lang": "de-en",                # lang optional
     "src_subwords": [...], "tgt_subwords": [...],
     "src_word_map": [...], "tgt_word_map": [...],
     "src_ids": [...], "tgt_ids": [...],          # optional
     "gold": {"sure": [[i,j],...], "possible": [[i,j],...]}}  # optional

`gold.possible` lists possible-only links; the full possible set is
sure ∪ possible.  Embeddings live in the same binary container as model
weights, under names "sent/{id}/{src|tgt}/layer{k}".  An optional
"sent/{id}/{side}/special_mask" vector marks rows to strip on read
(sequence-start/end markers kept by whatever produced the file).
"""

import json
import logging
import re

import numpy as np

from .aligner import AlignmentSet, SentencePair
from .errors import DataError, FormatError
from .weights import read_tensors, write_tensors

log = logging.getLogger(__name__)

_CORPUS_KEYS = {
    "id", "lang", "src_subwords", "tgt_subwords",
    "src_word_map", "tgt_word_map", "src_ids", "tgt_ids", "gold",
}


def _gold_from_json(obj):
    if not isinstance(obj, dict) or not set(obj) <= {"sure", "possible"}:
        raise DataError('gold must be {"sure": [...], "possible": [...]}')
    sure = [tuple(x) for x in obj.get("sure", [])]
    poss = [tuple(x) for x in obj.get("possible", [])]
    return AlignmentSet.of(set(sure) | set(poss), sure=sure)


def _record_to_pair(obj):
    if not isinstance(obj, dict):
        raise DataError(f"expected a JSON object, got {type(obj).__name__}")
    unknown = set(obj) - _CORPUS_KEYS
    if unknown:
        raise DataError(f"unknown keys {sorted(unknown)}")
    missing = {"id", "src_subwords", "tgt_subwords",
               "src_word_map", "tgt_word_map"} - set(obj)
    if missing:
        raise DataError(f"missing keys {sorted(missing)}")
    pid = obj["id"]
    if not isinstance(pid, str) or not pid or "/" in pid:
        raise DataError(f"id must be a non-empty string without '/', got {pid!r}")
    gold = _gold_from_json(obj["gold"]) if "gold" in obj else None
    return SentencePair(
        src_subwords=tuple(obj["src_subwords"]),
        tgt_subwords=tuple(obj["tgt_subwords"]),
        src_word_map=tuple(obj["src_word_map"]),
        tgt_word_map=tuple(obj["tgt_word_map"]),
        src_ids=tuple(obj["src_ids"]) if obj.get("src_ids") is not None else None,
        tgt_ids=tuple(obj["tgt_ids"]) if obj.get("tgt_ids") is not None else None,
        id=pid,
        lang=obj.get("lang"),
        gold=gold,
    )


def read_corpus_jsonl(path, skip_bad=False):
    """Load sentence pairs, one JSON object per line.

    With skip_bad, bad lines are logged and dropped instead of raising.
    """
    pairs = []
    seen = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataError(f"malformed JSON ({e.msg})") from None
                pair = _record_to_pair(obj)
                if pair.id in seen:
                    raise DataError(
                        f"duplicate id {pair.id!r} (first seen on line {seen[pair.id]})"
                    )
            except DataError as e:
                if skip_bad:
                    log.warning("%s line %d skipped: %s", path, lineno, e)
                    continue
                raise DataError(f"{path} line {lineno}: {e}") from None
            seen[pair.id] = lineno
            pairs.append(pair)
    if not pairs:
        log.warning("%s: empty corpus", path)
    return pairs


def write_corpus_jsonl(path, pairs):
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            obj = {
                "id": p.id,
                "src_subwords": list(p.src_subwords),
                "tgt_subwords": list(p.tgt_subwords),
                "src_word_map": list(p.src_word_map),
                "tgt_word_map": list(p.tgt_word_map),
            }
            if p.lang is not None:
                obj["lang"] = p.lang
            if p.src_ids is not None:
                obj["src_ids"] = list(p.src_ids)
            if p.tgt_ids is not None:
                obj["tgt_ids"] = list(p.tgt_ids)
            if p.gold is not None:
                obj["gold"] = {
                    "sure": sorted(list(x) for x in p.gold.sure),
                    "possible": sorted(list(x) for x in p.gold.links - p.gold.sure),
                }
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


_LINK_RE = re.compile(r"^(\d+)([-?])(\d+)$")


def parse_pharaoh_line(line, index_base=0):
    """One line of "i-j" (sure) / "i?j" (possible) links → AlignmentSet."""
    sure, links = set(), set()
    for tok in line.split():
        m = _LINK_RE.match(tok)
        if not m:
            raise DataError(f"malformed alignment token {tok!r}")
        i = int(m.group(1)) - index_base
        j = int(m.group(3)) - index_base
        if i < 0 or j < 0:
            raise DataError(
                f"token {tok!r} indexes below base {index_base}"
            )
        links.add((i, j))
        if m.group(2) == "-":
            sure.add((i, j))
    return AlignmentSet.of(links, sure=sure)


def read_gold_pharaoh(path, index_base=0):
    """Parse a gold file: one alignment per line, empty line = no links."""
    if index_base not in (0, 1):
        raise DataError(f"index base must be 0 or 1, got {index_base}")
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            try:
                out.append(parse_pharaoh_line(line, index_base))
            except DataError as e:
                raise DataError(f"{path} line {lineno}: {e}") from None
    return out


def write_pharaoh(path, sets):
    from .aligner import to_pharaoh

    with open(path, "w", encoding="utf-8") as f:
        for a in sets:
            f.write(to_pharaoh(a) + "\n")


_EMB_NAME_RE = re.compile(r"^sent/(.+)/(src|tgt)/(layer(\d+)|special_mask)$")


def write_embeddings(path, records):
    """records: {id: {"src": {layer: array[seq,d]}, "tgt": {...}}}.

    Tensors are written grouped by id, src before tgt, layers ascending,
    so identical records always produce identical bytes.
    """
    tensors = {}
    for pid, sides in records.items():
        if "/" in pid:
            raise DataError(f"embedding id {pid!r} may not contain '/'")
        for side in ("src", "tgt"):
            for layer in sorted(sides.get(side, {})):
                arr = np.asarray(sides[side][layer], dtype=np.float32)
                if arr.ndim != 2:
                    raise DataError(
                        f"embedding {pid}/{side}/layer{layer} must be 2-d, "
                        f"got shape {arr.shape}"
                    )
                tensors[f"sent/{pid}/{side}/layer{layer}"] = arr
    write_tensors(path, tensors)


def read_embeddings(path):
    """Inverse of write_embeddings; applies and drops any special_mask."""
    tensors = read_tensors(path)
    records = {}
    masks = {}
    for name, arr in tensors.items():
        m = _EMB_NAME_RE.match(name)
        if not m:
            raise FormatError(
                f"unrecognized tensor name {name!r} in embeddings file"
            )
        pid, side = m.group(1), m.group(2)
        if "/" in pid:
            raise FormatError(f"tensor name {name!r} has a malformed id")
        if m.group(3) == "special_mask":
            masks[(pid, side)] = arr
        else:
            layer = int(m.group(4))
            if arr.ndim != 2:
                raise FormatError(
                    f"tensor {name!r} must be rank 2, got rank {arr.ndim}"
                )
            records.setdefault(pid, {}).setdefault(side, {})[layer] = arr

    d = None
    for pid, sides in sorted(records.items()):
        if set(sides) != {"src", "tgt"}:
            missing = sorted({"src", "tgt"} - set(sides))
            raise DataError(f"embedding record {pid!r} is missing {missing[0]!r}")
        for side, layers in sides.items():
            lens = {a.shape[0] for a in layers.values()}
            if len(lens) > 1:
                raise FormatError(
                    f"record {pid!r} {side} layers disagree on length: {sorted(lens)}"
                )
            for layer, a in layers.items():
                if d is None:
                    d = a.shape[1]
                elif a.shape[1] != d:
                    raise FormatError(
                        f"embedding width mismatch: {pid}/{side}/layer{layer} "
                        f"has d={a.shape[1]}, file started with d={d}"
                    )
            mask = masks.pop((pid, side), None)
            if mask is not None:
                keep = np.asarray(mask).reshape(-1) == 0
                if keep.shape[0] not in lens:
                    raise FormatError(
                        f"record {pid!r} {side} special_mask length "
                        f"{keep.shape[0]} does not match sequences {sorted(lens)}"
                    )
                for layer in list(layers):
                    layers[layer] = np.ascontiguousarray(layers[layer][keep])
    for (pid, side) in masks:
        raise FormatError(
            f"special_mask for {pid}/{side} has no embedding tensors"
        )
    return records
