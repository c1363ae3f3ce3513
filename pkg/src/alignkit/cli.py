"""Command-line entry point.

Four subcommands cover the pipeline:

    alignkit extract  — corpus + (model | precomputed embeddings) → Pharaoh links
    alignkit train    — corpus + model → finetuned adapters + loss log
    alignkit eval     — predicted links + gold links → error report
    alignkit analyze  — corpus + model → per-layer AER, embedding diagnostics,
                        optional similarity heatmaps

Every option can also come from a flat key=value config file (--config);
explicit flags win over the file, the file wins over defaults, and the
merged settings are echoed to <out>/config.txt so a run can be
reproduced exactly.  Exit codes: 2 usage/config, 3 data, 4 file format,
5 numeric/shape.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .aligner import align_pair, align_states, to_pharaoh
from .corpus import read_corpus_jsonl, read_embeddings, read_gold_pharaoh
from .encoder import load_model, save_adapters, save_model
from .errors import AlignkitError, DataError, FormatError, NumericError, ShapeError
from .metrics import cosine, evaluate_sets, layer_sweep, rep_analysis
from .trainer import TrainConfig, train, write_loss_log

log = logging.getLogger("alignkit")


class UsageError(Exception):
    """Bad flags or config file; maps to exit code 2 like argparse errors."""


def _bool(s):
    low = str(s).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {s!r}")


# every setting a subcommand understands: name -> (type, default)
_SETTINGS = {
    "extract": {
        "corpus": (str, None), "model": (str, None), "embeddings": (str, None),
        "layer": (int, None), "threshold": (float, 0.1), "out": (str, None),
        "workers": (int, 0), "skip_bad": (_bool, False),
        "no_adapters": (_bool, False),
    },
    "train": {
        "corpus": (str, None), "model": (str, None), "mode": (str, "supervised"),
        "learning_rate": (float, 1e-4), "batch_size": (int, 40),
        "max_steps": (int, 1500), "layer": (int, None),
        "threshold": (float, 0.1), "seed": (int, 0), "out": (str, None),
        "val_corpus": (str, None), "val_every": (int, 100),
        "skip_bad": (_bool, False),
    },
    "eval": {
        "pred": (str, None), "gold": (str, None), "gold_index_base": (int, 0),
        "out": (str, None),
    },
    "analyze": {
        "corpus": (str, None), "model": (str, None), "layer": (int, None),
        "threshold": (float, 0.1), "seed": (int, 0), "out": (str, None),
        "workers": (int, 0), "no_adapters": (_bool, False),
        "heatmaps": (int, 0), "skip_bad": (_bool, False),
    },
}


def read_config_file(path, known):
    """Parse key=value lines; '#' starts a comment; unknown keys are fatal."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path} line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise UsageError(
                f"{path} line {lineno}: unknown key {key!r} "
                f"(known: {', '.join(sorted(known))})"
            )
        out[key] = value
    return out


def merge_settings(command, args):
    """defaults < config file < explicit flags, with type coercion."""
    spec = _SETTINGS[command]
    merged = {k: default for k, (_, default) in spec.items()}
    if getattr(args, "config", None):
        for k, raw in read_config_file(args.config, set(spec)).items():
            typ = spec[k][0]
            try:
                merged[k] = typ(raw)
            except ValueError:
                raise UsageError(
                    f"config key {k}: cannot parse {raw!r} as {typ.__name__}"
                ) from None
    for k in spec:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    return merged


def echo_config(out_dir, command, settings):
    lines = [f"command={command}"]
    lines += [f"{k}={settings[k]}" for k in sorted(settings)]
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(settings):
    if not settings.get("out"):
        raise UsageError("--out is required")
    p = Path(settings["out"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def _workers(settings):
    n = settings.get("workers") or 0
    return n if n > 0 else (os.cpu_count() or 1)


def _parallel_map(fn, items, workers):
    """Order-preserving map over a thread pool (pairs are independent)."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- extract

def _pick_embedding_layer(record, pid, layer):
    layers = sorted(set(record["src"]) & set(record["tgt"]))
    if layer is not None:
        if layer not in layers:
            raise DataError(
                f"embeddings for {pid!r} have layers {layers}, not {layer}"
            )
        return layer
    if len(layers) == 1:
        return layers[0]
    raise DataError(
        f"embeddings for {pid!r} carry several layers {layers}; pass --layer"
    )


def cmd_extract(settings):
    if bool(settings["model"]) == bool(settings["embeddings"]):
        raise UsageError("extract needs exactly one of --model / --embeddings")
    if not settings["corpus"]:
        raise UsageError("--corpus is required")
    out = _out_dir(settings)
    pairs = read_corpus_jsonl(settings["corpus"], skip_bad=settings["skip_bad"])
    threshold = settings["threshold"]

    if settings["model"]:
        model = load_model(settings["model"])
        layer = settings["layer"]
        if layer is None:
            layer = model.config.extract_layer

        def one(pair):
            return align_pair(model, pair, layer=layer, c=threshold,
                              apply_adapters=not settings["no_adapters"])
    else:
        from .tensor import Tensor

        records = read_embeddings(settings["embeddings"])

        def one(pair):
            if pair.id not in records:
                raise DataError(f"no embeddings for pair {pair.id!r}")
            rec = records[pair.id]
            layer = _pick_embedding_layer(rec, pair.id, settings["layer"])
            return align_states(
                Tensor(rec["src"][layer]), Tensor(rec["tgt"][layer]),
                pair.src_word_map, pair.tgt_word_map, threshold,
            )

    def guarded(pair):
        try:
            return to_pharaoh(one(pair))
        except AlignkitError as e:
            if settings["skip_bad"]:
                log.warning("pair %s skipped: %s", pair.id, e)
                return ""
            raise

    lines = _parallel_map(guarded, pairs, _workers(settings))
    (out / "alignments.txt").write_text(
        "".join(line + "\n" for line in lines), encoding="utf-8"
    )
    echo_config(out, "extract", settings)
    log.info("wrote %d alignments to %s", len(lines), out / "alignments.txt")
    return 0


# ------------------------------------------------------------------ train

def cmd_train(settings):
    for req in ("corpus", "model"):
        if not settings[req]:
            raise UsageError(f"--{req} is required")
    out = _out_dir(settings)
    model = load_model(settings["model"])
    layer = settings["layer"]
    if layer is None:
        layer = model.config.extract_layer
    cfg = TrainConfig(
        learning_rate=settings["learning_rate"],
        batch_size=settings["batch_size"],
        max_steps=settings["max_steps"],
        mode=settings["mode"],
        threshold=settings["threshold"],
        extract_layer=layer,
        seed=settings["seed"],
    )
    pairs = read_corpus_jsonl(settings["corpus"], skip_bad=settings["skip_bad"])
    val = None
    if settings["val_corpus"]:
        val = read_corpus_jsonl(settings["val_corpus"],
                                skip_bad=settings["skip_bad"])
    trained, state = train(model, pairs, cfg, val_corpus=val,
                           val_every=settings["val_every"])
    save_model(trained, out / "model.acwt")
    save_adapters(trained, out / "adapters.acwt")
    write_loss_log(out / "loss.csv", state.losses)
    echo_config(out, "train", settings)
    if state.losses:
        print(f"trained {state.step} steps; "
              f"first loss {state.losses[0]:.6f}, last {state.losses[-1]:.6f}")
    return 0


# ------------------------------------------------------------------- eval

def _report_row(label, r):
    return (f"{label},{r.n_pred},{r.n_sure},{r.n_poss},{r.n_hit_sure},"
            f"{r.n_hit_poss},{r.precision:.6f},{r.recall:.6f},{r.aer:.6f}")


def cmd_eval(settings):
    for req in ("pred", "gold"):
        if not settings[req]:
            raise UsageError(f"--{req} is required")
    out = _out_dir(settings)
    preds = read_gold_pharaoh(settings["pred"])
    golds = read_gold_pharaoh(settings["gold"],
                              index_base=settings["gold_index_base"])
    per_pair, total = evaluate_sets(preds, golds)
    header = "pair,pred,sure,possible,hit_sure,hit_possible,precision,recall,aer"
    rows = [header]
    rows += [_report_row(str(i), r) for i, r in enumerate(per_pair)]
    rows.append(_report_row("all", total))
    (out / "report.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    echo_config(out, "eval", settings)
    print(f"{'pair':>6}  {'|A|':>5} {'|S|':>5}  {'prec':>7} {'recall':>7} {'AER':>7}")
    for i, r in enumerate(per_pair):
        print(f"{i:>6}  {r.n_pred:>5} {r.n_sure:>5}  "
              f"{r.precision:>7.4f} {r.recall:>7.4f} {r.aer:>7.4f}")
    print(f"{'all':>6}  {total.n_pred:>5} {total.n_sure:>5}  "
          f"{total.precision:>7.4f} {total.recall:>7.4f} {total.aer:>7.4f}")
    if total.vacuous:
        log.warning("empty prediction or gold set somewhere; "
                    "vacuous ratios reported as their defined limits")
    return 0


# ---------------------------------------------------------------- analyze

def write_pgm(path, img):
    """Binary 8-bit grayscale PGM (P5): header then raw rows."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(img.tobytes())


def _cosine_heatmap(hx, hy):
    a = hx.data.astype(np.float64)
    b = hy.data.astype(np.float64)
    a = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    b = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    return a @ b.T


def cmd_analyze(settings):
    for req in ("corpus", "model"):
        if not settings[req]:
            raise UsageError(f"--{req} is required")
    out = _out_dir(settings)
    model = load_model(settings["model"])
    pairs = read_corpus_jsonl(settings["corpus"], skip_bad=settings["skip_bad"])
    adapters = not settings["no_adapters"]
    n_layers = model.config.num_layers

    rows = layer_sweep(model, pairs, c=settings["threshold"],
                       apply_adapters=adapters)
    header = "layer,lang,pred,sure,possible,hit_sure,hit_possible,precision,recall,aer"
    csv = [header]
    for layer, overall, by_lang in rows:
        csv.append(_report_row(f"{layer},all", overall))
        for lang in sorted(by_lang):
            csv.append(_report_row(f"{layer},{lang}", by_lang[lang]))
    (out / "layer_aer.csv").write_text("\n".join(csv) + "\n", encoding="utf-8")

    rep_rows = ["layer,s_bi,s_mono"]
    for layer in range(n_layers + 1):
        s_bi, s_mono = rep_analysis(model, pairs, layer=layer,
                                    seed=settings["seed"],
                                    apply_adapters=adapters)
        rep_rows.append(f"{layer},{s_bi:.6f},{s_mono:.6f}")
    (out / "rep_analysis.csv").write_text(
        "\n".join(rep_rows) + "\n", encoding="utf-8"
    )

    n_heat = min(settings["heatmaps"], len(pairs))
    if n_heat:
        from .aligner import encode_pair

        layer = settings["layer"]
        if layer is None:
            layer = model.config.extract_layer
        for pair in pairs[:n_heat]:
            hx, hy = encode_pair(model, pair, layer=layer,
                                 apply_adapters=adapters)
            C = _cosine_heatmap(hx, hy)
            img = np.clip(np.rint((C + 1.0) * 127.5), 0, 255)
            write_pgm(out / f"heatmap_{pair.id}.pgm", img)
            with open(out / f"heatmap_{pair.id}.csv", "w", encoding="utf-8") as f:
                for row in C:
                    f.write(",".join(f"{v:.6f}" for v in row) + "\n")

    echo_config(out, "analyze", settings)
    print(f"{'layer':>5}  {'AER':>7}  {'s_bi':>7}  {'s_mono':>7}")
    for (layer, overall, _), rep in zip(rows, rep_rows[1:]):
        _, s_bi, s_mono = rep.split(",")
        print(f"{layer:>5}  {overall.aer:>7.4f}  {float(s_bi):>7.4f}  "
              f"{float(s_mono):>7.4f}")
    best = min(rows, key=lambda r: r[1].aer)
    print(f"best layer by AER: {best[0]} ({best[1].aer:.4f})")
    return 0


# ------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(
        prog="alignkit",
        description="Word alignment from contextual embeddings: extraction, "
                    "adapter finetuning, evaluation, and diagnostics.",
    )
    p.add_argument("--version", action="version", version=f"alignkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, *names):
        if "corpus" in names:
            sp.add_argument("--corpus", help="sentence-pair JSONL file")
        if "model" in names:
            sp.add_argument("--model", help="encoder weight container")
        if "layer" in names:
            sp.add_argument("--layer", type=int,
                            help="encoder layer to read representations from "
                                 "(default: the model's configured layer)")
        if "threshold" in names:
            sp.add_argument("--threshold", type=float,
                            help="alignment probability threshold (default 0.1)")
        if "seed" in names:
            sp.add_argument("--seed", type=int, help="RNG seed (default 0)")
        if "out" in names:
            sp.add_argument("--out", help="output directory (required)")
        if "workers" in names:
            sp.add_argument("--workers", type=int,
                            help="thread count for per-pair work "
                                 "(default: all cores)")
        if "skip_bad" in names:
            sp.add_argument("--skip-bad", dest="skip_bad", action="store_true",
                            default=None,
                            help="skip unusable records instead of aborting")
        if "no_adapters" in names:
            sp.add_argument("--no-adapters", dest="no_adapters",
                            action="store_true", default=None,
                            help="bypass adapter layers (pre-finetuning behavior)")
        sp.add_argument("--config", help="key=value settings file; flags override")

    e = sub.add_parser("extract", help="induce word alignments for a corpus")
    e.add_argument("--embeddings",
                   help="precomputed embedding container (alternative to --model)")
    add_common(e, "corpus", "model", "layer", "threshold", "out", "workers",
               "skip_bad", "no_adapters")
    e.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", help="finetune adapter layers on gold links")
    t.add_argument("--mode", choices=("supervised", "self_supervised"))
    t.add_argument("--learning-rate", dest="learning_rate", type=float,
                   help="AdamW learning rate (default 1e-4)")
    t.add_argument("--batch-size", dest="batch_size", type=int,
                   help="sentence pairs per update (default 40)")
    t.add_argument("--max-steps", dest="max_steps", type=int,
                   help="number of updates (default 1500)")
    t.add_argument("--val-corpus", dest="val_corpus",
                   help="gold corpus for best-checkpoint selection")
    t.add_argument("--val-every", dest="val_every", type=int,
                   help="validation interval in steps (default 100)")
    add_common(t, "corpus", "model", "layer", "threshold", "seed", "out",
               "skip_bad")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="score predicted links against gold")
    v.add_argument("--pred", help="predicted alignments, Pharaoh format")
    v.add_argument("--gold", help="gold alignments, Pharaoh format")
    v.add_argument("--gold-index-base", dest="gold_index_base", type=int,
                   choices=(0, 1), help="index base of the gold file (default 0)")
    add_common(v, "out")
    v.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze",
                       help="per-layer error rates and embedding diagnostics")
    a.add_argument("--heatmaps", type=int,
                   help="emit similarity heatmaps for the first N pairs")
    add_common(a, "corpus", "model", "layer", "threshold", "seed", "out",
               "workers", "skip_bad", "no_adapters")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        settings = merge_settings(args.command, args)
        return args.func(settings)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return 4
    except (ShapeError, NumericError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 5
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
