"""Command line entry point.

    sensaudit labelgen ENCOUNTERS.csv OUT.csv
    sensaudit synth --spec synth.ini --out corpus.jsonl
    sensaudit --config run.ini train
    sensaudit --config run.ini --workers 8 --scheme multi-swap audit
    sensaudit compare report.csv reference.csv
    sensaudit rank scores.csv --out ranks.csv

Run configs are INI files; relative paths are resolved against the config
file's directory. Every ``train``/``audit`` output directory receives the
fully resolved ``config.ini`` so the run can be repeated from it.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .classifiers import (
    ClassWeights,
    ConstantClassifier,
    ReplayClassifier,
    TrainingConfig,
    load_model,
    save_model,
    train_linear,
)
from .corpus import (
    DEFAULT_POLICY,
    dump_corpus,
    generate_synthetic,
    read_corpus,
    split_corpus,
    synthetic_spec_from_section,
)
from .errors import LabelInputError, SensauditError
from .io import atomic_write_text
from .labels import format_labels, generate_labels, read_encounters
from .metrics import auprc, auroc, calibrate_threshold, recall_at
from .perturbation import SwapScheme
from .sensitivity import FilterSpec, audit, frequency_bias, read_report_csv
from .stats import Ranking, rank_tokens, read_reference, spearman_report

log = logging.getLogger("sensaudit")

PATH_KEYS = {
    "run": ("corpus", "tokens", "output_dir"),
    "classifier": ("model", "replay"),
}

DEFAULTS = {
    "run": {"seed": "0", "scheme": "one_swap", "workers": "1", "detail": "true"},
    "classifier": {
        "kind": "linear", "learning_rate": "0.5", "epochs": "300", "l2": "0.0", "init_scale": "0.01",
        "target_recall": "0.7", "train_fraction": "0.7", "validation_fraction": "0.15",
    },
    "filters": {"uniform": "5", "one_gram": "5", "context": "5", "provider": "fallback", "window": "3"},
    "subsample": {"max_notes": "", "max_filters": ""},
}


class UsageError(SensauditError):
    pass


# --------------------------------------------------------------------------
# config

def load_config(path: str | None, overrides: argparse.Namespace) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_dict(DEFAULTS)
    base = Path.cwd()
    if path:
        p = Path(path)
        if not cp.read(p, encoding="utf-8"):
            raise UsageError(f"cannot read config {path}")
        base = p.resolve().parent
    for section, keys in PATH_KEYS.items():
        for key in keys:
            val = cp.get(section, key, fallback="").strip()
            if val and not val.startswith(("tcp://", "exec:")):
                cp.set(section, key, str((base / val).resolve()))
    seed = getattr(overrides, "seed", None)
    if seed is not None:
        cp.set("run", "seed", str(seed))
    workers = getattr(overrides, "workers", None)
    if workers is not None:
        cp.set("run", "workers", str(workers))
    scheme = getattr(overrides, "scheme", None)
    if scheme is not None:
        cp.set("run", "scheme", SwapScheme.parse(scheme).value)
    stub = getattr(overrides, "stub_classifier", None)
    if stub:
        kind, _, arg = stub.partition(":")
        if kind != "replay" or not arg:
            raise UsageError("--stub-classifier expects replay:<file>")
        cp.set("classifier", "kind", "replay")
        cp.set("classifier", "replay", str(Path(arg).resolve()))
    return cp


def dump_config(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _require(cp, section, key):
    val = cp.get(section, key, fallback="").strip()
    if not val:
        raise UsageError(f"config needs [{section}] {key}")
    return val


def _optional_int(cp, section, key):
    val = cp.get(section, key, fallback="").strip()
    return int(val) if val else None


def read_token_set(path) -> list[str]:
    toks = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tok = DEFAULT_POLICY.normalize(line)
            if tok:
                toks.append(tok)
    return toks


# --------------------------------------------------------------------------
# commands

def cmd_labelgen(args) -> int:
    try:
        with open(args.encounters, encoding="utf-8", newline="") as fh:
            records = read_encounters(fh)
        labeled = generate_labels(records, args.window_days, args.buffer_days)
    except LabelInputError as exc:
        print(f"error: {args.encounters}: {exc}", file=sys.stderr)
        return 1
    for le in labeled:
        if le.warning:
            print(f"warning: encounter {le.encounter_id}: {le.warning}", file=sys.stderr)
    atomic_write_text(args.out, format_labels(labeled))
    return 0


def cmd_synth(args) -> int:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    src = args.spec or args.config
    if not src or not cp.read(src, encoding="utf-8"):
        raise UsageError("synth needs --spec FILE (or --config with a [synthetic] section)")
    section = cp["synthetic"] if cp.has_section("synthetic") else cp[cp.default_section]
    spec = synthetic_spec_from_section(section)
    if args.seed is not None:
        spec.seed = args.seed
    corpus = generate_synthetic(spec)
    atomic_write_text(args.out, dump_corpus(corpus))
    print(f"wrote {len(corpus)} notes ({sum(corpus.labels)} positive) to {args.out}")
    return 0


def _training_config(cp) -> TrainingConfig:
    c = cp["classifier"]
    cw = None
    if c.get("positive_weight", "").strip():
        cw = ClassWeights(float(c["positive_weight"]), float(c["negative_weight"]))
    return TrainingConfig(
        learning_rate=float(c["learning_rate"]),
        epochs=int(c["epochs"]),
        seed=int(cp["run"]["seed"]),
        l2=float(c["l2"]),
        init_scale=float(c["init_scale"]),
        class_weights=cw,
    )


def cmd_train(args) -> int:
    cp = load_config(args.config, args)
    corpus = read_corpus(_require(cp, "run", "corpus"))
    out = Path(_require(cp, "run", "output_dir"))
    seed = int(cp["run"]["seed"])
    f_train = float(cp["classifier"]["train_fraction"])
    f_val = float(cp["classifier"]["validation_fraction"])
    train, val, test = split_corpus(corpus, (f_train, f_val, 1.0 - f_train - f_val), seed)
    for name, part in (("train", train), ("validation", val), ("test", test)):
        labs = set(part.labels)
        if len(labs - {None}) < 2:
            raise UsageError(f"{name} split ({len(part)} notes) has a single class; "
                             "use more data or different split fractions")

    model = train_linear(train, _training_config(cp))
    val_scores = model.predict_many(val.notes)
    test_scores = model.predict_many(test.notes)
    target = float(cp["classifier"]["target_recall"])
    thr = calibrate_threshold(val_scores, val.labels, target)
    metrics = {
        "classifier": model.identifier,
        "sizes": {"train": len(train), "validation": len(val), "test": len(test)},
        "class_weights": {"positive": model.config.class_weights.positive_weight,
                          "negative": model.config.class_weights.negative_weight},
        "training_loss": model.training_loss,
        "validation_auroc": auroc(val_scores, val.labels),
        "test_auroc": auroc(test_scores, test.labels),
        "test_auprc": auprc(test_scores, test.labels),
        "threshold": thr.threshold,
        "target_recall": target,
        "validation_recall": thr.recall,
        "test_recall": recall_at(test_scores, test.labels, thr.threshold),
    }
    save_model(model, out / "model.csv")
    atomic_write_text(out / "test.jsonl", dump_corpus(test))
    atomic_write_text(out / "metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out / "config.ini", dump_config(cp))
    print(f"test AUROC {metrics['test_auroc']:.4f}  AUPRC {metrics['test_auprc']:.4f}  "
          f"threshold {thr.threshold:.4f} (validation recall {thr.recall:.3f})")
    return 0


def build_classifier(cp, corpus):
    c = cp["classifier"]
    kind = c["kind"].strip()
    if kind == "linear":
        return load_model(_require(cp, "classifier", "model"))
    if kind == "constant":
        return ConstantClassifier(float(_require(cp, "classifier", "value")))
    if kind == "external":
        from .wire import ExternalClassifier

        return ExternalClassifier(_require(cp, "classifier", "endpoint"),
                                  timeout=float(c.get("timeout", "30")))
    if kind == "replay":
        return ReplayClassifier.from_file(_require(cp, "classifier", "replay"), corpus)
    raise UsageError(f"unknown classifier kind {kind!r}")


def _filter_spec(cp) -> FilterSpec:
    f = cp["filters"]
    provider = None
    endpoint = f["provider"].strip()
    if endpoint and endpoint != "fallback":
        from .wire import ExternalContextProvider

        provider = ExternalContextProvider(endpoint)
    return FilterSpec(
        uniform=int(f["uniform"]),
        one_gram=int(f["one_gram"]),
        context=int(f["context"]),
        seed=int(cp["run"]["seed"]),
        provider=provider,
        max_notes=_optional_int(cp, "subsample", "max_notes"),
        max_filters=_optional_int(cp, "subsample", "max_filters"),
        window=int(f["window"]),
    )


def cmd_audit(args) -> int:
    cp = load_config(args.config, args)
    corpus = read_corpus(_require(cp, "run", "corpus"))
    tokens = read_token_set(_require(cp, "run", "tokens"))
    out = Path(_require(cp, "run", "output_dir"))
    clf = build_classifier(cp, corpus)
    scheme = SwapScheme.parse(cp["run"]["scheme"])
    spec = _filter_spec(cp)
    detail = cp.getboolean("run", "detail")
    try:
        report = audit(clf, corpus, tokens, spec, scheme, workers=int(cp["run"]["workers"]),
                       keep_records=detail)
    finally:
        for obj in (clf, spec.provider):
            if hasattr(obj, "close"):
                obj.close()
    atomic_write_text(out / "report.csv", report.to_csv())
    if detail:
        atomic_write_text(out / "report.jsonl", report.to_jsonl())
    summary = {"scheme": scheme.value, "scored": len(report.overall), "unsupported": report.unsupported}
    if len(report.overall) >= 2:
        try:
            summary["frequency_rank_pearson"] = frequency_bias(report, corpus)
        except SensauditError:
            summary["frequency_rank_pearson"] = None
    atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out / "config.ini", dump_config(cp))
    if report.unsupported:
        print(f"warning: {len(report.unsupported)} tokens never occur: {', '.join(report.unsupported)}",
              file=sys.stderr)
    print(f"scored {len(report.overall)} tokens; report in {out / 'report.csv'}")
    return 0


def load_ranking(spec: str) -> Ranking:
    """``path`` or ``path:column``.

    A sensitivity report yields its ``rank`` column; a reference table
    (``token,rater_id,score`` or ``token,rank``) is read as such; any other
    table needs ``:column`` naming a rank column, keyed by ``token`` or ``word``.
    """
    path, column = spec, None
    if not Path(spec).exists() and ":" in spec:
        path, _, column = spec.rpartition(":")
    text = Path(path).read_text(encoding="utf-8")
    header = next(csv.reader(io.StringIO(text)), [])
    if column is None:
        if "overall" in header and "rank" in header:
            rows = read_report_csv(text, is_text=True)
            return Ranking({t: r["rank"] for t, r in rows.items()}, "model", "strict")
        return read_reference(text)
    key = "token" if "token" in header else "word"
    if key not in header or column not in header:
        raise UsageError(f"{path} has no '{key}' or '{column}' column")
    return Ranking({row[key]: float(row[column]) for row in csv.DictReader(io.StringIO(text))},
                   column, "given")


def cmd_compare(args) -> int:
    a, b = load_ranking(args.a), load_ranking(args.b)
    shared = sorted(set(a.entries) & set(b.entries))
    if not shared:
        raise UsageError("the two rankings share no tokens")
    dropped = sorted(set(a.entries) ^ set(b.entries))
    if dropped:
        print(f"note: comparing {len(shared)} shared tokens; dropped {', '.join(dropped)}", file=sys.stderr)
    ra = {t: a.entries[t] for t in shared}
    rb = {t: b.entries[t] for t in shared}
    if dropped:
        # ranks must run over the shared set only
        ra = rank_tokens(ra, "competition", descending=False).entries
        rb = rank_tokens(rb, "competition", descending=False).entries
    rep = spearman_report(ra, rb)
    rep["a"], rep["b"] = args.a, args.b
    text = json.dumps(rep, indent=2, sort_keys=True) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    if args.table:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["token", "rank_a", "rank_b"])
        for t in sorted(shared, key=lambda t: (ra[t], t)):
            w.writerow([t, ra[t], rb[t]])
        atomic_write_text(args.table, buf.getvalue())
    return 0


def cmd_rank(args) -> int:
    text = Path(args.scores).read_text(encoding="utf-8")
    rows = list(csv.DictReader(io.StringIO(text)))
    col = args.column
    key = "token" if rows and "token" in rows[0] else "word"
    scores = {r[key]: float(r[col]) for r in rows}
    ranking = rank_tokens(scores, args.tie_policy, descending=not args.ascending)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["token", col, "rank"])
    for t in sorted(ranking.entries, key=lambda t: (ranking.entries[t], t)):
        r = ranking.entries[t]
        w.writerow([t, repr(scores[t]), int(r) if r == int(r) else r])
    if args.out:
        atomic_write_text(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS, help="INI run config")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    common.add_argument("--scheme", choices=["one-swap", "multi-swap", "one_swap", "multi_swap"],
                        default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="sensaudit", parents=[common],
                                 description="Token-level sensitivity auditing for text classifiers.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("labelgen", parents=[common], help="30-day readmission labels from encounters")
    p.add_argument("encounters")
    p.add_argument("out")
    p.add_argument("--window-days", type=float, default=30.0)
    p.add_argument("--buffer-days", type=float, default=30.0)
    p.set_defaults(func=cmd_labelgen)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic labelled corpus")
    p.add_argument("--spec")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train the tf-idf + linear classifier")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("audit", parents=[common], help="compute token sensitivity scores")
    p.add_argument("--stub-classifier", metavar="replay:FILE")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("compare", parents=[common], help="Spearman correlation of two rankings")
    p.add_argument("a", help="report.csv, reference table, or table.csv:column")
    p.add_argument("b")
    p.add_argument("--out")
    p.add_argument("--table", help="write the token-level rank table here")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("rank", parents=[common], help="rank tokens by score")
    p.add_argument("scores", help="CSV with token (or word) and score columns")
    p.add_argument("--column", default="score")
    p.add_argument("--tie-policy", choices=["strict", "competition", "average"], default="strict")
    p.add_argument("--ascending", action="store_true", help="rank 1 = lowest score")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    for name in ("seed", "config", "workers", "scheme", "verbose"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SensauditError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
