"""Note -> probability classifiers.

Every classifier exposes ``identifier`` and ``predict(note) -> float`` in
[0, 1]. ``concurrent_safe`` tells the sensitivity engine whether it may call
``predict`` from several threads at once.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .corpus import Corpus, Note
from .errors import ProtocolError, ReplayMissError, SensauditError, UndefinedMetricError
from .io import atomic_write_text, format_float


class Classifier:
    identifier: str = "classifier"
    concurrent_safe: bool = True

    def predict(self, note: Note) -> float:
        raise NotImplementedError

    def predict_many(self, notes: Sequence[Note]) -> list[float]:
        return [self.predict(n) for n in notes]

    def __call__(self, note: Note) -> float:
        return self.predict(note)


class ConstantClassifier(Classifier):
    def __init__(self, value: float):
        value = float(value)
        if not 0.0 <= value <= 1.0 or math.isnan(value):
            raise ValueError(f"constant probability must be in [0, 1], got {value}")
        self.value = value
        self.identifier = f"constant:{value!r}"

    def predict(self, note):
        return self.value


def constant_classifier(value: float) -> ConstantClassifier:
    return ConstantClassifier(value)


class FunctionClassifier(Classifier):
    """Adapt a plain ``tokens -> probability`` callable."""

    def __init__(self, fn, identifier="function"):
        self.fn = fn
        self.identifier = identifier

    def predict(self, note):
        p = float(self.fn(note.tokens))
        if not 0.0 <= p <= 1.0:
            raise SensauditError(f"{self.identifier} returned {p}, outside [0, 1]")
        return p


# --------------------------------------------------------------------------
# tf-idf

class TfidfStats:
    """Document frequencies of a reference corpus, frozen for embedding.

    ``idf(t) = ln(num_docs / df(t))`` with no smoothing, so a token present in
    every document has weight 0.
    """

    def __init__(self, doc_frequency: dict[str, int], num_docs: int):
        if num_docs <= 0:
            raise ValueError("tf-idf statistics need a non-empty corpus")
        self.num_docs = int(num_docs)
        self.vocab = sorted(doc_frequency)
        self.index = {t: i for i, t in enumerate(self.vocab)}
        self.df = np.array([doc_frequency[t] for t in self.vocab], dtype=float)
        self.idf = np.log(self.num_docs / self.df) if self.vocab else np.zeros(0)

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "TfidfStats":
        return cls(corpus.doc_frequency, len(corpus))

    def __len__(self):
        return len(self.vocab)

    def counts_matrix(self, notes: Sequence[Note]) -> sparse.csr_matrix:
        rows, cols = [], []
        for r, note in enumerate(notes):
            for tok in note.tokens:
                j = self.index.get(tok)
                if j is not None:
                    rows.append(r)
                    cols.append(j)
        data = np.ones(len(rows))
        m = sparse.csr_matrix((data, (rows, cols)), shape=(len(notes), len(self.vocab)))
        m.sum_duplicates()
        return m

    def embed_matrix(self, notes: Sequence[Note]) -> sparse.csr_matrix:
        return sparse.csr_matrix(self.counts_matrix(notes).multiply(self.idf[None, :]))


def tfidf_embed(note: Note, stats: TfidfStats | Corpus) -> np.ndarray:
    """Dense tf-idf vector of ``note`` over the reference vocabulary.

    Out-of-vocabulary tokens are ignored.
    """
    if isinstance(stats, Corpus):
        stats = TfidfStats.from_corpus(stats)
    vec = np.zeros(len(stats))
    for tok in note.tokens:
        j = stats.index.get(tok)
        if j is not None:
            vec[j] += 1.0
    return vec * stats.idf


# --------------------------------------------------------------------------
# linear model and training

@dataclass(frozen=True)
class ClassWeights:
    positive_weight: float
    negative_weight: float

    @classmethod
    def from_labels(cls, labels: Iterable[int]) -> "ClassWeights":
        labels = list(labels)
        pos = sum(labels) / len(labels)
        # each class is weighted by the share of the other class
        return cls(positive_weight=1.0 - pos, negative_weight=pos)

    def swapped(self) -> "ClassWeights":
        return ClassWeights(self.negative_weight, self.positive_weight)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.5
    epochs: int = 300
    seed: int = 0
    l2: float = 0.0
    init_scale: float = 0.01
    class_weights: ClassWeights | None = None  # None -> derived from the training labels


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


class LinearModel(Classifier):
    """Logistic output over tf-idf features: ``sigmoid(w . tfidf(x) + bias)``."""

    def __init__(self, stats: TfidfStats, weights, bias: float, config: TrainingConfig | None = None,
                 training_loss: float | None = None, identifier: str | None = None):
        self.stats = stats
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (len(stats),):
            raise ValueError("weights must match the vocabulary size")
        self.bias = float(bias)
        self.config = config or TrainingConfig()
        self.training_loss = training_loss
        self.identifier = identifier or f"tfidf-linear:seed={self.config.seed}"
        # per-occurrence contribution to the logit
        self._coef = dict(zip(stats.vocab, (self.weights * stats.idf).tolist()))

    def logit(self, note: Note) -> float:
        coef = self._coef
        z = self.bias
        for tok in note.tokens:
            c = coef.get(tok)
            if c is not None:
                z += c
        return z

    def predict(self, note):
        return _sigmoid(self.logit(note))

    def predict_many(self, notes):
        return [_sigmoid(self.logit(n)) for n in notes]


def weighted_cross_entropy(z, y, cw: ClassWeights) -> float:
    c = np.where(y == 1, cw.positive_weight, cw.negative_weight)
    nll = np.where(y == 1, np.logaddexp(0.0, -z), np.logaddexp(0.0, z))
    return float(np.mean(c * nll))


def train_linear(corpus: Corpus, config: TrainingConfig = TrainingConfig()) -> LinearModel:
    """Full-batch gradient descent on class-weighted cross-entropy."""
    labels = corpus.labels
    if any(lab is None for lab in labels):
        raise ValueError("training corpus has unlabelled notes")
    y = np.asarray(labels, dtype=int)
    if len(y) == 0 or y.min() == y.max():
        raise UndefinedMetricError("training needs both classes present")
    cw = config.class_weights or ClassWeights.from_labels(y)

    stats = TfidfStats.from_corpus(corpus)
    X = stats.embed_matrix(corpus.notes)
    XT = X.T.tocsr()
    n = len(y)
    rng = np.random.default_rng(config.seed)
    w = rng.normal(0.0, config.init_scale, size=len(stats)) if config.init_scale > 0 else np.zeros(len(stats))
    b = 0.0
    c = np.where(y == 1, cw.positive_weight, cw.negative_weight)
    for _ in range(config.epochs):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        g = c * (p - y) / n
        w = w - config.learning_rate * (XT @ g + config.l2 * w)
        b = b - config.learning_rate * float(g.sum())
    loss = weighted_cross_entropy(X @ w + b, y, cw)
    cfg = replace(config, class_weights=cw)
    return LinearModel(stats, w, b, cfg, training_loss=loss)


# --------------------------------------------------------------------------
# persistence

def dump_model(model: LinearModel) -> str:
    cfg = model.config
    cw = cfg.class_weights
    header = {
        "bias": format_float(model.bias),
        "log_base": "e",
        "seed": str(cfg.seed),
        "num_docs": str(model.stats.num_docs),
        "learning_rate": format_float(cfg.learning_rate),
        "epochs": str(cfg.epochs),
        "l2": format_float(cfg.l2),
        "init_scale": format_float(cfg.init_scale),
    }
    if cw is not None:
        header["positive_weight"] = format_float(cw.positive_weight)
        header["negative_weight"] = format_float(cw.negative_weight)
    if model.training_loss is not None:
        header["training_loss"] = format_float(model.training_loss)
    buf = io.StringIO()
    for k, v in header.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["token", "weight", "df"])
    for tok, wt, df in zip(model.stats.vocab, model.weights.tolist(), model.stats.df.tolist()):
        w.writerow([tok, format_float(wt), int(df)])
    return buf.getvalue()


def save_model(model: LinearModel, path) -> None:
    atomic_write_text(path, dump_model(model))


def load_model(path) -> LinearModel:
    header = {}
    body = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                header[k.strip()] = v.strip()
            else:
                body.append(line)
    if header.get("log_base", "e") != "e":
        raise ValueError(f"unsupported log base {header['log_base']!r}")
    rows = list(csv.DictReader(body))
    df = {r["token"]: int(r["df"]) for r in rows}
    stats = TfidfStats(df, int(header["num_docs"]))
    weight_of = {r["token"]: float(r["weight"]) for r in rows}
    weights = [weight_of[t] for t in stats.vocab]
    cw = None
    if "positive_weight" in header:
        cw = ClassWeights(float(header["positive_weight"]), float(header["negative_weight"]))
    cfg = TrainingConfig(
        learning_rate=float(header.get("learning_rate", TrainingConfig.learning_rate)),
        epochs=int(header.get("epochs", TrainingConfig.epochs)),
        seed=int(header.get("seed", 0)),
        l2=float(header.get("l2", 0.0)),
        init_scale=float(header.get("init_scale", TrainingConfig.init_scale)),
        class_weights=cw,
    )
    loss = float(header["training_loss"]) if "training_loss" in header else None
    return LinearModel(stats, weights, float(header["bias"]), cfg, training_loss=loss)


# --------------------------------------------------------------------------
# replay

def note_hash(tokens: Sequence[str]) -> str:
    """Content hash of a token sequence, used to key replayed predictions."""
    h = hashlib.sha256()
    for t in tokens:
        h.update(t.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


class ReplayClassifier(Classifier):
    """Answer from a table of recorded predictions keyed by note content."""

    def __init__(self, table: dict[str, float], identifier="replay"):
        for k, p in table.items():
            if not 0.0 <= p <= 1.0:
                raise ProtocolError(f"replayed probability {p} for {k} outside [0, 1]")
        self.table = dict(table)
        self.identifier = identifier

    def predict(self, note):
        key = note_hash(note.tokens)
        try:
            return self.table[key]
        except KeyError:
            raise ReplayMissError(f"no recorded prediction for note {note.id!r} (hash {key[:12]})") from None

    @classmethod
    def from_file(cls, path, corpus: Corpus | None = None) -> "ReplayClassifier":
        """Load ``{"hash", "p"}`` / ``{"note_id", "p"}`` lines.

        ``note_id`` entries are resolved to content hashes through ``corpus``.
        """
        table = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                p = float(rec["p"])
                if "hash" in rec:
                    table[rec["hash"]] = p
                elif "note_id" in rec:
                    if corpus is None:
                        raise ValueError(f"{path}:{lineno}: note_id entries need the corpus")
                    table[note_hash(corpus.note(rec["note_id"]).tokens)] = p
                else:
                    raise ValueError(f"{path}:{lineno}: entry needs 'hash' or 'note_id'")
        return cls(table, identifier=f"replay:{path}")


class RecordingClassifier(Classifier):
    """Wrap a classifier and keep every prediction it makes, keyed by content hash."""

    def __init__(self, inner: Classifier):
        self.inner = inner
        self.identifier = inner.identifier
        self.concurrent_safe = inner.concurrent_safe
        self.table: dict[str, float] = {}
        self._lock = threading.Lock()

    def predict(self, note):
        p = self.inner.predict(note)
        with self._lock:
            self.table[note_hash(note.tokens)] = p
        return p

    def dump(self) -> str:
        return "".join(json.dumps({"hash": k, "p": self.table[k]}) + "\n" for k in sorted(self.table))
