"""Token sensitivity scores.

For a classifier ``f``, token ``u``, filter ``h`` and note ``x`` the change is
``|f(x) - f(g(x))|`` where ``g`` swaps ``u`` for ``h(u)``. A note's score
averages that change over a filter set; a token's overall score averages the
note scores over every note containing the token.

All reductions run in a fixed order (tokens as given, notes by id, filters by
index), so reports are bit-identical for any number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .classifiers import Classifier
from .corpus import Corpus, Note, subset_containing
from .errors import ClassifierCallError, SensauditError, UndefinedScoreError
from .io import format_float
from .perturbation import (
    CONTEXT,
    FAMILIES,
    ONE_GRAM,
    UNIFORM,
    CooccurrenceProvider,
    FilterSet,
    ReplacementProvider,
    SwapScheme,
    build_context_filters,
    build_onegram_filters,
    build_uniform_filters,
    perturb,
)
from .stats import pearson, rank_tokens

log = logging.getLogger(__name__)

UNSUPPORTED = "unsupported"
FAMILY_COLUMNS = {UNIFORM: "uniform_family", ONE_GRAM: "onegram_family", CONTEXT: "context_family"}


def _predict(f, note, u=None, filter_index=None) -> float:
    try:
        return f.predict(note)
    except SensauditError as exc:
        raise ClassifierCallError(f"{f.identifier} failed on note {note.id!r}"
                                  f" (token {u!r}, filter {filter_index}): {exc}",
                                  note.id, u, filter_index) from exc


def delta(f: Classifier, note: Note, u: str, h, scheme=SwapScheme.ONE_SWAP, base: float | None = None) -> float:
    """``|f(note) - f(perturb(note, u, h, scheme))|``."""
    g = perturb(note, u, h, scheme)
    if g is note:
        return 0.0
    p0 = _predict(f, note, u) if base is None else base
    return abs(p0 - _predict(f, g, u))


def note_sensitivity(f: Classifier, note: Note, u: str, H: FilterSet | Sequence, scheme=SwapScheme.ONE_SWAP,
                     base: float | None = None) -> float:
    if len(H) == 0:
        raise ValueError("note sensitivity needs a non-empty filter set")
    if note.first_index(u) < 0:
        return 0.0
    if base is None:
        base = _predict(f, note, u)
    return sum(delta(f, note, u, h, scheme, base) for h in H) / len(H)


def overall_sensitivity(f: Classifier, X: Corpus | Sequence[Note], u: str,
                        H: FilterSet | Callable[[Note], FilterSet], scheme=SwapScheme.ONE_SWAP) -> float:
    """Mean note sensitivity over the notes of ``X`` that contain ``u``.

    ``H`` is either one filter set used for every note or a callable building
    the set for a given note (as context filters must).
    """
    notes = sorted((n for n in X if n.first_index(u) >= 0), key=lambda n: n.id)
    if not notes:
        raise UndefinedScoreError(u)
    total = 0.0
    for note in notes:
        Hx = H(note) if callable(H) and not isinstance(H, FilterSet) else H
        total += note_sensitivity(f, note, u, Hx, scheme)
    return total / len(notes)


# --------------------------------------------------------------------------
# audit

@dataclass
class FilterSpec:
    """How the filter set for each token is assembled.

    ``provider=None`` uses co-occurrence over the audited corpus for context
    filters. ``max_notes`` / ``max_filters`` subsample with ``seed``.
    """

    uniform: int = 5
    one_gram: int = 5
    context: int = 5
    seed: int = 0
    provider: ReplacementProvider | None = None
    uniform_vocab: Iterable[str] | None = None
    max_notes: int | None = None
    max_filters: int | None = None
    window: int = 3


@dataclass(frozen=True)
class SensitivityRecord:
    token: str
    note_id: str
    filter_index: int
    family: str
    replacement: str
    delta: float


@dataclass
class SensitivityReport:
    classifier_id: str
    scheme: str
    token_set: tuple[str, ...]
    note_level: dict[tuple[str, str], float] = field(default_factory=dict)
    overall: dict[str, float] = field(default_factory=dict)
    per_family: dict[tuple[str, str], float] = field(default_factory=dict)
    support: dict[str, int] = field(default_factory=dict)
    filter_count: dict[str, int] = field(default_factory=dict)
    ranks: dict[str, float] = field(default_factory=dict)
    unsupported: list[str] = field(default_factory=list)
    records: list[SensitivityRecord] = field(default_factory=list)

    @property
    def scored_tokens(self) -> list[str]:
        return [u for u in self.token_set if u in self.overall]

    def family_score(self, u: str, family: str) -> float | None:
        return self.per_family.get((u, family))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["token", "support", "overall", *FAMILY_COLUMNS.values(), "rank"])
        for u in self.token_set:
            if u in self.overall:
                fams = [self.per_family.get((u, fam)) for fam in FAMILY_COLUMNS]
                w.writerow([u, self.support[u], format_float(self.overall[u]),
                            *("" if v is None else format_float(v) for v in fams),
                            int(self.ranks[u])])
            else:
                w.writerow([u, 0, UNSUPPORTED, "", "", "", ""])
        return buf.getvalue()

    def to_jsonl(self) -> str:
        lines = [{
            "type": "report",
            "classifier": self.classifier_id,
            "scheme": self.scheme,
            "tokens": list(self.token_set),
            "unsupported": self.unsupported,
        }]
        for u in self.scored_tokens:
            lines.append({
                "type": "token", "token": u, "support": self.support[u], "overall": self.overall[u],
                "rank": self.ranks[u], "filter_count": self.filter_count[u],
                "families": {fam: self.per_family[(u, fam)] for fam in FAMILIES if (u, fam) in self.per_family},
            })
        by_note: dict[tuple[str, str], list[SensitivityRecord]] = {}
        for r in self.records:
            by_note.setdefault((r.token, r.note_id), []).append(r)
        for (u, nid), score in self.note_level.items():
            recs = by_note.get((u, nid), [])
            lines.append({
                "type": "note", "token": u, "note_id": nid, "score": score,
                "deltas": [{"filter": r.filter_index, "family": r.family, "replacement": r.replacement,
                            "delta": r.delta} for r in recs],
            })
        return "".join(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n" for obj in lines)


class _Serialized(Classifier):
    def __init__(self, inner):
        self.inner = inner
        self.identifier = inner.identifier
        self._lock = threading.Lock()

    def predict(self, note):
        with self._lock:
            return self.inner.predict(note)

    def predict_many(self, notes):
        with self._lock:
            return self.inner.predict_many(notes)


def _subsample(items: list, limit: int | None, seed, salt: str) -> list:
    if limit is None or len(items) <= limit:
        return items
    rng = random.Random(f"{seed}:{salt}")
    keep = sorted(rng.sample(range(len(items)), limit))
    return [items[i] for i in keep]


def audit(f: Classifier, corpus: Corpus, U: Sequence[str], spec: FilterSpec | None = None,
          scheme=SwapScheme.ONE_SWAP, workers: int = 1, keep_records: bool = True) -> SensitivityReport:
    """Score every token of ``U`` over the notes of ``corpus`` containing it.

    Each note is perturbed with the uniform and 1-gram filters built for the
    token plus context filters built at the token's first position in that
    note. Tokens that never occur are listed in ``report.unsupported``.
    """
    spec = spec or FilterSpec()
    scheme = SwapScheme.parse(scheme)
    tokens = tuple(dict.fromkeys(U))
    if not tokens:
        raise ValueError("no tokens of interest given")
    if workers > 1 and not getattr(f, "concurrent_safe", False):
        f = _Serialized(f)

    uniform = None
    if spec.uniform:
        vocab = spec.uniform_vocab if spec.uniform_vocab is not None else corpus.vocabulary
        uniform = build_uniform_filters(vocab, spec.uniform, spec.seed)
    provider = spec.provider
    if spec.context and provider is None:
        provider = CooccurrenceProvider(corpus, spec.window)

    report = SensitivityReport(f.identifier, scheme.value, tokens)
    tasks = []
    for u in tokens:
        X_u = subset_containing(corpus, u)
        if len(X_u) == 0:
            report.unsupported.append(u)
            continue
        onegram = build_onegram_filters(X_u, u, spec.one_gram) if spec.one_gram else None
        notes = sorted(X_u.notes, key=lambda n: n.id)
        notes = _subsample(notes, spec.max_notes, spec.seed, f"notes:{u}")
        tasks.extend((u, note, uniform, onegram) for note in notes)
    if report.unsupported:
        log.info("%d tokens never occur: %s", len(report.unsupported), ", ".join(report.unsupported))

    base_lock = threading.Lock()
    base_cache: dict[str, float] = {}

    def base_of(note):
        with base_lock:
            p = base_cache.get(note.id)
        if p is None:
            p = _predict(f, note)
            with base_lock:
                base_cache[note.id] = p
        return p

    def run(task):
        u, note, uni, one = task
        k = note.first_index(u)
        ctx = build_context_filters(provider, note, k, spec.context) if spec.context else None
        H = FilterSet.concat(uni, one, ctx)
        idx = _subsample(list(range(len(H))), spec.max_filters, spec.seed, f"filters:{u}:{note.id}")
        perturbed = [perturb(note, u, H[i], scheme) for i in idx]
        try:
            probs = f.predict_many(perturbed)
        except SensauditError as exc:
            raise ClassifierCallError(f"{f.identifier} failed on perturbations of note {note.id!r}"
                                      f" for token {u!r}: {exc}", note.id, u) from exc
        p0 = base_of(note)
        return [(i, H.families[i], g.tokens[k], abs(p0 - p)) for i, g, p in zip(idx, perturbed, probs)]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    # reduce in canonical order: tasks are grouped by token, notes sorted by id
    by_token: dict[str, list[tuple[Note, list]]] = {}
    for (u, note, _, _), res in zip(tasks, results):
        by_token.setdefault(u, []).append((note, res))
    for u in tokens:
        if u not in by_token:
            continue
        entries = by_token[u]
        note_scores = []
        fam_scores: dict[str, list[float]] = {}
        m = 0
        for note, res in entries:
            score = sum(d for _, _, _, d in res) / len(res)
            report.note_level[(u, note.id)] = score
            note_scores.append(score)
            m = max(m, len(res))
            for fam in FAMILIES:
                ds = [d for _, fm, _, d in res if fm == fam]
                if ds:
                    fam_scores.setdefault(fam, []).append(sum(ds) / len(ds))
            if keep_records:
                report.records.extend(SensitivityRecord(u, note.id, i, fm, rep, d) for i, fm, rep, d in res)
        report.overall[u] = sum(note_scores) / len(note_scores)
        report.support[u] = len(note_scores)
        report.filter_count[u] = m
        for fam, vals in fam_scores.items():
            report.per_family[(u, fam)] = sum(vals) / len(vals)
    if report.overall:
        report.ranks = rank_tokens(report.overall, "strict").entries
    return report


def frequency_bias(report: SensitivityReport, corpus: Corpus) -> float:
    """Pearson correlation between corpus token frequency and sensitivity rank."""
    toks = report.scored_tokens
    return pearson([corpus.token_frequency[u] for u in toks], [report.ranks[u] for u in toks])


def read_report_csv(path_or_text, is_text=False) -> dict[str, dict]:
    text = path_or_text if is_text else open(path_or_text, encoding="utf-8").read()
    rows = {}
    for row in csv.DictReader(io.StringIO(text)):
        if row["overall"] == UNSUPPORTED:
            continue
        rows[row["token"]] = {
            "overall": float(row["overall"]),
            "rank": float(row["rank"]),
            "support": int(row["support"]),
        }
    return rows
