"""Tokenized notes, corpus statistics and a seeded synthetic corpus generator."""

from __future__ import annotations

import json
import math
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CorpusError, InfeasibleSpecError

_PUNCT = string.punctuation


@dataclass(frozen=True)
class TokenizationPolicy:
    lowercase: bool = True
    strip_punctuation: bool = True

    def normalize(self, text: str) -> str:
        if self.lowercase:
            text = text.lower()
        if self.strip_punctuation:
            text = text.strip(_PUNCT)
        return text


DEFAULT_POLICY = TokenizationPolicy()


def tokenize(text: str, policy: TokenizationPolicy = DEFAULT_POLICY) -> tuple[str, ...]:
    """Split raw text into whole-word tokens.

    The default policy lowercases, splits on runs of whitespace, strips
    leading/trailing punctuation from each piece and drops pieces that end up
    empty. ``tokenize("His mom visited.")`` gives ``("his", "mom", "visited")``.
    """
    out = []
    for piece in text.split():
        tok = policy.normalize(piece)
        if tok:
            out.append(tok)
    return tuple(out)


@dataclass(frozen=True)
class Note:
    id: str
    tokens: tuple[str, ...]
    label: int | None = None

    def __post_init__(self):
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.label not in (None, 0, 1):
            raise CorpusError(f"note {self.id!r}: label must be 0, 1 or None, got {self.label!r}")

    def __len__(self):
        return len(self.tokens)

    def first_index(self, token: str) -> int:
        """Position of the first occurrence of ``token``, or -1."""
        try:
            return self.tokens.index(token)
        except ValueError:
            return -1


class Corpus:
    """An immutable collection of notes with vocabulary and frequency maps.

    ``doc_frequency[t]`` counts notes containing ``t`` at least once and
    ``token_frequency[t]`` counts all occurrences. Notes keep their ingestion
    order; empty notes are kept.
    """

    def __init__(self, notes: Sequence[Note]):
        self.notes: tuple[Note, ...] = tuple(notes)
        tf: Counter[str] = Counter()
        df: Counter[str] = Counter()
        postings: dict[str, list[int]] = {}
        seen_ids: set[str] = set()
        for i, note in enumerate(self.notes):
            if note.id in seen_ids:
                raise CorpusError(f"duplicate note id {note.id!r}")
            seen_ids.add(note.id)
            tf.update(note.tokens)
            for tok in set(note.tokens):
                df[tok] += 1
                postings.setdefault(tok, []).append(i)
        self.token_frequency: dict[str, int] = dict(tf)
        self.doc_frequency: dict[str, int] = dict(df)
        self.vocabulary: frozenset[str] = frozenset(tf)
        self._postings = {t: tuple(ix) for t, ix in postings.items()}
        self._by_id = {n.id: n for n in self.notes}

    def __len__(self):
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)

    def __contains__(self, token):
        return token in self.vocabulary

    def __repr__(self):
        return f"Corpus(notes={len(self.notes)}, vocabulary={len(self.vocabulary)})"

    def note(self, note_id: str) -> Note:
        return self._by_id[note_id]

    @property
    def labels(self) -> list[int | None]:
        return [n.label for n in self.notes]

    def sorted_vocabulary(self) -> list[str]:
        return sorted(self.vocabulary)

    def containing(self, token: str) -> tuple[int, ...]:
        return self._postings.get(token, ())

    def to_records(self) -> list[dict]:
        return [{"id": n.id, "tokens": list(n.tokens), "label": n.label} for n in self.notes]


def build_corpus(notes: Iterable[Note]) -> Corpus:
    return Corpus(list(notes))


def subset_containing(corpus: Corpus, u: str) -> Corpus:
    """Notes of ``corpus`` in which ``u`` occurs at least once, in corpus order."""
    return Corpus([corpus.notes[i] for i in corpus.containing(u)])


# --------------------------------------------------------------------------
# ingestion

def note_from_record(rec: dict, policy: TokenizationPolicy = DEFAULT_POLICY) -> Note:
    if "id" not in rec:
        raise CorpusError("record without 'id' field")
    if "tokens" in rec:
        toks = tuple(policy.normalize(str(t)) for t in rec["tokens"])
        toks = tuple(t for t in toks if t)
    elif "text" in rec:
        toks = tokenize(str(rec["text"]), policy)
    else:
        raise CorpusError(f"record {rec['id']!r} has neither 'text' nor 'tokens'")
    label = rec.get("label")
    if label is not None:
        label = int(label)
    return Note(str(rec["id"]), toks, label)


def read_corpus(path, policy: TokenizationPolicy = DEFAULT_POLICY) -> Corpus:
    """Read one JSON object per line (``{id, text|tokens, label?}``)."""
    notes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                notes.append(note_from_record(rec, policy))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
    return build_corpus(notes)


def dump_corpus(corpus: Corpus) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in corpus.to_records())


def write_corpus(corpus: Corpus, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, dump_corpus(corpus))


# --------------------------------------------------------------------------
# synthetic corpora

@dataclass
class SyntheticSpec:
    """Parameters of a synthetic labelled corpus.

    ``planted_signals`` entries are ``(token, correlation)`` or
    ``(token, correlation, presence_rate)``. When the presence rate is
    omitted it is set to ``positive_rate`` for non-negative correlations and
    ``1 - positive_rate`` for negative ones; both choices are always feasible.
    """

    seed: int = 0
    num_notes: int = 1000
    note_length_range: tuple[int, int] = (20, 40)
    vocab_size: int = 200
    planted_signals: list = field(default_factory=list)
    positive_rate: float = 0.06
    zipf_exponent: float = 1.0
    max_signal_count: int = 3

    def validate(self):
        lo, hi = self.note_length_range
        if not (0 < lo <= hi):
            raise InfeasibleSpecError(f"note_length_range must satisfy 0 < min <= max, got {self.note_length_range}")
        if self.num_notes < 0:
            raise InfeasibleSpecError("num_notes must be non-negative")
        if not 0.0 < self.positive_rate < 1.0:
            raise InfeasibleSpecError(f"positive_rate must lie in (0, 1), got {self.positive_rate}")
        if self.vocab_size < len(self.planted_signals) + 10:
            raise InfeasibleSpecError(
                f"vocab_size={self.vocab_size} leaves fewer than 10 background tokens "
                f"for {len(self.planted_signals)} planted signals"
            )
        if self.max_signal_count < 1:
            raise InfeasibleSpecError("max_signal_count must be >= 1")
        names = [s[0] for s in self.planted_signals]
        if len(set(names)) != len(names):
            raise InfeasibleSpecError("planted signal tokens must be distinct")
        for sig in self.planted_signals:
            presence_probabilities(sig, self.positive_rate)

    def background_tokens(self) -> list[str]:
        n_bg = self.vocab_size - len(self.planted_signals)
        width = max(4, len(str(n_bg)))
        planted = {s[0] for s in self.planted_signals}
        toks = [f"w{i:0{width}d}" for i in range(n_bg)]
        clash = planted.intersection(toks)
        if clash:
            raise InfeasibleSpecError(f"planted tokens collide with background names: {sorted(clash)}")
        return toks

    def vocabulary(self) -> list[str]:
        return sorted(self.background_tokens() + [s[0] for s in self.planted_signals])


def presence_probabilities(signal, positive_rate: float) -> tuple[float, float]:
    """Return P(present | label=1), P(present | label=0) for a planted signal.

    For binary presence ``Z`` with marginal rate ``s`` and labels with rate
    ``pi``, the phi coefficient is ``(q1 - q0) * sqrt(pi(1-pi)) / sqrt(s(1-s))``,
    so ``q1 = s + (1-pi) * d`` and ``q0 = s - pi * d`` with
    ``d = rho * sqrt(s(1-s) / (pi(1-pi)))``.
    """
    token, rho = signal[0], float(signal[1])
    if not -1.0 <= rho <= 1.0:
        raise InfeasibleSpecError(f"signal {token!r}: correlation {rho} outside [-1, 1]")
    pi = positive_rate
    if len(signal) > 2 and signal[2] is not None:
        s = float(signal[2])
        if not 0.0 < s < 1.0:
            raise InfeasibleSpecError(f"signal {token!r}: presence rate {s} outside (0, 1)")
    else:
        s = pi if rho >= 0 else 1.0 - pi
    d = rho * math.sqrt(s * (1 - s) / (pi * (1 - pi)))
    q1 = s + (1 - pi) * d
    q0 = s - pi * d
    eps = 1e-12
    if not (-eps <= q1 <= 1 + eps and -eps <= q0 <= 1 + eps):
        raise InfeasibleSpecError(
            f"signal {token!r}: correlation {rho} is infeasible with positive_rate={pi} and "
            f"presence rate {s:.4g}: it needs P(present|1)={q1:.4g}, P(present|0)={q0:.4g}, "
            "which are not probabilities"
        )
    return min(max(q1, 0.0), 1.0), min(max(q0, 0.0), 1.0)


def generate_synthetic(spec: SyntheticSpec) -> Corpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.num_notes
    background = spec.background_tokens()
    ranks = np.arange(1, len(background) + 1, dtype=float)
    weights = ranks ** (-spec.zipf_exponent)
    weights /= weights.sum()

    n_pos = int(round(spec.positive_rate * n))
    labels = np.zeros(n, dtype=int)
    labels[rng.permutation(n)[:n_pos]] = 1

    probs = [presence_probabilities(s, spec.positive_rate) for s in spec.planted_signals]
    lo, hi = spec.note_length_range
    lengths = rng.integers(lo, hi + 1, size=n)
    width = len(str(max(n - 1, 0)))

    notes = []
    for i in range(n):
        L = int(lengths[i])
        toks = [background[j] for j in rng.choice(len(background), size=L, p=weights)]
        free = list(range(L))
        for (sig, (q1, q0)) in zip(spec.planted_signals, probs):
            q = q1 if labels[i] == 1 else q0
            if rng.random() >= q or not free:
                continue
            k = min(int(rng.integers(1, spec.max_signal_count + 1)), len(free))
            picks = rng.choice(len(free), size=k, replace=False)
            for p in sorted(picks.tolist(), reverse=True):
                toks[free.pop(p)] = sig[0]
        notes.append(Note(f"n{i:0{width}d}", tuple(toks), int(labels[i])))
    return Corpus(notes)


def load_synthetic_spec(path) -> SyntheticSpec:
    """Read a ``[synthetic]`` section of ``key = value`` lines.

    ``planted_signals`` is a comma-separated list of ``token:correlation`` or
    ``token:correlation:presence`` items; ``note_length_range`` is ``min,max``.
    """
    import configparser

    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    return synthetic_spec_from_section(cp["synthetic"] if cp.has_section("synthetic") else cp[cp.default_section])


def synthetic_spec_from_section(sec) -> SyntheticSpec:
    spec = SyntheticSpec()
    if "seed" in sec:
        spec.seed = int(sec["seed"])
    if "num_notes" in sec:
        spec.num_notes = int(sec["num_notes"])
    if "note_length_range" in sec:
        lo, hi = (int(x) for x in sec["note_length_range"].split(","))
        spec.note_length_range = (lo, hi)
    if "vocab_size" in sec:
        spec.vocab_size = int(sec["vocab_size"])
    if "positive_rate" in sec:
        spec.positive_rate = float(sec["positive_rate"])
    if "zipf_exponent" in sec:
        spec.zipf_exponent = float(sec["zipf_exponent"])
    if "max_signal_count" in sec:
        spec.max_signal_count = int(sec["max_signal_count"])
    if sec.get("planted_signals", "").strip():
        sigs = []
        for item in sec["planted_signals"].split(","):
            parts = [p.strip() for p in item.strip().split(":")]
            if len(parts) == 2:
                sigs.append((parts[0], float(parts[1])))
            elif len(parts) == 3:
                sigs.append((parts[0], float(parts[1]), float(parts[2])))
            else:
                raise InfeasibleSpecError(f"cannot parse planted signal {item!r}")
        spec.planted_signals = sigs
    return spec


def write_synthetic_spec(spec: SyntheticSpec, path: Path | str) -> None:
    sigs = ", ".join(":".join(str(x) for x in s) for s in spec.planted_signals)
    lines = [
        "[synthetic]",
        f"seed = {spec.seed}",
        f"num_notes = {spec.num_notes}",
        f"note_length_range = {spec.note_length_range[0]},{spec.note_length_range[1]}",
        f"vocab_size = {spec.vocab_size}",
        f"planted_signals = {sigs}",
        f"positive_rate = {spec.positive_rate!r}",
        f"zipf_exponent = {spec.zipf_exponent!r}",
        f"max_signal_count = {spec.max_signal_count}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_SPLIT_SALT = 0x5E17


def split_corpus(corpus: Corpus, fractions=(0.7, 0.15, 0.15), seed: int = 0) -> tuple[Corpus, ...]:
    """Shuffle notes with ``seed`` and cut them into consecutive parts.

    Each part keeps the original note order.
    """
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ValueError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    n = len(corpus)
    # salted so a split never replays the generator's own label permutation
    perm = np.random.default_rng([seed, _SPLIT_SALT]).permutation(n)
    bounds = np.round(np.cumsum((0.0,) + tuple(fractions)) * n).astype(int)
    parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        keep = np.sort(perm[lo:hi])
        parts.append(Corpus([corpus.notes[i] for i in keep]))
    return tuple(parts)
