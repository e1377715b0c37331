"""Token replacement filters and the perturbation of notes.

A filter maps a token of interest ``u`` to a replacement token. Three
families are provided:

* uniform   - a token drawn uniformly from the vocabulary minus ``u``;
* one_gram  - the i-th most frequent token among notes containing ``u``;
* context   - the i-th most likely token for the masked position of ``u``,
              from a pluggable replacement provider.

``perturb`` swaps either the first occurrence of ``u`` (one-swap) or every
occurrence (multi-swap); a note without ``u`` is returned unchanged.
"""

from __future__ import annotations

import logging
import random
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy import sparse

from .corpus import Corpus, Note
from .errors import ProviderError

log = logging.getLogger(__name__)

UNIFORM, ONE_GRAM, CONTEXT, EXPLICIT = "uniform", "one_gram", "context", "explicit"
FAMILIES = (UNIFORM, ONE_GRAM, CONTEXT)


class SwapScheme(str, Enum):
    ONE_SWAP = "one_swap"
    MULTI_SWAP = "multi_swap"

    @classmethod
    def parse(cls, value) -> "SwapScheme":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower().replace("-", "_"))


@dataclass(frozen=True, eq=False)
class PerturbationFilter:
    """A rule ``h`` giving the replacement for a token of interest.

    Exactly one of ``replacement`` (same answer for every ``u``), ``mapping``
    (explicit table) or ``vocab`` (seeded uniform draw excluding ``u``) is set.
    """

    kind: str
    replacement: str | None = None
    mapping: Mapping[str, str] | None = None
    vocab: tuple[str, ...] | None = None
    seed: int | None = None
    index: int = 0
    provenance: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __call__(self, u: str) -> str:
        if self.replacement is not None:
            return self.replacement
        if self.mapping is not None:
            try:
                return self.mapping[u]
            except KeyError:
                raise KeyError(f"filter {self.provenance or self.kind!r} has no replacement for {u!r}") from None
        w = self._cache.get(u)
        if w is None:
            w = self._cache[u] = _uniform_draw(self.vocab, u, self.seed, self.index)
        return w


def _uniform_draw(vocab: Sequence[str], u: str, seed, index: int) -> str:
    """Draw uniformly from the sorted ``vocab`` with ``u`` removed."""
    # string seeds hash through sha512, so draws do not depend on PYTHONHASHSEED
    rng = random.Random(f"{seed}:{index}:{u}")
    pos = bisect_left(vocab, u)
    if pos < len(vocab) and vocab[pos] == u:
        j = rng.randrange(len(vocab) - 1)
        return vocab[j + 1] if j >= pos else vocab[j]
    return vocab[rng.randrange(len(vocab))]


def explicit_filter(mapping: Mapping[str, str], provenance="explicit") -> PerturbationFilter:
    return PerturbationFilter(EXPLICIT, mapping=dict(mapping), provenance=provenance)


@dataclass(frozen=True)
class FilterSet:
    filters: tuple[PerturbationFilter, ...]
    families: tuple[str, ...]
    incomplete: bool = False

    def __post_init__(self):
        if not self.filters:
            raise ValueError("a filter set needs at least one filter")
        if len(self.families) != len(self.filters):
            raise ValueError("one family label per filter")

    def __len__(self):
        return len(self.filters)

    def __iter__(self):
        return iter(self.filters)

    def __getitem__(self, i):
        return self.filters[i]

    @classmethod
    def of(cls, filters: Sequence[PerturbationFilter], incomplete=False) -> "FilterSet":
        return cls(tuple(filters), tuple(f.kind for f in filters), incomplete)

    @classmethod
    def concat(cls, *sets: "FilterSet | None") -> "FilterSet":
        sets = [s for s in sets if s is not None]
        return cls(
            tuple(f for s in sets for f in s.filters),
            tuple(fam for s in sets for fam in s.families),
            any(s.incomplete for s in sets),
        )


def perturb(note: Note, u: str, h, scheme=SwapScheme.ONE_SWAP) -> Note:
    k = note.first_index(u)
    if k < 0:
        return note
    rep = h(u)
    toks = note.tokens
    if SwapScheme.parse(scheme) is SwapScheme.ONE_SWAP:
        new = toks[:k] + (rep,) + toks[k + 1:]
    else:
        new = tuple(rep if t == u else t for t in toks)
    return Note(note.id, new, note.label)


# --------------------------------------------------------------------------
# uniform

def build_uniform_filters(vocab, count: int = 5, seed: int = 0) -> FilterSet:
    """``count`` filters, each drawing a replacement uniformly from ``vocab`` minus ``u``."""
    vocab = tuple(sorted(set(vocab)))
    if len(vocab) < 2:
        raise ValueError(f"uniform filters need at least 2 vocabulary tokens, got {len(vocab)}")
    filters = [
        PerturbationFilter(UNIFORM, vocab=vocab, seed=seed, index=i, provenance=f"uniform draw #{i} (seed {seed})")
        for i in range(count)
    ]
    return FilterSet.of(filters)


# --------------------------------------------------------------------------
# 1-gram

def top_frequent_tokens(corpus_u: Corpus, u: str, count: int) -> list[str]:
    ranked = sorted(((-c, t) for t, c in corpus_u.token_frequency.items() if t != u))
    return [t for _, t in ranked[:count]]


def build_onegram_filters(corpus_u: Corpus, u: str, count: int = 5) -> FilterSet:
    """Filters replacing ``u`` with the most frequent other tokens of ``corpus_u``.

    Ties in frequency are broken lexicographically. When fewer than ``count``
    candidates exist the returned set is shorter and marked ``incomplete``.
    """
    if len(corpus_u) == 0:
        raise ValueError(f"no notes contain {u!r}; cannot build 1-gram filters")
    top = top_frequent_tokens(corpus_u, u, count)
    if not top:
        raise ValueError(f"notes containing {u!r} have no other tokens")
    incomplete = len(top) < count
    if incomplete:
        log.warning("only %d 1-gram candidates for %r (wanted %d)", len(top), u, count)
    filters = [
        PerturbationFilter(ONE_GRAM, replacement=w, index=i,
                           provenance=f"1-gram #{i + 1}: {w} ({corpus_u.token_frequency[w]} occurrences)")
        for i, w in enumerate(top)
    ]
    return FilterSet.of(filters, incomplete)


# --------------------------------------------------------------------------
# context

class ReplacementProvider(Protocol):
    def replacements(self, tokens: Sequence[str], mask_index: int, k: int) -> list[str]: ...


class CooccurrenceProvider:
    """Rank fill-ins for a masked position by corpus co-occurrence.

    A candidate ``w`` scores one point for every corpus position where ``w``
    sits at offset ``-o`` from a token equal to the note's token at offset
    ``o`` of the mask, for ``0 < |o| <= window``. Ties fall back to global
    frequency, then to token text.
    """

    name = "cooccurrence"

    def __init__(self, corpus: Corpus, window: int = 3):
        self.window = window
        self.vocab = corpus.sorted_vocabulary()
        self.index = {t: i for i, t in enumerate(self.vocab)}
        V = len(self.vocab)
        freq = np.array([corpus.token_frequency[t] for t in self.vocab], dtype=np.int64)
        self.global_order = np.array(sorted(range(V), key=lambda i: (-freq[i], self.vocab[i])), dtype=np.int64)
        self.tiebreak = np.empty(V, dtype=np.int64)
        self.tiebreak[self.global_order] = np.arange(V)

        ids, note_of = [], []
        for j, note in enumerate(corpus.notes):
            ids.extend(self.index[t] for t in note.tokens)
            note_of.extend([j] * len(note.tokens))
        ids = np.asarray(ids, dtype=np.int64)
        note_of = np.asarray(note_of, dtype=np.int64)
        self.tables: dict[int, sparse.csr_matrix] = {}
        for o in range(-window, window + 1):
            if o == 0:
                continue
            if o > 0:
                w, c, same = ids[:-o], ids[o:], note_of[:-o] == note_of[o:]
            else:
                w, c, same = ids[-o:], ids[:o], note_of[-o:] == note_of[:o]
            w, c = w[same], c[same]
            self.tables[o] = sparse.csr_matrix((np.ones(len(w)), (c, w)), shape=(V, V))

    def scores(self, tokens: Sequence[str], mask_index: int) -> np.ndarray:
        score = np.zeros(len(self.vocab))
        for o, table in self.tables.items():
            p = mask_index + o
            if 0 <= p < len(tokens):
                c = self.index.get(tokens[p])
                if c is not None:
                    lo, hi = table.indptr[c], table.indptr[c + 1]
                    np.add.at(score, table.indices[lo:hi], table.data[lo:hi])
        return score

    def replacements(self, tokens, mask_index, k):
        score = self.scores(tokens, mask_index)
        hit = np.nonzero(score)[0]
        ranked = hit[np.lexsort((self.tiebreak[hit], -score[hit]))].tolist()
        out = [self.vocab[i] for i in ranked[:k]]
        if len(out) < k:
            seen = set(ranked)
            for i in self.global_order.tolist():
                if len(out) >= k:
                    break
                if i not in seen:
                    out.append(self.vocab[i])
        return out


def build_context_filters(provider: ReplacementProvider, note: Note, position: int, count: int = 5,
                          exclude: str | None = None) -> FilterSet:
    """Filters from the provider's most likely fill-ins for ``note.tokens[position]``.

    The masked token itself (or ``exclude``) is dropped from the candidates.
    Provider failures raise :class:`ProviderError`; there is no fallback.
    """
    u = note.tokens[position] if exclude is None else exclude
    try:
        reps = provider.replacements(note.tokens, position, count + 1)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"replacement provider failed for note {note.id!r}: {exc}") from exc
    picked = []
    for w in reps:
        if w != u and w not in picked:
            picked.append(w)
        if len(picked) == count:
            break
    if not picked:
        raise ProviderError(f"provider returned no usable replacement for note {note.id!r}")
    incomplete = len(picked) < count
    src = getattr(provider, "name", type(provider).__name__)
    filters = [
        PerturbationFilter(CONTEXT, replacement=w, index=i, provenance=f"context #{i + 1} from {src}: {w}")
        for i, w in enumerate(picked)
    ]
    return FilterSet.of(filters, incomplete)
