"""Rankings and rank correlations."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import UndefinedMetricError

TIE_POLICIES = ("strict", "competition", "average")
SPEARMAN_VARIANTS = ("paper_formula", "tie_corrected")


@dataclass
class Ranking:
    """Token -> rank, where rank 1 is the most important token."""

    entries: dict[str, float]
    source: str = "model"
    tie_policy: str = "strict"

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, token):
        return self.entries[token]

    def __iter__(self):
        return iter(self.entries)

    def tokens(self) -> list[str]:
        return list(self.entries)


def _positions(keys: Mapping[str, float], descending: bool):
    """Tokens in rank order, grouped into blocks of equal key."""
    sign = -1.0 if descending else 1.0
    order = sorted(keys, key=lambda t: (sign * keys[t], t))
    blocks: list[list[str]] = []
    for t in order:
        if blocks and keys[blocks[-1][0]] == keys[t]:
            blocks[-1].append(t)
        else:
            blocks.append([t])
    return order, blocks


def rank_tokens(scores: Mapping[str, float], tie_policy: str = "strict", descending: bool = True,
                source: str = "model") -> Ranking:
    """Rank tokens so that rank 1 has the highest score (lowest if ``descending=False``).

    ``strict`` breaks exact ties by token text, ``competition`` gives a tied
    block the block's smallest rank (1, 2, 3, 3, 3, 6) and ``average`` gives
    it the mean of the positions it spans.
    """
    if not scores:
        raise ValueError("cannot rank an empty score map")
    if tie_policy not in TIE_POLICIES:
        raise ValueError(f"unknown tie policy {tie_policy!r}; expected one of {TIE_POLICIES}")
    for t, s in scores.items():
        if s is None or math.isnan(s):
            raise ValueError(f"score for token {t!r} is NaN")
    order, blocks = _positions(scores, descending)
    ranks: dict[str, float] = {}
    if tie_policy == "strict":
        for i, t in enumerate(order, 1):
            ranks[t] = float(i)
    else:
        start = 1
        for block in blocks:
            r = float(start) if tie_policy == "competition" else start + (len(block) - 1) / 2.0
            for t in block:
                ranks[t] = r
            start += len(block)
    return Ranking(ranks, source, tie_policy)


def _as_map(r) -> dict[str, float]:
    return dict(r.entries) if isinstance(r, Ranking) else dict(r)


def _check_same_tokens(a: dict, b: dict):
    if a.keys() != b.keys():
        diff = sorted(set(a) ^ set(b))
        raise ValueError(f"rankings cover different tokens; symmetric difference: {diff}")
    if len(a) < 2:
        raise UndefinedMetricError("rank correlation needs at least 2 tokens")


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation coefficient."""
    if len(xs) != len(ys):
        raise ValueError("pearson needs sequences of equal length")
    n = len(xs)
    if n < 2:
        raise UndefinedMetricError("pearson needs at least 2 points")
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("pearson is undefined when a variable has zero variance")
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def spearman(rank_a, rank_b, variant: str = "paper_formula") -> float:
    """Spearman rank correlation of two rankings over the same tokens.

    ``paper_formula`` is ``1 - 6 * sum(D^2) / (n (n^2 - 1))`` on the ranks as
    given. ``tie_corrected`` re-ranks both inputs with averaged ties and takes
    the Pearson correlation of those ranks; the two agree when there are no
    ties.
    """
    a, b = _as_map(rank_a), _as_map(rank_b)
    _check_same_tokens(a, b)
    toks = sorted(a)
    if variant == "paper_formula":
        n = len(toks)
        d2 = math.fsum((a[t] - b[t]) ** 2 for t in toks)
        return 1.0 - 6.0 * d2 / (n * (n * n - 1))
    if variant == "tie_corrected":
        ra = rank_tokens(a, "average", descending=False).entries
        rb = rank_tokens(b, "average", descending=False).entries
        return pearson([ra[t] for t in toks], [rb[t] for t in toks])
    raise ValueError(f"unknown spearman variant {variant!r}; expected one of {SPEARMAN_VARIANTS}")


def spearman_report(rank_a, rank_b) -> dict:
    a, b = _as_map(rank_a), _as_map(rank_b)
    _check_same_tokens(a, b)
    return {
        "n": len(a),
        "sum_d2": math.fsum((a[t] - b[t]) ** 2 for t in a),
        "paper_formula": spearman(a, b, "paper_formula"),
        "tie_corrected": spearman(a, b, "tie_corrected"),
    }


# --------------------------------------------------------------------------
# reference rankings

@dataclass
class ReferenceRanking:
    per_rater: dict[str, dict[str, float]]
    combined: Ranking
    mean_score: dict[str, float] = field(default_factory=dict)


def combine_raters(per_rater: Mapping[str, Mapping[str, float]]) -> ReferenceRanking:
    """Average each token's significance over raters and competition-rank it.

    Significance scores run from 1 (most significant) upward, so the lowest
    average gets rank 1.
    """
    if not per_rater:
        raise ValueError("no raters given")
    raters = sorted(per_rater)
    tokens = set().union(*(per_rater[r].keys() for r in raters))
    for r in raters:
        missing = sorted(tokens - set(per_rater[r]))
        if missing:
            raise ValueError(f"rater {r!r} has no score for token {missing[0]!r}")
    mean = {t: math.fsum(per_rater[r][t] for r in raters) / len(raters) for t in sorted(tokens)}
    combined = rank_tokens(mean, "competition", descending=False, source="reference")
    return ReferenceRanking({r: dict(per_rater[r]) for r in raters}, combined, mean)


def read_reference(text: str) -> Ranking:
    """Parse ``token,rater_id,score`` rows (combined on read) or ``token,rank`` rows."""
    reader = csv.DictReader(io.StringIO(text))
    cols = set(reader.fieldnames or ())
    rows = list(reader)
    if {"token", "rater_id", "score"} <= cols:
        per: dict[str, dict[str, float]] = {}
        for row in rows:
            per.setdefault(row["rater_id"], {})[row["token"]] = float(row["score"])
        return combine_raters(per).combined
    if {"token", "rank"} <= cols:
        return Ranking({row["token"]: float(row["rank"]) for row in rows}, "reference", "given")
    raise ValueError("reference table needs columns token,rater_id,score or token,rank")
