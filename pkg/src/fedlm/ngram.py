"""Backoff n-gram baseline with absolute discounting, plus a brute-force
prediction oracle that recomputes probabilities straight from a raw corpus.

The model estimates P(w | context) by discounting each observed count by a
fixed delta and handing the freed mass to the next-shorter context:

    P(w | ctx) = max(c(ctx, w) - delta, 0) / c(ctx) + lambda(ctx) * P(w | ctx[1:])
    lambda(ctx) = delta * |{w : c(ctx, w) > 0}| / c(ctx)

The recursion bottoms out in a uniform distribution over the full vocabulary,
so every distribution is proper. Prediction starts from the longest context
suffix actually observed in training (at most order-1 tokens).

The oracle path and the table path share the arithmetic of the formula above
but nothing else: counting, context matching, and traversal are written twice
so one can check the other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import NUM_SPECIALS

MAX_ORDER = 5
DEFAULT_DISCOUNT = 0.75


@dataclass
class NgramTable:
    order: int
    discount: float
    vocab_size: int
    counts: dict = field(repr=False)  # context tuple -> {next_id: count}

    def predict_topk(self, context, k):
        return predict_topk_ngram(self, context, k)

    def topk_candidates(self, seqs, k):
        """Ordered candidate ids at every prediction position of every
        sequence, memoized per context suffix (the distribution depends on
        nothing else)."""
        k_eff = min(k, self.vocab_size - NUM_SPECIALS)
        span = self.order - 1
        cache = {}
        out = []
        for seq in seqs:
            rows = []
            for j in range(1, len(seq)):
                key = tuple(seq[max(0, j - span) : j])
                ids = cache.get(key)
                if ids is None:
                    probs = backoff_probs(self, key)
                    probs[:NUM_SPECIALS] = -1.0
                    ids = np.argsort(-probs, kind="stable")[:k_eff]
                    cache[key] = ids
                rows.append(ids)
            out.append(np.stack(rows) if rows else np.zeros((0, k_eff), dtype=np.int64))
        return out


def train_ngram(corpus: list, order: int, discount: float, vocab_size: int) -> NgramTable:
    """Accumulate continuation counts for every context length 0..order-1.

    Contexts never cross the sentence start, so a position j contributes
    only the context lengths that fit (j, j-1, ..., 0 preceding tokens).
    The beginning-of-sentence token appears in contexts but is never a
    counted continuation.
    """
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be in [1, {MAX_ORDER}]")
    if not 0.0 < discount < 1.0:
        raise ValueError("discount must be in (0, 1)")
    counts = {}
    for seq in corpus:
        for j in range(1, len(seq)):
            target = seq[j]
            for span in range(0, min(order - 1, j) + 1):
                ctx = tuple(seq[j - span : j])
                bucket = counts.setdefault(ctx, {})
                bucket[target] = bucket.get(target, 0) + 1
    return NgramTable(order=order, discount=discount, vocab_size=vocab_size, counts=counts)


def _longest_known_suffix(context, order: int, present) -> tuple:
    ctx = tuple(context[max(0, len(context) - (order - 1)) :]) if order > 1 else ()
    while ctx and not present(ctx):
        ctx = ctx[1:]
    return ctx


def backoff_probs(table: NgramTable, context) -> np.ndarray:
    """Full next-token distribution (length V) for a context, built bottom-up
    from the uniform base through each observed suffix level."""
    V = table.vocab_size
    ctx = _longest_known_suffix(context, table.order, lambda c: c in table.counts)
    probs = np.full(V, 1.0 / V)
    for i in range(len(ctx), -1, -1):
        level = table.counts.get(ctx[i:])
        if level is None:  # only the empty context on an empty table
            continue
        tot = sum(level.values())
        lam = table.discount * len(level) / tot
        q = np.zeros(V)
        for w, c in level.items():
            q[w] = max(c - table.discount, 0.0) / tot
        probs = q + lam * probs
    return probs


def predict_topk_ngram(table: NgramTable, context, k: int) -> list:
    """Top-k (word id, probability) continuations; special tokens are barred
    from candidacy; ties break toward the lower id. At most V-3 items exist
    (every real word has positive backoff probability), so fewer than k come
    back when k exceeds that."""
    if k < 1:
        raise ValueError("k must be at least 1")
    probs = backoff_probs(table, context)
    masked = probs.copy()
    masked[:NUM_SPECIALS] = -1.0
    ids = np.argsort(-masked, kind="stable")[: min(k, table.vocab_size - NUM_SPECIALS)]
    return [(int(i), float(probs[i])) for i in ids]


# ---------------------------------------------------------------------------
# Brute-force oracle: no table, no shared counting code.


def _scan_continuations(corpus: list, ctx: tuple) -> dict:
    """Count, by direct corpus scan, what follows each occurrence of ctx."""
    span = len(ctx)
    found = {}
    for seq in corpus:
        for j in range(1, len(seq)):
            if j - span >= 0 and tuple(seq[j - span : j]) == ctx:
                found[seq[j]] = found.get(seq[j], 0) + 1
    return found


def oracle_predict(corpus: list, context, k: int, order: int, discount: float, vocab_size: int) -> list:
    """Reference prediction: recompute the backoff distribution by direct
    enumeration over the raw corpus and return the ordered top-k ids."""
    V = vocab_size
    ctx = _longest_known_suffix(context, order, lambda c: bool(_scan_continuations(corpus, c)))
    probs = np.full(V, 1.0 / V)
    for i in range(len(ctx), -1, -1):
        level = _scan_continuations(corpus, ctx[i:])
        if not level:
            continue
        tot = sum(level.values())
        lam = discount * len(level) / tot
        q = np.zeros(V)
        for w, c in level.items():
            q[w] = max(c - discount, 0.0) / tot
        probs = q + lam * probs
    masked = probs.copy()
    masked[:NUM_SPECIALS] = -1.0
    ids = np.argsort(-masked, kind="stable")[: min(k, V - NUM_SPECIALS)]
    return [int(i) for i in ids]


def dump_table(path, table: NgramTable) -> None:
    """Text dump `context-ids<TAB>next-id<TAB>count`, sorted, for diffing."""
    lines = []
    for ctx in sorted(table.counts, key=lambda c: (len(c), c)):
        for nxt in sorted(table.counts[ctx]):
            lines.append(f"{' '.join(map(str, ctx))}\t{nxt}\t{table.counts[ctx][nxt]}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
