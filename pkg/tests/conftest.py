import numpy as np
import pytest

from fedlm.corpus import build_vocab, tokenize
from fedlm.nn_core import rng_for

# Registry the acceptance tests report into; pytest_terminal_summary prints
# one line per criterion at the end of the run regardless of capture mode.
ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_RESULTS


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for idx, label, status, detail in sorted(ACCEPTANCE_RESULTS):
        tail = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {idx:02d} {status:<4} {label}{tail}")


def make_sentences(n, vocab_words, seed, min_len=1, max_len=6):
    """Random raw sentences over a word list, deterministic from seed."""
    rng = rng_for(seed, "test-sentences")
    out = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        out.append(" ".join(vocab_words[int(i)] for i in rng.integers(0, len(vocab_words), size=length)))
    return out


@pytest.fixture
def tiny_corpus():
    """A small tokenized corpus with its vocabulary: 20 sentences, 12 words."""
    words = [f"w{i}" for i in range(12)]
    raw = make_sentences(20, words, seed=404)
    vocab = build_vocab(raw, 20)
    toks = [tokenize(s, vocab) for s in raw]
    return vocab, toks


def random_token_batch(V, n_sentences, seed, min_words=1, max_words=5):
    """Token sequences [bos, words..., eos] with word ids in [3, V)."""
    rng = rng_for(seed, "test-batch")
    batch = []
    for _ in range(n_sentences):
        length = int(rng.integers(min_words, max_words + 1))
        words = [int(w) for w in rng.integers(3, V, size=length)]
        batch.append([0] + words + [1])
    return batch
