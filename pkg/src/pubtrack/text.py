"""Tokenization shared by the embedding fallback and topic keyword extraction.

Lowercase, ASCII-folded unigrams and bigrams with an English stop-word
filter. Deterministic: the same text always yields the same token list.
"""
from __future__ import annotations

import re
import unicodedata

_WORD_RE = re.compile(r"[a-z0-9]+")

# Compact English stop-word list. Kept in-repo so tokenization is
# reproducible independent of any NLP package version.
STOPWORDS = frozenset("""
a about above after again against all also am an and any are as at be because
been before being below between both but by can cannot could did do does doing
down during each few for from further had has have having he her here hers
herself him himself his how i if in into is it its itself just me more most my
myself no nor not of off on once only or other our ours ourselves out over own
same she should so some such than that the their theirs them themselves then
there these they this those through to too under until up very was we were what
when where which while who whom why will with you your yours yourself
yourselves
""".split())


def fold_ascii(text: str) -> str:
    """Strip accents and drop non-ASCII characters."""
    normalized = unicodedata.normalize("NFKD", text)
    return normalized.encode("ascii", "ignore").decode("ascii")


def tokenize(text: str, ngrams: int = 2) -> list[str]:
    """Split text into lowercase unigram and bigram tokens.

    Stop-words are removed before bigram formation, bigram parts are
    joined with an underscore, and single-character tokens are dropped.
    """
    words = [
        w
        for w in _WORD_RE.findall(fold_ascii(text).lower())
        if len(w) > 1 and w not in STOPWORDS
    ]
    tokens = list(words)
    if ngrams >= 2:
        tokens.extend(f"{a}_{b}" for a, b in zip(words, words[1:]))
    return tokens
