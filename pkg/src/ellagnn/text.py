"""Word tokenization shared by the text-length heuristic and the hashing embedder."""

import unicodedata


def strip_punct(token: str) -> str:
    lo, hi = 0, len(token)
    while lo < hi and unicodedata.category(token[lo]).startswith("P"):
        lo += 1
    while hi > lo and unicodedata.category(token[hi - 1]).startswith("P"):
        hi -= 1
    return token[lo:hi]


def tokenize(text: str) -> list[str]:
    """Split on Unicode whitespace, lowercase, trim edge punctuation, drop empties."""
    out = []
    for raw in text.split():
        tok = strip_punct(raw.lower())
        if tok:
            out.append(tok)
    return out
