"""Word-level tokenization shared by captions, instructions, and QC.

Rules: lowercase, split on whitespace, and split the punctuation marks
``. , : ; ! ?`` into standalone tokens.  Detokenization joins words with
single spaces and attaches punctuation to the preceding word.
"""

from __future__ import annotations

PUNCTUATION = {".", ",", ":", ";", "!", "?"}


def word_tokens(text: str) -> list[str]:
    tokens: list[str] = []
    for raw in text.lower().split():
        word = ""
        for ch in raw:
            if ch in PUNCTUATION:
                if word:
                    tokens.append(word)
                    word = ""
                tokens.append(ch)
            else:
                word += ch
        if word:
            tokens.append(word)
    return tokens


def join_tokens(tokens: list[str]) -> str:
    parts: list[str] = []
    for tok in tokens:
        if tok in PUNCTUATION and parts:
            parts[-1] += tok
        else:
            parts.append(tok)
    return " ".join(parts)


def content_words(text: str) -> list[str]:
    """Tokens excluding punctuation; the unit of caption word counting."""
    return [t for t in word_tokens(text) if t not in PUNCTUATION]


def split_sentences(text: str) -> list[str]:
    """Split on sentence-final punctuation, keeping the terminator with its sentence."""
    sentences: list[str] = []
    buf = ""
    for ch in text:
        buf += ch
        if ch in ".!?":
            stripped = buf.strip()
            if stripped:
                sentences.append(stripped)
            buf = ""
    tail = buf.strip()
    if tail:
        sentences.append(tail)
    return sentences
