"""Token vocabulary for the sequence parser: delimiter tokens plus characters.

Delimiter tokens (category/field tags, the separator, the task prompt) are
single vocabulary entries; everything else is encoded character by character.
"""

from __future__ import annotations

from typing import Optional

from ..schema import (Category, SchemaRegistry, close_token, default_registry,
                      delimiter_tokens, lex_tokens, open_token)

PAD_TOKEN = "<pad>"
PROMPT_TOKEN = "<s_parse>"

# Characters the grammars and real callouts draw from. ASCII printable plus
# the drawing symbols: diameter, degree, micro, GD&T glyphs, square, arrows.
CHAR_INVENTORY = (
    [chr(c) for c in range(32, 127)]
    + list("⌀°μ±⟂∥⌖○⏥⌭□↗")
)


class VocabError(Exception):
    pass


class TokenVocab:
    def __init__(self, tokens: list[str]):
        self.tokens = list(tokens)
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise VocabError("duplicate tokens in vocabulary")
        self.pad_id = self._index[PAD_TOKEN]

    def __len__(self) -> int:
        return len(self.tokens)

    def token_id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabError(f"token not in vocabulary: {token!r}") from None

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def encode(self, text: str) -> list[int]:
        ids = []
        for kind, value in lex_tokens(text):
            if kind == "open":
                ids.append(self.token_id(open_token(value)))
            elif kind == "close":
                ids.append(self.token_id(close_token(value)))
            elif kind == "sep":
                ids.append(self.token_id("<sep/>"))
            else:
                for ch in value:
                    if ch not in self._index:
                        raise VocabError(f"character not in vocabulary: {ch!r}")
                    ids.append(self._index[ch])
        return ids

    def decode(self, ids) -> str:
        return "".join(self.tokens[int(i)] for i in ids)

    def end_token_ids(self) -> set[int]:
        """Ids of the category close tokens, where generation halts."""
        return {self._index[close_token(c.code)] for c in Category
                if close_token(c.code) in self._index}


def build_vocab(registry: Optional[SchemaRegistry] = None) -> TokenVocab:
    """Vocabulary covering every delimiter token of every registered category."""
    reg = registry or default_registry()
    tokens = [PAD_TOKEN, PROMPT_TOKEN]
    for category in reg.categories():
        for tok in delimiter_tokens(category, reg):
            if tok not in tokens:
                tokens.append(tok)
    for ch in CHAR_INVENTORY:
        if ch not in tokens:
            tokens.append(ch)
    return TokenVocab(tokens)
