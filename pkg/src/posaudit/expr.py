"""Restriction predicates over covariate patterns.

Grammar (whitespace ignored; ``and``/``or``/``not`` may replace the symbols)::

    expr   := term ('|' term)*
    term   := factor ('&' factor)*
    factor := '!' factor | '(' expr ')' | NAME ('=' | '!=') INT

Example: ``!(V=0&W=0)`` keeps everyone except units with V=0 and W=0.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .errors import InputError

_TOKEN = re.compile(r"\s*(?:(!=|==|=|&&?|\|\|?|!|\(|\))|(\d+)|([A-Za-z_][A-Za-z0-9_]*))")
_WORDS = {"and": "&", "or": "|", "not": "!"}


class ExpressionError(InputError):
    pass


def _tokenize(text: str) -> list[str]:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character at position {pos} in {text!r}")
        sym, num, name = m.groups()
        if sym:
            out.append({"&&": "&", "||": "|", "==": "="}.get(sym, sym))
        elif num:
            out.append(num)
        else:
            out.append(_WORDS.get(name.lower(), name))
        pos = m.end()
    return out


@dataclass(frozen=True)
class Predicate:
    """Parsed restriction; call it on a pattern tuple."""

    text: str
    tree: tuple
    names: tuple[str, ...]

    def __call__(self, z) -> bool:
        return _eval(self.tree, tuple(z))

    def __str__(self) -> str:
        return self.text


def _eval(node, z) -> bool:
    op = node[0]
    if op == "cmp":
        _, j, neg, level = node
        return (z[j] == level) != neg
    if op == "not":
        return not _eval(node[1], z)
    if op == "and":
        return all(_eval(c, z) for c in node[1])
    return any(_eval(c, z) for c in node[1])


def parse_predicate(text: str, names: Sequence[str]) -> Predicate:
    names = tuple(names)
    tokens = _tokenize(text)
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take(expected=None):
        nonlocal pos
        tok = peek()
        if tok is None or (expected is not None and tok != expected):
            raise ExpressionError(f"expected {expected or 'a term'} in {text!r}")
        pos += 1
        return tok

    def expr():
        parts = [term()]
        while peek() == "|":
            take()
            parts.append(term())
        return parts[0] if len(parts) == 1 else ("or", tuple(parts))

    def term():
        parts = [factor()]
        while peek() == "&":
            take()
            parts.append(factor())
        return parts[0] if len(parts) == 1 else ("and", tuple(parts))

    def factor():
        tok = peek()
        if tok == "!":
            take()
            return ("not", factor())
        if tok == "(":
            take()
            inner = expr()
            take(")")
            return inner
        name = take()
        if name not in names:
            raise ExpressionError(f"unknown covariate {name!r} in {text!r}; known: {', '.join(names)}")
        op = take()
        if op not in ("=", "!="):
            raise ExpressionError(f"expected '=' or '!=' after {name!r} in {text!r}")
        level = take()
        if not level.isdigit():
            raise ExpressionError(f"expected a level code after {name}{op} in {text!r}")
        return ("cmp", names.index(name), op == "!=", int(level))

    if not tokens:
        raise ExpressionError("empty restriction expression")
    tree = expr()
    if pos != len(tokens):
        raise ExpressionError(f"unexpected {tokens[pos]!r} in {text!r}")
    return Predicate(text.strip(), tree, names)
