"""Minimal s-expression reader and printer.

Grammar: lists in parens, atoms are symbols or numbers, `;` starts a
line comment. Atoms keep their source spelling; numbers parse to int or
float. Errors carry line and column.
"""
from __future__ import annotations


class SexpError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{msg} at line {line}, column {col}")
        self.line = line
        self.col = col


def _tokenize(text: str):
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch in "()":
            yield ch, line, col
            i += 1
            col += 1
            continue
        j = i
        while j < n and text[j] not in " \t\r\n();":
            j += 1
        yield text[i:j], line, col
        col += j - i
        i = j


def _atom(tok: str):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    return tok


def parse_all(text: str) -> list:
    """Parse every top-level form in the text."""
    stack: list[list] = []
    top: list = []
    last = (1, 1)
    for tok, line, col in _tokenize(text):
        last = (line, col)
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if not stack:
                raise SexpError("unbalanced ')'", line, col)
            done = stack.pop()
            (stack[-1] if stack else top).append(done)
        else:
            if not stack:
                raise SexpError(f"atom {tok!r} outside any form", line, col)
            stack[-1].append(_atom(tok))
    if stack:
        raise SexpError("unclosed '('", *last)
    return top


def parse_one(text: str):
    forms = parse_all(text)
    if len(forms) != 1:
        raise SexpError(f"expected one form, found {len(forms)}", 1, 1)
    return forms[0]


def _format_atom(a) -> str:
    if isinstance(a, float):
        return repr(a)
    return str(a)


def dumps(form, indent: int = 0) -> str:
    """Print a form, breaking long lists across lines."""
    if not isinstance(form, list):
        return _format_atom(form)
    inner = [dumps(f, indent + 2) for f in form]
    flat = "(" + " ".join(inner) + ")"
    if len(flat) + indent <= 78 or not any(isinstance(f, list) for f in form):
        return flat
    pad = " " * (indent + 2)
    head = inner[0]
    rest = ("\n" + pad).join(inner[1:])
    return f"({head}\n{pad}{rest})"


def dumps_all(forms: list) -> str:
    return "\n".join(dumps(f) for f in forms) + "\n"
