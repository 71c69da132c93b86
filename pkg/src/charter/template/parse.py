"""Scanner and parser for the template language.

Source text is split into literal text and ``{{ ... }}`` actions, trim markers
are applied, and actions are parsed into a small node tree. Only ``define``
blocks may appear at the top level of a file; they are collected separately.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Union

from charter.errors import TemplateSyntax

_WS = " \t\r\n"


# -- nodes -------------------------------------------------------------------


@dataclass
class Literal:
    value: Any


@dataclass
class Field:
    names: tuple[str, ...]
    from_root: bool = False  # ``$.A`` instead of ``.A``


@dataclass
class Ident:
    name: str


@dataclass
class SubPipeline:
    pipeline: Pipeline


Operand = Union[Literal, Field, Ident, SubPipeline]


@dataclass
class Command:
    args: list[Operand]


@dataclass
class Pipeline:
    commands: list[Command]
    line: int


@dataclass
class Text:
    text: str


@dataclass
class Action:
    pipeline: Pipeline
    line: int


@dataclass
class Branch:
    """``if``/``with``/``range`` share one shape."""

    keyword: str
    pipeline: Pipeline
    line: int
    body: list = field(default_factory=list)
    else_body: list | None = None


@dataclass
class TemplateCall:
    name: str
    pipeline: Pipeline | None
    line: int


@dataclass
class Define:
    name: str
    body: list
    path: str
    line: int


# -- scanning ----------------------------------------------------------------


@dataclass
class _RawAction:
    source: str
    line: int


def _scan(source: str, path: str) -> list[str | _RawAction]:
    items: list[str | _RawAction] = []
    trim_next = False
    pos = 0
    line = 1
    n = len(source)
    while True:
        start = source.find("{{", pos)
        text = source[pos:] if start < 0 else source[pos:start]
        if trim_next:
            text = text.lstrip(_WS)
            trim_next = False
        if start < 0:
            if text:
                items.append(text)
            return items
        line += source.count("\n", pos, start)
        i = start + 2
        if i + 1 < n and source[i] == "-" and source[i + 1] in _WS:
            text = text.rstrip(_WS)
            i += 2
        if text:
            items.append(text)
        body_start = i
        end = None
        while i < n:
            c = source[i]
            if c == '"':
                i += 1
                while i < n and source[i] != '"':
                    if source[i] == "\\":
                        i += 1
                    elif source[i] == "\n":
                        raise TemplateSyntax("unterminated quoted string", path, line)
                    i += 1
                if i >= n:
                    raise TemplateSyntax("unterminated quoted string", path, line)
                i += 1
                continue
            if c == "`":
                close = source.find("`", i + 1)
                if close < 0:
                    raise TemplateSyntax("unterminated raw string", path, line)
                i = close + 1
                continue
            if c == "/" and source.startswith("/*", i):
                close = source.find("*/", i + 2)
                if close < 0:
                    raise TemplateSyntax("unclosed comment", path, line)
                i = close + 2
                continue
            if c in _WS and source.startswith("-}}", i + 1):
                end = i
                pos = i + 4
                trim_next = True
                break
            if source.startswith("}}", i):
                end = i
                pos = i + 2
                break
            i += 1
        if end is None:
            raise TemplateSyntax("unclosed action", path, line)
        items.append(_RawAction(source[body_start:end], line))
        line += source.count("\n", start, pos)


# -- tokenizing --------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>/\*.*?\*/)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<raw>`[^`]*`)
  | (?P<number>-?\d+(?![\w.]))
  | (?P<field>\$?(?:\.[A-Za-z_][A-Za-z0-9_]*)+)
  | (?P<root>\$(?![\w.]))
  | (?P<dot>\.)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<pipe>\|)
  | (?P<lparen>\()
  | (?P<rparen>\))
    """,
    re.VERBOSE | re.DOTALL,
)

_ESCAPES = {
    "n": "\n",
    "t": "\t",
    "r": "\r",
    "\\": "\\",
    '"': '"',
    "'": "'",
    "a": "\a",
    "b": "\b",
    "f": "\f",
    "v": "\v",
    "0": "\0",
}


def _unquote(lit: str, path: str, line: int) -> str:
    body = lit[1:-1]
    out: list[str] = []
    i = 0
    while i < len(body):
        c = body[i]
        if c != "\\":
            out.append(c)
            i += 1
            continue
        nxt = body[i + 1]
        if nxt in _ESCAPES:
            out.append(_ESCAPES[nxt])
            i += 2
        elif nxt in "xuU":
            width = {"x": 2, "u": 4, "U": 8}[nxt]
            digits = body[i + 2 : i + 2 + width]
            if len(digits) != width or not all(d in "0123456789abcdefABCDEF" for d in digits):
                raise TemplateSyntax(f"invalid escape in {lit}", path, line)
            out.append(chr(int(digits, 16)))
            i += 2 + width
        else:
            raise TemplateSyntax(f"unknown escape sequence \\{nxt} in {lit}", path, line)
    return "".join(out)


@dataclass
class _Tok:
    kind: str
    value: Any
    text: str


def _tokenize(source: str, path: str, line: int) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if not m:
            frag = source[pos : pos + 10]
            if frag.startswith("$"):
                raise TemplateSyntax("template variables are not supported", path, line)
            raise TemplateSyntax(f"unexpected {frag!r} in action", path, line)
        pos = m.end()
        kind = m.lastgroup
        text = m.group()
        if kind in ("ws", "comment"):
            if kind == "comment":
                toks.append(_Tok("comment", None, text))
            continue
        if kind == "string":
            toks.append(_Tok("literal", _unquote(text, path, line), text))
        elif kind == "raw":
            toks.append(_Tok("literal", text[1:-1], text))
        elif kind == "number":
            toks.append(_Tok("literal", int(text), text))
        elif kind == "field":
            root = text.startswith("$")
            names = tuple(text.lstrip("$").split(".")[1:])
            toks.append(_Tok("field", Field(names, from_root=root), text))
        elif kind == "root":
            toks.append(_Tok("field", Field((), from_root=True), text))
        elif kind == "dot":
            toks.append(_Tok("field", Field(()), text))
        elif kind == "ident":
            if text in ("true", "false"):
                toks.append(_Tok("literal", text == "true", text))
            elif text == "nil":
                toks.append(_Tok("literal", None, text))
            else:
                toks.append(_Tok("ident", text, text))
        else:
            toks.append(_Tok(kind, text, text))
    return toks


# -- parsing -----------------------------------------------------------------


class _PipelineParser:
    def __init__(self, toks: list[_Tok], functions: frozenset[str], path: str, line: int):
        self.toks = toks
        self.i = 0
        self.functions = functions
        self.path = path
        self.line = line

    def error(self, message: str) -> TemplateSyntax:
        return TemplateSyntax(message, self.path, self.line)

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def pipeline(self, closing: str | None = None) -> Pipeline:
        commands = [self.command(first=True, closing=closing)]
        while (tok := self.peek()) is not None and tok.kind == "pipe":
            self.i += 1
            commands.append(self.command(first=False, closing=closing))
        return Pipeline(commands, self.line)

    def command(self, first: bool, closing: str | None) -> Command:
        args: list[Operand] = []
        while (tok := self.peek()) is not None and tok.kind not in ("pipe", "rparen"):
            args.append(self.operand())
        if not args:
            raise self.error("missing value for command")
        head = args[0]
        if isinstance(head, Ident):
            if head.name not in self.functions:
                raise self.error(f"function {head.name!r} not defined")
        elif len(args) > 1:
            raise self.error("can't give argument to non-function")
        elif not first:
            raise self.error("non-function in pipeline position")
        return Command(args)

    def operand(self) -> Operand:
        tok = self.toks[self.i]
        self.i += 1
        if tok.kind == "literal":
            return Literal(tok.value)
        if tok.kind == "field":
            return tok.value
        if tok.kind == "ident":
            if tok.value not in self.functions:
                raise self.error(f"function {tok.value!r} not defined")
            return Ident(tok.value)
        if tok.kind == "lparen":
            inner = self.pipeline(closing=")")
            close = self.peek()
            if close is None or close.kind != "rparen":
                raise self.error("unclosed left paren")
            self.i += 1
            return SubPipeline(inner)
        raise self.error(f"unexpected {tok.text!r}")


_BLOCKS = ("if", "with", "range")


def parse_file(source: str, path: str, functions: frozenset[str]) -> tuple[list, list[Define]]:
    """Parse one template file into (body nodes, define blocks)."""
    root: list = []
    defines: list[Define] = []
    # Stack entries: (node, list being filled, chained) where chained marks an
    # ``else if`` that closes with its parent's ``end``.
    stack: list[tuple[Any, list, bool]] = []

    def current() -> list:
        return stack[-1][1] if stack else root

    def parse_pipe(toks: list[_Tok], line: int) -> Pipeline:
        if not toks:
            raise TemplateSyntax("missing pipeline", path, line)
        parser = _PipelineParser(toks, functions, path, line)
        pipe = parser.pipeline()
        if parser.i != len(toks):
            raise TemplateSyntax(f"unexpected {toks[parser.i].text!r} in pipeline", path, line)
        return pipe

    for item in _scan(source, path):
        if isinstance(item, str):
            current().append(Text(item))
            continue
        line = item.line
        toks = _tokenize(item.source, path, line)
        if toks and toks[0].kind == "comment":
            if len(toks) > 1:
                raise TemplateSyntax("comment must be the whole action", path, line)
            continue
        if any(t.kind == "comment" for t in toks):
            raise TemplateSyntax("comment must be the whole action", path, line)
        if not toks:
            raise TemplateSyntax("missing value for command", path, line)
        head = toks[0]
        word = head.value if head.kind == "ident" else None

        if word == "define":
            if stack:
                raise TemplateSyntax("define must appear at the top level", path, line)
            if len(toks) != 2 or toks[1].kind != "literal" or not isinstance(toks[1].value, str):
                raise TemplateSyntax("define takes a single quoted name", path, line)
            node = Define(toks[1].value, [], path, line)
            stack.append((node, node.body, False))
        elif word in _BLOCKS:
            node = Branch(word, parse_pipe(toks[1:], line), line)
            current().append(node)
            stack.append((node, node.body, False))
        elif word == "else":
            if not stack or not isinstance(stack[-1][0], Branch):
                raise TemplateSyntax("unexpected else", path, line)
            node, _, chained = stack.pop()
            if node.else_body is not None:
                raise TemplateSyntax("multiple else clauses", path, line)
            node.else_body = []
            if len(toks) > 1:
                nested = toks[1].value if toks[1].kind == "ident" else None
                if nested not in ("if", "with") or node.keyword == "range":
                    raise TemplateSyntax(f"unexpected {toks[1].text!r} after else", path, line)
                child = Branch(nested, parse_pipe(toks[2:], line), line)
                node.else_body.append(child)
                stack.append((node, node.else_body, chained))
                stack.append((child, child.body, True))
            else:
                stack.append((node, node.else_body, chained))
        elif word == "end":
            if len(toks) != 1:
                raise TemplateSyntax("unexpected tokens after end", path, line)
            if not stack:
                raise TemplateSyntax("unexpected end", path, line)
            while True:
                node, _, chained = stack.pop()
                if not chained:
                    break
            if isinstance(node, Define):
                defines.append(node)
        elif word == "template":
            if len(toks) < 2 or toks[1].kind != "literal" or not isinstance(toks[1].value, str):
                raise TemplateSyntax("template takes a quoted name", path, line)
            pipe = parse_pipe(toks[2:], line) if len(toks) > 2 else None
            current().append(TemplateCall(toks[1].value, pipe, line))
        elif word in ("block", "break", "continue"):
            raise TemplateSyntax(f"{word!r} is not supported", path, line)
        else:
            current().append(Action(parse_pipe(toks, line), line))

    if stack:
        node = stack[-1][0]
        what = "define" if isinstance(node, Define) else node.keyword
        raise TemplateSyntax(f"unexpected EOF: {what} opened at line {node.line} has no end", path, node.line)
    return root, defines
