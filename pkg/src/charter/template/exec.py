"""Evaluation of parsed templates and the built-in function set."""

from __future__ import annotations

import base64
import binascii
import json
import logging
from collections.abc import Mapping
from typing import TYPE_CHECKING, Any, Callable

from charter.errors import FieldNotFound, FunctionError, TemplateError
from charter.template.parse import (
    Action,
    Branch,
    Field,
    Ident,
    Literal,
    Pipeline,
    SubPipeline,
    TemplateCall,
    Text,
)

if TYPE_CHECKING:
    from charter.template import TemplateSet

log = logging.getLogger(__name__)

MAX_INCLUDE_DEPTH = 64


def truthy(value: Any) -> bool:
    if value is None or value is False:
        return False
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return value != 0
    if isinstance(value, (str, bytes, list, tuple, dict, Mapping)):
        return len(value) > 0
    return True


def to_text(value: Any) -> str:
    """Canonical string form used for ``{{ value }}`` output."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return value
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if value.is_integer() and abs(value) < 1e21:
            return str(int(value))
        return repr(value)
    if isinstance(value, (list, tuple, dict, Mapping)):
        return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)
    return str(value)


def go_quote(s: str) -> str:
    """Double-quoted string literal with Go-style escapes."""
    out = ['"']
    for ch in s:
        code = ord(ch)
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\r":
            out.append("\\r")
        elif code < 0x20 or code == 0x7F:
            out.append(f"\\x{code:02x}")
        elif 0xD800 <= code <= 0xDFFF:
            # Undecodable bytes carried through as lone surrogates.
            out.append(f"\\x{code - 0xDC00:02x}" if code >= 0xDC80 else "\\ufffd")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def b64encode_bytes(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode_bytes(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


# Template strings hold arbitrary bytes via surrogateescape so that
# b64dec(b64enc(s)) round-trips any byte string.
def _to_bytes(s: str) -> bytes:
    return s.encode("utf-8", "surrogateescape")


def _from_bytes(b: bytes) -> str:
    return b.decode("utf-8", "surrogateescape")


# -- built-ins ---------------------------------------------------------------


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _printf(state: _State, fmt: Any, *args: Any) -> str:
    if not isinstance(fmt, str):
        raise FunctionError("printf: format must be a string")
    out: list[str] = []
    argi = 0
    i = 0
    while i < len(fmt):
        c = fmt[i]
        if c != "%":
            out.append(c)
            i += 1
            continue
        if i + 1 >= len(fmt):
            raise FunctionError("printf: format ends with a bare %")
        verb = fmt[i + 1]
        i += 2
        if verb == "%":
            out.append("%")
            continue
        if verb not in "sdqv":
            raise FunctionError(f"printf: unsupported verb %{verb}")
        if argi >= len(args):
            raise FunctionError(f"printf: missing argument for %{verb}")
        arg = args[argi]
        argi += 1
        if verb == "d":
            if not _is_int(arg):
                raise FunctionError(f"printf: %d given non-integer {to_text(arg)!r}")
            out.append(str(arg))
        elif verb == "s":
            if arg is None or isinstance(arg, (list, tuple, dict, Mapping)):
                raise FunctionError(f"printf: %s given {type(arg).__name__ if arg is not None else 'no value'}")
            out.append(to_text(arg))
        elif verb == "q":
            if not isinstance(arg, str):
                raise FunctionError(f"printf: %q given non-string {to_text(arg)!r}")
            out.append(go_quote(arg))
        else:
            out.append(to_text(arg))
    if argi != len(args):
        raise FunctionError(f"printf: {len(args) - argi} extra argument(s) for format {fmt!r}")
    return "".join(out)


def _arity(name: str, args: tuple, lo: int, hi: int | None = None) -> None:
    hi = lo if hi is None else hi
    if not lo <= len(args) <= hi:
        want = str(lo) if lo == hi else f"{lo} to {hi}"
        raise FunctionError(f"{name}: expected {want} argument(s), got {len(args)}")


def _b64enc(state: _State, *args: Any) -> str:
    _arity("b64enc", args, 1)
    return b64encode_bytes(_to_bytes(to_text(args[0])))


def _b64dec(state: _State, *args: Any) -> str:
    _arity("b64dec", args, 1)
    try:
        return _from_bytes(b64decode_bytes(to_text(args[0])))
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise FunctionError(f"b64dec: {exc}") from None


def _quote(state: _State, *args: Any) -> str:
    return " ".join(go_quote(to_text(a)) for a in args if a is not None)


def _upper(state: _State, *args: Any) -> str:
    _arity("upper", args, 1)
    return to_text(args[0]).upper()


def _lower(state: _State, *args: Any) -> str:
    _arity("lower", args, 1)
    return to_text(args[0]).lower()


def _default(state: _State, *args: Any) -> Any:
    _arity("default", args, 1, 2)
    fallback = args[0]
    given = args[1] if len(args) == 2 else None
    return given if truthy(given) else fallback


def _indent_text(name: str, width: Any, text: Any) -> str:
    if not _is_int(width) or width < 0:
        raise FunctionError(f"{name}: width must be a non-negative integer")
    pad = " " * width
    return pad + to_text(text).replace("\n", "\n" + pad)


def _indent(state: _State, *args: Any) -> str:
    _arity("indent", args, 2)
    return _indent_text("indent", *args)


def _nindent(state: _State, *args: Any) -> str:
    _arity("nindent", args, 2)
    return "\n" + _indent_text("nindent", *args)


def _include(state: _State, *args: Any) -> str:
    _arity("include", args, 2)
    name, arg = args
    if not isinstance(name, str):
        raise FunctionError("include: template name must be a string")
    return state.run_define(name, arg)


FUNCTIONS: dict[str, Callable[..., Any]] = {
    "printf": _printf,
    "b64enc": _b64enc,
    "b64dec": _b64dec,
    "quote": _quote,
    "upper": _upper,
    "lower": _lower,
    "default": _default,
    "indent": _indent,
    "nindent": _nindent,
    "include": _include,
}

FUNCTION_NAMES = frozenset(FUNCTIONS)


# -- execution ---------------------------------------------------------------


class _State:
    def __init__(self, tset: TemplateSet, root: Any, strict: bool, warnings: list[str], path: str):
        self.tset = tset
        self.root = root
        self.strict = strict
        self.warnings = warnings
        self.path = path
        self.line: int | None = None
        self.owner = tset.owner_of(path)
        self.depth = 0

    def run_define(self, name: str, dot: Any) -> str:
        define = self.tset.lookup_define(name, self.owner)
        if define is None:
            raise FunctionError(f"no template named {name!r}")
        if self.depth >= MAX_INCLUDE_DEPTH:
            raise FunctionError(f"template {name!r}: include depth exceeds {MAX_INCLUDE_DEPTH}")
        saved = (self.path, self.owner, self.line)
        self.path, self.owner = define.path, self.tset.owner_of(define.path)
        self.depth += 1
        try:
            out: list[str] = []
            self.walk(define.body, dot, out)
            return "".join(out)
        finally:
            self.depth -= 1
            self.path, self.owner, self.line = saved

    def walk(self, nodes: list, dot: Any, out: list[str]) -> None:
        for node in nodes:
            if isinstance(node, Text):
                out.append(node.text)
            elif isinstance(node, Action):
                self.line = node.line
                out.append(to_text(self.pipeline(node.pipeline, dot)))
            elif isinstance(node, Branch):
                self.line = node.line
                self.branch(node, dot, out)
            elif isinstance(node, TemplateCall):
                self.line = node.line
                arg = self.pipeline(node.pipeline, dot) if node.pipeline else None
                out.append(self.run_define(node.name, arg))

    def branch(self, node: Branch, dot: Any, out: list[str]) -> None:
        value = self.pipeline(node.pipeline, dot)
        if node.keyword == "range":
            if isinstance(value, Mapping):
                items = [value[k] for k in sorted(value, key=str)]
            elif isinstance(value, (list, tuple)):
                items = list(value)
            elif value is None:
                items = []
            else:
                raise FunctionError(f"range can't iterate over {to_text(value)!r}")
            if items:
                for item in items:
                    self.walk(node.body, item, out)
            elif node.else_body is not None:
                self.walk(node.else_body, dot, out)
            return
        if truthy(value):
            self.walk(node.body, value if node.keyword == "with" else dot, out)
        elif node.else_body is not None:
            self.walk(node.else_body, dot, out)

    def pipeline(self, pipe: Pipeline, dot: Any) -> Any:
        self.line = pipe.line
        result: Any = None
        for i, cmd in enumerate(pipe.commands):
            head = cmd.args[0]
            if isinstance(head, Ident):
                args = [self.operand(a, dot) for a in cmd.args[1:]]
                if i > 0:
                    args.append(result)
                result = self.call(head.name, args)
            else:
                result = self.operand(head, dot)
        return result

    def call(self, name: str, args: list[Any]) -> Any:
        try:
            return FUNCTIONS[name](self, *args)
        except TemplateError as exc:
            if exc.path is None:
                exc.path, exc.line = self.path, self.line
            raise

    def operand(self, op: Any, dot: Any) -> Any:
        if isinstance(op, Literal):
            return op.value
        if isinstance(op, Field):
            return self.field(op, dot)
        if isinstance(op, SubPipeline):
            return self.pipeline(op.pipeline, dot)
        if isinstance(op, Ident):
            return self.call(op.name, [])
        raise FunctionError(f"cannot evaluate {op!r}", self.path, self.line)

    def field(self, op: Field, dot: Any) -> Any:
        value = self.root if op.from_root else dot
        for depth, name in enumerate(op.names):
            if isinstance(value, Mapping) and name in value:
                value = value[name]
                continue
            chain = ("$" if op.from_root else "") + "." + ".".join(op.names[: depth + 1])
            if self.strict:
                raise FieldNotFound(f"field {chain} not found", self.path, self.line)
            message = f"{self.path}:{self.line}: field {chain} not found, rendering empty"
            self.warnings.append(message)
            log.debug(message)
            return None
        return value


def execute(tset: TemplateSet, path: str, nodes: list, root: Any, strict: bool, warnings: list[str]) -> str:
    state = _State(tset, root, strict, warnings, path)
    out: list[str] = []
    try:
        state.walk(nodes, root, out)
    except TemplateError as exc:
        if exc.path is None:
            exc.path, exc.line = state.path, state.line
        raise
    except RecursionError:
        raise FunctionError("template recursion too deep", state.path, state.line) from None
    return "".join(out)
