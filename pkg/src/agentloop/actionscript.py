"""ActionScript: the sandboxed mini-language used by the program-generating
agent.  Tool calls, bounded repetition, and comparisons over bound results —
deliberately nothing that needs natural-language understanding."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Union

from agentloop.toolset import Observation, ToolRegistry

REPEAT_LIMIT = 1000

GRAMMAR_EBNF = """\
program    = { statement } ;
statement  = tool_call | repeat | if | halt ;
tool_call  = [ IDENT "=" ] "call" IDENT "(" [ arg { "," arg } ] ")" ";" ;
arg        = IDENT "=" value ;
value      = literal | field_ref ;
field_ref  = IDENT "." IDENT ;
literal    = NUMBER | STRING | "true" | "false" ;
repeat     = "repeat" INT block ;           (* INT in 1..1000 *)
if         = "if" condition block [ "else" block ] ;
condition  = field_ref op literal ;
op         = "==" | "!=" | "<" | "<=" | ">" | ">=" ;
halt       = "halt" "(" STRING ")" ";" ;
block      = "{" { statement } "}" ;

IDENT      = letter or "_", then letters, digits or "_" ;
NUMBER     = optional "-", digits, optional "." digits ;
STRING     = double-quoted, backslash escapes as in JSON ;
comments   = "#" to end of line ;

A tool_call binds the observation's data record (plus an "is_error" boolean)
to the identifier on its left, if any.  Conditions and argument values may
read one field of a previously bound identifier.  A missing field at run time
terminates the program with an error report.
"""

FailKind = str  # "lexical" | "syntactic" | "unbound-identifier" | "repeat-bound-exceeded"


class ScriptError(Exception):
    """Parse-time failure with position and kind."""

    def __init__(self, kind: FailKind, message: str, line: int, col: int) -> None:
        super().__init__(f"{kind} error at line {line}, col {col}: {message}")
        self.kind = kind
        self.reason = message
        self.line = line
        self.col = col


# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    value: Union[int, float, str, bool]


@dataclass(frozen=True)
class FieldRef:
    ident: str
    field_name: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Value = Union[Literal, FieldRef]


@dataclass(frozen=True)
class ToolCall:
    name: str
    args: tuple[tuple[str, Value], ...]
    binding: str | None = None
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Condition:
    ref: FieldRef
    op: str
    literal: Literal


@dataclass(frozen=True)
class Repeat:
    count: int
    body: tuple["Statement", ...]
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class If:
    condition: Condition
    then_body: tuple["Statement", ...]
    else_body: tuple["Statement", ...] = ()
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Halt:
    report: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Statement = Union[ToolCall, Repeat, If, Halt]


@dataclass(frozen=True)
class ActionScript:
    statements: tuple[Statement, ...]


# -- lexer --------------------------------------------------------------------

_PUNCT = ("==", "!=", "<=", ">=", "<", ">", "=", "(", ")", "{", "}", ",", ";", ".")
_KEYWORDS = {"call", "repeat", "if", "else", "halt", "true", "false"}


@dataclass(frozen=True)
class Token:
    kind: str  # ident | keyword | number | string | punct | eof
    text: str
    value: Any
    line: int
    col: int


def _tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            kind = "keyword" if word in _KEYWORDS else "ident"
            tokens.append(Token(kind, word, word, start_line, start_col))
            col += j - i
            i = j
            continue
        if ch.isdigit() or (ch == "-" and i + 1 < n and source[i + 1].isdigit()):
            j = i + 1
            seen_dot = False
            while j < n and (source[j].isdigit() or (source[j] == "." and not seen_dot)):
                if source[j] == ".":
                    # A dot not followed by a digit belongs to the next token.
                    if j + 1 >= n or not source[j + 1].isdigit():
                        break
                    seen_dot = True
                j += 1
            text = source[i:j]
            value: Any = float(text) if "." in text else int(text)
            tokens.append(Token("number", text, value, start_line, start_col))
            col += j - i
            i = j
            continue
        if ch == '"':
            j = i + 1
            while j < n:
                if source[j] == "\\":
                    j += 2
                    continue
                if source[j] == '"':
                    break
                if source[j] == "\n":
                    raise ScriptError("lexical", "unterminated string", start_line, start_col)
                j += 1
            if j >= n:
                raise ScriptError("lexical", "unterminated string", start_line, start_col)
            raw = source[i : j + 1]
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                raise ScriptError("lexical", f"bad string literal {raw}", start_line, start_col)
            tokens.append(Token("string", raw, value, start_line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        for punct in _PUNCT:
            if source.startswith(punct, i):
                tokens.append(Token("punct", punct, punct, start_line, start_col))
                col += len(punct)
                i += len(punct)
                break
        else:
            raise ScriptError("lexical", f"unexpected character {ch!r}", start_line, start_col)
    tokens.append(Token("eof", "", None, line, col))
    return tokens


# -- parser -------------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[Token]) -> None:
        self.tokens = tokens
        self.pos = 0

    @property
    def cur(self) -> Token:
        return self.tokens[self.pos]

    def _error(self, message: str, kind: FailKind = "syntactic") -> ScriptError:
        return ScriptError(kind, message, self.cur.line, self.cur.col)

    def _advance(self) -> Token:
        token = self.cur
        self.pos += 1
        return token

    def _expect(self, kind: str, text: str | None = None) -> Token:
        if self.cur.kind != kind or (text is not None and self.cur.text != text):
            want = text or kind
            raise self._error(f"expected {want!r}, found {self.cur.text or 'end of input'!r}")
        return self._advance()

    def parse_program(self) -> ActionScript:
        statements = []
        while self.cur.kind != "eof":
            statements.append(self.parse_statement())
        return ActionScript(tuple(statements))

    def parse_statement(self) -> Statement:
        token = self.cur
        if token.kind == "keyword" and token.text == "call":
            return self._tool_call(binding=None)
        if token.kind == "ident":
            # Binding form: ident "=" "call" ...
            ident = self._advance()
            self._expect("punct", "=")
            return self._tool_call(binding=ident.text, at=ident)
        if token.kind == "keyword" and token.text == "repeat":
            return self._repeat()
        if token.kind == "keyword" and token.text == "if":
            return self._if()
        if token.kind == "keyword" and token.text == "halt":
            return self._halt()
        raise self._error(f"expected a statement, found {token.text or 'end of input'!r}")

    def _tool_call(self, binding: str | None, at: Token | None = None) -> ToolCall:
        kw = self._expect("keyword", "call")
        anchor = at or kw
        name = self._expect("ident")
        self._expect("punct", "(")
        args: list[tuple[str, Value]] = []
        if not (self.cur.kind == "punct" and self.cur.text == ")"):
            while True:
                key = self._expect("ident")
                self._expect("punct", "=")
                args.append((key.text, self._value()))
                if self.cur.kind == "punct" and self.cur.text == ",":
                    self._advance()
                    continue
                break
        self._expect("punct", ")")
        self._expect("punct", ";")
        return ToolCall(
            name=name.text,
            args=tuple(args),
            binding=binding,
            line=anchor.line,
            col=anchor.col,
        )

    def _value(self) -> Value:
        token = self.cur
        if token.kind in ("number", "string"):
            self._advance()
            return Literal(token.value)
        if token.kind == "keyword" and token.text in ("true", "false"):
            self._advance()
            return Literal(token.text == "true")
        if token.kind == "ident":
            ident = self._advance()
            self._expect("punct", ".")
            fieldname = self._expect("ident")
            return FieldRef(ident.text, fieldname.text, line=ident.line, col=ident.col)
        raise self._error(f"expected a literal or identifier.field, found {token.text!r}")

    def _repeat(self) -> Repeat:
        kw = self._expect("keyword", "repeat")
        count_token = self.cur
        if count_token.kind != "number" or not isinstance(count_token.value, int):
            raise self._error("repeat needs a positive integer count")
        self._advance()
        count = count_token.value
        if count < 1 or count > REPEAT_LIMIT:
            raise ScriptError(
                "repeat-bound-exceeded",
                f"repeat count must be in 1..{REPEAT_LIMIT}, got {count}",
                count_token.line,
                count_token.col,
            )
        body = self._block()
        return Repeat(count=count, body=body, line=kw.line, col=kw.col)

    def _if(self) -> If:
        kw = self._expect("keyword", "if")
        ident = self._expect("ident")
        self._expect("punct", ".")
        fieldname = self._expect("ident")
        op_token = self.cur
        if op_token.kind != "punct" or op_token.text not in ("==", "!=", "<", "<=", ">", ">="):
            raise self._error(f"expected a comparison operator, found {op_token.text!r}")
        self._advance()
        lit_token = self.cur
        if lit_token.kind in ("number", "string"):
            literal = Literal(lit_token.value)
            self._advance()
        elif lit_token.kind == "keyword" and lit_token.text in ("true", "false"):
            literal = Literal(lit_token.text == "true")
            self._advance()
        else:
            raise self._error(f"expected a literal, found {lit_token.text!r}")
        condition = Condition(
            ref=FieldRef(ident.text, fieldname.text, line=ident.line, col=ident.col),
            op=op_token.text,
            literal=literal,
        )
        then_body = self._block()
        else_body: tuple[Statement, ...] = ()
        if self.cur.kind == "keyword" and self.cur.text == "else":
            self._advance()
            else_body = self._block()
        return If(condition=condition, then_body=then_body, else_body=else_body,
                  line=kw.line, col=kw.col)

    def _halt(self) -> Halt:
        kw = self._expect("keyword", "halt")
        self._expect("punct", "(")
        report = self._expect("string")
        self._expect("punct", ")")
        self._expect("punct", ";")
        return Halt(report=report.value, line=kw.line, col=kw.col)

    def _block(self) -> tuple[Statement, ...]:
        self._expect("punct", "{")
        statements = []
        while not (self.cur.kind == "punct" and self.cur.text == "}"):
            if self.cur.kind == "eof":
                raise self._error("unterminated block, expected '}'")
            statements.append(self.parse_statement())
        self._advance()
        return tuple(statements)


def _check_bindings(statements: tuple[Statement, ...], scope: set[str]) -> None:
    """Every identifier read must be bound by a prior tool_call in scope.
    Bindings made inside a block stay local to it."""

    def check_value(value: Value) -> None:
        if isinstance(value, FieldRef) and value.ident not in scope:
            raise ScriptError(
                "unbound-identifier",
                f"identifier {value.ident!r} is not bound by a prior call",
                value.line,
                value.col,
            )

    for stmt in statements:
        if isinstance(stmt, ToolCall):
            for _, value in stmt.args:
                check_value(value)
            if stmt.binding:
                scope.add(stmt.binding)
        elif isinstance(stmt, Repeat):
            _check_bindings(stmt.body, set(scope))
        elif isinstance(stmt, If):
            check_value(stmt.condition.ref)
            _check_bindings(stmt.then_body, set(scope))
            _check_bindings(stmt.else_body, set(scope))


def parse_action_script(source: str) -> ActionScript:
    """Parse and fully check a program.  Raises ScriptError carrying the
    failure kind, line and column."""
    script = _Parser(_tokenize(source)).parse_program()
    _check_bindings(script.statements, set())
    return script


# -- pretty printer -------------------------------------------------------------


def _fmt_literal(lit: Literal) -> str:
    if isinstance(lit.value, bool):
        return "true" if lit.value else "false"
    if isinstance(lit.value, str):
        return json.dumps(lit.value, ensure_ascii=False)
    return repr(lit.value)


def _fmt_value(value: Value) -> str:
    if isinstance(value, FieldRef):
        return f"{value.ident}.{value.field_name}"
    return _fmt_literal(value)


def _fmt_statement(stmt: Statement, indent: int) -> list[str]:
    pad = "  " * indent
    if isinstance(stmt, ToolCall):
        args = ", ".join(f"{k}={_fmt_value(v)}" for k, v in stmt.args)
        head = f"{stmt.binding} = " if stmt.binding else ""
        return [f"{pad}{head}call {stmt.name}({args});"]
    if isinstance(stmt, Halt):
        return [f"{pad}halt({json.dumps(stmt.report, ensure_ascii=False)});"]
    if isinstance(stmt, Repeat):
        lines = [f"{pad}repeat {stmt.count} {{"]
        for inner in stmt.body:
            lines.extend(_fmt_statement(inner, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    if isinstance(stmt, If):
        cond = stmt.condition
        lines = [f"{pad}if {cond.ref.ident}.{cond.ref.field_name} {cond.op} {_fmt_literal(cond.literal)} {{"]
        for inner in stmt.then_body:
            lines.extend(_fmt_statement(inner, indent + 1))
        if stmt.else_body:
            lines.append(f"{pad}}} else {{")
            for inner in stmt.else_body:
                lines.extend(_fmt_statement(inner, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    raise TypeError(f"unknown statement {stmt!r}")


def pretty_print(script: ActionScript) -> str:
    """Canonical source form; parse_action_script(pretty_print(ast)) == ast."""
    lines: list[str] = []
    for stmt in script.statements:
        lines.extend(_fmt_statement(stmt, 0))
    return "\n".join(lines) + ("\n" if lines else "")


# -- interpreter -----------------------------------------------------------------


@dataclass
class ExecResult:
    trace: list[Observation]
    report: str
    halted: bool
    runtime_error: bool = False


class _Halted(Exception):
    def __init__(self, report: str) -> None:
        self.report = report


class _RuntimeFault(Exception):
    def __init__(self, report: str) -> None:
        self.report = report


def _read_field(env: dict[str, dict[str, Any]], ref: FieldRef) -> Any:
    record = env.get(ref.ident)
    if record is None:
        raise _RuntimeFault(f"identifier {ref.ident!r} has no bound result")
    if ref.field_name not in record:
        raise _RuntimeFault(
            f"result of {ref.ident!r} has no field {ref.field_name!r} "
            f"(available: {', '.join(sorted(record)) or 'none'})"
        )
    return record[ref.field_name]


def _compare(left: Any, op: str, right: Any) -> bool:
    if op == "==":
        return left == right
    if op == "!=":
        return left != right
    both_numbers = isinstance(left, (int, float)) and isinstance(right, (int, float)) and not (
        isinstance(left, bool) or isinstance(right, bool)
    )
    both_strings = isinstance(left, str) and isinstance(right, str)
    if not (both_numbers or both_strings):
        raise _RuntimeFault(
            f"cannot order {type(left).__name__} value against {type(right).__name__} with {op!r}"
        )
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    raise _RuntimeFault(f"unknown operator {op!r}")


def exec_program(script: ActionScript, registry: ToolRegistry, world: Any) -> ExecResult:
    """Run a parsed program against a tool registry and world.

    Tool errors are recorded and execution continues; a missing field in a
    condition or argument terminates the program with an error report.
    """
    trace: list[Observation] = []
    env: dict[str, dict[str, Any]] = {}

    def run_block(statements: tuple[Statement, ...]) -> None:
        for stmt in statements:
            if isinstance(stmt, ToolCall):
                action_input = {}
                for key, value in stmt.args:
                    action_input[key] = (
                        _read_field(env, value) if isinstance(value, FieldRef) else value.value
                    )
                obs = registry.invoke(stmt.name, action_input, world)
                trace.append(obs)
                if stmt.binding:
                    record = dict(obs.data or {})
                    record["is_error"] = obs.is_error
                    env[stmt.binding] = record
            elif isinstance(stmt, Repeat):
                for _ in range(stmt.count):
                    run_block(stmt.body)
            elif isinstance(stmt, If):
                left = _read_field(env, stmt.condition.ref)
                taken = _compare(left, stmt.condition.op, stmt.condition.literal.value)
                run_block(stmt.then_body if taken else stmt.else_body)
            elif isinstance(stmt, Halt):
                raise _Halted(stmt.report)

    try:
        run_block(script.statements)
    except _Halted as stop:
        return ExecResult(trace=trace, report=stop.report, halted=True)
    except _RuntimeFault as fault:
        return ExecResult(
            trace=trace,
            report=f"runtime error: {fault.report}",
            halted=False,
            runtime_error=True,
        )
    return ExecResult(trace=trace, report="program completed without halt", halted=False)
