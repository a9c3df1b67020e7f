"""Lexer and recursive-descent parser for the mini-C subset.

Supported: ``int``/``float``/``void`` functions, scalar and fixed-size array
declarations, assignments (plain and compound), ``++``/``--``, arithmetic,
relational and logical operators, ``if``/``else``, ``while``, ``for``, calls,
``return`` and ``//`` line comments.  Anything else raises
:class:`~dshgt.errors.FrontendError` with ``file:line``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

from ..errors import FrontendError

TYPES = ("int", "float", "void")
KEYWORDS = {"if", "else", "while", "for", "return", *TYPES}
UNSUPPORTED_KEYWORDS = {
    "break", "continue", "switch", "case", "default", "do", "goto", "struct",
    "union", "enum", "typedef", "char", "double", "long", "short", "unsigned",
    "signed", "static", "const", "extern", "sizeof", "volatile", "register",
}

# Library functions that may be called without a definition.
BUILTINS = frozenset({
    "printf", "scanf", "puts", "gets", "fgets", "getchar", "strcpy", "strncpy",
    "strcat", "strncat", "sprintf", "snprintf", "memcpy", "memset", "strlen",
    "atoi", "rand", "srand", "abs", "sqrt", "malloc", "free", "exit", "system",
    "read_int", "read_input", "print_int", "print_line",
})

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<block>/\*.*?\*/)
  | (?P<float>\d+\.\d*(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\+\+|--|\+=|-=|\*=|/=|%=|==|!=|<=|>=|&&|\|\||[-+*/%<>=!(){}\[\];,])
  | (?P<hash>\#)
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int


def tokenize(source: str, file: str | None = None) -> tuple[list[Token], list[Token]]:
    """Split ``source`` into code tokens and comment tokens."""
    pos, line = 0, 1
    tokens: list[Token] = []
    comments: list[Token] = []
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise FrontendError(f"unexpected character {source[pos]!r}", file, line)
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
        elif kind == "comment":
            comments.append(Token("comment", text, line))
        elif kind == "block":
            comments.append(Token("comment", text, line))
            line += text.count("\n")
        elif kind == "hash":
            raise FrontendError("unsupported construct 'preprocessor directive'", file, line)
        elif kind != "ws":
            if kind == "ident" and text in UNSUPPORTED_KEYWORDS:
                raise FrontendError(f"unsupported construct {text!r}", file, line)
            if kind == "ident" and text in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, text, line))
        pos = m.end()
    tokens.append(Token("eof", "", line))
    return tokens, comments


# ---------------------------------------------------------------------------
# syntax tree

@dataclass
class Num:
    text: str
    line: int


@dataclass
class Str:
    text: str
    line: int


@dataclass
class Var:
    name: str
    line: int


@dataclass
class Index:
    base: Var
    index: "Expr"
    line: int


@dataclass
class Call:
    name: str
    args: list["Expr"]
    line: int


@dataclass
class Binary:
    op: str
    left: "Expr"
    right: "Expr"
    line: int


@dataclass
class Unary:
    op: str
    operand: "Expr"
    line: int


@dataclass
class Assign:
    op: str
    target: Union[Var, Index]
    value: "Expr"
    line: int


@dataclass
class IncDec:
    op: str
    target: Union[Var, Index]
    line: int


Expr = Union[Num, Str, Var, Index, Call, Binary, Unary, Assign, IncDec]


@dataclass
class VarDecl:
    type: str
    name: str
    size: int | None
    init: Expr | None
    line: int


@dataclass
class ExprStmt:
    expr: Expr
    line: int


@dataclass
class Block:
    body: list["Stmt"]
    line: int


@dataclass
class If:
    cond: Expr
    then: "Stmt"
    orelse: "Stmt | None"
    line: int


@dataclass
class While:
    cond: Expr
    body: "Stmt"
    line: int


@dataclass
class For:
    init: "VarDecl | ExprStmt | None"
    cond: Expr
    step: Expr | None
    body: "Stmt"
    line: int


@dataclass
class Return:
    value: Expr | None
    line: int


Stmt = Union[VarDecl, ExprStmt, Block, If, While, For, Return]


@dataclass
class Param:
    type: str
    name: str
    is_array: bool
    line: int


@dataclass
class FuncDef:
    ret_type: str
    name: str
    params: list[Param]
    body: Block
    line: int
    annotation: list[str] = field(default_factory=list)


@dataclass
class Program:
    file: str
    functions: list[FuncDef]
    globals: list[VarDecl]
    comments: list[Token]


# ---------------------------------------------------------------------------
# parser

_BINARY_LEVELS = (
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("+", "-"),
    ("*", "/", "%"),
)
_ASSIGN_OPS = ("=", "+=", "-=", "*=", "/=", "%=")


class Parser:
    def __init__(self, source: str, file: str = "<input>") -> None:
        self.file = file
        self.tokens, self.comments = tokenize(source, file)
        self.pos = 0

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message: str, tok: Token | None = None) -> FrontendError:
        return FrontendError(message, self.file, (tok or self.tok).line)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "kw")

    def advance(self) -> Token:
        t = self.tok
        self.pos += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            shown = self.tok.text or "end of file"
            raise self.error(f"expected {text!r}, found {shown!r}")
        return self.advance()

    def expect_ident(self) -> Token:
        if self.tok.kind != "ident":
            shown = self.tok.text or "end of file"
            raise self.error(f"expected identifier, found {shown!r}")
        return self.advance()

    # top level
    def parse_program(self) -> Program:
        functions: list[FuncDef] = []
        globals_: list[VarDecl] = []
        while self.tok.kind != "eof":
            if not (self.tok.kind == "kw" and self.tok.text in TYPES):
                raise self.error(f"expected declaration, found {self.tok.text!r}")
            start = self.advance()
            name = self.expect_ident()
            if self.at("("):
                functions.append(self.parse_function(start, name))
            else:
                globals_.append(self.parse_decl_rest(start, name))
                self.expect(";")
        self._attach_annotations(functions)
        return Program(self.file, functions, globals_, self.comments)

    def _attach_annotations(self, functions: list[FuncDef]) -> None:
        code_lines = {t.line for t in self.tokens}
        by_line = {
            c.line: c
            for c in self.comments
            if c.text.startswith("//") and c.line not in code_lines
        }
        for fn in functions:
            lines: list[str] = []
            ln = fn.line - 1
            while ln in by_line:
                lines.append(by_line[ln].text[2:])
                ln -= 1
            words = " ".join(reversed(lines)).lower().split()
            fn.annotation = words

    def parse_function(self, ret: Token, name: Token) -> FuncDef:
        self.expect("(")
        params: list[Param] = []
        if self.at("void") and self.tokens[self.pos + 1].text == ")":
            self.advance()
        elif not self.at(")"):
            while True:
                if not (self.tok.kind == "kw" and self.tok.text in TYPES[:2]):
                    raise self.error(f"expected parameter type, found {self.tok.text!r}")
                ptype = self.advance()
                pname = self.expect_ident()
                is_array = False
                if self.at("["):
                    self.advance()
                    if self.tok.kind == "int":
                        self.advance()
                    self.expect("]")
                    is_array = True
                params.append(Param(ptype.text, pname.text, is_array, pname.line))
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        if self.at(";"):
            raise self.error("unsupported construct 'function prototype'")
        body = self.parse_block()
        return FuncDef(ret.text, name.text, params, body, ret.line)

    def parse_decl_rest(self, type_tok: Token, name: Token) -> VarDecl:
        if type_tok.text == "void":
            raise self.error(f"variable {name.text!r} declared void", name)
        size = None
        if self.at("["):
            self.advance()
            if self.tok.kind != "int":
                raise self.error("array size must be an integer literal")
            size = int(self.advance().text)
            self.expect("]")
        init = None
        if self.at("="):
            self.advance()
            if self.at("{"):
                raise self.error("unsupported construct 'array initializer'")
            if size is not None:
                raise self.error("unsupported construct 'array initializer'")
            init = self.parse_expr()
        return VarDecl(type_tok.text, name.text, size, init, name.line)

    # statements
    def parse_block(self) -> Block:
        start = self.expect("{")
        body: list[Stmt] = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated block", start)
            body.append(self.parse_stmt())
        self.expect("}")
        return Block(body, start.line)

    def parse_stmt(self) -> Stmt:
        t = self.tok
        if t.kind == "kw":
            if t.text in TYPES:
                self.advance()
                decl = self.parse_decl_rest(t, self.expect_ident())
                self.expect(";")
                return decl
            if t.text == "if":
                self.advance()
                self.expect("(")
                cond = self.parse_expr()
                self.expect(")")
                then = self.parse_stmt()
                orelse = None
                if self.at("else"):
                    self.advance()
                    orelse = self.parse_stmt()
                return If(cond, then, orelse, t.line)
            if t.text == "while":
                self.advance()
                self.expect("(")
                cond = self.parse_expr()
                self.expect(")")
                return While(cond, self.parse_stmt(), t.line)
            if t.text == "for":
                return self.parse_for()
            if t.text == "return":
                self.advance()
                value = None if self.at(";") else self.parse_expr()
                self.expect(";")
                return Return(value, t.line)
            raise self.error(f"unexpected keyword {t.text!r}")
        if self.at("{"):
            return self.parse_block()
        if self.at(";"):
            raise self.error("unsupported construct 'empty statement'")
        expr = self.parse_expr()
        self.expect(";")
        return ExprStmt(expr, t.line)

    def parse_for(self) -> For:
        t = self.advance()
        self.expect("(")
        init: VarDecl | ExprStmt | None = None
        if not self.at(";"):
            if self.tok.kind == "kw" and self.tok.text in TYPES:
                ty = self.advance()
                init = self.parse_decl_rest(ty, self.expect_ident())
            else:
                init = ExprStmt(self.parse_expr(), self.tok.line)
        self.expect(";")
        if self.at(";"):
            raise self.error("unsupported construct 'for without condition'")
        cond = self.parse_expr()
        self.expect(";")
        step = None if self.at(")") else self.parse_expr()
        self.expect(")")
        return For(init, cond, step, self.parse_stmt(), t.line)

    # expressions
    def parse_expr(self) -> Expr:
        left = self.parse_binary(0)
        if self.tok.kind == "op" and self.tok.text in _ASSIGN_OPS:
            op = self.advance()
            if not isinstance(left, (Var, Index)):
                raise self.error("assignment target must be a variable or array element", op)
            return Assign(op.text, left, self.parse_expr(), op.line)
        return left

    def parse_binary(self, level: int) -> Expr:
        if level == len(_BINARY_LEVELS):
            return self.parse_unary()
        left = self.parse_binary(level + 1)
        while self.tok.kind == "op" and self.tok.text in _BINARY_LEVELS[level]:
            op = self.advance()
            right = self.parse_binary(level + 1)
            left = Binary(op.text, left, right, op.line)
        return left

    def parse_unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.text in ("-", "!"):
            op = self.advance()
            return Unary(op.text, self.parse_unary(), op.line)
        if self.tok.kind == "op" and self.tok.text in ("++", "--"):
            raise self.error("unsupported construct 'prefix increment'")
        return self.parse_postfix()

    def parse_postfix(self) -> Expr:
        expr = self.parse_primary()
        if self.tok.kind == "op" and self.tok.text in ("++", "--"):
            op = self.advance()
            if not isinstance(expr, (Var, Index)):
                raise self.error("increment target must be a variable", op)
            return IncDec(op.text, expr, op.line)
        return expr

    def parse_primary(self) -> Expr:
        t = self.tok
        if t.kind in ("int", "float"):
            self.advance()
            return Num(t.text, t.line)
        if t.kind == "string":
            self.advance()
            return Str(t.text, t.line)
        if t.kind == "ident":
            self.advance()
            if self.at("("):
                self.advance()
                args: list[Expr] = []
                if not self.at(")"):
                    while True:
                        args.append(self.parse_expr())
                        if not self.at(","):
                            break
                        self.advance()
                self.expect(")")
                return Call(t.text, args, t.line)
            var = Var(t.text, t.line)
            if self.at("["):
                self.advance()
                idx = self.parse_expr()
                self.expect("]")
                return Index(var, idx, t.line)
            return var
        if self.at("("):
            self.advance()
            inner = self.parse_expr()
            self.expect(")")
            return inner
        if self.at("*") or self.at("&"):
            raise self.error("unsupported construct 'pointer'")
        shown = t.text or "end of file"
        raise self.error(f"unexpected token {shown!r}")


def parse_source(source: str, file: str = "<input>") -> Program:
    return Parser(source, file).parse_program()


# ---------------------------------------------------------------------------
# pretty printing, used for node ``code`` fields

_PRECEDENCE = {op: i for i, ops in enumerate(_BINARY_LEVELS) for op in ops}


def render(e: Expr, parent_prec: int = -1) -> str:
    if isinstance(e, (Num, Str)):
        return e.text
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Index):
        return f"{e.base.name}[{render(e.index)}]"
    if isinstance(e, Call):
        return f"{e.name}({', '.join(render(a) for a in e.args)})"
    if isinstance(e, Unary):
        return f"{e.op}{render(e.operand, 99)}"
    if isinstance(e, IncDec):
        return f"{render(e.target)}{e.op}"
    if isinstance(e, Assign):
        text = f"{render(e.target)} {e.op} {render(e.value)}"
        return f"({text})" if parent_prec >= 0 else text
    if isinstance(e, Binary):
        prec = _PRECEDENCE[e.op]
        text = f"{render(e.left, prec)} {e.op} {render(e.right, prec + 1)}"
        return f"({text})" if prec < parent_prec else text
    raise TypeError(f"not an expression: {e!r}")
