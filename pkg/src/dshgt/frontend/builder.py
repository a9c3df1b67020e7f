"""Lower parsed mini-C programs into a :class:`~dshgt.hetgraph.Cpg`.

Node ids are handed out in preorder, file by file in sorted path order, so
the same sources always produce the same graph.  Control flow is modelled at
statement granularity: every statement root expression and every branch
predicate is a CFG node, framed by the METHOD (entry) and METHOD_RETURN
(exit) nodes of its function.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from ..errors import FrontendError
from ..hetgraph import Cpg, TypeRegistry
from . import minic
from .minic import (
    Assign, Binary, Block, Call, Expr, ExprStmt, For, FuncDef, If, IncDec,
    Index, Num, Program, Return, Stmt, Str, Unary, Var, VarDecl, While,
)

SOURCE_SUFFIXES = (".c", ".mc")

_BINARY_NAMES = {
    "+": "addition", "-": "subtraction", "*": "multiplication", "/": "division",
    "%": "modulo", "<": "lessThan", ">": "greaterThan", "<=": "lessEqualsThan",
    ">=": "greaterEqualsThan", "==": "equals", "!=": "notEquals",
    "&&": "logicalAnd", "||": "logicalOr",
}
_ASSIGN_NAMES = {
    "=": "assignment", "+=": "assignmentPlus", "-=": "assignmentMinus",
    "*=": "assignmentMultiplication", "/=": "assignmentDivision", "%=": "assignmentModulo",
}
_UNARY_NAMES = {"-": "minus", "!": "logicalNot"}
_INCDEC_NAMES = {"++": "postIncrement", "--": "postDecrement"}


@dataclass
class _Access:
    """Variable reads and writes performed by one CFG node."""

    defs: list[tuple[int, str, bool]] = field(default_factory=list)  # (decl, name, kills)
    uses: list[tuple[int, str]] = field(default_factory=list)


class CpgBuilder:
    def __init__(self, registry: TypeRegistry | None = None) -> None:
        self.g = Cpg(registry or TypeRegistry())
        self.next_id = 1
        self.methods: dict[str, int] = {}
        self._pending_calls: list[tuple[int, str, str, int]] = []

    # -- helpers -----------------------------------------------------------
    def node(self, type_name: str, code: str, line: int | None = None, name: str | None = None) -> int:
        nid = self.next_id
        self.next_id += 1
        self.g.new_node(nid, type_name, code, name=name, line=line, file=self.file)
        return nid

    def edge(self, src: int, dst: int, type_name: str, label: str | None = None) -> None:
        t = self.g.registry.edge_type(type_name)
        if not self.g.has_edge(src, dst, t, label):
            self.g.connect(src, dst, type_name, label)

    def error(self, message: str, line: int) -> FrontendError:
        return FrontendError(message, self.file, line)

    # -- files -------------------------------------------------------------
    def add_program(self, prog: Program) -> None:
        self.file = prog.file
        file_id = self.node("FILE", prog.file, None, name=prog.file)
        for c in prog.comments:
            cid = self.node("COMMENT", c.text, c.line)
            self.edge(cid, file_id, "SOURCE_FILE")
        scope: dict[str, int] = {}
        for decl in prog.globals:
            if decl.name in scope:
                raise self.error(f"redeclaration of {decl.name!r}", decl.line)
            gid = self.node("LOCAL", self._decl_code(decl), decl.line, name=decl.name)
            self.edge(gid, file_id, "SOURCE_FILE")
            if decl.init is not None and not isinstance(decl.init, (Num, Str)):
                raise self.error("global initializer must be a literal", decl.line)
            scope[decl.name] = gid
        self.globals = scope
        for fn in prog.functions:
            if fn.name in self.methods or fn.name in minic.BUILTINS:
                raise self.error(f"redefinition of function {fn.name!r}", fn.line)
            _MethodLowering(self, fn, file_id).run()

    def finish(self) -> Cpg:
        for call_id, name, file, line in self._pending_calls:
            target = self.methods.get(name)
            if target is not None:
                self.edge(call_id, target, "CALL")
            elif name not in minic.BUILTINS:
                raise FrontendError(f"undeclared function {name!r}", file, line)
        return self.g

    @staticmethod
    def _decl_code(decl: VarDecl) -> str:
        text = f"{decl.type} {decl.name}"
        if decl.size is not None:
            text += f"[{decl.size}]"
        return text


class _MethodLowering:
    def __init__(self, b: CpgBuilder, fn: FuncDef, file_id: int) -> None:
        self.b = b
        self.fn = fn
        self.file_id = file_id
        self.scopes: list[dict[str, int]] = [dict(b.globals)]
        self.cfg_succ: dict[int, list[tuple[int, str | None]]] = {}
        self.access: dict[int, _Access] = {}
        self.predicate_owner: dict[int, int] = {}
        self.params: list[tuple[int, str]] = []
        self.cur: _Access | None = None
        self._returns: list[int] = []

    def run(self) -> None:
        b, fn = self.b, self.fn
        sig = ", ".join(f"{p.type} {p.name}{'[]' if p.is_array else ''}" for p in fn.params)
        self.method = b.node("METHOD", f"{fn.ret_type} {fn.name}({sig})", fn.line, name=fn.name)
        b.methods[fn.name] = self.method
        b.edge(self.method, self.file_id, "SOURCE_FILE")
        if fn.annotation:
            b.g.annotations[self.method] = list(fn.annotation)
        scope: dict[str, int] = {}
        for p in fn.params:
            if p.name in scope:
                raise b.error(f"duplicate parameter {p.name!r}", p.line)
            code = f"{p.type} {p.name}{'[]' if p.is_array else ''}"
            pid = b.node("METHOD_PARAMETER_IN", code, p.line, name=p.name)
            b.edge(self.method, pid, "AST")
            scope[p.name] = pid
            self.params.append((pid, p.name))
        self.scopes.append(scope)
        self.cfg_succ[self.method] = []
        exits = self.block(fn.body, self.method, [(self.method, None)])
        self.exit = b.node("METHOD_RETURN", fn.ret_type, fn.line, name="RET")
        b.edge(self.method, self.exit, "AST")
        self.cfg_succ[self.exit] = []
        self.link(exits, self.exit)
        for ret in self._returns:
            self.link([(ret, None)], self.exit)
        self.emit_cfg()
        self.emit_cdg()
        self.emit_reaching_defs()
        for n in self.cfg_succ:
            if n not in (self.method, self.exit):
                b.edge(self.method, n, "CONTAINS")

    # -- scopes ------------------------------------------------------------
    def lookup(self, name: str, line: int) -> int:
        for scope in reversed(self.scopes):
            if name in scope:
                return scope[name]
        raise self.b.error(f"undeclared identifier {name!r}", line)

    def declare(self, decl: VarDecl, parent: int, visible: bool = True) -> int:
        top = self.scopes[-1]
        if decl.name in top:
            raise self.b.error(f"redeclaration of {decl.name!r}", decl.line)
        lid = self.b.node("LOCAL", CpgBuilder._decl_code(decl), decl.line, name=decl.name)
        self.b.edge(parent, lid, "AST")
        if visible:
            top[decl.name] = lid
        return lid

    # -- CFG plumbing ------------------------------------------------------
    def cfg_node(self, nid: int) -> _Access:
        self.cfg_succ.setdefault(nid, [])
        acc = self.access.setdefault(nid, _Access())
        return acc

    def link(self, preds: list[tuple[int, str | None]], target: int) -> None:
        for p, label in preds:
            if (target, label) not in self.cfg_succ[p]:
                self.cfg_succ[p].append((target, label))

    # -- statements --------------------------------------------------------
    def block(self, blk: Block, parent: int, preds):
        bid = self.b.node("BLOCK", "", blk.line)
        self.b.edge(parent, bid, "AST")
        self.scopes.append({})
        for s in blk.body:
            preds = self.stmt(s, bid, preds)
        self.scopes.pop()
        return preds

    def stmt(self, s: Stmt, parent: int, preds):
        b = self.b
        if isinstance(s, Block):
            return self.block(s, parent, preds)
        if isinstance(s, VarDecl):
            if s.init is None:
                self.declare(s, parent)
                return preds
            # the initializer is evaluated before the name comes into scope
            self.cur = _Access()
            lid = self.declare(s, parent, visible=False)
            call = b.node("CALL", f"{s.name} = {minic.render(s.init)}", s.line, name="<operator>.assignment")
            b.edge(parent, call, "AST")
            ident = b.node("IDENTIFIER", s.name, s.line, name=s.name)
            b.edge(call, ident, "AST")
            b.edge(call, ident, "ARGUMENT")
            b.edge(ident, lid, "REF")
            b.edge(call, self.expr(s.init, call), "ARGUMENT")
            self.scopes[-1][s.name] = lid
            self.cur.defs.append((lid, s.name, True))
            self._finish_cfg(call)
            self.link(preds, call)
            return [(call, None)]
        if isinstance(s, ExprStmt):
            self.cur = _Access()
            root = self.expr(s.expr, parent)
            self._finish_cfg(root)
            self.link(preds, root)
            return [(root, None)]
        if isinstance(s, Return):
            self.cur = _Access()
            code = "return" if s.value is None else f"return {minic.render(s.value)}"
            rid = b.node("RETURN", code, s.line, name="return")
            b.edge(parent, rid, "AST")
            if s.value is not None:
                val = self.expr(s.value, rid)
                b.edge(rid, val, "ARGUMENT")
            self._finish_cfg(rid)
            self.link(preds, rid)
            self._returns.append(rid)
            return []
        if isinstance(s, If):
            cs = b.node("CONTROL_STRUCTURE", f"if ({minic.render(s.cond)})", s.line, name="IF")
            b.edge(parent, cs, "AST")
            pred = self.predicate(s.cond, cs, preds)
            exits = self.stmt_scoped(s.then, cs, [(pred, "true")])
            if s.orelse is not None:
                exits = exits + self.stmt_scoped(s.orelse, cs, [(pred, "false")])
            else:
                exits = exits + [(pred, "false")]
            return exits
        if isinstance(s, While):
            cs = b.node("CONTROL_STRUCTURE", f"while ({minic.render(s.cond)})", s.line, name="WHILE")
            b.edge(parent, cs, "AST")
            pred = self.predicate(s.cond, cs, preds)
            body_exits = self.stmt_scoped(s.body, cs, [(pred, "true")])
            self.link(body_exits, pred)
            return [(pred, "false")]
        if isinstance(s, For):
            init_txt = ""
            if isinstance(s.init, VarDecl):
                init_txt = f"{CpgBuilder._decl_code(s.init)}"
                if s.init.init is not None:
                    init_txt += f" = {minic.render(s.init.init)}"
            elif isinstance(s.init, ExprStmt):
                init_txt = minic.render(s.init.expr)
            step_txt = "" if s.step is None else minic.render(s.step)
            code = f"for ({init_txt}; {minic.render(s.cond)}; {step_txt})"
            cs = b.node("CONTROL_STRUCTURE", code, s.line, name="FOR")
            b.edge(parent, cs, "AST")
            self.scopes.append({})
            if s.init is not None:
                preds = self.stmt(s.init, cs, preds)
            pred = self.predicate(s.cond, cs, preds)
            body_exits = self.stmt_scoped(s.body, cs, [(pred, "true")])
            if s.step is not None:
                self.cur = _Access()
                step = self.expr(s.step, cs)
                self._finish_cfg(step)
                self.link(body_exits, step)
                body_exits = [(step, None)]
            self.link(body_exits, pred)
            self.scopes.pop()
            return [(pred, "false")]
        raise self.b.error(f"unsupported construct {type(s).__name__!r}", getattr(s, "line", 0))

    def stmt_scoped(self, s: Stmt, parent: int, preds):
        if isinstance(s, VarDecl):
            raise self.b.error("declaration must be inside a block", s.line)
        return self.stmt(s, parent, preds)

    def predicate(self, cond: Expr, cs: int, preds) -> int:
        self.cur = _Access()
        pred = self.expr(cond, cs)
        self.b.edge(cs, pred, "CONDITION")
        self._finish_cfg(pred)
        self.predicate_owner[pred] = cs
        self.link(preds, pred)
        return pred

    def _finish_cfg(self, nid: int) -> None:
        acc = self.cfg_node(nid)
        acc.defs.extend(self.cur.defs)
        acc.uses.extend(self.cur.uses)
        self.cur = None

    # -- expressions -------------------------------------------------------
    def expr(self, e: Expr, parent: int) -> int:
        b = self.b
        code = minic.render(e)
        if isinstance(e, Num):
            nid = b.node("LITERAL", e.text, e.line, name=e.text)
        elif isinstance(e, Str):
            nid = b.node("LITERAL", e.text, e.line, name="<string>")
        elif isinstance(e, Var):
            decl = self.lookup(e.name, e.line)
            nid = b.node("IDENTIFIER", e.name, e.line, name=e.name)
            b.edge(nid, decl, "REF")
            self.cur.uses.append((decl, e.name))
        elif isinstance(e, Index):
            nid = b.node("CALL", code, e.line, name="<operator>.indexAccess")
            self._index_children(e, nid, read=True)
        elif isinstance(e, Call):
            nid = b.node("CALL", code, e.line, name=e.name)
            for arg in e.args:
                a = self.expr(arg, nid)
                b.edge(nid, a, "ARGUMENT")
            b._pending_calls.append((nid, e.name, b.file, e.line))
        elif isinstance(e, Binary):
            nid = b.node("CALL", code, e.line, name="<operator>." + _BINARY_NAMES[e.op])
            for side in (e.left, e.right):
                b.edge(nid, self.expr(side, nid), "ARGUMENT")
        elif isinstance(e, Unary):
            nid = b.node("CALL", code, e.line, name="<operator>." + _UNARY_NAMES[e.op])
            b.edge(nid, self.expr(e.operand, nid), "ARGUMENT")
        elif isinstance(e, Assign):
            nid = b.node("CALL", code, e.line, name="<operator>." + _ASSIGN_NAMES[e.op])
            self._write_target(e.target, nid, also_reads=e.op != "=")
            b.edge(nid, self.expr(e.value, nid), "ARGUMENT")
        elif isinstance(e, IncDec):
            nid = b.node("CALL", code, e.line, name="<operator>." + _INCDEC_NAMES[e.op])
            self._write_target(e.target, nid, also_reads=True)
        else:
            raise b.error(f"unsupported construct {type(e).__name__!r}", getattr(e, "line", 0))
        if parent is not None:
            b.edge(parent, nid, "AST")
        return nid

    def _write_target(self, target, call: int, also_reads: bool) -> None:
        b = self.b
        if isinstance(target, Var):
            decl = self.lookup(target.name, target.line)
            ident = b.node("IDENTIFIER", target.name, target.line, name=target.name)
            b.edge(call, ident, "AST")
            b.edge(call, ident, "ARGUMENT")
            b.edge(ident, decl, "REF")
            if also_reads:
                self.cur.uses.append((decl, target.name))
            self.cur.defs.append((decl, target.name, True))
        else:
            idx = b.node("CALL", minic.render(target), target.line, name="<operator>.indexAccess")
            b.edge(call, idx, "AST")
            b.edge(call, idx, "ARGUMENT")
            decl = self._index_children(target, idx, read=also_reads)
            self.cur.defs.append((decl, target.base.name, False))

    def _index_children(self, e: Index, nid: int, read: bool) -> int:
        b = self.b
        decl = self.lookup(e.base.name, e.base.line)
        base = b.node("IDENTIFIER", e.base.name, e.base.line, name=e.base.name)
        b.edge(nid, base, "AST")
        b.edge(nid, base, "ARGUMENT")
        b.edge(base, decl, "REF")
        if read:
            self.cur.uses.append((decl, e.base.name))
        b.edge(nid, self.expr(e.index, nid), "ARGUMENT")
        return decl

    # -- derived edges -----------------------------------------------------
    def emit_cfg(self) -> None:
        for src, succs in self.cfg_succ.items():
            for dst, label in succs:
                self.b.edge(src, dst, "CFG", label)

    def postdominators(self) -> dict[int, set[int]]:
        nodes = list(self.cfg_succ)
        pdom = {n: set(nodes) for n in nodes}
        pdom[self.exit] = {self.exit}
        changed = True
        while changed:
            changed = False
            for n in nodes:
                if n == self.exit:
                    continue
                succs = [s for s, _ in self.cfg_succ[n]]
                new = set.intersection(*(pdom[s] for s in succs)) if succs else set()
                new = new | {n}
                if new != pdom[n]:
                    pdom[n] = new
                    changed = True
        return pdom

    def emit_cdg(self) -> None:
        pdom = self.postdominators()
        ipdom: dict[int, int | None] = {}
        for n, ds in pdom.items():
            strict = ds - {n}
            # immediate postdominator: the strict postdominator postdominated by all others
            cand = [d for d in strict if all(o in pdom[d] for o in strict)]
            ipdom[n] = cand[0] if cand else None
        for p, cs in self.predicate_owner.items():
            for succ, label in self.cfg_succ[p]:
                stop = ipdom[p]
                runner: int | None = succ
                while runner is not None and runner != stop:
                    dep = self.predicate_owner.get(runner, runner)
                    self.b.edge(cs, dep, "CDG", label)
                    runner = ipdom[runner]

    def emit_reaching_defs(self) -> None:
        # definition sites: (site node, decl key, name, kills)
        sites: list[tuple[int, int, str, bool]] = []
        gen: dict[int, set[int]] = {n: set() for n in self.cfg_succ}
        for pid, name in self.params:
            sites.append((pid, pid, name, True))
            gen[self.method].add(len(sites) - 1)
        order = sorted(self.access)
        for n in order:
            for decl, name, kills in self.access[n].defs:
                sites.append((n, decl, name, kills))
                gen[n].add(len(sites) - 1)
        by_decl: dict[int, set[int]] = {}
        for i, (_, decl, _, _) in enumerate(sites):
            by_decl.setdefault(decl, set()).add(i)
        kill: dict[int, set[int]] = {n: set() for n in self.cfg_succ}
        for n, acc in self.access.items():
            for decl, _, kills in acc.defs:
                if kills:
                    kill[n] |= by_decl[decl] - gen[n]
        preds: dict[int, list[int]] = {n: [] for n in self.cfg_succ}
        for src, succs in self.cfg_succ.items():
            for dst, _ in succs:
                preds[dst].append(src)
        in_: dict[int, set[int]] = {n: set() for n in self.cfg_succ}
        out: dict[int, set[int]] = {n: set(gen[n]) for n in self.cfg_succ}
        changed = True
        while changed:
            changed = False
            for n in self.cfg_succ:
                new_in = set().union(*(out[p] for p in preds[n])) if preds[n] else set()
                new_out = gen[n] | (new_in - kill[n])
                if new_in != in_[n] or new_out != out[n]:
                    in_[n], out[n] = new_in, new_out
                    changed = True
        for n in order:
            for decl, name in self.access[n].uses:
                for i in sorted(in_[n]):
                    site, d, _, _ = sites[i]
                    if d == decl:
                        self.b.edge(site, n, "REACHING_DEF", name)


def build_cpg(programs: list[Program], registry: TypeRegistry | None = None) -> Cpg:
    builder = CpgBuilder(registry)
    for prog in sorted(programs, key=lambda p: p.file):
        builder.add_program(prog)
    return builder.finish()


def parse_sources(sources: dict[str, str], registry: TypeRegistry | None = None) -> Cpg:
    """Parse an in-memory ``{file name: text}`` mapping into one CPG."""
    if not sources:
        raise FrontendError("no source files")
    programs = [minic.parse_source(text, name) for name, text in sorted(sources.items())]
    return build_cpg(programs, registry)


def parse_directory(path: str | Path, registry: TypeRegistry | None = None) -> Cpg:
    root = Path(path)
    if root.is_file():
        return parse_sources({root.name: root.read_text(encoding="utf-8")}, registry)
    if not root.is_dir():
        raise FrontendError(f"no such directory: {root}")
    files = sorted(p for p in root.rglob("*") if p.is_file() and p.suffix in SOURCE_SUFFIXES)
    if not files:
        raise FrontendError("no source files")
    sources = {p.relative_to(root).as_posix(): p.read_text(encoding="utf-8") for p in files}
    return parse_sources(sources, registry)
