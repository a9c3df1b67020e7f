"""Synthetic corpora with planted vulnerability patterns.

Each sample is one mini-C function in its own directory (``NNNN/main.c``)
so file-level nodes carry no label information.  Half of the samples are
vulnerable.  Identifiers, constants and distractor statements are drawn
from a seeded ``random.Random``; output is byte-identical for equal seeds.
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path

from .frontend import export_cpg, parse_sources
from .frontend.cpgjson import dumps
from .hetgraph import Cpg, TypeRegistry
from .method_cpg import MethodCpg

PATTERNS = ("cwe369", "cwe834", "cwe676")
CWE_IDS = {"cwe369": "CWE-369", "cwe834": "CWE-834", "cwe676": "CWE-676"}

_SYLLABLES = ("ka", "lo", "mi", "ru", "te", "zo", "pa", "ne", "si", "vu", "do", "ga")


@dataclass
class SynthSample:
    id: str
    code: str
    label: int
    annotation: list[str]


class _Names:
    def __init__(self, rnd: random.Random):
        self.rnd, self.used = rnd, set()

    def __call__(self) -> str:
        while True:
            n = "".join(self.rnd.choice(_SYLLABLES) for _ in range(self.rnd.randint(2, 3)))
            n += str(self.rnd.randint(0, 9))
            if n not in self.used:
                self.used.add(n)
                return n


def _distractors(rnd: random.Random, temps: list[str], k: int) -> list[str]:
    out = []
    for _ in range(k):
        t = rnd.choice(temps)
        c = rnd.randint(1, 9)
        kind = rnd.randrange(5)
        if kind == 0:
            out.append(f"{t} = {t} + {c};")
        elif kind == 1:
            out.append(f"print_int({t});")
        elif kind == 2:
            out.append(f"if ({t} > {c}) {{ {t} = {t} - {c}; }}")
        elif kind == 3:
            u = rnd.choice(temps)
            out.append(f"{t} = {u} * {c};")
        else:
            out.append(f"{t} = {t} % {c + 1};")
    return out


def _wrap(rnd, names, params: list[str], locals_: list[str], body: list[str], ret: str) -> str:
    fname = names()
    temps = [names() for _ in range(rnd.randint(1, 2))]
    decls = [f"int {t} = {rnd.randint(0, 9)};" for t in temps]
    pre = _distractors(rnd, temps, rnd.randint(0, 2))
    post = _distractors(rnd, temps, rnd.randint(0, 2))
    lines = decls + locals_ + pre + body + post + [f"return {ret};"]
    sig = ", ".join(f"int {p}" for p in params)
    inner = "\n".join("    " + ln for ln in lines)
    return f"int {fname}({sig}) {{\n{inner}\n}}\n"


_ANNOTATIONS = {
    ("cwe369", 1): [
        "divide by a value that may be zero",
        "division uses the divisor without a zero check",
        "the divisor may be zero before the division",
    ],
    ("cwe369", 0): [
        "check the divisor is not zero before dividing",
        "the divisor is checked against zero before the division",
        "guard the division with a zero check",
    ],
    ("cwe834", 1): [
        "loop bound comes from input without a limit",
        "the loop may iterate an unbounded number of times",
        "iteration count is taken from input without a cap",
    ],
    ("cwe834", 0): [
        "limit the loop bound before iterating",
        "the loop bound is capped before the loop",
        "cap the iteration count taken from input",
    ],
    ("cwe676", 1): [
        "use of a dangerous function without a length",
        "the copy does not limit the length of the buffer",
        "call a potentially dangerous function on the buffer",
    ],
    ("cwe676", 0): [
        "use a bounded function with the buffer length",
        "the copy limits the length of the buffer",
        "call a safe function that takes the buffer length",
    ],
}


def _cwe369(rnd: random.Random, names: _Names, bad: bool) -> str:
    a, b, r = names(), names(), names()
    params = [a, b]
    locals_ = [f"int {r} = 0;"]
    op = rnd.choice(["/", "%"])
    div = f"{r} = {a} {op} {b};"
    if bad:
        v = rnd.randrange(3)
        if v == 0:
            body = [div]
        elif v == 1:
            body = [div, f"if ({b} == 0) {{ {r} = 0; }}"]
        else:
            body = [f"if ({a} != 0) {{ {div} }}"]
    else:
        v = rnd.randrange(3)
        if v == 0:
            body = [f"if ({b} != 0) {{ {div} }}"]
        elif v == 1:
            body = [f"if ({b} == 0) {{ return 0; }}", div]
        else:
            body = [f"if ({b} == 0) {{ {b} = 1; }}", div]
    return _wrap(rnd, names, params, locals_, body, r)


def _cwe834(rnd: random.Random, names: _Names, bad: bool) -> str:
    n, i, acc = names(), names(), names()
    cap = rnd.randint(10, 200)
    locals_ = [f"int {n} = read_int();", f"int {i} = 0;", f"int {acc} = 0;"]
    loop = f"while ({i} < {n}) {{ {acc} = {acc} + {i}; {i} = {i} + 1; }}"
    if bad:
        v = rnd.randrange(2)
        body = [loop] if v == 0 else [loop, f"if ({n} > {cap}) {{ {n} = {cap}; }}"]
    else:
        v = rnd.randrange(2)
        if v == 0:
            body = [f"if ({n} > {cap}) {{ {n} = {cap}; }}", loop]
        else:
            body = [f"while ({i} < {n} && {i} < {cap}) {{ {acc} = {acc} + {i}; {i} = {i} + 1; }}"]
    return _wrap(rnd, names, [], locals_, body, acc)


def _cwe676(rnd: random.Random, names: _Names, bad: bool) -> str:
    buf = names()
    size = rnd.choice([8, 16, 32, 64])
    locals_ = [f"int {buf}[{size}];"]
    text = '"' + "".join(rnd.choice("abcdefgh") for _ in range(rnd.randint(3, 12))) + '"'
    if bad:
        body = [rnd.choice([f"gets({buf});", f"strcpy({buf}, {text});", f"strcat({buf}, {text});"])]
    else:
        body = [rnd.choice([f"fgets({buf}, {size});", f"strncpy({buf}, {text}, {size});",
                            f"strncat({buf}, {text}, {size});"])]
    body.append(f"print_int({buf}[0]);")
    return _wrap(rnd, names, [], locals_, body, "0")


_GENERATORS = {"cwe369": _cwe369, "cwe834": _cwe834, "cwe676": _cwe676}


def generate(pattern: str, n: int, seed: int) -> list[SynthSample]:
    if pattern not in _GENERATORS:
        raise ValueError(f"unknown pattern {pattern!r}; choose from {', '.join(PATTERNS)}")
    rnd = random.Random(f"{pattern}:{seed}")
    labels = [1] * (n // 2) + [0] * (n - n // 2)
    rnd.shuffle(labels)
    out = []
    for k, label in enumerate(labels):
        names = _Names(rnd)
        code = _GENERATORS[pattern](rnd, names, bool(label))
        ann = rnd.choice(_ANNOTATIONS[(pattern, label)]).split()
        out.append(SynthSample(f"{pattern}-{k:04d}", code, label, ann))
    return out


# ---------------------------------------------------------------------------
# a second surface language, delivered as imported CPG documents

_LANG_B_WORDS = {
    "int": "long",
    "read_int": "Input.readLong",
    "print_int": "Output.println",
    "gets": "Console.readLine",
    "fgets": "Console.readLineBounded",
    "strcpy": "Str.copy",
    "strncpy": "Str.copyBounded",
    "strcat": "Str.append",
    "strncat": "Str.appendBounded",
}
_LANG_B_RE = re.compile(r"\b(" + "|".join(map(re.escape, _LANG_B_WORDS)) + r")\b")


def to_language_b(g: Cpg) -> Cpg:
    """Rewrite the surface text of a mini-C graph as a Java-like dialect."""
    out = g.induced_subgraph(g.nodes)
    for n in out.nodes.values():
        n.code = _LANG_B_RE.sub(lambda m: _LANG_B_WORDS[m.group()], n.code)
        if n.name in _LANG_B_WORDS:
            n.name = _LANG_B_WORDS[n.name]
        if n.file:
            n.file = re.sub(r"\.c$", ".java", n.file)
        if out.node_type_name(n.id) == "FILE":
            n.code = re.sub(r"\.c$", ".java", n.code)
            n.name = n.name and re.sub(r"\.c$", ".java", n.name)
    return out


def write_corpus(pattern: str, n: int, seed: int, out: str | Path, language: str = "c") -> Path:
    """Write sample files plus ``manifest.jsonl`` under ``out``; returns the manifest path."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, s in enumerate(generate(pattern, n, seed)):
        rel = Path(f"{k:04d}")
        (out / rel).mkdir(exist_ok=True)
        rec = {"id": s.id, "language": language, "label": s.label,
               "cwe": CWE_IDS[pattern], "annotation": s.annotation}
        if language == "c":
            (out / rel / "main.c").write_text(s.code, encoding="utf-8")
            rec["path"] = str(rel / "main.c")
        elif language == "b":
            g = to_language_b(parse_sources({"main.c": s.code}))
            (out / rel / "method.cpg.json").write_text(dumps(export_cpg(g)), encoding="utf-8")
            rec["cpg"] = str(rel / "method.cpg.json")
            rec["language"] = "java"
        else:
            raise ValueError(f"unknown language {language!r}")
        lines.append(json.dumps(rec, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


# ---------------------------------------------------------------------------
# edge-type-only task for the heterogeneity ablation

def edge_type_task(n: int, seed: int, size: int = 8) -> list[MethodCpg]:
    """Graphs whose label is the type (CDG vs CFG) of one planted edge.

    Both classes draw node types, node text and topology from the same
    distribution; only the planted edge's type differs, so a model that ties
    parameters across relations cannot separate them.
    """
    rnd = random.Random(f"edge-task:{seed}")
    reg = TypeRegistry()
    kinds = ["CALL", "IDENTIFIER", "LITERAL", "CONTROL_STRUCTURE", "BLOCK"]
    labels = [1] * (n // 2) + [0] * (n - n // 2)
    rnd.shuffle(labels)
    out = []
    for label in labels:
        g = Cpg(reg)
        g.new_node(1, "METHOD", "int METHOD1(int VAR1)", name="METHOD1")
        for nid in range(2, size + 1):
            g.new_node(nid, rnd.choice(kinds), rnd.choice(["VAR1", "VAR2 = VAR1", "0", "VAR1 + 1"]))
        for nid in range(2, size + 1):
            g.connect(rnd.randint(1, nid - 1), nid, "AST")
        for _ in range(size // 2):
            s, t = rnd.sample(range(2, size + 1), 2)
            if not g.has_edge(s, t, reg.edge_type("REACHING_DEF"), "VAR1"):
                g.connect(s, t, "REACHING_DEF", "VAR1")
        s, t = rnd.sample(range(2, size + 1), 2)
        g.connect(s, t, "CDG" if label else "CFG")
        out.append(MethodCpg(1, g, [], label, ("synthetic", None)))
    return out


__all__ = ["PATTERNS", "SynthSample", "generate", "write_corpus", "to_language_b", "edge_type_task"]
