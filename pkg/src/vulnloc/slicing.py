"""Anchor location, bidirectional slicing and callee inlining with id renumbering."""

import logging
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .dependence import DependenceGraph, build_dependence_graph
from .errors import AnchorNotFound, StageError
from .frontend.extract import CandidateKind, SyntaxCandidate
from .ir.link import LinkedModule, StmtRef, map_source_line, same_file
from .ir.parser import BINARY_OPS, CAST_OPS, parse_statement

logger = logging.getLogger(__name__)

_AE_OPCODES = BINARY_OPS | CAST_OPS | {"store", "getelementptr", "fneg"}
_LOCAL_RE = re.compile(r'c?"[^"]*"|%(?:[-a-zA-Z$._][-a-zA-Z$._0-9]*|\d+|"[^"]*")')


@dataclass(frozen=True)
class SliceAnchor:
    candidate: SyntaxCandidate
    statements: frozenset


@dataclass(frozen=True)
class CandidateStatement:
    text: str
    file: Optional[str]
    line: Optional[int]
    ref: StmtRef
    function: Optional[str]

    @property
    def location(self):
        if self.file is None or self.line is None:
            return "no-debug-info"
        return f"{self.file}:{self.line}"


@dataclass
class SemanticCandidate:
    candidate_id: str
    origin: SyntaxCandidate
    statements: List[CandidateStatement]
    functions: List[str] = field(default_factory=list)
    anchor_rows: List[int] = field(default_factory=list)

    @property
    def texts(self):
        return [s.text for s in self.statements]


def normalize_callee(name):
    """Map compiler spellings of library calls back to the source-level name."""
    if name is None:
        return None
    if name.startswith("llvm."):
        parts = name.split(".")
        name = parts[1] if len(parts) > 1 else name
    for prefix in ("__isoc99_", "__isoc23_"):
        if name.startswith(prefix):
            name = name[len(prefix):]
    if name.startswith("__") and name.endswith("_chk"):
        name = name[2:-4]
    return name


def locate_anchor(candidate: SyntaxCandidate, linked: LinkedModule) -> SliceAnchor:
    """Find the IR statements standing for a syntax candidate."""
    on_line = set()
    for ref in map_source_line(linked, candidate.file, candidate.line):
        st = linked.statement(ref)
        if ref[1] is not None and st.is_debug_intrinsic:
            continue
        on_line.add(ref)
    if not on_line:
        raise AnchorNotFound(f"no IR statements for {candidate.file}:{candidate.line}")

    picked = set()
    name = candidate.focus
    for ref in on_line:
        st = linked.statement(ref)
        if ref[1] is None:
            if candidate.kind in (CandidateKind.AD, CandidateKind.PD) and name in (st.var_name, st.name):
                picked.add(ref)
            continue
        if candidate.kind is CandidateKind.FC:
            if st.opcode in ("call", "invoke") and normalize_callee(st.callee) == name:
                picked.add(ref)
        elif candidate.kind in (CandidateKind.AD, CandidateKind.PD):
            if st.opcode == "alloca" and st.var_name == name:
                picked.add(ref)
        elif st.opcode in _AE_OPCODES:
            picked.add(ref)
    return SliceAnchor(candidate, frozenset(picked or on_line))


def _ref_key(ref):
    member, fname, idx = ref
    return (member, fname is not None, fname or "", idx)


def slice_graph(graph: DependenceGraph, anchor) -> List[StmtRef]:
    """Union of the backward and forward closures of the anchor statements."""
    start = anchor.statements if isinstance(anchor, SliceAnchor) else frozenset(anchor)
    seen = set(start)
    for step in (graph.predecessors, graph.successors):
        frontier = deque(start)
        visited = set(start)
        while frontier:
            node = frontier.popleft()
            for nxt in step(node):
                if nxt not in visited:
                    visited.add(nxt)
                    frontier.append(nxt)
        seen |= visited
    return sorted(seen, key=_ref_key)


# the operation is named `slice` in the public interface
slice = slice_graph  # noqa: A001


class _IdAllocator:
    def __init__(self, used):
        self.used = set(used)
        self.next = 1

    def fresh(self):
        while str(self.next) in self.used:
            self.next += 1
        name = str(self.next)
        self.used.add(name)
        return name


def _rename(text, mapping):
    def sub(m):
        tok = m.group()
        if tok.startswith("%"):
            name = tok[1:]
            if name.startswith('"'):
                name = name[1:-1]
            if name in mapping:
                return "%" + mapping[name]
        return tok
    return _LOCAL_RE.sub(sub, text)


def _one_line(raw):
    return " ".join(part.strip() for part in raw.strip().split("\n"))


def _locals_in(text, type_names):
    out = []
    for m in _LOCAL_RE.finditer(text):
        tok = m.group()
        if not tok.startswith("%") or tok in type_names:
            continue
        name = tok[1:]
        if name.startswith('"'):
            name = name[1:-1]
        if name not in out:
            out.append(name)
    return out


def inline_and_renumber(
    sliced: Sequence[StmtRef],
    linked: LinkedModule,
    candidate_id: str = "",
    origin: Optional[SyntaxCandidate] = None,
    anchor: Optional[SliceAnchor] = None,
    resolve_file: Optional[Callable[[str], str]] = None,
) -> SemanticCandidate:
    """Render a slice as one candidate, splicing callee statements after their calls."""
    resolve_file = resolve_file or (lambda f: f)
    anchor_refs = anchor.statements if anchor is not None else frozenset()
    per_fn: Dict[Tuple[int, str], set] = {}
    global_refs = []
    for ref in sliced:
        if ref[1] is None:
            global_refs.append(ref)
        else:
            per_fn.setdefault((ref[0], ref[1]), set()).add(ref[2])

    def fn_of(key):
        return linked.function(*key)

    def call_target(key, idx):
        st = fn_of(key).statements[idx]
        if st.opcode not in ("call", "invoke") or not st.callee:
            return None
        hit = linked.resolve(key[0], st.callee)
        if hit is None:
            return None
        return (hit[0], hit[1].name)

    # module order of functions, used for deterministic tie-breaking
    order = {}
    for i, fn in linked.defined_functions():
        order[(i, fn.name)] = len(order)

    # make sure each sliced callee has a call site inside some sliced caller
    changed = True
    while changed:
        changed = False
        hosted = set()
        for key, idxs in per_fn.items():
            for idx in idxs:
                t = call_target(key, idx)
                if t is not None and t != key:
                    hosted.add(t)
        for callee in sorted(per_fn, key=order.get):
            if callee in hosted:
                continue
            for caller in sorted(per_fn, key=order.get):
                if caller == callee:
                    continue
                sites = [k for k in range(len(fn_of(caller).statements)) if call_target(caller, k) == callee]
                if sites:
                    per_fn[caller].add(sites[0])
                    changed = True
                    break
            if changed:
                break

    hosted = set()
    for key, idxs in per_fn.items():
        for idx in idxs:
            t = call_target(key, idx)
            if t is not None and t != key:
                hosted.add(t)

    anchor_fns = [(r[0], r[1]) for r in sorted(anchor_refs, key=_ref_key) if r[1] is not None]
    ranked = sorted(per_fn, key=lambda k: (k not in anchor_fns, order.get(k, 0)))
    roots = [k for k in ranked if k not in hosted]

    statements: List[CandidateStatement] = []
    anchor_rows: List[int] = []
    functions: List[str] = []
    emitted = set()
    allocator = None

    def provenance(st):
        if st.debug_line is None:
            return None, None
        return resolve_file(st.debug_line[0]), st.debug_line[1]

    for ref in sorted(global_refs, key=_ref_key):
        g = linked.statement(ref)
        f, ln = provenance(g)
        if ref in anchor_refs:
            anchor_rows.append(len(statements))
        statements.append(CandidateStatement(_one_line(g.raw), f, ln, ref, None))

    def emit(key, mapping, path):
        fn = fn_of(key)
        emitted.add(key)
        if fn.name not in functions:
            functions.append(fn.name)
        type_names = linked.members[key[0]].type_names
        for idx in sorted(per_fn.get(key, ())):
            st = fn.statements[idx]
            text = _one_line(st.raw)
            if mapping is not None:
                for name in _locals_in(text, type_names):
                    if name not in mapping:
                        mapping[name] = allocator.fresh()
                text = _rename(text, mapping)
            ref = (key[0], key[1], idx)
            if ref in anchor_refs:
                anchor_rows.append(len(statements))
            f, ln = provenance(st)
            statements.append(CandidateStatement(text, f, ln, ref, fn.name))
            target = call_target(key, idx)
            if target is not None and target in per_fn and target not in path:
                emit(target, {}, path + (target,))

    for n, root in enumerate(roots):
        if n == 0:
            allocator = _IdAllocator(fn_of(root).local_ids())
            emit(root, None, (root,))
        else:
            emit(root, {}, (root,))
    # functions only reachable through a recursive cycle
    for key in ranked:
        if key not in emitted:
            if allocator is None:
                allocator = _IdAllocator(fn_of(key).local_ids())
                emit(key, None, (key,))
            else:
                emit(key, {}, (key,))

    problems = check_rendered([s.text for s in statements if s.function is not None])
    if problems:
        raise StageError(f"renumbering produced invalid SSA in {candidate_id}: {problems[0]}")
    return SemanticCandidate(
        candidate_id=candidate_id,
        origin=origin,
        statements=statements,
        functions=functions,
        anchor_rows=anchor_rows,
    )


def check_rendered(texts: Sequence[str]) -> List[str]:
    """Report duplicate definitions and uses that precede a later definition."""
    problems = []
    defined_at = {}
    parsed = []
    for pos, text in enumerate(texts):
        if text.lstrip().startswith("@"):
            text = "unreachable"  # global header lines define no locals
        st = parse_statement(text)
        parsed.append(st)
        if st.result is not None:
            if st.result in defined_at:
                problems.append(f"%{st.result} defined twice")
            defined_at.setdefault(st.result, pos)
    for pos, st in enumerate(parsed):
        if st.opcode == "phi":
            continue
        for u in st.uses:
            if u in defined_at and defined_at[u] >= pos:
                problems.append(f"%{u} used before its definition")
    return problems


def _find_linked(candidate, linked_modules):
    for lm in linked_modules:
        for mod in lm.members:
            if same_file(mod.source_file, candidate.file):
                return lm
    for lm in linked_modules:
        if map_source_line(lm, candidate.file, candidate.line):
            return lm
    return None


def generate_isevcs(
    candidates: Sequence[SyntaxCandidate],
    linked_modules: Sequence[LinkedModule],
    graphs: Optional[Dict[int, DependenceGraph]] = None,
    stats: Optional[dict] = None,
    id_prefix: str = "",
    resolve_file: Optional[Callable[[str], str]] = None,
) -> List[SemanticCandidate]:
    """locate_anchor, slice and inline for every candidate; unlocatable ones are skipped."""
    graphs = {} if graphs is None else graphs
    stats = {} if stats is None else stats
    stats.setdefault("anchor_not_found", [])
    out = []
    for n, cand in enumerate(candidates):
        lm = _find_linked(cand, linked_modules)
        if lm is None:
            stats["anchor_not_found"].append(cand)
            continue
        try:
            anchor = locate_anchor(cand, lm)
        except AnchorNotFound:
            stats["anchor_not_found"].append(cand)
            continue
        if id(lm) not in graphs:
            graphs[id(lm)] = build_dependence_graph(lm)
        refs = slice_graph(graphs[id(lm)], anchor)
        out.append(inline_and_renumber(
            refs, lm, candidate_id=f"{id_prefix}{n}", origin=cand, anchor=anchor, resolve_file=resolve_file,
        ))
    if stats["anchor_not_found"]:
        logger.info("%d candidate(s) without IR anchor", len(stats["anchor_not_found"]))
    return out
