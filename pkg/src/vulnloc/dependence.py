"""Control-flow graphs, post-dominators and the statement dependence graph."""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .errors import CfgError
from .ir.link import LinkedModule, StmtRef
from .ir.parser import IrFunction, IrStatement

logger = logging.getLogger(__name__)

EDGE_KINDS = ("data", "control", "call", "param")
_ADDRESS_PASSTHROUGH = frozenset(("getelementptr", "bitcast", "addrspacecast"))


@dataclass
class Cfg:
    blocks: List[Tuple[int, int]]  # [start, end) statement ranges
    edges: List[Tuple[int, int, str]]
    entry: int
    exit: int
    reachable: Set[int] = field(default_factory=set)

    def successors(self, b):
        return [d for s, d, _ in self.edges if s == b]

    def block_of(self, stmt_index):
        for b, (s, e) in enumerate(self.blocks):
            if s <= stmt_index < e:
                return b
        raise IndexError(stmt_index)


def _block_starts(fn: IrFunction):
    starts = {0}
    starts.update(i for i in fn.labels.values() if i < len(fn.statements))
    for i, st in enumerate(fn.statements):
        if st.is_terminator and i + 1 < len(fn.statements):
            starts.add(i + 1)
    return sorted(starts)


def build_cfg(function: IrFunction) -> Cfg:
    """Split a function into basic blocks and connect them by branch targets."""
    stmts = function.statements
    if not stmts:
        # an empty body behaves like a lone block that falls off to exit
        return Cfg(blocks=[(0, 0)], edges=[(0, 1, "exit")], entry=0, exit=1, reachable={0})
    starts = _block_starts(function)
    blocks = [(s, e) for s, e in zip(starts, starts[1:] + [len(stmts)])]
    start_to_block = {s: b for b, (s, _) in enumerate(blocks)}
    label_to_block = {}
    for label, idx in function.labels.items():
        if idx < len(stmts):
            label_to_block[label] = start_to_block[idx]
    if function.entry_label is not None:
        label_to_block[function.entry_label] = 0
    exit_id = len(blocks)

    edges = []
    for b, (s, e) in enumerate(blocks):
        term = stmts[e - 1]
        if not term.is_terminator:
            raise CfgError(f"block {b} of @{function.name} does not end in a terminator")
        targets = term.labels
        if term.opcode == "br" and len(targets) == 2:
            kinds = ["true", "false"]
        elif term.opcode == "switch":
            kinds = ["default"] + ["case"] * (len(targets) - 1)
        else:
            kinds = ["jump"] * len(targets)
        seen = set()
        for label, kind in zip(targets, kinds):
            if label not in label_to_block:
                raise CfgError(f"unknown branch target %{label} in @{function.name}")
            d = label_to_block[label]
            if (d, kind) not in seen:
                edges.append((b, d, kind))
                seen.add((d, kind))
        if not targets:
            edges.append((b, exit_id, "exit"))

    reachable = _reach(0, edges)
    # blocks trapped in an infinite loop get a virtual edge so exit stays reachable
    to_exit = _reach(exit_id, [(d, s, "") for s, d, _ in edges])
    for b in sorted(reachable):
        if b not in to_exit:
            edges.append((b, exit_id, "virtual"))
            to_exit = _reach(exit_id, [(d, s, "") for s, d, _ in edges])
    return Cfg(blocks=blocks, edges=edges, entry=0, exit=exit_id, reachable=reachable)


def _reach(start, edges):
    adj = defaultdict(list)
    for s, d, _ in edges:
        adj[s].append(d)
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return seen


def post_dominator_sets(cfg: Cfg) -> Dict[int, Set[int]]:
    """Full post-dominator sets over reachable blocks plus the virtual exit."""
    nodes = sorted(cfg.reachable) + [cfg.exit]
    succ = defaultdict(set)
    for s, d, _ in cfg.edges:
        if s in cfg.reachable:
            succ[s].add(d)
    pdom = {n: set(nodes) for n in nodes}
    pdom[cfg.exit] = {cfg.exit}
    changed = True
    while changed:
        changed = False
        for n in reversed(nodes):
            if n == cfg.exit:
                continue
            succs = [pdom[s] for s in succ[n] if s in pdom]
            new = set.intersection(*succs) if succs else set()
            new = new | {n}
            if new != pdom[n]:
                pdom[n] = new
                changed = True
    return pdom


def post_dominators(cfg: Cfg) -> Dict[int, Optional[int]]:
    """Immediate post-dominator of every reachable block; the exit maps to None."""
    pdom = post_dominator_sets(cfg)
    ipdom: Dict[int, Optional[int]] = {cfg.exit: None}
    for n, doms in pdom.items():
        if n == cfg.exit:
            continue
        strict = doms - {n}
        # the immediate one is the strict post-dominator with the largest set
        ipdom[n] = max(strict, key=lambda d: len(pdom[d])) if strict else None
    return ipdom


def control_dependence(cfg: Cfg) -> Dict[int, Set[int]]:
    """Map each block to the set of blocks whose branch decides its execution."""
    ipdom = post_dominators(cfg)
    deps: Dict[int, Set[int]] = {b: set() for b in cfg.reachable}
    for a, b, _ in cfg.edges:
        if a not in cfg.reachable or b == cfg.exit:
            continue
        stop = ipdom[a]
        runner = b
        while runner is not None and runner != stop:
            deps[runner].add(a)
            runner = ipdom[runner]
    return deps


@dataclass
class DependenceGraph:
    nodes: Set[StmtRef] = field(default_factory=set)
    edges: Set[Tuple[StmtRef, StmtRef, str]] = field(default_factory=set)

    def __post_init__(self):
        self._succ = None
        self._pred = None

    def add_edge(self, src, dst, kind):
        if src == dst:
            return
        self.nodes.add(src)
        self.nodes.add(dst)
        self.edges.add((src, dst, kind))
        self._succ = self._pred = None

    def _index(self):
        succ, pred = defaultdict(set), defaultdict(set)
        for s, d, _ in self.edges:
            succ[s].add(d)
            pred[d].add(s)
        self._succ, self._pred = succ, pred

    def successors(self, node):
        if self._succ is None:
            self._index()
        return self._succ.get(node, set())

    def predecessors(self, node):
        if self._pred is None:
            self._index()
        return self._pred.get(node, set())

    def dump(self):
        """Edge list as sorted `from<TAB>to<TAB>kind` lines."""
        lines = [f"{_fmt(s)}\t{_fmt(d)}\t{k}" for s, d, k in self.edges]
        return "\n".join(sorted(lines)) + ("\n" if lines else "")


def _fmt(ref):
    member, fname, idx = ref
    return f"{member}:{fname or '@'}:{idx}"


def value_operands(st: IrStatement):
    """Operand values (refs, globals, constants) minus alignment and metadata."""
    out = []
    prev = None
    for op in st.operands:
        if op.kind in ("ref", "global", "const") and prev not in ("align", "addrspace"):
            if not (op.kind == "global" and op.name == st.callee):
                out.append(op)
        prev = op.text if op.kind == "keyword" else None
    return out


def store_parts(st: IrStatement):
    vals = value_operands(st)
    if len(vals) < 2:
        return None, None
    return vals[0], vals[1]


def _address_base(fn_defs, op):
    """Follow gep/bitcast chains back to the base value of an address."""
    seen = set()
    while op is not None and op.kind == "ref" and op.name not in seen:
        seen.add(op.name)
        st = fn_defs.get(op.name)
        if st is None or st.opcode not in _ADDRESS_PASSTHROUGH:
            break
        vals = value_operands(st)
        if not vals:
            break
        op = vals[0]
    if op is None:
        return None
    if op.kind == "global":
        return ("global", op.name)
    if op.kind == "ref":
        return ("local", op.name)
    return None


def build_dependence_graph(linked: LinkedModule) -> DependenceGraph:
    """Statement-level dependence graph over every defined function in `linked`."""
    g = DependenceGraph()
    writes = defaultdict(list)  # memory base -> writing statements
    reads = defaultdict(list)
    entry_dependent: Dict[Tuple[int, str], List[StmtRef]] = {}
    param_users: Dict[Tuple[int, str], List[StmtRef]] = {}
    returns: Dict[Tuple[int, str], List[StmtRef]] = {}
    calls = []

    for i, mod in enumerate(linked.members):
        for j in range(len(mod.globals)):
            g.nodes.add((i, None, j))

    for i, fn in linked.defined_functions():
        key = (i, fn.name)
        stmts = fn.statements
        refs = [(i, fn.name, k) for k in range(len(stmts))]
        defs = {}
        for k, st in enumerate(stmts):
            if st.is_debug_intrinsic:
                continue
            g.nodes.add(refs[k])
            if st.result is not None:
                defs[st.result] = k
        fn_defs = {name: stmts[k] for name, k in defs.items()}

        cfg = build_cfg(fn)
        cdeps = control_dependence(cfg)
        block_of = {}
        for b, (s, e) in enumerate(cfg.blocks):
            for k in range(s, e):
                block_of[k] = b
        entry_dependent[key] = []
        for k, st in enumerate(stmts):
            if st.is_debug_intrinsic or block_of[k] not in cfg.reachable:
                continue
            controllers = cdeps.get(block_of[k], set())
            for a in controllers:
                g.add_edge(refs[cfg.blocks[a][1] - 1], refs[k], "control")
            if not controllers:
                entry_dependent[key].append(refs[k])

        label_block = {lbl: cfg.block_of(idx) for lbl, idx in fn.labels.items() if idx < len(stmts)}
        if fn.entry_label is not None:
            label_block[fn.entry_label] = 0

        def base_key(op):
            base = _address_base(fn_defs, op)
            if base is None:
                return None
            return base if base[0] == "global" else (i, fn.name) + base

        def feed_object(bk, writer):
            # the variable's own node depends on what is written into it
            obj = None
            if bk[0] == "global":
                obj = linked.global_def(i, bk[1])
            elif bk[-1] in defs and stmts[defs[bk[-1]]].opcode == "alloca":
                obj = refs[defs[bk[-1]]]
            if obj is not None:
                g.add_edge(writer, obj, "data")

        params = set(fn.params)
        param_users[key] = []
        returns[key] = []
        for k, st in enumerate(stmts):
            if st.is_debug_intrinsic:
                continue
            for u in st.uses:
                if u in defs:
                    g.add_edge(refs[defs[u]], refs[k], "data")
                elif u in params:
                    param_users[key].append(refs[k])
            for name in st.global_uses:
                gref = linked.global_def(i, name)
                if gref is not None:
                    g.add_edge(gref, refs[k], "data")
            for _, blk in st.phi_incoming:
                b = label_block.get(blk)
                if b is not None and b in cfg.reachable:
                    g.add_edge(refs[cfg.blocks[b][1] - 1], refs[k], "control")

            if st.opcode == "store":
                _, ptr = store_parts(st)
                bk = base_key(ptr)
                if bk:
                    writes[bk].append(refs[k])
                    feed_object(bk, refs[k])
            elif st.opcode == "load":
                vals = value_operands(st)
                bk = base_key(vals[0]) if vals else None
                if bk:
                    reads[bk].append(refs[k])
            elif st.opcode in ("call", "invoke"):
                target = linked.resolve(i, st.callee) if st.callee else None
                if target is not None:
                    calls.append((refs[k], target))
                else:
                    # unknown code may read and write through any pointer argument
                    for op in value_operands(st):
                        bk = base_key(op)
                        if bk:
                            reads[bk].append(refs[k])
                            writes[bk].append(refs[k])
                            feed_object(bk, refs[k])
            elif st.opcode == "ret" and value_operands(st):
                returns[key].append(refs[k])

    for base, ws in writes.items():
        for w in ws:
            for r in reads.get(base, ()):
                g.add_edge(w, r, "data")

    for site, (j, callee) in calls:
        key = (j, callee.name)
        for target in entry_dependent.get(key, ()):
            g.add_edge(site, target, "call")
        for user in param_users.get(key, ()):
            g.add_edge(site, user, "param")
        if linked.statement(site).result is not None:
            for r in returns.get(key, ()):
                g.add_edge(r, site, "data")
    return g
