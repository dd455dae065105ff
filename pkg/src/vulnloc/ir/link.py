"""Symbolic linking of parsed modules and source-line lookup."""

import logging
from dataclasses import dataclass, field
from pathlib import PurePosixPath
from typing import Dict, List, Optional, Tuple

from ..errors import LinkError
from .parser import IrFunction, IrModule

logger = logging.getLogger(__name__)

# (member index, function name or None for a global, statement/global index)
StmtRef = Tuple[int, Optional[str], int]


def same_file(a, b):
    """Path equality tolerant of differing roots ("src/x.c" vs "x.c")."""
    if a is None or b is None:
        return False
    if a == b:
        return True
    pa, pb = PurePosixPath(a).parts, PurePosixPath(b).parts
    if not pa or not pb:
        return False
    k = min(len(pa), len(pb))
    return pa[-k:] == pb[-k:]


@dataclass
class LinkedModule:
    members: List[IrModule]
    functions: Dict[str, Tuple[int, IrFunction]] = field(default_factory=dict)
    statics: Dict[Tuple[int, str], IrFunction] = field(default_factory=dict)
    externals: frozenset = frozenset()

    def resolve(self, member, name):
        """Find the definition a call from `member` to `name` binds to."""
        if (member, name) in self.statics:
            return member, self.statics[(member, name)]
        return self.functions.get(name)

    def function(self, member, name):
        mod = self.members[member]
        fn = mod.function(name)
        if fn is None:
            raise KeyError(name)
        return fn

    def statement(self, ref: StmtRef):
        member, fname, idx = ref
        if fname is None:
            return self.members[member].globals[idx]
        return self.function(member, fname).statements[idx]

    def defined_functions(self):
        """(member index, function) pairs in member then definition order."""
        for i, mod in enumerate(self.members):
            for fn in mod.functions:
                yield i, fn

    def global_def(self, member, name):
        """Locate the defining global for `name` as seen from `member`."""
        mod = self.members[member]
        for j, g in enumerate(mod.globals):
            if g.name == name:
                return (member, None, j)
        for i, other in enumerate(self.members):
            for j, g in enumerate(other.globals):
                if g.name == name and not g.is_internal:
                    return (i, None, j)
        return None

    def refs(self):
        for i, mod in enumerate(self.members):
            for j in range(len(mod.globals)):
                yield (i, None, j)
            for fn in mod.functions:
                for k in range(len(fn.statements)):
                    yield (i, fn.name, k)

    @property
    def origin(self):
        return {ref: (self.members[ref[0]], ref[2]) for ref in self.refs()}


def _referenced_symbols(mod: IrModule):
    syms = set()
    for fn in mod.functions:
        for st in fn.statements:
            if st.callee:
                syms.add(st.callee)
            syms.update(op.name for op in st.operands if op.kind == "global")
    for g in mod.globals:
        syms.update(g.refs)
    return syms


def _exported(mod: IrModule):
    out = {fn.name for fn in mod.functions if not fn.is_internal}
    out.update(g.name for g in mod.globals if not g.is_internal)
    return out


def group_and_link(modules: List[IrModule]) -> List[LinkedModule]:
    """Partition modules by transitive symbol references and link each group."""
    n = len(modules)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    definers: Dict[str, List[int]] = {}
    for i, mod in enumerate(modules):
        for sym in _exported(mod):
            definers.setdefault(sym, []).append(i)
    for i, mod in enumerate(modules):
        for sym in _referenced_symbols(mod):
            for j in definers.get(sym, ()):
                union(i, j)

    groups: Dict[int, List[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)

    out = []
    for root in sorted(groups):
        members = [modules[i] for i in groups[root]]
        out.append(_link(members))
    return out


def _link(members: List[IrModule]) -> LinkedModule:
    table: Dict[str, Tuple[int, IrFunction]] = {}
    statics: Dict[Tuple[int, str], IrFunction] = {}
    for i, mod in enumerate(members):
        for fn in mod.functions:
            if fn.is_internal:
                statics[(i, fn.name)] = fn
                continue
            if fn.name in table:
                other = members[table[fn.name][0]].file_id
                raise LinkError(f"@{fn.name} defined in both {other} and {mod.file_id}")
            table[fn.name] = (i, fn)
    seen_globals = {}
    for i, mod in enumerate(members):
        for g in mod.globals:
            if g.is_internal:
                continue
            if g.name in seen_globals and not _is_tentative(g.raw):
                if not _is_tentative(members[seen_globals[g.name]].global_var(g.name).raw):
                    raise LinkError(f"@{g.name} defined in both {members[seen_globals[g.name]].file_id} and {mod.file_id}")
            seen_globals.setdefault(g.name, i)
    externals = set()
    for i, mod in enumerate(members):
        for fn in mod.functions:
            for st in fn.statements:
                if st.callee and (i, st.callee) not in statics and st.callee not in table:
                    externals.add(st.callee)
    return LinkedModule(members=members, functions=table, statics=statics, externals=frozenset(externals))


def _is_tentative(raw):
    return " common " in raw or raw.split("=", 1)[1].lstrip().startswith("external ")


def map_source_line(linked: LinkedModule, file_id: str, source_line: int):
    """All statement refs whose debug line is (file_id, source_line)."""
    out = set()
    for i, mod in enumerate(linked.members):
        for j, g in enumerate(mod.globals):
            if g.debug_line and g.debug_line[1] == source_line and same_file(g.debug_line[0], file_id):
                out.add((i, None, j))
        for fn in mod.functions:
            for k, st in enumerate(fn.statements):
                dl = st.debug_line
                if dl and dl[1] == source_line and same_file(dl[0], file_id):
                    out.add((i, fn.name, k))
    return out
