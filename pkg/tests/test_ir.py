import networkx as nx
import pytest
from hypothesis import given, strategies as st

from vulnloc.errors import IrParseError, LinkError
from vulnloc.ir.link import group_and_link, map_source_line, same_file
from vulnloc.ir.parser import parse_ll, parse_statement


def module(body_by_fn, declares=(), globals_=()):
    """Tiny textual module: {name: [statements]} with void functions."""
    out = list(globals_)
    for name in declares:
        out.append(f"declare void @{name}()")
    for name, body in body_by_fn.items():
        out.append(f"define void @{name}() {{")
        out.extend("  " + s for s in body)
        out.append("}")
    return "\n".join(out) + "\n"


def test_icmp_operands():
    s = parse_statement("%6 = icmp slt i32 100, %5")
    assert s.result == "6" and s.opcode == "icmp"
    assert [(o.kind, o.text) for o in s.operands] == [
        ("keyword", "slt"), ("type", "i32"), ("const", "100"), ("ref", "%5")]
    assert s.uses == ["5"]


def test_call_without_result():
    s = parse_statement("call void @printLine()")
    assert s.result is None and s.callee == "printLine"
    assert s.global_uses == []


def test_opaque_statement_keeps_refs():
    s = parse_statement("%3 = freeze i32 %2")
    assert s.opcode == "freeze" and s.uses == ["2"]


def test_empty_function_parses():
    mod = parse_ll("define void @f() {\n}\n", "m.ll")
    assert mod.function("f").statements == []


def test_duplicate_definition_rejected():
    text = module({"f": ["%1 = alloca i32, align 4", "%1 = alloca i32, align 4", "ret void"]})
    with pytest.raises(IrParseError) as err:
        parse_ll(text, "m.ll")
    assert err.value.line == 3


def test_malformed_ssa_id_rejected():
    with pytest.raises(IrParseError):
        parse_statement("%1x = add i32 1, 2")


def test_round_trip_fixture(fixtures):
    text = (fixtures / "example.ll").read_text()
    mod = parse_ll(text, "example.ll")
    want = [l for l in text.split("\n") if l.strip()]
    assert mod.render().rstrip("\n").split("\n") == want


def test_debug_lines_resolved(fixtures):
    mod = parse_ll((fixtures / "example.ll").read_text(), "example.ll")
    assert mod.source_file == "example.c"
    main = mod.function("main")
    assert main.statements[12].raw.strip().startswith("%8 = getelementptr inbounds i8, i8* %7, i64 -8")
    assert main.statements[12].debug_line == ("example.c", 19)
    allocas = {st.var_name: st.debug_line for st in main.statements if st.opcode == "alloca"}
    assert allocas["dataBuffer"] == ("example.c", 10)


def test_map_source_line_assignment(fixtures):
    linked = group_and_link([parse_ll((fixtures / "example.ll").read_text(), "example.ll")])
    assert len(linked) == 1
    refs = map_source_line(linked[0], "example.c", 19)
    assert refs == {(0, "main", 11), (0, "main", 12), (0, "main", 13)}
    ops = sorted(linked[0].statement(r).opcode for r in refs)
    assert ops == ["getelementptr", "getelementptr", "store"]


def test_map_source_line_comment_line(fixtures):
    linked = group_and_link([parse_ll((fixtures / "example.ll").read_text(), "example.ll")])[0]
    assert map_source_line(linked, "example.c", 16) == set()  # comment-only


def test_map_source_line_duplicate_contexts():
    text = """define void @f() !dbg !5 {
  %1 = alloca i32, align 4
  store i32 1, i32* %1, align 4, !dbg !8
  store i32 2, i32* %1, align 4, !dbg !9
  ret void, !dbg !10
}
!1 = !DIFile(filename: "dup.c", directory: ".")
!5 = distinct !DISubprogram(name: "f", scope: !1, file: !1, line: 1)
!8 = !DILocation(line: 3, column: 1, scope: !5)
!9 = !DILocation(line: 3, column: 9, scope: !5)
!10 = !DILocation(line: 4, column: 1, scope: !5)
"""
    linked = group_and_link([parse_ll(text, "dup.ll")])[0]
    assert map_source_line(linked, "dup.c", 3) == {(0, "f", 1), (0, "f", 2)}


def test_link_caller_and_callee():
    a = parse_ll(module({"main": ["call void @helper()", "ret void"]}, declares=["helper"]), "main.ll")
    b = parse_ll(module({"helper": ["ret void"]}), "util.ll")
    groups = group_and_link([a, b])
    assert len(groups) == 1
    lm = groups[0]
    assert [m.file_id for m in lm.members] == ["main.ll", "util.ll"]
    member, fn = lm.resolve(0, "helper")
    assert member == 1 and fn.name == "helper"


def test_independent_modules_stay_apart():
    a = parse_ll(module({"f": ["ret void"]}), "a.ll")
    b = parse_ll(module({"g": ["ret void"]}), "b.ll")
    assert [len(g.members) for g in group_and_link([a, b])] == [1, 1]


def test_duplicate_definition_in_group():
    a = parse_ll(module({"main": ["call void @h()", "ret void"], "h": ["ret void"]}), "a.ll")
    b = parse_ll(module({"h": ["ret void"], "k": ["call void @main()", "ret void"]}, declares=["main"]), "b.ll")
    with pytest.raises(LinkError):
        group_and_link([a, b])


def test_static_functions_disambiguated():
    a = parse_ll("define internal void @h() {\n  ret void\n}\ndefine void @f() {\n  call void @h()\n  ret void\n}\n", "a.ll")
    b = parse_ll("define internal void @h() {\n  ret void\n}\ndefine void @g() {\n  call void @f()\n  call void @h()\n  ret void\n}\ndeclare void @f()\n", "b.ll")
    lm, = group_and_link([a, b])
    assert lm.resolve(0, "h")[0] == 0 and lm.resolve(1, "h")[0] == 1


def test_externals_recorded():
    lm, = group_and_link([parse_ll(module({"f": ["call void @puts()", "ret void"]}, declares=["puts"]), "a.ll")])
    assert lm.externals == frozenset({"puts"})


def test_chain_of_five_is_one_group():
    mods = []
    for k in range(5):
        body = [f"call void @f{k + 1}()", "ret void"] if k < 4 else ["ret void"]
        mods.append(parse_ll(module({f"f{k}": body}, declares=[f"f{k + 1}"] if k < 4 else []), f"m{k}.ll"))
    groups = group_and_link(mods)
    assert len(groups) == 1 and len(groups[0].members) == 5


@st.composite
def module_sets(draw):
    n = draw(st.integers(1, 7))
    calls = {i: draw(st.lists(st.integers(0, n - 1), max_size=3)) for i in range(n)}
    texts = []
    for i in range(n):
        targets = sorted({j for j in calls[i] if j != i})
        body = [f"call void @f{j}()" for j in targets] + ["ret void"]
        texts.append(module({f"f{i}": body}, declares=[f"f{j}" for j in targets]))
    return texts, calls


@given(module_sets())
def test_link_groups_are_connected_components(data):
    texts, calls = data
    mods = [parse_ll(t, f"m{i}.ll") for i, t in enumerate(texts)]
    g = nx.Graph()
    g.add_nodes_from(range(len(mods)))
    g.add_edges_from((i, j) for i, js in calls.items() for j in js)
    want = sorted(sorted(f"m{i}.ll" for i in comp) for comp in nx.connected_components(g))
    got = sorted(sorted(m.file_id for m in lm.members) for lm in group_and_link(mods))
    assert got == want
    # every module lands in exactly one group
    assert sorted(sum(got, [])) == sorted(m.file_id for m in mods)


def test_same_file_suffix():
    assert same_file("prog/main.c", "main.c")
    assert same_file("./x/a.c", "x/a.c")
    assert not same_file("a/main.c", "b/main.c")
    assert not same_file(None, "a.c")
