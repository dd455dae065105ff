"""Independent reference computations shared by the unit and acceptance tests."""

import difflib
import math
import re

import networkx as nx
import numpy as np

from vulnloc.neural.model import Model, ModelConfig


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def scalar_gru(X, W, U, b):
    """Step-by-step GRU on one sequence with plain Python loops (gates z, r, candidate)."""
    T, D = len(X), len(X[0])
    H = len(U)
    h = [0.0] * H
    out = []
    for t in range(T):
        def pre(g, j, hvec):
            col = g * H + j
            s = b[col]
            for i in range(D):
                s += X[t][i] * W[i][col]
            for i in range(H):
                s += hvec[i] * U[i][col]
            return s
        z = [_sig(pre(0, j, h)) for j in range(H)]
        r = [_sig(pre(1, j, h)) for j in range(H)]
        rh = [r[i] * h[i] for i in range(H)]
        hh = [math.tanh(pre(2, j, rh)) for j in range(H)]
        h = [z[j] * h[j] + (1.0 - z[j]) * hh[j] for j in range(H)]
        out.append(list(h))
    return out


def scalar_activations(model, X):
    """Per-token outputs of a one-sample input, recomputed with scalar_gru."""
    p = {k: v.tolist() for k, v in model.params.items()}
    h = [list(row) for row in X]
    for layer in range(model.cfg.layers):
        key = f"l{layer}"
        fw = scalar_gru(h, p[key + "_fw_W"], p[key + "_fw_U"], p[key + "_fw_b"])
        bw = scalar_gru(h[::-1], p[key + "_bw_W"], p[key + "_bw_U"], p[key + "_bw_b"])[::-1]
        h = [f + g for f, g in zip(fw, bw)]
    out = []
    for row in h:
        z = [math.tanh(sum(row[i] * p["dense_W"][i][j] for i in range(len(row))) + p["dense_b"][j])
             for j in range(model.cfg.dense)]
        out.append(_sig(sum(z[j] * p["out_w"][j] for j in range(len(z))) + p["out_b"][0]))
    return out


def gradcheck(cell="gru", kappa=1, lam=8, d=4, hidden=5, seed=0, h=1e-5, batch=3):
    """Largest relative error between analytic and central-difference gradients over every parameter entry."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(input_dim=d, hidden=hidden, layers=2, dense=6, kappa=kappa, cell=cell, dropout=0.0)
    model = Model.create(cfg, rng)
    for k in model.params:
        model.params[k] = model.params[k] + rng.normal(0, 0.3, model.params[k].shape)
    X = rng.normal(0, 1, (batch, lam, d))
    mask = np.ones((batch, lam))
    mask[0, : lam // 2] = 0.0
    y = np.array([1.0, 0.0, 1.0][:batch])
    _, grads = model.loss_and_grads(X, mask, y)
    worst = 0.0
    for name, arr in model.params.items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, _ = model.loss_and_grads(X, mask, y)
            flat[i] = old - h
            lm, _ = model.loss_and_grads(X, mask, y)
            flat[i] = old
            num = (lp - lm) / (2 * h)
            err = abs(g[i] - num) / max(abs(g[i]) + abs(num), 1e-6)
            worst = max(worst, err)
    return worst


def sort_kmax(M, kappa):
    return float(np.mean(sorted(M, reverse=True)[:kappa]))


def span_max(A, spans, kappa):
    out = []
    for s, e in spans:
        vals = sorted((float(a) for a in A[s:e]), reverse=True)
        out.append(sum(vals[:kappa]) / len(vals[:kappa]) if vals else None)
    return out


# Generators below take pick(lo, hi), an inclusive integer source. Hypothesis
# strategies pass draw(st.integers(lo, hi)); the acceptance suite passes a seeded
# random.Random().randint, so both share one definition.

def random_graph(pick, max_nodes=20):
    n = pick(1, max_nodes)
    edges = [(pick(0, n - 1), pick(0, n - 1)) for _ in range(pick(0, 40))]
    anchor = {pick(0, n - 1) for _ in range(pick(1, 3))}
    return n, edges, anchor


def matrix_closure(n, edges, anchor):
    """Nodes reaching or reachable from the anchor, via boolean matrix powers."""
    A = np.zeros((n, n), dtype=np.int64)
    for a, b in edges:
        if a != b:
            A[a, b] = 1
    R = np.eye(n, dtype=np.int64)
    P = np.eye(n, dtype=np.int64)
    for _ in range(n):
        P = np.minimum(P @ A, 1)
        R = np.minimum(R + P, 1)
    fwd = R[sorted(anchor)].any(axis=0)
    bwd = R[:, sorted(anchor)].any(axis=1)
    return {k for k in range(n) if fwd[k] or bwd[k]}


def random_cfg(pick, max_blocks=8):
    n = pick(1, max_blocks)
    succ = []
    for _ in range(n):
        arity = (0, 1, 2, 2)[pick(0, 3)]
        succ.append([pick(0, n - 1) for _ in range(arity)])
    return succ


def function_from_succ(succ):
    """IR text for a void function whose block k branches to succ[k] (empty = ret)."""
    lines = ["define void @f() {"]
    for k, targets in enumerate(succ):
        if k:
            lines.append(f"bb{k}:")
        lines.append(f"  %v{k} = add i32 {k}, 0")
        if not targets:
            lines.append("  ret void")
        elif len(targets) == 1:
            lines.append(f"  br label %bb{targets[0]}")
        else:
            lines.append(f"  %c{k} = icmp eq i32 %v{k}, 0")
            lines.append(f"  br i1 %c{k}, label %bb{targets[0]}, label %bb{targets[1]}")
    lines.append("}")
    return "\n".join(lines).replace("%bb0", "%0") + "\n"


def oracle_graph(succ):
    """Reachable blocks plus exit, with the same virtual-exit convention."""
    n = len(succ)
    exit_ = n
    g = nx.DiGraph()
    g.add_node(0)
    for k, ts in enumerate(succ):
        for t in ts:
            g.add_edge(k, t)
        if not ts:
            g.add_edge(k, exit_)
    reach = nx.descendants(g, 0) | {0}
    g = g.subgraph(reach | {exit_}).copy()
    g.add_node(exit_)
    for b in sorted(reach - {exit_}):
        if not nx.has_path(g, b, exit_):
            g.add_edge(b, exit_)
    return g, exit_


def oracle_pdom(g, exit_, y, n):
    """y post-dominates n: every path n -> exit meets y."""
    if y == n or y == exit_:
        return True
    h = g.copy()
    h.remove_node(y)
    return not nx.has_path(h, n, exit_)


def oracle_control(g, exit_):
    """Y depends on X iff some path X -> S ... -> Y has Y post-dominating every node after X,
    and Y does not strictly post-dominate X."""
    blocks = [b for b in g.nodes if b != exit_]
    deps = {b: set() for b in blocks}
    for x in blocks:
        for y in blocks:
            if y != x and oracle_pdom(g, exit_, y, x):
                continue
            found = False
            for s in g.successors(x):
                if s == exit_:
                    continue
                paths = [[s]] if s == y else nx.all_simple_paths(g, s, y)
                if any(all(oracle_pdom(g, exit_, y, p) for p in path) for path in paths):
                    found = True
                    break
            if found:
                deps[y].add(x)
    return deps


class _Fn:
    def __init__(self):
        self.lines = []
        self.next = 2  # %0 is the parameter, %1 the entry block

    def fresh(self):
        n = self.next
        self.next += 1
        return str(n)


def random_call_tree(pick):
    """IR text for functions g0..g{n-1} calling along a random tree, plus the function to anchor in."""
    n = pick(1, 5)
    parent = [None] + [pick(0, k - 1) for k in range(1, n)]
    children = {k: [c for c in range(n) if parent[c] == k] for k in range(n)}
    texts = []
    for k in range(n):
        f = _Fn()
        slot = f.fresh()
        f.lines.append(f"  %{slot} = alloca i32, align 4")
        f.lines.append(f"  store i32 %0, i32* %{slot}, align 4")
        cur = f.fresh()
        f.lines.append(f"  %{cur} = load i32, i32* %{slot}, align 4")
        targets = list(children[k])
        if pick(0, 1) and targets:
            targets.append(targets[0])  # second call to the same callee
        if not children[k] and k and pick(0, 3) == 0:
            targets.append(0)  # recursion back to the root
        for c in targets:
            r = f.fresh()
            f.lines.append(f"  %{r} = call i32 @g{c}(i32 %{cur})")
            cur = f.fresh()
            f.lines.append(f"  %{cur} = add nsw i32 %{r}, {pick(-9, 9)}")
        if pick(0, 1):
            cond = f.fresh()
            f.lines.append(f"  %{cond} = icmp slt i32 %{cur}, {pick(0, 50)}")
            then = f.fresh()
            f.lines.append(f"  br i1 %{cond}, label %{then}, label %JOIN")
            f.lines.append(f"{then}:")
            val = f.fresh()
            f.lines.append(f"  %{val} = mul nsw i32 %{cur}, 2")
            f.lines.append("  br label %JOIN")
            join = f.fresh()
            f.lines = [ln.replace("%JOIN", f"%{join}") for ln in f.lines]
            f.lines.append(f"{join}:")
            phi = f.fresh()
            f.lines.append(f"  %{phi} = phi i32 [ %{cur}, %1 ], [ %{val}, %{then} ]")
            cur = phi
        f.lines.append(f"  ret i32 %{cur}")
        texts.append(f"define i32 @g{k}(i32 %0) {{\n" + "\n".join(f.lines) + "\n}\n")
    return "\n".join(texts), f"g{pick(0, n - 1)}"


_DEF = re.compile(r"^%(\w+) = ")
_USE = re.compile(r"(?<!label )%(\w+)")


def ssa_violations(texts):
    """Duplicate definitions and uses before definition, found with plain regexes."""
    problems = []
    defined = {}
    for pos, t in enumerate(texts):
        m = _DEF.match(t)
        if m:
            if m.group(1) in defined:
                problems.append(f"%{m.group(1)} defined twice")
            defined.setdefault(m.group(1), pos)
    for pos, t in enumerate(texts):
        if " = phi " in t:
            continue
        body = t.split(" = ", 1)[1] if _DEF.match(t) else t
        for name in _USE.findall(body):
            if name in defined and defined[name] >= pos:
                problems.append(f"%{name} used before its definition")
    return problems


def random_edit(pick):
    """An old/new pair of line lists produced by deletions, a move, additions or a mix."""
    n = pick(1, 40)
    old = [f"line {k}" for k in range(n)]
    new = list(old)
    kind = ("delete", "move", "add", "mixed")[pick(0, 3)]
    if kind in ("delete", "mixed"):
        for k in sorted({pick(0, n - 1) for _ in range(pick(0, 5))}, reverse=True):
            new.pop(k)
    if kind in ("move", "mixed") and len(new) > 1:
        item = new.pop(pick(0, len(new) - 1))
        new.insert(pick(0, len(new)), item)
    if kind in ("add", "mixed"):
        for j in range(pick(1, 4)):
            new.insert(pick(0, len(new)), f"added {j}")
    return old, new, kind


def opcode_oracle(old, new):
    """Old line numbers that a minimal edit script removes or replaces."""
    sm = difflib.SequenceMatcher(a=old, b=new, autojunk=False)
    out = set()
    for tag, i1, i2, _, _ in sm.get_opcodes():
        if tag in ("delete", "replace"):
            out.update(range(i1 + 1, i2 + 1))
    return out


def make_diff(old, new, context=3, name="f.c"):
    lines = difflib.unified_diff(old, new, f"a/{name}", f"b/{name}", lineterm="", n=context)
    return "\n".join(lines) + "\n"
