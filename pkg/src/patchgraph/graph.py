"""Patch semantic graph construction from a parsed method.

Three edge builders feed ``assemble``: nesting-based control edges,
reaching-definition data-flow edges over a statement-level execution CFG,
and per-assignment variable sub-graphs merged back into their statement
nodes. Node ids are assigned deterministically: statement nodes first in
statement order, then variable nodes in statement order with right-side
variables before the left-side one.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGraph
from .parser import (
    CONTROL_KINDS,
    MethodAst,
    Origin,
    Statement,
    StatementKind,
    expr_vars,
    parse_method,
)


class NodeCategory(enum.Enum):
    PATCH = "patch"
    CONTROL = "control"
    CONTEXT = "context"
    VARIABLE = "variable"


class EdgeKind(enum.Enum):
    CONTROL_FLOW = "control_flow"
    DATA_FLOW = "data_flow"
    SUBGRAPH_MERGE = "subgraph_merge"


class VarSide(enum.Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass
class ApsgNode:
    node_id: int
    category: NodeCategory
    statement_index: int | None = None
    variable: tuple[str, VarSide] | None = None
    attributes: np.ndarray | None = None


@dataclass(frozen=True)
class ApsgEdge:
    src: int
    dst: int
    kind: EdgeKind


@dataclass
class Apsg:
    nodes: list[ApsgNode]
    edges: list[ApsgEdge]
    method: MethodAst
    patch_region: frozenset[int]
    # derived matrices; A is filled by the attribute encoder
    M_l: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    M_v: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    M_lv: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    N_l: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    N_v: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    A: np.ndarray | None = None

    @property
    def line_nodes(self) -> list[ApsgNode]:
        return [n for n in self.nodes if n.category is not NodeCategory.VARIABLE]

    @property
    def variable_nodes(self) -> list[ApsgNode]:
        return [n for n in self.nodes if n.category is NodeCategory.VARIABLE]

    def isolated_node_ids(self) -> list[int]:
        """Nodes not reachable (undirected) from any patch node."""
        patch = [n.node_id for n in self.nodes if n.category is NodeCategory.PATCH]
        adj: dict[int, set[int]] = {n.node_id: set() for n in self.nodes}
        for e in self.edges:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
        seen = set(patch)
        frontier = list(patch)
        while frontier:
            cur = frontier.pop()
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        return [n.node_id for n in self.nodes if n.node_id not in seen]


# --- control-flow edges (nesting based) ---


def build_cfg(method: MethodAst) -> list[ApsgEdge]:
    """Control edges from each control statement to the statements it guards.

    Switch headers link only to the first statement of each case arm; all
    other control kinds link to every directly nested statement. Catch
    clauses guard their own handler bodies.
    """
    edges: list[ApsgEdge] = []
    for stmt in method.statements:
        if stmt.kind not in CONTROL_KINDS:
            continue
        children = method.children_of(stmt.index)
        if stmt.kind is StatementKind.SWITCH:
            seen_arms: set[int] = set()
            for child in children:
                if child.nesting_arm not in seen_arms:
                    seen_arms.add(child.nesting_arm)
                    edges.append(ApsgEdge(stmt.index, child.index, EdgeKind.CONTROL_FLOW))
        else:
            for child in children:
                edges.append(ApsgEdge(stmt.index, child.index, EdgeKind.CONTROL_FLOW))
    return edges


# --- execution CFG (successor map) for the dataflow analysis ---


def successor_map(method: MethodAst) -> dict[int, list[int]]:
    """Statement-level execution successors.

    Branch arms are alternative paths, loops get back edges, try bodies and
    catch handlers are alternative paths joining at the finally block (if
    any). Return and throw have no successors.
    """
    stmts = method.statements
    by_parent: dict[int | None, list[Statement]] = {}
    for s in stmts:
        if s.catch_of is not None:
            continue  # catch headers are wired through their try
        by_parent.setdefault(s.nesting_parent, []).append(s)

    catches: dict[int, list[Statement]] = {}
    for s in stmts:
        if s.catch_of is not None:
            catches.setdefault(s.catch_of, []).append(s)

    def arm_stmts(parent: int, arm: int) -> list[Statement]:
        return [s for s in by_parent.get(parent, []) if s.nesting_arm == arm]

    def arms_of(parent: int) -> list[int]:
        return sorted({s.nesting_arm for s in by_parent.get(parent, [])})

    succ: dict[int, list[int]] = {s.index: [] for s in stmts}

    def enclosing_loop(s: Statement) -> Statement | None:
        cur = s
        while cur.nesting_parent is not None:
            p = stmts[cur.nesting_parent]
            if p.kind in (StatementKind.WHILE, StatementKind.FOR):
                return p
            cur = p
        return None

    def enclosing_breakable(s: Statement) -> Statement | None:
        cur = s
        while cur.nesting_parent is not None:
            p = stmts[cur.nesting_parent]
            if p.kind in (StatementKind.WHILE, StatementKind.FOR, StatementKind.SWITCH):
                return p
            cur = p
        return None

    def follow(s: Statement) -> list[int]:
        """Where control goes after s completes normally."""
        if s.catch_of is not None:
            # finished dispatching into a catch clause is not a thing; this is
            # reached when the handler body is empty: go to finally or after
            return after_try(stmts[s.catch_of], from_arm=1)
        parent = s.nesting_parent
        siblings = [x for x in by_parent.get(parent, []) if x.nesting_arm == s.nesting_arm]
        later = [x for x in siblings if x.index > s.index]
        if later:
            return [later[0].index]
        if parent is None:
            return []
        p = stmts[parent]
        if p.kind in (StatementKind.WHILE, StatementKind.FOR):
            return [p.index]  # loop back edge
        if p.kind is StatementKind.TRY_CATCH:
            if p.catch_of is not None:
                # finished a catch handler: continue at the try's finally or after
                return after_try(stmts[p.catch_of], from_arm=1)
            if s.nesting_arm == 0:
                return after_try(p, from_arm=1)
            return follow(p)  # finished the finally block
        # if / switch arms (fall-through free) and anything else: continue after
        return follow(p)

    def after_try(try_stmt: Statement, from_arm: int) -> list[int]:
        fin = arm_stmts(try_stmt.index, 1)
        if from_arm == 1 and fin:
            return [fin[0].index]
        return follow(try_stmt)

    def first_or_follow(parent: Statement, arm: int) -> list[int]:
        inside = arm_stmts(parent.index, arm)
        if inside:
            return [inside[0].index]
        return follow(parent)

    for s in stmts:
        if s.kind is StatementKind.RETURN or s.subkind == "throw":
            continue
        if s.subkind == "break":
            target = enclosing_breakable(s)
            succ[s.index] = follow(target) if target is not None else []
            continue
        if s.subkind == "continue":
            loop = enclosing_loop(s)
            succ[s.index] = [loop.index] if loop is not None else []
            continue
        if s.kind is StatementKind.IF:
            targets = first_or_follow(s, 0)
            arms = arms_of(s.index)
            if 1 in arms:
                targets = targets + first_or_follow(s, 1)
            else:
                targets = targets + follow(s)
            succ[s.index] = _dedup(targets)
            continue
        if s.kind in (StatementKind.WHILE, StatementKind.FOR):
            succ[s.index] = _dedup(first_or_follow(s, 0) + follow(s))
            continue
        if s.kind is StatementKind.SWITCH:
            targets: list[int] = []
            arms = arms_of(s.index)
            for arm in arms:
                targets += first_or_follow(s, arm)
            targets += follow(s)  # subject may match no arm
            succ[s.index] = _dedup(targets)
            continue
        if s.kind is StatementKind.TRY_CATCH and s.catch_of is None:
            targets = first_or_follow(s, 0)
            for c in catches.get(s.index, []):
                targets.append(c.index)
            succ[s.index] = _dedup(targets)
            continue
        if s.catch_of is not None:
            succ[s.index] = _dedup(first_or_follow(s, 0))
            continue
        succ[s.index] = follow(s)

    return succ


def _dedup(xs: list[int]) -> list[int]:
    seen: set[int] = set()
    out = []
    for x in xs:
        if x not in seen:
            seen.add(x)
            out.append(x)
    return out


# --- reaching definitions ---


def build_dataflow(method: MethodAst) -> list[ApsgEdge]:
    """Data-flow edge a -> b whenever a definition at a reaches a use at b.

    Standard forward fixpoint over (variable, def-site) pairs on the
    statement-level execution CFG.
    """
    stmts = method.statements
    succ = successor_map(method)
    gen = {s.index: {(v, s.index) for v in s.defs} for s in stmts}
    kills = {s.index: s.defs for s in stmts}

    in_sets: dict[int, set] = {s.index: set() for s in stmts}
    out_sets: dict[int, set] = {s.index: set() for s in stmts}
    changed = True
    while changed:
        changed = False
        for s in stmts:
            i = s.index
            new_in = set()
            for p in stmts:
                if i in succ[p.index]:
                    new_in |= out_sets[p.index]
            new_out = gen[i] | {d for d in new_in if d[0] not in kills[i]}
            if new_in != in_sets[i] or new_out != out_sets[i]:
                in_sets[i] = new_in
                out_sets[i] = new_out
                changed = True

    edges: set[tuple[int, int]] = set()
    for s in stmts:
        for v in s.uses:
            for (dv, di) in in_sets[s.index]:
                if dv == v:
                    edges.add((di, s.index))
    return [ApsgEdge(a, b, EdgeKind.DATA_FLOW) for a, b in sorted(edges)]


def brute_force_dataflow(method: MethodAst) -> set[tuple[int, int]]:
    """Independent oracle: enumerate simple CFG paths and check the
    no-redefinition condition directly. Exponential; for small methods only.
    """
    stmts = method.statements
    succ = successor_map(method)
    result: set[tuple[int, int]] = set()

    for a in stmts:
        for v in a.defs:
            targets = {b.index for b in stmts if v in b.uses}
            if not targets:
                continue
            # DFS over paths from a; intermediate nodes must not redefine v
            stack: list[tuple[int, frozenset[int]]] = [(a.index, frozenset())]
            reached: set[int] = set()
            while stack:
                cur, visited = stack.pop()
                for nxt in succ[cur]:
                    if nxt in targets:
                        reached.add(nxt)
                    if nxt in visited:
                        continue
                    if v in stmts[nxt].defs:
                        continue  # path through nxt kills the definition
                    stack.append((nxt, visited | {nxt}))
            for b in reached:
                result.add((a.index, b))
    return result


# --- variable sub-graphs ---


def is_assignment_like(stmt: Statement) -> bool:
    if stmt.kind is StatementKind.ASSIGNMENT:
        return True
    return stmt.kind is StatementKind.DECLARATION and stmt.has_initializer


def build_variable_subgraphs(
    method: MethodAst, next_id: int
) -> tuple[list[ApsgNode], list[ApsgEdge]]:
    """Variable nodes and their edges for every assignment-like statement.

    Per statement: one node per distinct right-side variable, one for the
    left-side variable, data-flow edges right -> left, and a merge edge
    from the left node to the statement node.
    """
    nodes: list[ApsgNode] = []
    edges: list[ApsgEdge] = []
    for stmt in method.statements:
        if not is_assignment_like(stmt) or stmt.lhs is None:
            continue
        right_vars: list[str] = []
        for e in stmt.exprs:
            for v in expr_vars(e):
                if v not in right_vars:
                    right_vars.append(v)
        right_ids = {}
        for v in right_vars:
            node = ApsgNode(next_id, NodeCategory.VARIABLE, stmt.index, (v, VarSide.RIGHT))
            right_ids[v] = next_id
            nodes.append(node)
            next_id += 1
        left_node = ApsgNode(next_id, NodeCategory.VARIABLE, stmt.index, (stmt.lhs, VarSide.LEFT))
        nodes.append(left_node)
        left_id = next_id
        next_id += 1
        for v in right_vars:
            edges.append(ApsgEdge(right_ids[v], left_id, EdgeKind.DATA_FLOW))
        edges.append(ApsgEdge(left_id, stmt.index, EdgeKind.SUBGRAPH_MERGE))
    return nodes, edges


# --- assembly ---


def assemble(method: MethodAst, patch_region: set[int] | frozenset[int]) -> Apsg:
    """Build the full graph with categorized nodes, all edges, and matrices."""
    stmts = method.statements
    if not stmts:
        raise EmptyGraph("method has no statements and no parameters")
    bad = [i for i in patch_region if i < 0 or i >= len(stmts)]
    if bad:
        raise EmptyGraph(f"patch region indices out of range: {bad}")

    for s in stmts:
        s.origin = Origin.PATCHED if s.index in patch_region else Origin.CONTEXT

    nodes: list[ApsgNode] = []
    for s in stmts:
        if s.index in patch_region:
            cat = NodeCategory.PATCH
        elif s.kind in CONTROL_KINDS:
            cat = NodeCategory.CONTROL
        else:
            cat = NodeCategory.CONTEXT
        nodes.append(ApsgNode(s.index, cat, s.index))

    var_nodes, var_edges = build_variable_subgraphs(method, next_id=len(stmts))
    nodes.extend(var_nodes)

    edges = build_cfg(method) + build_dataflow(method) + var_edges

    n_lines = len(stmts)
    n_vars = len(var_nodes)
    M_l = np.zeros((n_lines, n_lines))
    M_v = np.zeros((n_vars, n_vars))
    M_lv = np.zeros((n_lines, n_vars))
    for e in edges:
        if e.kind is EdgeKind.SUBGRAPH_MERGE:
            M_lv[e.dst, e.src - n_lines] = 1.0
        elif e.src < n_lines and e.dst < n_lines:
            M_l[e.src, e.dst] = 1.0
        else:
            M_v[e.src - n_lines, e.dst - n_lines] = 1.0

    cat_order = [NodeCategory.PATCH, NodeCategory.CONTROL, NodeCategory.CONTEXT,
                 NodeCategory.VARIABLE]
    N_l = np.zeros((n_lines, 4))
    for n in nodes[:n_lines]:
        N_l[n.node_id, cat_order.index(n.category)] = 1.0
    N_v = np.zeros((n_vars, 4))
    N_v[:, cat_order.index(NodeCategory.VARIABLE)] = 1.0

    return Apsg(
        nodes=nodes,
        edges=edges,
        method=method,
        patch_region=frozenset(patch_region),
        M_l=M_l,
        M_v=M_v,
        M_lv=M_lv,
        N_l=N_l,
        N_v=N_v,
    )


def edge_pairs_from_matrices(apsg: Apsg) -> dict[str, set[tuple[int, int]]]:
    """Edge endpoint sets recovered from M_l, M_v, M_lv.

    An M_l entry covers control and data edges jointly (the matrices are
    0/1), so line pairs come back as one set; consistency checks compare it
    against the union of the typed line edges.
    """
    n_lines = len(apsg.line_nodes)
    line_pairs = {(int(i), int(j)) for i, j in zip(*np.nonzero(apsg.M_l))}
    var_pairs = {
        (int(i) + n_lines, int(j) + n_lines) for i, j in zip(*np.nonzero(apsg.M_v))
    }
    merge_pairs = {(int(j) + n_lines, int(i)) for i, j in zip(*np.nonzero(apsg.M_lv))}
    return {"line": line_pairs, "variable": var_pairs, "merge": merge_pairs}


# --- serialization ---


def to_json_dict(apsg: Apsg) -> dict:
    nodes = []
    for n in apsg.nodes:
        nodes.append({
            "id": n.node_id,
            "category": n.category.value,
            "statement_index": n.statement_index,
            "variable": None if n.variable is None else {
                "name": n.variable[0], "side": n.variable[1].value,
            },
            "attributes": [] if n.attributes is None else [float(x) for x in n.attributes],
        })
    edges = [{"src": e.src, "dst": e.dst, "kind": e.kind.value} for e in apsg.edges]
    return {"nodes": nodes, "edges": edges}


def to_json(apsg: Apsg) -> str:
    return json.dumps(to_json_dict(apsg), indent=2) + "\n"


_DOT_SHAPES = {
    NodeCategory.PATCH: "box",
    NodeCategory.CONTROL: "diamond",
    NodeCategory.CONTEXT: "ellipse",
    NodeCategory.VARIABLE: "circle",
}

_DOT_STYLES = {
    EdgeKind.CONTROL_FLOW: "solid",
    EdgeKind.DATA_FLOW: "dashed",
    EdgeKind.SUBGRAPH_MERGE: "dotted",
}


def to_dot(apsg: Apsg) -> str:
    lines = ["digraph apsg {"]
    for n in apsg.nodes:
        if n.variable is not None:
            label = f"{n.variable[0]}:{n.variable[1].value}"
        else:
            label = f"{n.node_id}: {apsg.method.statements[n.statement_index].text}"
        label = label.replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'  n{n.node_id} [shape={_DOT_SHAPES[n.category]} label="{label}"];')
    for e in apsg.edges:
        lines.append(f"  n{e.src} -> n{e.dst} [style={_DOT_STYLES[e.kind]}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def build_graph_for_record(record) -> Apsg:
    """Parse a record's method context and assemble the graph for its patch
    region (the lines between the two markers)."""
    before, region, _after = record.context_parts()
    source = record.method_source()
    method = parse_method(source)

    n_before = len(before.split("\n")) if before else 0
    region_lines = region.split("\n") if region else []
    region_line_numbers = set(range(n_before + 1, n_before + 1 + len(region_lines)))
    patch_region = {
        s.index for s in method.statements
        if s.kind is not StatementKind.ENTRY and s.line in region_line_numbers
    }
    return assemble(method, patch_region)

