"""Graph feature extraction over the patch semantic graph.

Two-level scheme: attribute fusion projects (seed features ++ attributes)
to the hidden width, a convolution over the variable sub-graphs produces
per-variable features, those aggregate into their owning statement nodes,
and a final convolution over the line graph yields the per-line feature
matrix consumed by the adapters.

Both convolutions use symmetric normalization with self-loops
(D^-1/2 (M+I) D^-1/2) after symmetrizing the directed adjacency; without
self-loops isolated nodes would make the normalization singular.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .errors import ShapeMismatch
from .graph import Apsg, NodeCategory
from .tensor import Tensor


@dataclass
class GnnParams:
    linear1_w: Tensor  # (d_model + 4 + attr_width) x d_g
    linear1_b: Tensor  # 1 x d_g
    w_v: Tensor        # d_g x d_g
    linear2_w: Tensor  # 2 d_g x d_g
    linear2_b: Tensor  # 1 x d_g
    w_l: Tensor        # d_g x d_g

    def named(self, prefix: str = "gnn") -> dict[str, Tensor]:
        return {
            f"{prefix}/linear1_w": self.linear1_w,
            f"{prefix}/linear1_b": self.linear1_b,
            f"{prefix}/w_v": self.w_v,
            f"{prefix}/linear2_w": self.linear2_w,
            f"{prefix}/linear2_b": self.linear2_b,
            f"{prefix}/w_l": self.w_l,
        }


def init_gnn(rng, d_model: int, attr_width: int, d_g: int) -> GnnParams:
    """Seeded init. The merge projection starts as identity on the line
    block and zero on the aggregated block, so statements without
    sub-graphs keep their features untouched at initialization."""
    d_in = d_model + 4 + attr_width
    linear2 = np.zeros((2 * d_g, d_g))
    linear2[:d_g, :] = np.eye(d_g)
    return GnnParams(
        linear1_w=Tensor(rng.xavier(d_in, d_g), requires_grad=True),
        linear1_b=Tensor(np.zeros((1, d_g)), requires_grad=True),
        w_v=Tensor(rng.xavier(d_g, d_g), requires_grad=True),
        linear2_w=Tensor(linear2, requires_grad=True),
        linear2_b=Tensor(np.zeros((1, d_g)), requires_grad=True),
        w_l=Tensor(rng.xavier(d_g, d_g), requires_grad=True),
    )


@dataclass
class GraphBatch:
    """Per-example constants: seed ingredients, attributes, adjacency."""

    line_avg: np.ndarray   # (L x vocab) token averaging matrix
    var_avg: np.ndarray    # (V x vocab)
    cat_l: np.ndarray      # (L x 4) category one-hots
    cat_v: np.ndarray      # (V x 4)
    A_l: np.ndarray        # (L x attr_width)
    A_v: np.ndarray        # (V x attr_width)
    M_l: np.ndarray        # (L x L)
    M_v: np.ndarray        # (V x V)
    M_lv: np.ndarray       # (L x V)
    norm_l: np.ndarray     # precomputed normalized adjacency (L x L)
    norm_v: np.ndarray     # (V x V)


def normalized_adjacency(m: np.ndarray) -> np.ndarray:
    """Symmetrize, add self-loops, and apply D^-1/2 M D^-1/2."""
    n = m.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    sym = np.maximum(m, m.T)
    with_loops = np.minimum(sym + np.eye(n), 1.0)
    deg = with_loops.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return with_loops * inv_sqrt[:, None] * inv_sqrt[None, :]


def make_graph_batch(apsg: Apsg, vocab, drop_categories=frozenset(),
                     use_attributes: bool = True) -> GraphBatch:
    """Freeze a graph into the constant matrices the forward pass needs.

    drop_categories removes whole node categories (never patch nodes) for
    the node-ablation experiments; use_attributes=False zeroes A.
    """
    if apsg.A is None:
        raise ShapeMismatch("attributes must be encoded before batching")
    drop = {c.lower() for c in drop_categories}
    bad = drop - {"variable", "control", "context"}
    if bad:
        raise ShapeMismatch(f"cannot drop node categories: {sorted(bad)}")

    keep_line = [n for n in apsg.line_nodes if n.category.value not in drop]
    if not keep_line:
        keep_line = [n for n in apsg.line_nodes if n.category is NodeCategory.PATCH]
    keep_var = [] if "variable" in drop else apsg.variable_nodes
    line_ids = [n.node_id for n in keep_line]
    var_ids = [n.node_id for n in keep_var]
    n_lines_total = len(apsg.line_nodes)

    li = np.array(line_ids, dtype=int)
    vi = np.array([v - n_lines_total for v in var_ids], dtype=int)
    M_l = apsg.M_l[np.ix_(li, li)] if len(li) else np.zeros((0, 0))
    M_v = apsg.M_v[np.ix_(vi, vi)] if len(vi) else np.zeros((0, 0))
    if len(li) and len(vi):
        M_lv = apsg.M_lv[np.ix_(li, vi)]
    else:
        M_lv = np.zeros((len(li), len(vi)))

    vsize = len(vocab)
    line_avg = np.zeros((len(li), vsize))
    for row, node in enumerate(keep_line):
        stmt = apsg.method.statements[node.statement_index]
        ids = [vocab.id_of(t.text) for t in stmt.tokens]
        for tid in ids:
            line_avg[row, tid] += 1.0 / len(ids)
    var_avg = np.zeros((len(vi), vsize))
    for row, node in enumerate(keep_var):
        var_avg[row, vocab.id_of(node.variable[0])] = 1.0

    attrs = apsg.A if use_attributes else np.zeros_like(apsg.A)
    A_l = attrs[li] if len(li) else np.zeros((0, apsg.A.shape[1]))
    A_v = attrs[[v for v in var_ids]] if len(vi) else np.zeros((0, apsg.A.shape[1]))

    cat_order = ["patch", "control", "context", "variable"]
    cat_l = np.zeros((len(li), 4))
    for row, node in enumerate(keep_line):
        cat_l[row, cat_order.index(node.category.value)] = 1.0
    cat_v = np.zeros((len(vi), 4))
    cat_v[:, 3] = 1.0

    return GraphBatch(
        line_avg=line_avg, var_avg=var_avg, cat_l=cat_l, cat_v=cat_v,
        A_l=A_l, A_v=A_v, M_l=M_l, M_v=M_v, M_lv=M_lv,
        norm_l=normalized_adjacency(M_l), norm_v=normalized_adjacency(M_v),
    )


# --- forward pieces ---


def fuse_attributes(n_feat: Tensor, attrs: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Project (node features ++ attributes) to the hidden width."""
    if n_feat.shape[0] != attrs.shape[0]:
        raise ShapeMismatch("node and attribute row counts differ")
    return tt.add(tt.matmul(tt.concat_cols([n_feat, attrs]), w), b)


def subgraph_conv(f_v: Tensor, norm_v: np.ndarray, w_v: Tensor) -> Tensor:
    if f_v.shape[0] != norm_v.shape[0]:
        raise ShapeMismatch("adjacency and feature row counts differ")
    return tt.relu(tt.matmul(tt.matmul(Tensor(norm_v), f_v), w_v))


def merge_subgraphs(f_l: Tensor, h_v: Tensor, m_lv: np.ndarray,
                    w2: Tensor, b2: Tensor) -> Tensor:
    if m_lv.shape != (f_l.shape[0], h_v.shape[0]):
        raise ShapeMismatch(
            f"incidence shape {m_lv.shape} does not match lines x variables "
            f"({f_l.shape[0]} x {h_v.shape[0]})"
        )
    aggregated = tt.matmul(Tensor(m_lv), h_v)
    return tt.add(tt.matmul(tt.concat_cols([f_l, aggregated]), w2), b2)


def line_conv(h_l: Tensor, norm_l: np.ndarray, w_l: Tensor) -> Tensor:
    if h_l.shape[0] != norm_l.shape[0]:
        raise ShapeMismatch("adjacency and feature row counts differ")
    return tt.relu(tt.matmul(tt.matmul(Tensor(norm_l), h_l), w_l))


def graph_features(batch: GraphBatch, params: GnnParams, embedding: Tensor) -> Tensor:
    """Full pass: returns the (lines x d_g) graph feature matrix."""
    d_g = params.w_l.shape[0]
    n_l = tt.concat_cols([tt.matmul(Tensor(batch.line_avg), embedding),
                          Tensor(batch.cat_l)])
    f_l = fuse_attributes(n_l, Tensor(batch.A_l), params.linear1_w, params.linear1_b)

    if batch.var_avg.shape[0] > 0:
        n_v = tt.concat_cols([tt.matmul(Tensor(batch.var_avg), embedding),
                              Tensor(batch.cat_v)])
        f_v = fuse_attributes(n_v, Tensor(batch.A_v), params.linear1_w, params.linear1_b)
        h_v = subgraph_conv(f_v, batch.norm_v, params.w_v)
    else:
        h_v = Tensor(np.zeros((0, d_g)))

    h_l = merge_subgraphs(f_l, h_v, batch.M_lv, params.linear2_w, params.linear2_b)
    return line_conv(h_l, batch.norm_l, params.w_l)
