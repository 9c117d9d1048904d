"""Low-rank adapters with graph-attention fusion.

Each adapted host weight W0 (d x k) is split into a frozen magnitude row
m = ||W0||_c and a frozen direction V. The trainable pieces are a
magnitude delta, a PiSSA-initialized low-rank pair (V_down, V_up), and a
cross-attention block whose queries come from the graph features. The
attention output is mean-pooled over graph nodes and projected by a
zero-initialized W_O to a rank-space vector `a`; the direction update is
V_down diag(a) V_up, and the effective weight renormalizes columns:

    W' = (m + dm) * (V + dV) / ||V + dV||_c

Zero W_O (and zero dm) make the adapter exactly inert at initialization.
Fusion variants: "attention" (above), "weak" (mean-pooled concat of
sequence and graph features through a zero-initialized projection), and
"none" (no graph input; the low-rank pair updates the direction directly,
with the principal rank-r component moved out of the frozen direction so
initialization stays inert).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .errors import DegenerateColumn, NoConvergence, RankTooLarge, ShapeMismatch, SvdFailure
from .tensor import Tensor


def init_pissa(w0: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Principal singular components of w0, split as
    V_down = U_r sqrt(S_r) and V_up = sqrt(S_r) X_r^T, so V_down @ V_up is
    the best rank-r approximation of w0."""
    d, k = w0.shape
    if r > min(d, k):
        raise RankTooLarge(f"rank {r} exceeds min{w0.shape} = {min(d, k)}")
    try:
        u, s, x = tt.svd(w0)
    except NoConvergence as exc:
        raise SvdFailure(str(exc)) from exc
    root = np.sqrt(s[:r])
    v_down = u[:, :r] * root[None, :]
    v_up = root[:, None] * x[:, :r].T
    return v_down, v_up


@dataclass
class FusionOutput:
    a: Tensor  # 1 x r rank-space modulation
    attention_maps: list[np.ndarray] = field(default_factory=list)


@dataclass
class GraphLoraAdapter:
    """Adapter state for one host weight."""

    w0: Tensor           # frozen d x k
    m: Tensor            # frozen 1 x k, column norms of w0
    delta_m: Tensor      # trainable 1 x k
    v: Tensor            # frozen direction (w0, or w0 minus the principal
                         # component in the no-graph variant)
    v_down: Tensor       # trainable d x r
    v_up: Tensor         # trainable r x k
    w_q: list[Tensor]    # per head, d_g x r_h
    w_k: list[Tensor]    # per head, d_model x r_h
    w_v: list[Tensor]    # per head, d_model x r_h
    w_o: Tensor          # r x r, zero-initialized
    w_weak: Tensor | None  # (d_model + d_g) x r for the weak variant
    rank: int
    heads: int
    fusion: str          # attention | weak | none

    def trainable(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}/delta_m": self.delta_m,
            f"{prefix}/v_down": self.v_down,
            f"{prefix}/v_up": self.v_up,
        }
        if self.fusion == "attention":
            for i in range(self.heads):
                out[f"{prefix}/head{i}/w_q"] = self.w_q[i]
                out[f"{prefix}/head{i}/w_k"] = self.w_k[i]
                out[f"{prefix}/head{i}/w_v"] = self.w_v[i]
            out[f"{prefix}/w_o"] = self.w_o
        elif self.fusion == "weak":
            out[f"{prefix}/w_weak"] = self.w_weak
        return out

    def frozen(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}/w0": self.w0, f"{prefix}/m": self.m, f"{prefix}/v": self.v}


def make_adapter(w0: np.ndarray, rank: int, heads: int, d_g: int, rng,
                 fusion: str = "attention") -> GraphLoraAdapter:
    if fusion not in ("attention", "weak", "none"):
        raise ShapeMismatch(f"unknown fusion mode {fusion!r}")
    d, k = w0.shape
    if rank % heads != 0:
        raise ShapeMismatch(f"rank {rank} must be divisible by head count {heads}")
    r_h = rank // heads
    d_model = d

    w0_t = Tensor(w0.copy())
    m = tt.column_norms(w0_t)
    m = Tensor(m.data.copy())
    v_down, v_up = init_pissa(w0, rank)

    if fusion == "none":
        # the low-rank product applies directly, so move the principal
        # component out of the frozen direction to keep init inert
        v_frozen = w0 - v_down @ v_up
    else:
        v_frozen = w0.copy()

    return GraphLoraAdapter(
        w0=w0_t,
        m=m,
        delta_m=Tensor(np.zeros((1, k)), requires_grad=True),
        v=Tensor(v_frozen),
        v_down=Tensor(v_down, requires_grad=True),
        v_up=Tensor(v_up, requires_grad=True),
        w_q=[Tensor(rng.xavier(d_g, r_h), requires_grad=True) for _ in range(heads)],
        w_k=[Tensor(rng.xavier(d_model, r_h), requires_grad=True) for _ in range(heads)],
        w_v=[Tensor(rng.xavier(d_model, r_h), requires_grad=True) for _ in range(heads)],
        w_o=Tensor(np.zeros((rank, rank)), requires_grad=True),
        w_weak=(Tensor(np.zeros((d_model + d_g, rank)), requires_grad=True)
                if fusion == "weak" else None),
        rank=rank,
        heads=heads,
        fusion=fusion,
    )


def fuse(e: Tensor, f_graph: Tensor, adapter: GraphLoraAdapter) -> FusionOutput:
    """Cross attention: graph features query the sequence features.

    Per head: softmax((F W_Q)(E W_K)^T / sqrt(r_h)) (E W_V). Heads are
    concatenated, projected by W_O, and mean-pooled over graph nodes.
    """
    if e.shape[0] < 1 or f_graph.shape[0] < 1:
        raise ShapeMismatch("fusion needs at least one sequence and one graph row")
    r_h = adapter.rank // adapter.heads
    scale = 1.0 / math.sqrt(r_h)
    head_outs = []
    maps = []
    for i in range(adapter.heads):
        q = tt.matmul(f_graph, adapter.w_q[i])          # g x r_h
        kk = tt.matmul(e, adapter.w_k[i])               # n x r_h
        vv = tt.matmul(e, adapter.w_v[i])               # n x r_h
        scores = tt.softmax_rows(tt.scale(tt.matmul(q, tt.transpose(kk)), scale))
        maps.append(scores.data.copy())
        head_outs.append(tt.matmul(scores, vv))         # g x r_h
    concat = tt.concat_cols(head_outs)                  # g x r
    a = tt.mean_rows(tt.matmul(concat, adapter.w_o))    # 1 x r
    return FusionOutput(a=a, attention_maps=maps)


def fuse_weak(e: Tensor, f_graph: Tensor, adapter: GraphLoraAdapter) -> FusionOutput:
    """Ablation variant: mean-pooled sequence and graph features,
    concatenated and linearly projected to rank space."""
    pooled = tt.concat_cols([tt.mean_rows(e), tt.mean_rows(f_graph)])
    if adapter.w_weak is None:
        raise ShapeMismatch("adapter was not built with fusion='weak'")
    return FusionOutput(a=tt.matmul(pooled, adapter.w_weak))


def compose_weight(adapter: GraphLoraAdapter, a: Tensor | None) -> Tensor:
    """Effective weight with rank-space modulation a (None for the
    no-graph variant). Column j of the result has norm (m + dm)_j."""
    if a is not None:
        if a.shape != (1, adapter.rank):
            raise ShapeMismatch(f"a must be 1 x {adapter.rank}, got {a.shape}")
        delta_v = tt.matmul(tt.mul(adapter.v_down, a), adapter.v_up)
    else:
        delta_v = tt.matmul(adapter.v_down, adapter.v_up)
    v_new = tt.add(adapter.v, delta_v)
    norms = tt.column_norms(v_new)
    if np.any(norms.data < 1e-12):
        raise DegenerateColumn("direction update produced a zero column")
    return tt.mul(tt.add(adapter.m, adapter.delta_m), tt.div(v_new, norms))


def modulation(e: Tensor, f_graph: Tensor | None, adapter: GraphLoraAdapter) -> Tensor | None:
    """Per-example rank modulation according to the adapter's fusion mode."""
    if adapter.fusion == "attention":
        return fuse(e, f_graph, adapter).a
    if adapter.fusion == "weak":
        return fuse_weak(e, f_graph, adapter).a
    return None


def adapter_forward(x: Tensor, e: Tensor, f_graph: Tensor | None,
                    adapter: GraphLoraAdapter) -> Tensor:
    """x @ W' with W' composed from the adapter's current state."""
    return tt.matmul(x, compose_weight(adapter, modulation(e, f_graph, adapter)))
