"""Toy decoder-only transformer host with adapted Q/V projections.

The host is randomly initialized (never pre-trained): embeddings plus
learned positional encodings, a stack of causal self-attention layers
whose query and value projections run through the graph adapters, ReLU
feed-forward sublayers, residual connections, and a two-class softmax
head reading the final position. Base attention and feed-forward weights
stay frozen during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tt
from .adapter import GraphLoraAdapter, compose_weight, make_adapter, modulation
from .corpus import Label, PatchRecord
from .errors import EmptyPrompt, SequenceTooLong, ShapeMismatch
from .parser import tokenize
from .tensor import Rng, Tensor

INSTRUCTION = ("You are a model responsible for assessing patch correctness. "
               "Assess whether the patch is correct")

PAD, UNK, PATCH_TOKEN, BOS = 0, 1, 2, 3
_SPECIALS = ["<PAD>", "<UNK>", "<P>", "<BOS>"]


class Vocab:
    """Token -> id map with fixed special ids 0..3."""

    def __init__(self, tokens: list[str]):
        self.tokens = list(_SPECIALS)
        seen = set(self.tokens)
        for t in tokens:
            if t not in seen:
                seen.add(t)
                self.tokens.append(t)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK)

    def encode_text(self, text: str) -> list[int]:
        return [self.id_of(t.text) for t in tokenize(text)]

    @classmethod
    def from_records(cls, records) -> "Vocab":
        toks: list[str] = [t.text for t in tokenize(INSTRUCTION)]
        for rec in records:
            toks.extend(t.text for t in tokenize(rec.method_source()))
            toks.extend(t.text for t in tokenize("\n".join(rec.patched_lines)))
            if rec.ground_truth_patch:
                toks.extend(t.text for t in tokenize("\n".join(rec.ground_truth_patch)))
        return cls(toks)

    def dump(self) -> str:
        return "\n".join(self.tokens) + "\n"

    @classmethod
    def from_dump(cls, text: str) -> "Vocab":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        v = cls.__new__(cls)
        v.tokens = lines
        v.index = {t: i for i, t in enumerate(lines)}
        return v


@dataclass
class HostConfig:
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    max_seq_len: int = 256
    rank: int = 8
    gnn_width: int = 64
    vocab_size: int = 32768  # embedding capacity; also the parameter-report host scale
    classes: int = 2

    def validate(self):
        if self.d_model % self.heads != 0:
            raise ShapeMismatch("d_model must be divisible by heads")
        if self.max_seq_len > 1024:
            raise ShapeMismatch("max_seq_len is capped at 1024")
        if self.rank > 256:
            raise ShapeMismatch("adapter rank is capped at 256")
        if self.rank % self.heads != 0:
            raise ShapeMismatch("adapter rank must be divisible by heads")


def build_prompt(record: PatchRecord, vocab: Vocab, max_seq_len: int,
                 include_ground_truth: bool = False) -> list[int]:
    """Assemble the classification prompt.

    BOS + instruction + context-before [+ ground-truth patch] + <P> +
    patched lines + <P> + context-after. When the assembly exceeds
    max_seq_len, tokens are dropped in this order until it fits: tail of
    context-after, head of context-before, tail of the ground-truth
    segment, tail of the patch body (both <P> markers always survive).
    """
    before, _region, after = record.context_parts()
    instr = vocab.encode_text(INSTRUCTION)
    ctx_before = vocab.encode_text(before)
    ctx_after = vocab.encode_text(after)
    patch = vocab.encode_text("\n".join(record.patched_lines))
    gt: list[int] = []
    if include_ground_truth and record.ground_truth_patch:
        gt = vocab.encode_text("\n".join(record.ground_truth_patch))

    fixed = 1 + len(instr) + 2  # BOS, instruction, two <P> markers
    budget = max_seq_len - fixed
    if budget < 0:
        raise EmptyPrompt(f"max_seq_len {max_seq_len} cannot hold the instruction")

    overflow = len(ctx_before) + len(ctx_after) + len(gt) + len(patch) - budget
    if overflow > 0:
        cut = min(overflow, len(ctx_after))
        ctx_after = ctx_after[: len(ctx_after) - cut]
        overflow -= cut
    if overflow > 0:
        cut = min(overflow, len(ctx_before))
        ctx_before = ctx_before[cut:]
        overflow -= cut
    if overflow > 0:
        cut = min(overflow, len(gt))
        gt = gt[: len(gt) - cut]
        overflow -= cut
    if overflow > 0:
        patch = patch[: len(patch) - overflow]

    ids = ([BOS] + instr + ctx_before + gt + [PATCH_TOKEN] + patch
           + [PATCH_TOKEN] + ctx_after)
    if len(ids) <= 1:
        raise EmptyPrompt("prompt has no content tokens")
    return ids


@dataclass
class HostLayer:
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}/w_q": self.w_q, f"{prefix}/w_k": self.w_k,
            f"{prefix}/w_v": self.w_v, f"{prefix}/w_o": self.w_o,
            f"{prefix}/ffn_w1": self.ffn_w1, f"{prefix}/ffn_b1": self.ffn_b1,
            f"{prefix}/ffn_w2": self.ffn_w2, f"{prefix}/ffn_b2": self.ffn_b2,
        }


@dataclass
class HostModel:
    config: HostConfig
    embedding: Tensor       # vocab x d_model, trainable
    positional: Tensor      # max_seq_len x d_model, trainable
    layers: list[HostLayer]  # frozen
    head_w: Tensor          # d_model x 2, trainable
    head_b: Tensor          # 1 x 2, trainable
    adapters: dict[str, GraphLoraAdapter] = field(default_factory=dict)

    def trainable(self) -> dict[str, Tensor]:
        out = {
            "host/embedding": self.embedding,
            "host/positional": self.positional,
            "host/head_w": self.head_w,
            "host/head_b": self.head_b,
        }
        for name, ad in self.adapters.items():
            out.update(ad.trainable(f"graph_lora/{name}"))
        return out

    def frozen(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"host/layer{i}"))
        for name, ad in self.adapters.items():
            out.update(ad.frozen(f"graph_lora/{name}"))
        return out


def init_host(config: HostConfig, vocab_len: int, rng: Rng,
              fusion: str = "attention") -> HostModel:
    config.validate()
    d = config.d_model
    ff = 4 * d
    layers = []
    adapters: dict[str, GraphLoraAdapter] = {}
    for i in range(config.layers):
        layer = HostLayer(
            w_q=Tensor(rng.xavier(d, d)),
            w_k=Tensor(rng.xavier(d, d)),
            w_v=Tensor(rng.xavier(d, d)),
            w_o=Tensor(rng.xavier(d, d)),
            ffn_w1=Tensor(rng.xavier(d, ff)),
            ffn_b1=Tensor(np.zeros((1, ff))),
            ffn_w2=Tensor(rng.xavier(ff, d)),
            ffn_b2=Tensor(np.zeros((1, d))),
        )
        layers.append(layer)
        adapters[f"layer{i}/q"] = make_adapter(
            layer.w_q.data, config.rank, config.heads, config.gnn_width, rng, fusion)
        adapters[f"layer{i}/v"] = make_adapter(
            layer.w_v.data, config.rank, config.heads, config.gnn_width, rng, fusion)
    size = min(vocab_len, config.vocab_size)
    return HostModel(
        config=config,
        embedding=Tensor(rng.normal(size, d, std=0.1), requires_grad=True),
        positional=Tensor(rng.normal(config.max_seq_len, d, std=0.1), requires_grad=True),
        layers=layers,
        head_w=Tensor(rng.xavier(d, config.classes), requires_grad=True),
        head_b=Tensor(np.zeros((1, config.classes)), requires_grad=True),
        adapters=adapters,
    )


def _causal_mask(n: int) -> np.ndarray:
    mask = np.zeros((n, n))
    mask[np.triu_indices(n, k=1)] = -1e30
    return mask


def _attention_block(x: Tensor, layer: HostLayer, config: HostConfig,
                     w_q_eff: Tensor, w_v_eff: Tensor) -> Tensor:
    n, d = x.shape
    dh = d // config.heads
    scale = 1.0 / np.sqrt(dh)
    mask = Tensor(_causal_mask(n))
    q = tt.matmul(x, w_q_eff)
    k = tt.matmul(x, layer.w_k)
    v = tt.matmul(x, w_v_eff)
    heads = []
    for h in range(config.heads):
        qs = tt.slice_cols(q, h * dh, (h + 1) * dh)
        ks = tt.slice_cols(k, h * dh, (h + 1) * dh)
        vs = tt.slice_cols(v, h * dh, (h + 1) * dh)
        scores = tt.add(tt.scale(tt.matmul(qs, tt.transpose(ks)), scale), mask)
        heads.append(tt.matmul(tt.softmax_rows(scores), vs))
    return tt.matmul(tt.concat_cols(heads), layer.w_o)


def forward(model: HostModel, ids: list[int], f_graph: Tensor | None,
            use_adapters: bool = True) -> Tensor:
    """Class probabilities (1 x 2) for a token id sequence.

    Each layer's input activations feed that layer's adapters as the
    sequence side of the fusion; f_graph supplies the graph side (may be
    None when fusion is "none" or adapters are disabled).
    """
    n = len(ids)
    if n == 0:
        raise EmptyPrompt("empty id sequence")
    if n > model.config.max_seq_len:
        raise SequenceTooLong(f"sequence length {n} exceeds {model.config.max_seq_len}")
    emb = tt.take_rows(model.embedding, ids)
    pos = tt.slice_rows(model.positional, 0, n)
    x = tt.add(emb, pos)
    for i, layer in enumerate(model.layers):
        if use_adapters:
            ad_q = model.adapters[f"layer{i}/q"]
            ad_v = model.adapters[f"layer{i}/v"]
            w_q_eff = compose_weight(ad_q, modulation(x, f_graph, ad_q))
            w_v_eff = compose_weight(ad_v, modulation(x, f_graph, ad_v))
        else:
            w_q_eff, w_v_eff = layer.w_q, layer.w_v
        x = tt.add(x, _attention_block(x, layer, model.config, w_q_eff, w_v_eff))
        ffn = tt.matmul(tt.relu(tt.add(tt.matmul(x, layer.ffn_w1), layer.ffn_b1)),
                        layer.ffn_w2)
        x = tt.add(x, tt.add(ffn, layer.ffn_b2))
    final = tt.slice_rows(x, n - 1, n)
    logits = tt.add(tt.matmul(final, model.head_w), model.head_b)
    return tt.softmax_rows(logits)


CLASS_CORRECT = 0
CLASS_OVERFITTING = 1


def predict_label(probs: np.ndarray) -> Label:
    """Argmax with ties resolved to the overfitting class."""
    if probs[0, CLASS_CORRECT] > probs[0, CLASS_OVERFITTING]:
        return Label.CORRECT
    return Label.OVERFITTING
