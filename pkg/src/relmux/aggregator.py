"""Cross-sentence aggregator: one shared self-attention layer over concatenated
sentence representations.

During stage-1 training the hidden states of a group of sentences in different
languages are concatenated along the token axis and attended jointly, so every
token sees tokens of the other sentences; the output is split back at the
sentence boundaries. At evaluation time each sentence passes through alone.
Single head, scaled by 1/sqrt(d), no output projection or residual; PAD keys
are masked out.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .encoder import EncoderOutput
from .params import ParamRegistry, matrix_init
from .tensor import NEG_INF, Tensor

AGGREGATOR_PARAMS = ("aggregator.w_q", "aggregator.w_k", "aggregator.w_v")


def build_aggregator_params(reg: ParamRegistry, cfg: ModelConfig, rng: np.random.Generator) -> None:
    d = cfg.d_model
    for name in AGGREGATOR_PARAMS:
        reg.add(name, matrix_init(rng, d, d))


def aggregate(
    members: list[EncoderOutput],
    masks: list[np.ndarray],
    reg: ParamRegistry,
    cfg: ModelConfig,
) -> list[Tensor]:
    """Attend over the concatenation of all member sentences; split back per sentence."""
    if not members:
        raise ValueError("empty aggregation group")
    if len(members) != len(masks):
        raise ValueError("one attention mask per group member required")
    lengths = [eo.hidden.shape[0] for eo in members]
    for eo, mask in zip(members, masks):
        if mask.shape[0] != eo.hidden.shape[0]:
            raise ValueError(
                f"member boundary mismatch: hidden {eo.hidden.shape} vs mask {mask.shape}"
            )
    h_cat = members[0].hidden if len(members) == 1 else T.concat([eo.hidden for eo in members], axis=0)
    total = sum(lengths)
    key_mask = np.concatenate(masks)
    q = T.matmul(h_cat, reg["aggregator.w_q"])
    k = T.matmul(h_cat, reg["aggregator.w_k"])
    v = T.matmul(h_cat, reg["aggregator.w_v"])
    scale = 1.0 / np.sqrt(cfg.d_model)
    mask_row = Tensor(np.where(key_mask, 0.0, NEG_INF).reshape(1, total))
    attn = T.softmax_rows(T.add(T.mul(T.matmul(q, T.transpose(k)), scale), mask_row))
    fused = T.matmul(attn, v)
    if len(members) == 1:
        return [fused]
    outputs = []
    offset = 0
    for length in lengths:
        outputs.append(T.narrow(fused, 0, offset, length))
        offset += length
    return outputs


def aggregate_single(member: EncoderOutput, mask: np.ndarray, reg: ParamRegistry, cfg: ModelConfig) -> Tensor:
    """Evaluation path: a group of one sentence."""
    return aggregate([member], [mask], reg, cfg)[0]
