"""Language switcher: a bank of adapter sub-modules mixed by a language router.

The router maps a language id to a probability vector over the T sub-modules
(softmax of a language embedding projected by the router matrix). Each
sub-module is a stack of residual bottleneck blocks LN(relu(h W_u) W_d + h).
Training mixes all T sub-module outputs by their routing probabilities, which
keeps the router differentiable; evaluation keeps only the k most probable
sub-modules and renormalizes their weights, so k = T reproduces the training
mix exactly. With identity routing every language owns one dedicated
sub-module and the router parameters are unused.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ConfigError, DataValidationError
from .params import ParamRegistry, embedding_init, matrix_init
from .tensor import Tensor

ROUTER_PARAMS = ("switcher.lang_emb", "switcher.w_router")


def build_switcher_params(reg: ParamRegistry, cfg: ModelConfig, rng: np.random.Generator) -> None:
    d, b = cfg.d_model, cfg.bottleneck
    # near-zero language embeddings start every language at uniform routing, so
    # selection structure is driven by the data rather than by init noise
    reg.add("switcher.lang_emb", 0.01 * embedding_init(rng, cfg.n_languages, d))
    reg.add("switcher.w_router", matrix_init(rng, d, cfg.n_sub_modules))
    for t, depth in enumerate(cfg.sub_layers):
        for layer in range(depth):
            p = f"switcher.sub{t}.layer{layer}"
            reg.add(f"{p}.w_up", matrix_init(rng, d, b))
            reg.add(f"{p}.w_down", matrix_init(rng, b, d))
            reg.add(f"{p}.ln.gain", np.ones(d))
            reg.add(f"{p}.ln.bias", np.zeros(d))


def switcher_param_names(cfg: ModelConfig) -> list[str]:
    names = list(ROUTER_PARAMS)
    for t, depth in enumerate(cfg.sub_layers):
        for layer in range(depth):
            p = f"switcher.sub{t}.layer{layer}"
            names += [f"{p}.w_up", f"{p}.w_down", f"{p}.ln.gain", f"{p}.ln.bias"]
    return names


def route(lang: int, reg: ParamRegistry, cfg: ModelConfig) -> Tensor:
    """Routing probabilities for a language, differentiable w.r.t. the router."""
    if not 0 <= lang < cfg.n_languages:
        raise DataValidationError(f"unknown language id {lang}")
    if cfg.routing == "identity":
        probs = np.zeros((1, cfg.n_sub_modules))
        probs[0, lang % cfg.n_sub_modules] = 1.0
        return Tensor(probs)
    emb = T.narrow(reg["switcher.lang_emb"], 0, lang, 1)
    return T.softmax_rows(T.matmul(emb, reg["switcher.w_router"]))


def routing_probs(lang: int, reg: ParamRegistry, cfg: ModelConfig) -> np.ndarray:
    return route(lang, reg, cfg).data.reshape(-1).copy()


@dataclass(frozen=True)
class SwitchDecision:
    """Routing probabilities plus the retained top-k set with renormalized weights."""

    probs: tuple[float, ...]
    retained: tuple[int, ...]
    weights: tuple[float, ...]


def top_k_decision(probs: np.ndarray, k: int) -> SwitchDecision:
    """Keep the k most probable sub-modules; ties break toward the lower index."""
    flat = np.asarray(probs, dtype=np.float64).reshape(-1)
    t_total = flat.size
    if not 1 <= k <= t_total:
        raise ConfigError(f"top-k value {k} out of range [1, {t_total}]")
    order = np.lexsort((np.arange(t_total), -flat))
    retained = tuple(sorted(int(i) for i in order[:k]))
    kept = flat[list(retained)]
    weights = kept / kept.sum()
    return SwitchDecision(probs=tuple(flat), retained=retained, weights=tuple(weights))


def apply_submodule(t_idx: int, h: Tensor, reg: ParamRegistry, cfg: ModelConfig) -> Tensor:
    """Run one sub-module's residual bottleneck stack over (m, d) features."""
    depth = cfg.sub_layers[t_idx]
    out = h
    for layer in range(depth):
        p = f"switcher.sub{t_idx}.layer{layer}"
        branch = T.matmul(T.relu(T.matmul(out, reg[f"{p}.w_up"])), reg[f"{p}.w_down"])
        out = T.layer_norm(T.add(branch, out), reg[f"{p}.ln.gain"], reg[f"{p}.ln.bias"])
    return out


def mix_with_weights(h: Tensor, weights: list[tuple[int, Tensor | float]], reg: ParamRegistry, cfg: ModelConfig) -> Tensor:
    """Weighted sum of sub-module outputs. Zero weights are skipped so a one-hot
    mix is bitwise identical to the single sub-module's output."""
    terms = []
    for t_idx, w in weights:
        if isinstance(w, float) and w == 0.0:
            continue
        out = apply_submodule(t_idx, h, reg, cfg)
        terms.append(T.mul(out, w))
    if not terms:
        raise ConfigError("switch mix has no nonzero weights")
    return terms[0] if len(terms) == 1 else T.add_n(terms)


def switch_train(h: Tensor, lang: int, reg: ParamRegistry, cfg: ModelConfig) -> Tensor:
    """Training mix over all T sub-modules, differentiable through the router."""
    probs = route(lang, reg, cfg)
    weighted = []
    for t_idx in range(cfg.n_sub_modules):
        w = T.narrow(probs, 1, t_idx, 1)  # (1,1) broadcasts over (m,d)
        weighted.append((t_idx, w))
    terms = [T.mul(apply_submodule(t, h, reg, cfg), w) for t, w in weighted]
    return T.add_n(terms)


def switch_eval(h: Tensor, lang: int, reg: ParamRegistry, cfg: ModelConfig, k: int | None = None) -> tuple[Tensor, SwitchDecision]:
    """Evaluation mix over the retained top-k sub-modules with renormalized weights."""
    k = cfg.eval_top_k if k is None else k
    decision = top_k_decision(routing_probs(lang, reg, cfg), k)
    pairs: list[tuple[int, Tensor | float]] = [
        (t_idx, float(w)) for t_idx, w in zip(decision.retained, decision.weights)
    ]
    return mix_with_weights(h, pairs, reg, cfg), decision


def router_matrix(reg: ParamRegistry, cfg: ModelConfig) -> np.ndarray:
    """Full (T, n_languages) matrix of routing probabilities."""
    cols = [routing_probs(n, reg, cfg) for n in range(cfg.n_languages)]
    return np.stack(cols, axis=1)
