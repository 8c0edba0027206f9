"""Full model assembly: parameter construction, forward pipelines, the joint
loss, prediction, freeze plans, and checkpoint round-trips.

Two pipelines share the same parameters. Stage-1 training concatenates groups
of sentences in different languages through the cross-sentence aggregator and
trains everything jointly; stage-2 training runs single sentences through the
aggregator and the language switcher while the encoder and aggregator stay
frozen. Prediction follows the trained stage: encode, aggregate, optionally
switch with top-k routing, classify the relation under the language mask, then
decode the spans conditioned on the predicted relation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .aggregator import AGGREGATOR_PARAMS, aggregate, aggregate_single, build_aggregator_params
from .config import ModelConfig, RunConfig
from .corpus import Example, LanguageRegistry
from .encoder import (
    TokenizedSentence,
    Vocab,
    build_encoder_params,
    encode,
    encoder_param_names,
    pad_to,
    tokenize,
)
from .errors import CheckpointError, ConfigError
from .heads import (
    TriplePrediction,
    build_head_params,
    check_gold_allowed,
    decode_spans,
    entity_scores,
    head_param_names,
    masked_argmax_relation,
    relation_logits,
)
from .params import ParamRegistry, load_checkpoint, save_checkpoint
from .switcher import build_switcher_params, switch_eval, switch_train, switcher_param_names
from .tensor import Tensor

SENTINEL_SPAN = (-1, -1)


def sentence_ere_loss(relation_ce: Tensor, entity_ces: list[Tensor], alpha: float, beta: float) -> Tensor:
    """Per-sentence joint loss: (alpha/2) * sum of the four entity terms plus
    beta * the relation term. Sentences without entities contribute only the
    relation term."""
    loss = T.mul(relation_ce, beta)
    if entity_ces:
        entity_sum = entity_ces[0] if len(entity_ces) == 1 else T.add_n(entity_ces)
        loss = T.add(T.mul(entity_sum, alpha / 2.0), loss)
    return loss


def batch_mean(losses: list[Tensor]) -> Tensor:
    if not losses:
        raise ValueError("empty batch")
    total = losses[0] if len(losses) == 1 else T.add_n(losses)
    return T.mul(total, 1.0 / len(losses))


def _tally(stats: dict | None, rel_ce: Tensor, entity_ces: list[Tensor]) -> None:
    if stats is None:
        return
    stats["relation_ce"] = stats.get("relation_ce", 0.0) + rel_ce.item()
    stats["entity_ce"] = stats.get("entity_ce", 0.0) + sum(t.item() for t in entity_ces)
    stats["sentences"] = stats.get("sentences", 0) + 1


@dataclass
class FreezePlan:
    frozen: list[str]
    trainable: list[str]

    def check_partition(self, registry: ParamRegistry) -> None:
        names = set(registry.names())
        frozen, trainable = set(self.frozen), set(self.trainable)
        if frozen & trainable:
            raise ConfigError(f"freeze plan overlap: {sorted(frozen & trainable)[:4]}")
        if frozen | trainable != names:
            missing = names - (frozen | trainable)
            extra = (frozen | trainable) - names
            raise ConfigError(f"freeze plan does not cover registry: missing={sorted(missing)[:4]} extra={sorted(extra)[:4]}")


class Model:
    def __init__(self, cfg: ModelConfig, languages: LanguageRegistry, vocab: Vocab, registry: ParamRegistry, stage: int = 0):
        self.cfg = cfg
        self.languages = languages
        self.vocab = vocab
        self.registry = registry
        self.stage = stage

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, cfg: ModelConfig, languages: LanguageRegistry, init_seed: int) -> "Model":
        vocab = Vocab(languages.content_vocab(), languages.n_languages)
        cfg.vocab_size = len(vocab)
        cfg.n_languages = languages.n_languages
        cfg.n_relations = languages.n_relations
        cfg.validate()
        rng = np.random.default_rng(np.random.PCG64(init_seed))
        registry = ParamRegistry()
        build_encoder_params(registry, cfg, rng)
        build_aggregator_params(registry, cfg, rng)
        build_switcher_params(registry, cfg, rng)
        build_head_params(registry, cfg, rng)
        return cls(cfg, languages, vocab, registry)

    def stage2_freeze_plan(self) -> FreezePlan:
        frozen = encoder_param_names(self.cfg) + list(AGGREGATOR_PARAMS)
        switcher = switcher_param_names(self.cfg)
        if self.cfg.routing == "identity":
            # the routing tables are vestigial when every language owns a sub-module
            router = [n for n in switcher if n in ("switcher.lang_emb", "switcher.w_router")]
            frozen += router
            switcher = [n for n in switcher if n not in router]
        trainable = switcher + head_param_names(self.cfg)
        plan = FreezePlan(frozen=frozen, trainable=trainable)
        plan.check_partition(self.registry)
        return plan

    # -- shared forward pieces --------------------------------------------

    def tokenize(self, example: Example) -> TokenizedSentence:
        return tokenize(example, self.vocab, self.cfg.max_len, self.cfg.lang_prefix)

    def _relation_ce(self, ts: TokenizedSentence, pooled_encoder: Tensor, features: Tensor) -> Tensor:
        allowed = self.languages.schema.allowed[ts.lang]
        check_gold_allowed(ts.relation, allowed, ts.example_id)
        pooled = pooled_encoder if self.cfg.relation_pooled_from == "encoder" else T.narrow(features, 0, 0, 1)
        logits = relation_logits(pooled, self.registry)
        return T.cross_entropy(logits, ts.relation)

    def _entity_ces(self, ts: TokenizedSentence, features: Tensor) -> list[Tensor]:
        if ts.relation == 0:
            return []
        rel_emb = T.narrow(self.registry["relation.emb"], 0, ts.relation, 1)
        mask = ts.content_position_mask(features.shape[0])
        scores = entity_scores(features, rel_emb, mask, self.registry)
        golds = {
            "hs": ts.head_span[0],
            "he": ts.head_span[1],
            "ts": ts.tail_span[0],
            "te": ts.tail_span[1],
        }
        return [T.cross_entropy(scores[key], golds[key]) for key in ("hs", "he", "ts", "te")]

    # -- stage losses ------------------------------------------------------

    def stage1_group_losses(
        self, group: list[Example], alpha: float, beta: float, stats: dict | None = None
    ) -> list[Tensor]:
        """Per-sentence joint losses for one concatenation group."""
        tss = [self.tokenize(ex) for ex in group]
        m = max(ts.length for ts in tss)
        tss = [pad_to(ts, m) for ts in tss]
        encoded = [encode(ts, self.registry, self.cfg) for ts in tss]
        masks = [ts.attention_mask for ts in tss]
        fused = aggregate(encoded, masks, self.registry, self.cfg)
        losses = []
        for ts, eo, feats in zip(tss, encoded, fused):
            rel_ce = self._relation_ce(ts, eo.pooled, feats)
            entity_ces = self._entity_ces(ts, feats)
            _tally(stats, rel_ce, entity_ces)
            losses.append(sentence_ere_loss(rel_ce, entity_ces, alpha, beta))
        return losses

    def stage1_batch_loss(
        self, groups: list[list[Example]], alpha: float, beta: float, stats: dict | None = None
    ) -> Tensor:
        losses: list[Tensor] = []
        for group in groups:
            losses.extend(self.stage1_group_losses(group, alpha, beta, stats))
        return batch_mean(losses)

    def stage2_sentence_loss(
        self, example: Example, alpha: float, beta: float, stats: dict | None = None
    ) -> Tensor:
        ts = self.tokenize(example)
        eo = encode(ts, self.registry, self.cfg)
        fused = aggregate_single(eo, ts.attention_mask, self.registry, self.cfg)
        switched = switch_train(fused, ts.lang, self.registry, self.cfg)
        rel_ce = self._relation_ce(ts, eo.pooled, switched)
        entity_ces = self._entity_ces(ts, switched)
        _tally(stats, rel_ce, entity_ces)
        return sentence_ere_loss(rel_ce, entity_ces, alpha, beta)

    def stage2_batch_loss(
        self, batch: list[Example], alpha: float, beta: float, stats: dict | None = None
    ) -> Tensor:
        return batch_mean([self.stage2_sentence_loss(ex, alpha, beta, stats) for ex in batch])

    # -- prediction --------------------------------------------------------

    def predict(self, example: Example, top_k: int | None = None, dump_scores: bool = False) -> TriplePrediction:
        """Deterministic triple prediction; spans are reported in content-token
        coordinates so they compare directly with gold spans."""
        ts = self.tokenize(example)
        eo = encode(ts, self.registry, self.cfg)
        fused = aggregate_single(eo, ts.attention_mask, self.registry, self.cfg)
        if self.stage >= 2:
            features, _ = switch_eval(fused, ts.lang, self.registry, self.cfg, top_k)
        else:
            features = fused
        pooled = eo.pooled if self.cfg.relation_pooled_from == "encoder" else T.narrow(features, 0, 0, 1)
        logits = relation_logits(pooled, self.registry).data.reshape(-1)
        allowed = self.languages.schema.allowed[ts.lang]
        relation = masked_argmax_relation(logits, allowed)
        if relation == 0:
            return TriplePrediction(
                example_id=example.id,
                relation=0,
                head_span=SENTINEL_SPAN,
                tail_span=SENTINEL_SPAN,
                relation_logits=logits,
            )
        rel_emb = T.narrow(self.registry["relation.emb"], 0, relation, 1)
        mask = ts.content_position_mask(features.shape[0])
        scores = entity_scores(features, rel_emb, mask, self.registry)
        score_arrays = {key: t.data.reshape(-1).copy() for key, t in scores.items()}
        head, tail = decode_spans(score_arrays)
        shift = ts.content_start
        return TriplePrediction(
            example_id=example.id,
            relation=relation,
            head_span=(head[0] - shift, head[1] - shift),
            tail_span=(tail[0] - shift, tail[1] - shift),
            relation_logits=logits,
            entity_scores=score_arrays if dump_scores else None,
        )

    # -- checkpointing -----------------------------------------------------

    def config_snapshot(self, run_cfg: RunConfig | None = None) -> dict:
        snap = {
            "stage": self.stage,
            "model": RunConfig(model=self.cfg).to_json()["model"],
            "language_codes": [l.code for l in self.languages.languages],
            "relations": list(self.languages.schema.relations),
        }
        if run_cfg is not None:
            # filesystem paths stay out of checkpoints so identical runs into
            # different directories produce identical bytes
            run_doc = run_cfg.to_json()
            run_doc["corpus_dir"] = ""
            run_doc["out_dir"] = ""
            snap["run"] = run_doc
        return snap

    def save(self, path, run_cfg: RunConfig | None = None, extra: dict | None = None) -> None:
        save_checkpoint(path, self.config_snapshot(run_cfg), self.registry, extra)

    @classmethod
    def load(cls, path, languages: LanguageRegistry) -> tuple["Model", dict, dict | None]:
        """Rebuild a model from a checkpoint, validating every shape and the
        language/relation inventory against the supplied registry."""
        snap, arrays, extra = load_checkpoint(path)
        codes = [l.code for l in languages.languages]
        if snap.get("language_codes") != codes:
            raise CheckpointError(
                f"checkpoint languages {snap.get('language_codes')} do not match corpus {codes}"
            )
        if snap.get("relations") != list(languages.schema.relations):
            raise CheckpointError("checkpoint relation inventory does not match the corpus registry")
        model_doc = dict(snap["model"])
        model_doc["sub_layers"] = tuple(model_doc["sub_layers"])
        cfg = ModelConfig(**model_doc)
        model = cls.build(cfg, languages, init_seed=0)
        model.registry.load_arrays(arrays)
        model.stage = int(snap.get("stage", 0))
        return model, snap, extra
