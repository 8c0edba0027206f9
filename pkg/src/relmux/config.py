"""Run configuration: model dimensions, training knobs, and file plumbing.

Desk-scale defaults are sized so a full two-stage run finishes in minutes on a
CPU. Where a published full-scale setting exists it is recorded in a trailing
comment; the architecture is identical, only the dimensions shrink.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError


@dataclass
class ModelConfig:
    d_model: int = 64            # full-scale reference: 768
    n_blocks: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    max_len: int = 48            # full-scale reference: 256
    lang_prefix: bool = True     # prepend a [LANG_n] token after [CLS]
    n_sub_modules: int = 6       # T
    sub_layers: tuple[int, ...] = (2, 2, 2, 1, 1, 1)
    bottleneck: int = 128        # b > d; full-scale reference: 1024 at d=768
    eval_top_k: int = 3
    routing: str = "learned"     # "learned" (language-embedding router) or "identity"
    relation_pooled_from: str = "encoder"  # or "switched": pool after aggregator+switcher
    # filled in from the corpus at build time
    vocab_size: int = 0
    n_languages: int = 0
    n_relations: int = 0

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.bottleneck <= self.d_model:
            raise ConfigError("bottleneck width must exceed d_model")
        if len(self.sub_layers) != self.n_sub_modules:
            raise ConfigError("sub_layers must list one depth per sub-module")
        if any(l < 1 for l in self.sub_layers):
            raise ConfigError("sub-module depths must be >= 1")
        if not 1 <= self.eval_top_k <= self.n_sub_modules:
            raise ConfigError(f"eval_top_k must be in [1, {self.n_sub_modules}]")
        if self.routing not in ("learned", "identity"):
            raise ConfigError("routing must be 'learned' or 'identity'")
        if self.routing == "identity" and self.n_languages and self.n_sub_modules != self.n_languages:
            raise ConfigError("identity routing requires exactly one sub-module per language")
        if self.relation_pooled_from not in ("encoder", "switched"):
            raise ConfigError("relation_pooled_from must be 'encoder' or 'switched'")


@dataclass
class TrainConfig:
    alpha: float = 2.0           # entity loss weight
    beta: float = 1.0            # relation loss weight
    concat_sentences: int = 2    # s, sentences per stage-1 group
    batch_size: int = 16
    lr: float = 1e-3             # full-scale reference: 3e-5
    weight_decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    stage1_epochs: int = 5
    stage2_max_epochs: int = 8
    patience: int = 2            # early stopping on dev triple-F1
    clip_norm: float = 0.0       # 0 disables clipping
    max_concat_tokens: int = 256  # cap on s * max_len in stage-1 groups
    seed: int = 0
    log_every: int = 20

    def validate(self) -> None:
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("alpha and beta must be positive")
        if self.concat_sentences < 1:
            raise ConfigError("concat_sentences must be >= 1")
        if self.batch_size < 1 or self.stage1_epochs < 0 or self.stage2_max_epochs < 1:
            raise ConfigError("invalid epoch/batch settings")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus_dir: str = ""
    out_dir: str = ""

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["model"]["sub_layers"] = list(self.model.sub_layers)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        model_doc = dict(doc.get("model", {}))
        if "sub_layers" in model_doc:
            model_doc["sub_layers"] = tuple(model_doc["sub_layers"])
        model = ModelConfig(**model_doc)
        train = TrainConfig(**doc.get("train", {}))
        return cls(
            model=model,
            train=train,
            corpus_dir=doc.get("corpus_dir", ""),
            out_dir=doc.get("out_dir", ""),
        )

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from exc
    try:
        cfg = RunConfig.from_json(doc)
    except TypeError as exc:
        raise ConfigError(f"config {p}: unknown or malformed keys ({exc})") from exc
    cfg.validate()
    return cfg


def save_config_snapshot(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(cfg.to_json(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
