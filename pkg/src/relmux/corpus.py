"""Languages, relations, annotated examples, and the synthetic corpus generator.

The generator builds a multilingual corpus from language-independent semantic
frames (subject concept, relation, object concept). Each frame is rendered
into a language's own vocabulary and constituent order (SVO/SOV/VSO), with
optional filler words, and the gold head/tail spans are recorded after
reordering. Languages in the same family share a configurable fraction of
surface forms, which is what makes cross-lingual transfer measurable on the
synthetic data. Train/dev/test splits are disjoint by frame, and generation
is a pure function of (language specs, relation schema, seed).

Corpus files are UTF-8, one record per line of tab-separated key=value fields
(see save_examples / load_examples); the language registry and relation schema
live together in one JSON config with a schema_version field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataValidationError

SCHEMA_VERSION = 1
NO_RELATION = "no_relation"
SENTINEL_SPAN = (-1, -1)
WORD_ORDERS = ("SVO", "SOV", "VSO")

# Disjoint syllable alphabets per token role keep every surface form
# unambiguous: an entity token can never collide with a cue or filler.
_ENTITY_SYLLABLES = ("ba", "ke", "lo", "mi", "na", "pu", "ri", "sa", "to", "vu", "ze", "da")
_CUE_SYLLABLES = ("gol", "hem", "jat", "kur", "lin", "mor", "nep", "qul")
_FILLER_SYLLABLES = ("af", "ec", "ib", "ox", "ul", "ym")


@dataclass(frozen=True)
class LanguageSpec:
    """One registered language: dense id, code, typology tags, and inventory."""

    id: int
    code: str
    word_order: str
    family: str
    resource_size: int
    vocab: tuple[str, ...] = ()

    def validate(self) -> None:
        if self.word_order not in WORD_ORDERS:
            raise ConfigError(f"language {self.code}: word_order must be one of {WORD_ORDERS}")
        if self.resource_size <= 0:
            raise ConfigError(f"language {self.code}: resource_size must be positive")


@dataclass
class RelationSchema:
    """Ordered relation inventory plus the per-language allowed-relation mask."""

    relations: tuple[str, ...]
    allowed: np.ndarray  # bool, (n_languages, n_relations)

    def validate(self, n_languages: int) -> None:
        if not self.relations or self.relations[0] != NO_RELATION:
            raise ConfigError(f"relation schema must start with {NO_RELATION!r} at index 0")
        if len(set(self.relations)) != len(self.relations):
            raise ConfigError("relation names must be unique")
        if self.allowed.shape != (n_languages, len(self.relations)):
            raise ConfigError(
                f"allowed mask shape {self.allowed.shape} does not match "
                f"({n_languages}, {len(self.relations)})"
            )
        if not self.allowed[:, 0].all():
            raise ConfigError(f"{NO_RELATION} must be allowed in every language")
        if (self.allowed.sum(axis=1) < 2).any():
            raise ConfigError("every language must allow at least one content relation")

    def index(self, name: str) -> int:
        try:
            return self.relations.index(name)
        except ValueError:
            raise DataValidationError(
                f"unknown relation {name!r}; known relations: {', '.join(self.relations)}"
            ) from None


@dataclass(frozen=True)
class Example:
    """One annotated sentence: tokens, gold head/tail spans, gold relation."""

    id: str
    lang: int
    tokens: tuple[str, ...]
    head_span: tuple[int, int]
    tail_span: tuple[int, int]
    relation: int

    def validate(self, schema: RelationSchema, where: str = "") -> None:
        loc = f"{where}: " if where else ""
        if not self.tokens:
            raise DataValidationError(f"{loc}example {self.id} has no tokens")
        if not 0 <= self.relation < len(schema.relations):
            raise DataValidationError(f"{loc}example {self.id}: relation index {self.relation} out of range")
        if not schema.allowed[self.lang, self.relation]:
            raise DataValidationError(
                f"{loc}example {self.id}: relation {schema.relations[self.relation]!r} "
                f"not allowed for language {self.lang}"
            )
        if self.relation == 0:
            if self.head_span != SENTINEL_SPAN or self.tail_span != SENTINEL_SPAN:
                raise DataValidationError(f"{loc}example {self.id}: {NO_RELATION} requires sentinel spans")
            return
        for tag, (s, e) in (("head", self.head_span), ("tail", self.tail_span)):
            if not (0 <= s <= e < len(self.tokens)):
                raise DataValidationError(
                    f"{loc}example {self.id}: {tag} span ({s},{e}) invalid for {len(self.tokens)} tokens"
                )


@dataclass
class LanguageRegistry:
    """Languages + relation schema, as written next to every generated corpus."""

    languages: list[LanguageSpec]
    schema: RelationSchema

    def __post_init__(self) -> None:
        codes = [l.code for l in self.languages]
        if len(set(codes)) != len(codes):
            raise ConfigError("language codes must be unique")
        for i, lang in enumerate(self.languages):
            if lang.id != i:
                raise ConfigError(f"language ids must be dense 0..N-1, got {lang.id} at position {i}")
            lang.validate()
        self.schema.validate(len(self.languages))

    @property
    def n_languages(self) -> int:
        return len(self.languages)

    @property
    def n_relations(self) -> int:
        return len(self.schema.relations)

    def lang_by_code(self, code: str) -> LanguageSpec:
        for lang in self.languages:
            if lang.code == code:
                return lang
        raise DataValidationError(f"unknown language code {code!r}")

    def content_vocab(self) -> list[str]:
        seen: dict[str, None] = {}
        for lang in self.languages:
            for tok in lang.vocab:
                seen.setdefault(tok)
        return sorted(seen)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "languages": [
                {
                    "code": l.code,
                    "word_order": l.word_order,
                    "family": l.family,
                    "resource_size": l.resource_size,
                    "vocab": list(l.vocab),
                }
                for l in self.languages
            ],
            "relations": list(self.schema.relations),
            "allowed": {
                l.code: [r for i, r in enumerate(self.schema.relations) if self.schema.allowed[l.id, i]]
                for l in self.languages
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LanguageRegistry":
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported registry schema_version: {doc.get('schema_version')!r}")
        languages = [
            LanguageSpec(
                id=i,
                code=rec["code"],
                word_order=rec["word_order"],
                family=rec.get("family", rec["code"]),
                resource_size=int(rec["resource_size"]),
                vocab=tuple(rec.get("vocab", ())),
            )
            for i, rec in enumerate(doc["languages"])
        ]
        relations = tuple(doc["relations"])
        allowed = np.zeros((len(languages), len(relations)), dtype=bool)
        allowed_doc = doc.get("allowed", {})
        for lang in languages:
            names = allowed_doc.get(lang.code)
            if names is None:
                allowed[lang.id, :] = True
                continue
            for name in names:
                if name not in relations:
                    raise ConfigError(f"allowed mask for {lang.code} names unknown relation {name!r}")
                allowed[lang.id, relations.index(name)] = True
            allowed[lang.id, 0] = True
        return cls(languages=languages, schema=RelationSchema(relations=relations, allowed=allowed))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), sort_keys=True, indent=1) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "LanguageRegistry":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"registry file not found: {p}")
        return cls.from_json(json.loads(p.read_text(encoding="utf-8")))


@dataclass
class Corpus:
    registry: LanguageRegistry
    train: list[Example]
    dev: list[Example]
    test: list[Example]
    # frames[split][i] is the (subject, relation, object) frame behind example i,
    # and surfaces maps (language id, concept id) to the rendered entity tokens;
    # populated by the generator only, never serialized
    frames: dict[str, list[tuple[int, int, int]]] | None = None
    surfaces: dict[tuple[int, int], tuple[str, ...]] | None = None

    def split(self, name: str) -> list[Example]:
        return {"train": self.train, "dev": self.dev, "test": self.test}[name]


# ---------------------------------------------------------------------------
# Synthetic generation


@dataclass
class GeneratorConfig:
    n_entity_concepts: int = 40
    no_relation_fraction: float = 0.1
    family_share: float = 0.4  # fraction of surface forms shared within a family
    split_ratio: tuple[float, float, float] = (0.8, 0.1, 0.1)
    filler_prob: float = 0.5

    def validate(self) -> None:
        if abs(sum(self.split_ratio) - 1.0) > 1e-9:
            raise ConfigError("split ratios must sum to 1")
        if not 0.0 <= self.no_relation_fraction < 1.0:
            raise ConfigError("no_relation_fraction must be in [0, 1)")
        if not 0.0 <= self.family_share <= 1.0:
            raise ConfigError("family_share must be in [0, 1]")


class _SurfaceBank:
    """Deterministic factory of unique surface forms from a syllable alphabet."""

    def __init__(self, syllables: tuple[str, ...], rng: np.random.Generator):
        self.syllables = syllables
        self.rng = rng
        self.used: set[str] = set()

    def word(self, n_syl: int) -> str:
        # escalate word length once a syllable-count tier gets crowded
        for attempt in range(10000):
            length = n_syl + attempt // 40
            w = "".join(
                self.syllables[int(self.rng.integers(len(self.syllables)))] for _ in range(length)
            )
            if w not in self.used:
                self.used.add(w)
                return w
        raise ConfigError("surface alphabet exhausted; reduce concept count")

    def surface(self, max_tokens: int = 2) -> tuple[str, ...]:
        n = 1 + int(self.rng.integers(max_tokens))
        return tuple(self.word(2) for _ in range(n))


def _resolve_surfaces(
    languages: list[LanguageSpec],
    n_concepts: int,
    relations: tuple[str, ...],
    family_share: float,
    rng: np.random.Generator,
) -> tuple[dict, dict, dict]:
    """Assign entity/cue/filler surface forms per language with family sharing.

    For each concept (or relation cue) and family, one coin decides whether the
    whole family shares a common surface; otherwise each member language gets
    its own. Different families never share forms.
    """
    families = sorted({l.family for l in languages})
    ent_bank = _SurfaceBank(_ENTITY_SYLLABLES, rng)
    cue_bank = _SurfaceBank(_CUE_SYLLABLES, rng)
    fill_bank = _SurfaceBank(_FILLER_SYLLABLES, rng)

    entity_surface: dict[tuple[int, int], tuple[str, ...]] = {}
    for c in range(n_concepts):
        for fam in families:
            members = [l for l in languages if l.family == fam]
            if rng.random() < family_share:
                shared = ent_bank.surface()
                for l in members:
                    entity_surface[(l.id, c)] = shared
            else:
                for l in members:
                    entity_surface[(l.id, c)] = ent_bank.surface()

    cue_surface: dict[tuple[int, int], tuple[str, ...]] = {}
    for r in range(1, len(relations)):
        for fam in families:
            members = [l for l in languages if l.family == fam]
            if rng.random() < family_share:
                shared = cue_bank.surface()
                for l in members:
                    cue_surface[(l.id, r)] = shared
            else:
                for l in members:
                    cue_surface[(l.id, r)] = cue_bank.surface()

    fillers: dict[int, list[str]] = {}
    for fam in families:
        members = [l for l in languages if l.family == fam]
        shared_pool = [fill_bank.word(1) for _ in range(3)]
        for l in members:
            own = [fill_bank.word(1) for _ in range(3)]
            fillers[l.id] = shared_pool + own
    return entity_surface, cue_surface, fillers


def _split_counts(total: int, ratio: tuple[float, float, float]) -> tuple[int, int, int]:
    n_dev = round(total * ratio[1])
    n_test = round(total * ratio[2])
    n_train = total - n_dev - n_test
    if n_train <= 0:
        raise ConfigError(f"resource size {total} too small for split ratio {ratio}")
    return n_train, n_dev, n_test


def _render(
    lang: LanguageSpec,
    subj: tuple[str, ...],
    obj: tuple[str, ...],
    cue: tuple[str, ...] | None,
    fillers: list[str],
    filler_prob: float,
    rng: np.random.Generator,
) -> tuple[list[str], tuple[int, int], tuple[int, int]]:
    """Order constituents per the language's word order and record entity spans."""
    s_part = ("S", list(subj))
    o_part = ("O", list(obj))
    if cue is None:
        parts = [s_part, o_part]
    else:
        v_part = ("V", list(cue))
        parts = {
            "SVO": [s_part, v_part, o_part],
            "SOV": [s_part, o_part, v_part],
            "VSO": [v_part, s_part, o_part],
        }[lang.word_order]

    tokens: list[str] = []
    head_span = tail_span = SENTINEL_SPAN
    for role, words in parts:
        if rng.random() < filler_prob:
            tokens.append(fillers[int(rng.integers(len(fillers)))])
        start = len(tokens)
        tokens.extend(words)
        end = len(tokens) - 1
        if role == "S":
            head_span = (start, end)
        elif role == "O":
            tail_span = (start, end)
    if rng.random() < filler_prob:
        tokens.append(fillers[int(rng.integers(len(fillers)))])
    return tokens, head_span, tail_span


def generate_corpus(
    languages: list[LanguageSpec],
    schema: RelationSchema,
    seed: int,
    gen: GeneratorConfig | None = None,
) -> Corpus:
    """Deterministically synthesize a multilingual corpus with skewed resources.

    Frames are shared across languages (the same triple can surface in several
    languages) but never across splits. Roughly ``no_relation_fraction`` of
    each language's sentences express no relation and carry sentinel spans.
    """
    gen = gen or GeneratorConfig()
    gen.validate()
    if not languages:
        raise ConfigError("need at least one language")
    registry_probe = LanguageRegistry(languages=list(languages), schema=schema)  # validates
    rng = np.random.default_rng(np.random.PCG64(seed))

    relations = schema.relations
    content_rel = list(range(1, len(relations)))
    entity_surface, cue_surface, fillers = _resolve_surfaces(
        registry_probe.languages, gen.n_entity_concepts, relations, gen.family_share, rng
    )

    # Per-language sentence budgets.
    budgets = {}
    for lang in languages:
        n_train, n_dev, n_test = _split_counts(lang.resource_size, gen.split_ratio)
        budgets[lang.id] = {"train": n_train, "dev": n_dev, "test": n_test}
    need_rel: dict[tuple[int, str], int] = {}
    need_null: dict[tuple[int, str], int] = {}
    for lang in languages:
        for split_name, total in budgets[lang.id].items():
            n_null = round(total * gen.no_relation_fraction)
            need_null[(lang.id, split_name)] = n_null
            need_rel[(lang.id, split_name)] = total - n_null

    # Frame pools, split-partitioned for disjointness. Top up until every
    # language can fill its budget from frames whose relation it allows.
    def draw_frame(existing: set, null: bool) -> tuple[int, int, int]:
        for _ in range(100000):
            r = 0 if null else content_rel[int(rng.integers(len(content_rel)))]
            s = int(rng.integers(gen.n_entity_concepts))
            o = int(rng.integers(gen.n_entity_concepts))
            if s == o:
                continue
            f = (s, r, o)
            if f not in existing:
                existing.add(f)
                return f
        raise ConfigError("frame space exhausted; raise n_entity_concepts")

    def build_pools(null: bool, needs: dict) -> dict[str, list]:
        pools: dict[str, list] = {"train": [], "dev": [], "test": []}
        seen: set = set()
        for split_name in ("train", "dev", "test"):
            for _ in range(max(needs[(l.id, split_name)] for l in languages)):
                pools[split_name].append(draw_frame(seen, null))
        # top up per-language shortfalls caused by the allowed-relation mask
        for split_name in ("train", "dev", "test"):
            for lang in languages:
                def usable() -> int:
                    return sum(1 for (_, r, _) in pools[split_name] if schema.allowed[lang.id, r])

                guard = 0
                while usable() < needs[(lang.id, split_name)]:
                    pools[split_name].append(draw_frame(seen, null))
                    guard += 1
                    if guard > 200000:
                        raise ConfigError("cannot satisfy per-language frame demand")
        return pools

    rel_pools = build_pools(False, need_rel)
    null_pools = build_pools(True, need_null)

    splits: dict[str, list[Example]] = {"train": [], "dev": [], "test": []}
    frames_used: dict[str, list[tuple[int, int, int]]] = {"train": [], "dev": [], "test": []}
    for split_name in ("train", "dev", "test"):
        for lang in languages:
            frames = [f for f in rel_pools[split_name] if schema.allowed[lang.id, f[1]]]
            order = rng.permutation(len(frames))
            chosen = [frames[i] for i in order[: need_rel[(lang.id, split_name)]]]
            nulls = list(null_pools[split_name])
            order = rng.permutation(len(nulls))
            chosen += [nulls[i] for i in order[: need_null[(lang.id, split_name)]]]
            order = rng.permutation(len(chosen))
            for serial, i in enumerate(order):
                s, r, o = chosen[i]
                frames_used[split_name].append((s, r, o))
                cue = cue_surface[(lang.id, r)] if r != 0 else None
                tokens, head, tail = _render(
                    lang,
                    entity_surface[(lang.id, s)],
                    entity_surface[(lang.id, o)],
                    cue,
                    fillers[lang.id],
                    gen.filler_prob,
                    rng,
                )
                if r == 0:
                    head = tail = SENTINEL_SPAN
                splits[split_name].append(
                    Example(
                        id=f"{lang.code}-{split_name}-{serial:05d}",
                        lang=lang.id,
                        tokens=tuple(tokens),
                        head_span=head,
                        tail_span=tail,
                        relation=r,
                    )
                )

    # realized per-language vocabularies
    realized: list[LanguageSpec] = []
    for lang in languages:
        inventory: dict[str, None] = {}
        for (lid, _), surf in sorted(entity_surface.items()):
            if lid == lang.id:
                for tok in surf:
                    inventory.setdefault(tok)
        for (lid, _), surf in sorted(cue_surface.items()):
            if lid == lang.id:
                for tok in surf:
                    inventory.setdefault(tok)
        for tok in fillers[lang.id]:
            inventory.setdefault(tok)
        realized.append(
            LanguageSpec(
                id=lang.id,
                code=lang.code,
                word_order=lang.word_order,
                family=lang.family,
                resource_size=lang.resource_size,
                vocab=tuple(sorted(inventory)),
            )
        )
    registry = LanguageRegistry(languages=realized, schema=schema)
    corpus = Corpus(
        registry=registry,
        train=splits["train"],
        dev=splits["dev"],
        test=splits["test"],
        frames=frames_used,
        surfaces=dict(entity_surface),
    )
    for split_name in ("train", "dev", "test"):
        for ex in corpus.split(split_name):
            ex.validate(schema, where=split_name)
    return corpus


# ---------------------------------------------------------------------------
# File I/O


def _format_span(span: tuple[int, int]) -> str:
    return f"{span[0]}:{span[1]}"


def _parse_span(text: str, lineno: int) -> tuple[int, int]:
    try:
        s, e = text.split(":")
        return int(s), int(e)
    except ValueError:
        raise DataValidationError(f"line {lineno}: malformed span {text!r}") from None


def save_examples(path: str | Path, examples: list[Example], registry: LanguageRegistry) -> None:
    lines = [f"schema_version={SCHEMA_VERSION}"]
    for ex in examples:
        code = registry.languages[ex.lang].code
        rel = registry.schema.relations[ex.relation]
        lines.append(
            "\t".join(
                (
                    f"id={ex.id}",
                    f"lang={code}",
                    f"tokens={' '.join(ex.tokens)}",
                    f"head={_format_span(ex.head_span)}",
                    f"tail={_format_span(ex.tail_span)}",
                    f"rel={rel}",
                )
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_examples(path: str | Path, registry: LanguageRegistry) -> list[Example]:
    """Parse and validate a corpus file; errors carry 1-based line numbers."""
    p = Path(path)
    if not p.exists():
        raise DataValidationError(f"corpus file not found: {p}")
    examples: list[Example] = []
    with p.open(encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != f"schema_version={SCHEMA_VERSION}":
            raise DataValidationError(f"{p}: line 1: expected schema_version={SCHEMA_VERSION}, got {header!r}")
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields: dict[str, str] = {}
            for part in line.split("\t"):
                if "=" not in part:
                    raise DataValidationError(f"{p}: line {lineno}: malformed field {part!r}")
                key, value = part.split("=", 1)
                fields[key] = value
            missing = {"id", "lang", "tokens", "head", "tail", "rel"} - set(fields)
            if missing:
                raise DataValidationError(f"{p}: line {lineno}: missing fields {sorted(missing)}")
            lang = registry.lang_by_code(fields["lang"])
            relation = registry.schema.index(fields["rel"])
            ex = Example(
                id=fields["id"],
                lang=lang.id,
                tokens=tuple(fields["tokens"].split()),
                head_span=_parse_span(fields["head"], lineno),
                tail_span=_parse_span(fields["tail"], lineno),
                relation=relation,
            )
            ex.validate(registry.schema, where=f"{p}: line {lineno}")
            examples.append(ex)
    return examples


def save_corpus(out_dir: str | Path, corpus: Corpus) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus.registry.save(out / "registry.json")
    for split_name in ("train", "dev", "test"):
        save_examples(out / f"{split_name}.txt", corpus.split(split_name), corpus.registry)


def load_corpus(corpus_dir: str | Path) -> Corpus:
    d = Path(corpus_dir)
    registry = LanguageRegistry.load(d / "registry.json")
    return Corpus(
        registry=registry,
        train=load_examples(d / "train.txt", registry),
        dev=load_examples(d / "dev.txt", registry),
        test=load_examples(d / "test.txt", registry),
    )


# ---------------------------------------------------------------------------
# Stage-1 group sampling


def sample_stage1_batch(
    examples: list[Example],
    s: int,
    batch_size: int,
    rng: np.random.Generator,
) -> list[list[Example]]:
    """Sample ``batch_size`` groups of ``s`` sentences with pairwise-distinct
    languages: uniform over languages first, then uniform within the language.
    """
    if s < 1:
        raise ConfigError("group size s must be >= 1")
    by_lang: dict[int, list[Example]] = {}
    for ex in examples:
        by_lang.setdefault(ex.lang, []).append(ex)
    lang_ids = sorted(by_lang)
    if s > len(lang_ids):
        raise ConfigError(f"s={s} exceeds the {len(lang_ids)} languages present in the split")
    groups: list[list[Example]] = []
    for _ in range(batch_size):
        picked = rng.choice(len(lang_ids), size=s, replace=False)
        group = []
        for i in picked:
            sentences = by_lang[lang_ids[int(i)]]
            group.append(sentences[int(rng.integers(len(sentences)))])
        groups.append(group)
    return groups
