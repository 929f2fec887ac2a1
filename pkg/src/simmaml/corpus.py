"""Datasets: SCAN/COGS loaders, vocabularies and a synthetic systematicity grammar."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataError

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


def tokenize(text: str) -> list[str]:
    """Split on runs of whitespace. No case folding, punctuation is kept."""
    return text.split()


@dataclass(frozen=True)
class Example:
    id: int
    source: tuple[str, ...]
    target: tuple[str, ...]
    raw_target: str
    tag: str | None = None

    @property
    def source_text(self) -> str:
        return " ".join(self.source)

    @property
    def target_text(self) -> str:
        return " ".join(self.target)


class Vocab:
    """Token <-> index bijection with pad/bos/eos/unk fixed at 0..3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = len(self.itos)
            self.itos.append(token)
            self.stoi[token] = idx
        return idx

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Sequence[str], allow_unk: bool = True) -> list[int]:
        out = []
        for tok in tokens:
            idx = self.stoi.get(tok)
            if idx is None:
                if not allow_unk:
                    raise DataError(f"token {tok!r} not in vocabulary")
                idx = UNK_ID
            out.append(idx)
        return out

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]


@dataclass
class Corpus:
    examples: list[Example]
    source_vocab: Vocab
    target_vocab: Vocab
    name: str = "corpus"
    # logical-form dialect of the targets ("cogs", "synth") or None for plain action sequences
    dialect: str | None = None

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, i: int) -> Example:
        return self.examples[i]

    def __iter__(self):
        return iter(self.examples)

    def tags(self) -> list[str]:
        return sorted({e.tag for e in self.examples if e.tag is not None})

    def subset(self, ids: Sequence[int], name: str | None = None) -> "Corpus":
        """New corpus over the selected examples, re-numbered 0..n-1, sharing vocabularies."""
        examples = [
            Example(new_id, e.source, e.target, e.raw_target, e.tag)
            for new_id, e in enumerate(self.examples[i] for i in ids)
        ]
        return Corpus(examples, self.source_vocab, self.target_vocab,
                      name or self.name, self.dialect)


def build_corpus(pairs: Sequence[tuple[str, str, str | None]], name: str,
                 dialect: str | None = None, vocabs: tuple[Vocab, Vocab] | None = None) -> Corpus:
    """Turn ``(source, target, tag)`` strings into a Corpus with fresh (or extended) vocabularies."""
    src_vocab, tgt_vocab = vocabs if vocabs is not None else (Vocab(), Vocab())
    examples = []
    for i, (src, tgt, tag) in enumerate(pairs):
        s, t = tokenize(src), tokenize(tgt)
        if not s or not t:
            raise DataError(f"{name}: example {i} has an empty source or target")
        for tok in s:
            src_vocab.add(tok)
        for tok in t:
            tgt_vocab.add(tok)
        examples.append(Example(i, tuple(s), tuple(t), tgt, tag))
    return Corpus(examples, src_vocab, tgt_vocab, name, dialect)


def _read_lines(path: str | Path) -> list[tuple[int, str]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    lines = [(n, line.rstrip("\n").rstrip("\r"))
             for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1)]
    lines = [(n, line) for n, line in lines if line.strip()]
    if not lines:
        raise DataError(f"{path}: empty file")
    return lines


def parse_scan_line(line: str, lineno: int = 1) -> tuple[str, str]:
    if not line.startswith("IN:"):
        raise DataError(f"line {lineno}: missing 'IN:' marker")
    src, sep, tgt = line[len("IN:"):].partition("OUT:")
    if not sep:
        raise DataError(f"line {lineno}: missing 'OUT:' marker")
    if not src.strip():
        raise DataError(f"line {lineno}: empty command")
    if not tgt.strip():
        raise DataError(f"line {lineno}: empty action sequence")
    return src.strip(), tgt.strip()


def load_scan(path: str | Path, vocabs: tuple[Vocab, Vocab] | None = None) -> Corpus:
    """Load a SCAN file with lines ``IN: <command> OUT: <actions>``."""
    pairs = [(*parse_scan_line(line, n), None) for n, line in _read_lines(path)]
    return build_corpus(pairs, Path(path).stem, dialect=None, vocabs=vocabs)


def parse_cogs_line(line: str, lineno: int = 1) -> tuple[str, str, str]:
    fields = line.split("\t")
    if len(fields) != 3:
        raise DataError(f"line {lineno}: expected 3 tab-separated fields, got {len(fields)}")
    src, tgt, tag = fields
    if not src.strip() or not tgt.strip():
        raise DataError(f"line {lineno}: empty sentence or logical form")
    return src, tgt, tag


def load_cogs(path: str | Path, vocabs: tuple[Vocab, Vocab] | None = None,
              dialect: str = "cogs") -> Corpus:
    """Load a COGS-style TSV: ``sentence<TAB>logical form<TAB>tag``."""
    triples = [parse_cogs_line(line, n) for n, line in _read_lines(path)]
    return build_corpus(triples, Path(path).stem, dialect=dialect, vocabs=vocabs)


def write_tsv(corpus: Corpus, path: str | Path) -> None:
    lines = [f"{e.source_text}\t{e.raw_target}\t{e.tag or ''}\n" for e in corpus]
    Path(path).write_text("".join(lines), encoding="utf-8")


# --- synthetic systematicity grammar -------------------------------------------------

ROLES = ("agent", "theme")


@dataclass(frozen=True)
class SynthConfig:
    nouns: tuple[str, ...] = ("dog", "cat", "bird", "horse", "lion", "mouse", "fox", "bear",
                              "wolf", "duck")
    # (lemma, past tense, past participle)
    verbs: tuple[tuple[str, str, str], ...] = (
        ("see", "saw", "seen"), ("help", "helped", "helped"),
        ("chase", "chased", "chased"), ("find", "found", "found"),
    )
    preps: tuple[str, ...] = ("near", "beside")
    templates: tuple[str, ...] = ("active", "passive")
    # held-out (noun, role) pairs stay observed with this many verbs (0: never observed)
    support_verbs: int = 1
    n_held_out: int = 3
    n_train: int = 500
    n_gen: int = 100
    include_primitives: bool = True


def _render(template: str, verb: tuple[str, str, str], agent: str, theme: str,
            prep: str | None = None, loc: str | None = None) -> tuple[str, str]:
    lemma, past, part = verb
    if template == "active":
        return f"the {agent} {past} the {theme}", f"{lemma} ( {agent} , {theme} )"
    if template == "passive":
        return f"the {theme} was {part} by the {agent}", f"{lemma} ( {agent} , {theme} )"
    if template == "active_pp":
        return (f"the {agent} {past} the {theme} {prep} the {loc}",
                f"{lemma} ( {agent} , {theme} , {prep} ( {loc} ) )")
    raise ConfigError(f"unknown template {template!r}")


def synth_candidates(cfg: SynthConfig) -> list[tuple[str, str, str, frozenset[tuple]]]:
    """Every ``(template, sentence, logical form, role facts)`` the grammar can produce.

    Role facts are ``(noun, role)`` and ``(noun, role, verb lemma)`` tuples.
    """
    out = []
    for template in cfg.templates:
        for verb in cfg.verbs:
            for agent, theme in itertools.permutations(cfg.nouns, 2):
                roles = frozenset({(agent, "agent"), (theme, "theme"),
                                   (agent, "agent", verb[0]), (theme, "theme", verb[0])})
                if template == "active_pp":
                    for prep in cfg.preps:
                        for loc in cfg.nouns:
                            if loc in (agent, theme):
                                continue
                            out.append((template, *_render(template, verb, agent, theme, prep, loc), roles))
                else:
                    out.append((template, *_render(template, verb, agent, theme), roles))
    return out


def held_out_pairs(cfg: SynthConfig, rng: random.Random) -> list[tuple[str, ...]]:
    """Held-out role facts: ``(noun, role)`` pairs, or ``(noun, role, verb)`` triples
    covering all but ``support_verbs`` verbs when that is positive."""
    # one role per noun at most, so every noun stays observable in the other role
    nouns = rng.sample(list(cfg.nouns), cfg.n_held_out)
    pairs = sorted((n, rng.choice(ROLES)) for n in nouns)
    if cfg.support_verbs == 0:
        return pairs
    lemmas = [v[0] for v in cfg.verbs]
    out = []
    for n, r in pairs:
        seen = set(rng.sample(lemmas, cfg.support_verbs))
        out += [(n, r, v) for v in lemmas if v not in seen]
    return sorted(out)


def generate_synthetic(cfg: SynthConfig = SynthConfig(), seed: int = 0) -> tuple[Corpus, Corpus]:
    """Seeded toy semantic-parsing data with a systematicity split.

    A few (noun, role) combinations are held out: the gen split uses only
    sentences containing at least one of them, the train split none. With
    ``support_verbs > 0`` each held-out pair remains visible with that many verbs.
    Targets are bracketed predicate-argument strings (the ``synth`` dialect).
    """
    if len(cfg.nouns) < 5 or len(cfg.verbs) < 3 or len(cfg.templates) < 2:
        raise ConfigError("synthetic grammar needs >=5 nouns, >=3 verbs and >=2 templates")
    if not 1 <= cfg.n_held_out <= len(cfg.nouns) - 2:
        raise ConfigError("n_held_out must leave at least two nouns fully observed")
    if not 0 <= cfg.support_verbs < len(cfg.verbs):
        raise ConfigError("support_verbs must lie in [0, number of verbs)")
    if "active_pp" in cfg.templates and not cfg.preps:
        raise ConfigError("active_pp template requires at least one preposition")
    rng = random.Random(seed)
    held = set(held_out_pairs(cfg, rng))
    train_pool, gen_pool = [], []
    for cand in synth_candidates(cfg):
        (gen_pool if cand[3] & held else train_pool).append(cand)
    if not gen_pool or not train_pool:
        raise ConfigError("configuration yields an empty train or gen pool")

    prims = [(n, n) for n in cfg.nouns] + [(v[0], v[0]) for v in cfg.verbs] \
        if cfg.include_primitives else []
    n_sent = cfg.n_train - len(prims)
    if n_sent <= 0:
        raise ConfigError("n_train too small for the primitive examples")
    train_sents = _stratified_sample(train_pool, n_sent, rng)
    # every atom of the gen split must be seen in training
    train_words = {w for _, s, _, _ in train_sents for w in s.split()} | {p for p, _ in prims}
    gen_pool = [g for g in gen_pool if set(g[1].split()) <= train_words]
    gen_sents = _stratified_sample(gen_pool, cfg.n_gen, rng)
    if not gen_sents:
        raise ConfigError("no generalization examples survive the atom-coverage filter")

    train_pairs = [(s, t, "in_distribution") for _, s, t, _ in train_sents]
    train_pairs += [(s, t, "primitive") for s, t in prims]
    rng.shuffle(train_pairs)
    gen_pairs = []
    for _, s, t, roles in gen_sents:
        tag = ",".join(sorted({f"{f[0]}->{f[1]}" for f in roles & held}))
        gen_pairs.append((s, t, tag))

    train = build_corpus(train_pairs, "synth_train", dialect="synth")
    gen = build_corpus(gen_pairs, "synth_gen", dialect="synth",
                       vocabs=(train.source_vocab, train.target_vocab))
    return train, gen


def _stratified_sample(pool, n, rng):
    """Draw ``n`` candidates round-robin over templates so each template is equally represented."""
    buckets: dict[str, list] = {}
    for item in pool:
        buckets.setdefault(item[0], []).append(item)
    for key in sorted(buckets):
        rng.shuffle(buckets[key])
    queues = [buckets[k] for k in sorted(buckets)]
    out = []
    while len(out) < n and any(queues):
        for q in queues:
            if q and len(out) < n:
                out.append(q.pop())
    return out
