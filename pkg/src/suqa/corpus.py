"""HotpotQA / R4C ingestion and a seeded synthetic two-hop task.

The synthetic task keeps the HotpotQA distractor-setting shape: two
supporting paragraphs (bridge-entity chain) mixed with distractor
paragraphs. Supporting sentences of the second hop may use pronouns whose
referent sits in an earlier sentence, so an extractive explanation is not
self-contained, while the gold explanation resolves them.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from suqa.errors import InvalidArgument, ParseError
from suqa.textkit import split_sentences, tokenize

logger = logging.getLogger(__name__)


@dataclass
class Paragraph:
    title: str
    sentences: list[str]

    def text(self) -> str:
        return " ".join(self.sentences)


@dataclass
class QAInstance:
    id: str
    question: str
    paragraphs: list[Paragraph]
    gold_answer: str
    supporting_facts: list[tuple[str, int]]
    gold_explanation: list[str] | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.gold_answer:
            raise InvalidArgument(f"{self.id}: gold_answer must be nonempty")
        by_title = {p.title: p for p in self.paragraphs}
        for title, idx in self.supporting_facts:
            para = by_title.get(title)
            if para is None:
                raise InvalidArgument(f"{self.id}: supporting fact title {title!r} not among paragraphs")
            if not 0 <= idx < len(para.sentences):
                raise InvalidArgument(f"{self.id}: sentence index {idx} out of range for {title!r}")

    @property
    def supporting_titles(self) -> list[str]:
        seen: list[str] = []
        for title, _ in self.supporting_facts:
            if title not in seen:
                seen.append(title)
        return seen

    def supporting_indices(self) -> list[int]:
        titles = set(self.supporting_titles)
        return [i for i, p in enumerate(self.paragraphs) if p.title in titles]

    def supporting_fact_sentences(self) -> list[str]:
        by_title = {p.title: p for p in self.paragraphs}
        return [by_title[t].sentences[i] for t, i in self.supporting_facts]

    def to_record(self) -> dict:
        rec: dict[str, Any] = {
            "_id": self.id,
            "question": self.question,
            "answer": self.gold_answer,
            "context": [[p.title, list(p.sentences)] for p in self.paragraphs],
            "supporting_facts": [[t, i] for t, i in self.supporting_facts],
        }
        if self.gold_explanation is not None:
            rec["gold_explanation"] = list(self.gold_explanation)
        return rec


def instance_from_record(rec: Any) -> QAInstance:
    rid = rec.get("_id", "<no id>") if isinstance(rec, dict) else "<not an object>"
    try:
        context = rec["context"]
        sfs = rec["supporting_facts"]
        paragraphs = [Paragraph(str(title), [str(s) for s in sents]) for title, sents in context]
        facts = [(str(t), int(i)) for t, i in sfs]
        expl = rec.get("gold_explanation")
        return QAInstance(
            id=str(rec["_id"]),
            question=str(rec["question"]),
            paragraphs=paragraphs,
            gold_answer=str(rec["answer"]),
            supporting_facts=facts,
            gold_explanation=[str(s) for s in expl] if expl is not None else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed HotpotQA record {rid}: {exc!r}") from exc


def load_hotpotqa(path: str | Path) -> list[QAInstance]:
    """Read a distractor-setting file (JSON array of records)."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a JSON array of records")
    return [instance_from_record(rec) for rec in data]


def load_corpus(path: str | Path) -> list[QAInstance]:
    """HotpotQA-style array, or an object whose ``instances`` key holds one."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(data, dict) and isinstance(data.get("instances"), list):
        data = data["instances"]
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a JSON array of records or an object with 'instances'")
    return [instance_from_record(rec) for rec in data]


def save_instances(instances: list[QAInstance], path: str | Path) -> None:
    Path(path).write_text(
        json.dumps([inst.to_record() for inst in instances], indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )


# -------------------------------------------------------------------- R4C


@dataclass(frozen=True)
class Triplet:
    head: str
    relation: str
    tail: str

    def __post_init__(self) -> None:
        if not (self.head.strip() and self.relation.strip() and self.tail.strip()):
            raise InvalidArgument(f"triplet fields must be nonempty: {self!r}")


def _parse_triplet(raw: Any, qid: str) -> Triplet:
    if isinstance(raw, dict):
        parts = [raw.get("head"), raw.get("relation"), raw.get("tail")]
    elif isinstance(raw, (list, tuple)) and len(raw) == 3:
        parts = list(raw)
    else:
        raise ParseError(f"{qid}: malformed triplet {raw!r}")
    if not all(isinstance(p, str) and p.strip() for p in parts):
        raise ParseError(f"{qid}: malformed triplet {raw!r}")
    return Triplet(*parts)


def load_r4c(path: str | Path, known_ids: set[str] | None = None) -> dict[str, list[list[Triplet]]]:
    """Read R4C derivations: id -> per-annotator list of triplets.

    Ids missing from ``known_ids`` (when given) are kept and logged.
    """
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: expected an object keyed by question id")
    out: dict[str, list[list[Triplet]]] = {}
    for qid, derivations in data.items():
        if not isinstance(derivations, list):
            raise ParseError(f"{qid}: expected a list of derivations")
        out[qid] = [[_parse_triplet(t, qid) for t in deriv] for deriv in derivations]
        if known_ids is not None and qid not in known_ids:
            logger.warning("R4C id %s has no HotpotQA instance", qid)
    return out


def _squash(text: str) -> str:
    return " ".join(text.split())


def flatten_triplets(derivation: list[Triplet]) -> list[str]:
    """One sentence per triplet: ``head relation tail .``"""
    if not derivation:
        raise InvalidArgument("cannot flatten an empty derivation")
    return [f"{_squash(t.head)} {_squash(t.relation)} {_squash(t.tail)} ." for t in derivation]


def attach_r4c(
    instances: list[QAInstance],
    r4c: dict[str, list[list[Triplet]]],
    annotator: int = 0,
) -> list[QAInstance]:
    """Set gold_explanation from one annotator's derivation; returns the annotated subset."""
    out = []
    for inst in instances:
        derivs = r4c.get(inst.id)
        if not derivs:
            continue
        deriv = derivs[min(annotator, len(derivs) - 1)]
        if not deriv:
            continue
        inst.gold_explanation = flatten_triplets(deriv)
        out.append(inst)
    return out


# -------------------------------------------------------------- synthetic

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_NUCLEI = ("a", "e", "i", "o", "u")
_CODAS = ("n", "r", "l", "s", "th", "x", "m", "d")

RELATIONS = ("mentor", "rival", "neighbor", "cousin", "partner", "coach")
ATTRIBUTE_TYPES = ("boat", "dog", "horse", "guitar", "kite", "lamp")
ATTRIBUTE_VALUES = (
    "Onyx", "Amber", "Cobalt", "Jasper", "Maple", "Pebble", "Quartz", "Saffron",
    "Tango", "Velvet", "Willow", "Zephyr", "Biscuit", "Comet", "Ember", "Flint",
    "Ginger", "Harbor", "Indigo", "Juniper", "Kestrel", "Lotus", "Marble", "Nutmeg",
)
CITIES = ("Arlen", "Brisk", "Corvo", "Dunmore", "Elk", "Fallow", "Greyhaven", "Hollis", "Ivers", "Jarrow")
PLACES = ("a farm", "a castle", "a harbor town", "a mill", "a valley", "an island")
PRONOUN_SUBJECT = {"m": "He", "f": "She"}

QUESTION_RE = re.compile(r"^which (\w+) does the (\w+) of (\w+) have \?$")


def default_vocab(n: int = 120) -> list[str]:
    names = []
    for o in _ONSETS:
        for v in _NUCLEI:
            for c in _CODAS:
                for o2 in ("", "d", "l", "r"):
                    names.append((o + v + c + (o2 + "a" if o2 else "")).capitalize())
    rng = random.Random(1234)
    rng.shuffle(names)
    return sorted(names[:n])


@dataclass(frozen=True)
class SyntheticSpec:
    rng_seed: int = 0
    n_instances: int = 100
    n_distractor_sentences: int = 1
    vocab: tuple[str, ...] = field(default_factory=lambda: tuple(default_vocab()))
    pronoun_rate: float = 0.5
    n_distractor_paragraphs: int = 8
    verbose_rate: float = 0.5

    def __post_init__(self) -> None:
        if self.n_instances < 0:
            raise InvalidArgument("n_instances must be >= 0")
        if self.n_distractor_sentences < 0 or self.n_distractor_paragraphs < 0:
            raise InvalidArgument("distractor counts must be >= 0")
        if not 0.0 <= self.pronoun_rate <= 1.0 or not 0.0 <= self.verbose_rate <= 1.0:
            raise InvalidArgument("rates must lie in [0, 1]")
        object.__setattr__(self, "vocab", tuple(self.vocab))


def _filler(rng: random.Random, subj: str) -> str:
    kind = rng.randrange(3)
    if kind == 0:
        return f"{subj} grew up near {rng.choice(PLACES)} ."
    if kind == 1:
        return f"{subj} visited {rng.choice(CITIES)} in {rng.randrange(1900, 2000)} ."
    return f"{subj} enjoys long walks ."


def generate_synthetic(spec: SyntheticSpec) -> list[QAInstance]:
    """Deterministic two-hop corpus with gold abstractive explanations.

    Question: ``Which X does the Y of Z have ?``. Paragraph Z states
    ``The Y of Z is B .``; paragraph B states ``B has a X called V .``,
    with the subject replaced by a pronoun at ``pronoun_rate``. The gold
    explanation states both facts with the referent resolved and, at
    ``verbose_rate``, an extra unneeded sentence copied from paragraph B.
    """
    names = list(spec.vocab)
    needed = 3 + spec.n_distractor_paragraphs
    if len(set(names)) < needed:
        raise InvalidArgument(f"vocab has {len(set(names))} names, need at least {needed}")
    pairs = [(z, y) for z in names for y in RELATIONS]
    if spec.n_instances > len(pairs):
        raise InvalidArgument(
            f"vocab of {len(names)} names supports at most {len(pairs)} instances, asked for {spec.n_instances}"
        )
    rng = random.Random(spec.rng_seed)
    gender = {name: rng.choice("mf") for name in names}
    chosen = rng.sample(pairs, spec.n_instances)
    out = []
    for k, (z, rel) in enumerate(chosen):
        out.append(_make_instance(rng, spec, names, gender, z, rel, f"syn-{spec.rng_seed}-{k:05d}"))
    return out


def _make_instance(rng, spec, names, gender, z, rel, qid) -> QAInstance:
    b = rng.choice([n for n in names if n != z])
    attr = rng.choice(ATTRIBUTE_TYPES)
    value = rng.choice(ATTRIBUTE_VALUES)
    other_rel = rng.choice([r for r in RELATIONS if r != rel])
    other_person = rng.choice([n for n in names if n not in (z, b)])
    other_attr = rng.choice([a for a in ATTRIBUTE_TYPES if a != attr])
    other_value = rng.choice([v for v in ATTRIBUTE_VALUES if v != value])

    fact1 = f"The {rel} of {z} is {b} ."
    sents_z = [fact1, f"The {other_rel} of {z} is {other_person} ."]
    sents_z += [_filler(rng, z) for _ in range(spec.n_distractor_sentences)]
    rng.shuffle(sents_z)
    sents_z.insert(0, f"{z} was born in {rng.choice(CITIES)} .")

    use_pronoun = rng.random() < spec.pronoun_rate
    subj = PRONOUN_SUBJECT[gender[b]] if use_pronoun else b
    lead = f"{b} lives in {rng.choice(CITIES)} ."
    fact2_para = f"{subj} has a {attr} called {value} ."
    fact2_gold = f"{b} has a {attr} called {value} ."
    # Bridge paragraphs mention the question entity, as linked pages tend to.
    body = [fact2_para, f"{subj} has a {other_attr} called {other_value} .", f"{subj} often visits {z} ."]
    body += [_filler(rng, subj) for _ in range(spec.n_distractor_sentences)]
    rng.shuffle(body)
    sents_b = [lead] + body

    taken = {z, b, other_person}
    distractors = []
    pool = [n for n in names if n not in taken]
    for d_name in rng.sample(pool, spec.n_distractor_paragraphs):
        d_attrs = [a for a in ATTRIBUTE_TYPES if a != attr]
        if rng.random() < 0.5:
            sents = [
                f"{d_name} lives in {rng.choice(CITIES)} .",
                f"{d_name} has a {rng.choice(d_attrs)} called {rng.choice(ATTRIBUTE_VALUES)} .",
            ]
        else:
            sents = [
                f"{d_name} was born in {rng.choice(CITIES)} .",
                f"The {rng.choice(RELATIONS)} of {d_name} is {rng.choice([n for n in names if n != d_name])} .",
            ]
        sents += [_filler(rng, d_name) for _ in range(spec.n_distractor_sentences)]
        distractors.append(Paragraph(d_name, sents))

    paragraphs = [Paragraph(z, sents_z), Paragraph(b, sents_b)] + distractors
    rng.shuffle(paragraphs)

    explanation = [fact1]
    if rng.random() < spec.verbose_rate:
        explanation.append(lead)
    explanation.append(fact2_gold)

    return QAInstance(
        id=qid,
        question=f"Which {attr} does the {rel} of {z} have ?",
        paragraphs=paragraphs,
        gold_answer=value,
        supporting_facts=[(z, sents_z.index(fact1)), (b, sents_b.index(fact2_para))],
        gold_explanation=explanation,
        meta={"bridge": b, "pronoun": use_pronoun},
    )


def _parse_question(question: str) -> tuple[str, str, str] | None:
    m = QUESTION_RE.match(" ".join(tokenize(question, "question")))
    return (m.group(1), m.group(2), m.group(3)) if m else None


def synthetic_answer_oracle(question: str, explanation: str) -> str:
    """Answer a synthetic question from the explanation text alone.

    Gold answer only when both hops are stated with the bridge entity named
    explicitly; with just the first hop it guesses the bridge entity;
    otherwise it returns the empty string.
    """
    parsed = _parse_question(question)
    if parsed is None:
        return ""
    attr, rel, z = parsed
    sents = split_sentences(tokenize(explanation, "explanation"))
    bridge = None
    for s in sents:
        if len(s) == 7 and s[:5] == ["the", rel, "of", z, "is"] and s[6] == ".":
            bridge = s[5]
            break
    if bridge is None:
        return ""
    for s in sents:
        if len(s) == 7 and s[0] == bridge and s[1:4] == ["has", "a", attr] and s[4] == "called" and s[6] == ".":
            return s[5]
    return bridge


def annotate_subset(instances: list[QAInstance], fraction: float, seed: int = 0) -> list[QAInstance]:
    """Copies where only a seeded ``fraction`` keep their gold explanation."""
    import copy

    if not 0.0 <= fraction <= 1.0:
        raise InvalidArgument("fraction must lie in [0, 1]")
    k = int(round(fraction * len(instances)))
    keep = set(random.Random(seed).sample(range(len(instances)), k))
    out = []
    for i, inst in enumerate(instances):
        c = copy.copy(inst)
        if i not in keep:
            c.gold_explanation = None
        out.append(c)
    return out


def split_corpus(instances: list[QAInstance], fractions=(0.8, 0.1, 0.1)) -> tuple[list, list, list]:
    n = len(instances)
    a = int(round(fractions[0] * n))
    b = a + int(round(fractions[1] * n))
    return instances[:a], instances[a:b], instances[b:]
