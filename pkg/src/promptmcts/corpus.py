"""Deterministic synthetic corpora for offline runs and tests.

The event-extraction generator fills sentence templates for the bundled
10-type schema, so every gold span occurs verbatim in its text. Split sizes
default to 15 / 120 / 100 / 250 (low-resource train, train, dev, test).
The two small side corpora exercise the accuracy and NER plug-ins.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .data import Dataset, Example, select_low_resource, write_dataset
from .prompt_space import EventSchema
from .schema_parser import EventInstance
from .tasks import AccuracyTask, NERTask

PEOPLE = ["the former mayor", "a local banker", "the defendant", "John Smith", "the pilot", "Maria Lopez",
          "two soldiers", "the suspect", "the chief executive", "a journalist", "Ahmed Karim", "the minister"]
ORGS = ["Enron", "the airline", "WorldCom", "the bank", "Apex Steel", "the union", "Global Crossing",
        "the newspaper", "Delta Mining", "the charity"]
PLACES = ["Baghdad", "Houston", "the capital", "Paris", "the courthouse", "Manila", "the border town",
          "New York", "Gaza", "the harbor"]
TIMES = ["on Monday", "last week", "in March", "yesterday", "in 2003", "on Friday", "this morning",
         "last year"]
COURTS = ["a federal judge", "the jury", "the appeals court", "the tribunal", "the supreme court"]
CRIMES = ["fraud", "murder", "bribery", "tax evasion", "embezzlement", "arson"]
SENTENCES = ["ten years in prison", "life in prison", "a fine of $2 million", "five years of probation"]
MONEY = ["$3 million", "$500", "$40 billion", "1.2 million euros", "$75,000"]
WEAPONS = ["a rifle", "a car bomb", "a knife", "artillery fire"]
FILLER = [
    "Markets closed slightly higher {t} after a quiet session.",
    "The weather in {p} stayed mild {t}.",
    "Officials said the new bridge in {p} will open soon.",
    "Analysts expect {o} to publish its results {t}.",
    "{x} said the report was still under review.",
    "Traffic around {p} was heavier than usual {t}.",
]


def _cap(s: str) -> str:
    return s[:1].upper() + s[1:]


def _ev(kind: str, trigger: str, **args: str) -> EventInstance:
    return EventInstance(kind, trigger, {k: [v] for k, v in args.items()})


def _die(r: random.Random):
    a, v, p, t, w = r.choice(PEOPLE[6:]), r.choice(PEOPLE[:6]), r.choice(PLACES), r.choice(TIMES), r.choice(WEAPONS)
    form = r.randrange(3)
    if form == 0:
        return f"{_cap(a)} killed {v} in {p} {t}.", [_ev("Die", "killed", agent=a, victim=v, place=p)]
    if form == 1:
        return f"{_cap(v)} died {t} after an attack with {w}.", [_ev("Die", "died", victim=v, instrument=w)]
    return f"{_cap(v)} was shot dead in {p}.", [_ev("Die", "shot", victim=v, place=p)]


def _convict(r: random.Random):
    d, j, c, s = r.choice(PEOPLE), r.choice(COURTS), r.choice(CRIMES), r.choice(SENTENCES)
    if r.random() < 0.4:
        text = f"{_cap(j)} convicted {d} of {c} and sentenced him to {s}."
        return text, [_ev("Convict", "convicted", adjudicator=j, defendant=d, crime=c),
                      _ev("SentenceAct", "sentenced", adjudicator=j, defendant="him", sentence=s)]
    return f"{_cap(d)} was found guilty of {c} by {j}.", [
        _ev("Convict", "found guilty", defendant=d, crime=c, adjudicator=j)]


def _sentence(r: random.Random):
    d, j, s, t = r.choice(PEOPLE), r.choice(COURTS), r.choice(SENTENCES), r.choice(TIMES)
    return f"{_cap(j)} sentenced {d} to {s} {t}.", [_ev("SentenceAct", "sentenced", adjudicator=j,
                                                                   defendant=d, sentence=s)]


def _transfer(r: random.Random):
    g, o, m = r.choice(PEOPLE), r.choice(ORGS), r.choice(MONEY)
    if r.random() < 0.5:
        return f"{_cap(g)} paid {m} to {o}.", [_ev("TransferMoney", "paid", giver=g, recipient=o, money=m)]
    return f"{_cap(o)} received a donation of {m} from {g}.", [
        _ev("TransferMoney", "donation", recipient=o, money=m, giver=g)]


def _meet(r: random.Random):
    a, b, p, t = r.sample(PEOPLE, 2) + [r.choice(PLACES), r.choice(TIMES)]
    return f"{_cap(a)} met {b} in {p} {t}.", [
        EventInstance("Meet", "met", {"entity": [a, b], "place": [p]})]


def _phone(r: random.Random):
    a, b, t = r.sample(PEOPLE, 2) + [r.choice(TIMES)]
    if r.random() < 0.5:
        return f"{_cap(a)} called {b} {t}.", [EventInstance("PhoneWrite", "called", {"entity": [a, b]})]
    return f"{_cap(a)} wrote a letter to {b}.", [EventInstance("PhoneWrite", "wrote", {"entity": [a, b]})]


def _bankrupt(r: random.Random):
    o, t, p = r.choice(ORGS), r.choice(TIMES), r.choice(PLACES)
    return f"{_cap(o)} filed for bankruptcy {t} in {p}.", [
        _ev("DeclareBankruptcy", "bankruptcy", org=o, place=p)]


def _endorg(r: random.Random):
    o, t = r.choice(ORGS), r.choice(TIMES)
    if r.random() < 0.5:
        return f"{_cap(o)} shut down its operations {t}.", [_ev("EndOrg", "shut down", org=o)]
    return f"{_cap(o)} was dissolved by its owners.", [_ev("EndOrg", "dissolved", org=o)]


def _sue(r: random.Random):
    a, o, c, j = r.choice(PEOPLE), r.choice(ORGS), r.choice(CRIMES), r.choice(COURTS)
    return f"{_cap(a)} sued {o} for {c} before {j}.", [
        _ev("Sue", "sued", plaintiff=a, defendant=o, crime=c, adjudicator=j)]


def _appeal(r: random.Random):
    d, j, c = r.choice(PEOPLE), r.choice(COURTS), r.choice(CRIMES)
    return f"{_cap(d)} appealed the {c} ruling to {j}.", [
        _ev("Appeal", "appealed", defendant=d, adjudicator=j, crime=c)]


GENERATORS = {
    "Convict": _convict, "TransferMoney": _transfer, "Meet": _meet, "PhoneWrite": _phone,
    "DeclareBankruptcy": _bankrupt, "EndOrg": _endorg, "Die": _die, "SentenceAct": _sentence,
    "Sue": _sue, "Appeal": _appeal,
}


def _filler(r: random.Random) -> str:
    return r.choice(FILLER).format(t=r.choice(TIMES), p=r.choice(PLACES), o=r.choice(ORGS),
                                   x=_cap(r.choice(PEOPLE)))


def _align(text: str, events: list[EventInstance]) -> list[EventInstance]:
    """Use the sentence-initial capitalized form of a span when that is what the text contains."""
    def fix(span: str) -> str:
        if span in text:
            return span
        cap = span[:1].upper() + span[1:]
        if cap in text:
            return cap
        raise ValueError(f"span {span!r} not in {text!r}")
    return [EventInstance(e.event_type, fix(e.mention), {k: [fix(v) for v in vs] for k, vs in e.arguments.items()})
            for e in events]


def generate_split(name: str, schema: EventSchema, per_type: int, n_none: int, rng: random.Random) -> Dataset:
    items: list[tuple[str, list[EventInstance]]] = []
    for t in schema.names:
        for _ in range(per_type):
            text, events = GENERATORS[t](rng)
            items.append((text, _align(text, events)))
    items += [(_filler(rng), []) for _ in range(n_none)]
    rng.shuffle(items)
    examples = [Example(f"{name}-{i:04d}", text, gold) for i, (text, gold) in enumerate(items)]
    return Dataset(name, examples, schema)


@dataclass
class SyntheticCorpus:
    train_low: Dataset
    train: Dataset
    dev: Dataset
    test: Dataset

    def splits(self) -> dict[str, Dataset]:
        return {"train_low": self.train_low, "train": self.train, "dev": self.dev, "test": self.test}


def synthetic_ee(schema: EventSchema, seed: int = 13) -> SyntheticCorpus:
    """Train 120 (10 per type + 20 event-free), dev 100, test 250; low-resource 15 picked from train."""
    rng = random.Random(seed)
    train = generate_split("train", schema, 10, 20, rng)
    dev = generate_split("dev", schema, 8, 20, rng)
    test = generate_split("test", schema, 20, 50, rng)
    low = select_low_resource(train, per_type=1, n_none=5)
    low.split = "train_low"
    return SyntheticCorpus(low, train, dev, test)


SHAPES = [("M 10 10 L 20 20 L 10 30 Z", "triangle"), ("M 0 0 L 4 0 L 4 4 L 0 4 Z", "square"),
          ("M 0 0 L 6 0 L 6 2 L 0 2 Z", "rectangle"), ("M 0 0 L 2 0 L 3 2 L 1 4 L -1 2 Z", "pentagon"),
          ("M 0 0 L 2 0 L 3 1 L 2 2 L 0 2 L -1 1 Z", "hexagon"), ("M 0 0 L 5 5", "line")]
DISEASES = ["breast cancer", "cystic fibrosis", "type 2 diabetes", "asthma", "Huntington disease",
            "colorectal cancer", "hypertension", "Crohn disease"]
NER_TEMPLATES = ["Patients with {a} were enrolled in the study.",
                 "Mutations in this gene are linked to {a} and {b}.",
                 "No association with {a} was observed.",
                 "The cohort excluded participants with prior surgery.",
                 "Screening for {a} reduced mortality."]


def synthetic_accuracy(n: int = 40, seed: int = 5) -> list[Example]:
    """SVG-path shape naming, answered with a single label."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        path, label = rng.choice(SHAPES)
        out.append(Example(f"shape-{i:04d}", f'This SVG path element <path d="{path}"/> draws a', label))
    return out


def synthetic_ner(n: int = 40, seed: int = 6) -> list[Example]:
    rng = random.Random(seed)
    out = []
    for i in range(n):
        tpl = rng.choice(NER_TEMPLATES)
        a, b = rng.sample(DISEASES, 2)
        text = tpl.format(a=a, b=b)
        spans = [s for s in (a, b) if s in text]
        out.append(Example(f"ner-{i:04d}", text, spans))
    return out


def write_corpus(directory: str | Path, schema: EventSchema, seed: int = 13) -> dict[str, Path]:
    """Write the event corpus plus the two side corpora as JSONL files under ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = {}
    for name, ds in synthetic_ee(schema, seed).splits().items():
        out[name] = d / f"{name}.jsonl"
        write_dataset(ds, out[name])
    for name, examples, task in (("shapes", synthetic_accuracy(), AccuracyTask()),
                                 ("disease_ner", synthetic_ner(), NERTask())):
        for split, part in (("train", examples[:20]), ("dev", examples[20:])):
            out[f"{name}_{split}"] = d / f"{name}_{split}.jsonl"
            write_dataset(part, out[f"{name}_{split}"], task)
    return out
