"""Deterministic synthetic legal-style toy data.

Everything here is generated text assembled from small word banks, so
the bundled corpus is self-made and freely redistributable. The same
seed always produces byte-identical files.

Three artifacts back the test suite and the bundled demo data:
  corpus.txt        plain-text LM corpus, one paragraph per line
  binary.jsonl      sentence classification: procedural vs reasoning
  multilabel.jsonl  paragraph topic tagging over eight topics

The binary labels hinge on register vocabulary (scheduling and filing
words against holding and concluding words), which is what a language
model pretrained on the corpus can pick up.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

DEFAULT_SEED = 20260822

PROCEDURAL = "procedural"
REASONING = "reasoning"

_PARTIES = ["claimant", "respondent", "applicant", "appellant", "defendant",
            "petitioner", "intervener", "registrar", "secretariat", "counsel",
            "expert", "witness"]
_COURTS = ["tribunal", "court", "committee", "chamber", "panel", "commission"]
_REASON_VERBS = ["finds", "holds", "concludes", "considers", "determines",
                 "observes", "accepts", "rejects", "notes", "reasons"]
_PROC_VERBS = ["files", "submits", "schedules", "adjourns", "registers",
               "serves", "notifies", "circulates", "dockets", "transmits"]
_DOCUMENTS = ["memorial", "counter memorial", "reply", "rejoinder", "exhibit",
              "transcript", "submission", "application", "notice", "annex",
              "statement", "brief"]
_INSTRUMENTS = ["treaty", "convention", "agreement", "statute", "protocol",
                "regulation", "directive", "charter"]
_MONTHS = ["january", "february", "march", "april", "may", "june", "july",
           "august", "september", "october", "november", "december"]
_CLAIMS = ["claim", "objection", "argument", "defence", "allegation",
           "request", "challenge", "contention", "submission on costs",
           "jurisdictional objection", "damages claim", "expropriation claim",
           "breach allegation", "interest request"]
_REASON_ADJ = ["unfounded", "persuasive", "admissible", "inadmissible",
               "premature", "justified", "unsupported", "established",
               "credible", "speculative"]
_OBLIGATIONS = ["provide fair treatment", "protect the investment",
                "observe the standstill period", "disclose the documents",
                "compensate the investor", "respect due process",
                "maintain the registry", "preserve the evidence",
                "honor the undertaking", "perform the contract"]
_TOPICS = {
    "tax": ["levy", "excise", "deduction", "assessment", "taxpayer", "refund",
            "withholding", "audit", "revenue", "duty", "exemption", "arrears"],
    "employment": ["dismissal", "wages", "overtime", "severance", "probation",
                   "vacancy", "payroll", "pension", "leave", "grievance",
                   "redundancy", "apprentice"],
    "shipping": ["vessel", "cargo", "charter", "demurrage", "freight", "port",
                 "manifest", "salvage", "berth", "tonnage", "lading", "hull"],
    "data": ["controller", "processor", "consent", "breach notification",
             "encryption", "profiling", "retention", "transfer", "subject",
             "anonymization", "register of processing", "safeguards"],
    "energy": ["grid", "tariff", "generation", "transmission", "renewable",
               "concession", "pipeline", "capacity", "feed in", "metering",
               "interconnector", "storage"],
    "banking": ["deposit", "solvency", "collateral", "liquidity", "guarantee",
                "default", "covenant", "interest margin", "capital buffer",
                "resolution", "lender", "syndicate"],
    "environment": ["emission", "permit", "habitat", "discharge", "remediation",
                    "impact study", "biodiversity", "effluent", "quota",
                    "conservation", "pollutant", "monitoring"],
    "competition": ["cartel", "dominance", "merger", "market share", "collusion",
                    "price fixing", "leniency", "concentration", "undertaking",
                    "remedy", "foreclosure", "bid rigging"],
}
TOPIC_NAMES = tuple(sorted(_TOPICS))


def _num(rng: random.Random) -> str:
    return str(rng.randint(1, 399))


def _procedural_sentence(rng: random.Random) -> str:
    forms = [
        lambda: (f"the {rng.choice(_PARTIES)} {rng.choice(_PROC_VERBS)} the "
                 f"{rng.choice(_DOCUMENTS)} by {rng.choice(_MONTHS)} {_num(rng)}"),
        lambda: (f"the hearing is scheduled for {rng.choice(_MONTHS)} "
                 f"{_num(rng)} in room {_num(rng)}"),
        lambda: (f"the {rng.choice(_COURTS)} fixes the deadline of "
                 f"{rng.choice(_MONTHS)} {_num(rng)} for the "
                 f"{rng.choice(_DOCUMENTS)}"),
        lambda: (f"the {rng.choice(_PARTIES)} shall lodge the "
                 f"{rng.choice(_DOCUMENTS)} within {_num(rng)} days"),
        lambda: (f"the registry {rng.choice(_PROC_VERBS)} the "
                 f"{rng.choice(_DOCUMENTS)} under cover letter {_num(rng)}"),
    ]
    return rng.choice(forms)()


def _reasoning_sentence(rng: random.Random) -> str:
    forms = [
        lambda: (f"the {rng.choice(_COURTS)} {rng.choice(_REASON_VERBS)} that "
                 f"the {rng.choice(_CLAIMS)} is {rng.choice(_REASON_ADJ)}"),
        lambda: (f"the {rng.choice(_COURTS)} {rng.choice(_REASON_VERBS)} that "
                 f"the {rng.choice(_PARTIES)} failed to "
                 f"{rng.choice(_OBLIGATIONS)}"),
        lambda: (f"in the view of the {rng.choice(_COURTS)} the "
                 f"{rng.choice(_CLAIMS)} is {rng.choice(_REASON_ADJ)} because "
                 f"the {rng.choice(_PARTIES)} did not "
                 f"{rng.choice(_OBLIGATIONS)}"),
        lambda: (f"the {rng.choice(_COURTS)} {rng.choice(_REASON_VERBS)} that "
                 f"article {_num(rng)} of the {rng.choice(_INSTRUMENTS)} "
                 f"governs the {rng.choice(_CLAIMS)}"),
        lambda: (f"it follows that the {rng.choice(_CLAIMS)} must be "
                 f"{rng.choice(['upheld', 'dismissed', 'remanded', 'joined'])} "
                 f"under the {rng.choice(_INSTRUMENTS)}"),
    ]
    return rng.choice(forms)()


def _boilerplate_sentence(rng: random.Random) -> str:
    forms = [
        lambda: (f"article {_num(rng)} of the {rng.choice(_INSTRUMENTS)} "
                 f"applies to the {rng.choice(_CLAIMS)}"),
        lambda: (f"the {rng.choice(_PARTIES)} relies on section {_num(rng)} "
                 f"of the {rng.choice(_INSTRUMENTS)}"),
        lambda: (f"costs follow the event under rule {_num(rng)}"),
    ]
    return rng.choice(forms)()


def _topic_sentence(rng: random.Random, topic: str) -> str:
    words = _TOPICS[topic]
    forms = [
        lambda: (f"the {rng.choice(_PARTIES)} disputes the "
                 f"{rng.choice(words)} under article {_num(rng)}"),
        lambda: (f"the {rng.choice(_COURTS)} examines the "
                 f"{rng.choice(words)} and the {rng.choice(words)}"),
        lambda: (f"the {rng.choice(words)} is governed by the "
                 f"{rng.choice(_INSTRUMENTS)}"),
    ]
    return rng.choice(forms)()


def _paragraph(rng: random.Random, sentences: list[str]) -> str:
    return " . ".join(sentences)


def make_lm_corpus(seed: int = DEFAULT_SEED, target_bytes: int = 1_000_000,
                   ) -> list[str]:
    """Paragraphs mixing both registers until the byte budget is reached."""
    rng = random.Random(seed)
    docs = []
    total = 0
    while total < target_bytes:
        n = rng.randint(2, 6)
        sentences = []
        for _ in range(n):
            roll = rng.random()
            if roll < 0.4:
                sentences.append(_procedural_sentence(rng))
            elif roll < 0.8:
                sentences.append(_reasoning_sentence(rng))
            elif roll < 0.9:
                sentences.append(_boilerplate_sentence(rng))
            else:
                sentences.append(_topic_sentence(rng, rng.choice(TOPIC_NAMES)))
        doc = _paragraph(rng, sentences)
        docs.append(doc)
        total += len(doc) + 1
    return docs


def make_binary_dataset(n: int = 600, seed: int = DEFAULT_SEED,
                        ) -> list[dict]:
    """Balanced procedural-vs-reasoning sentences.

    The first record is procedural, so first-seen label ids are
    procedural=0 and reasoning=1, making reasoning the positive class.
    """
    rng = random.Random(seed + 1)
    records = []
    for i in range(n):
        if i % 2 == 0:
            text = _procedural_sentence(rng)
            label = PROCEDURAL
        else:
            text = _reasoning_sentence(rng)
            label = REASONING
        records.append({"text": text, "labels": [label]})
    return records


def make_multilabel_dataset(n: int = 400, seed: int = DEFAULT_SEED,
                            ) -> list[dict]:
    """Paragraphs tagged with the 1 to 3 topics their sentences draw from."""
    rng = random.Random(seed + 2)
    records = []
    for _ in range(n):
        k = rng.randint(1, 3)
        topics = sorted(rng.sample(TOPIC_NAMES, k))
        sentences = []
        for topic in topics:
            for _ in range(rng.randint(1, 2)):
                sentences.append(_topic_sentence(rng, topic))
        if rng.random() < 0.5:
            sentences.append(_boilerplate_sentence(rng))
        rng.shuffle(sentences)
        records.append({"text": _paragraph(rng, sentences), "labels": topics})
    return records


def write_toy_data(out_dir, seed: int = DEFAULT_SEED,
                   corpus_bytes: int = 1_000_000, n_binary: int = 600,
                   n_multilabel: int = 400) -> dict[str, str]:
    """Write the three bundled files; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_path = out / "corpus.txt"
    corpus_path.write_text("\n".join(make_lm_corpus(seed, corpus_bytes)) + "\n",
                           encoding="utf-8")
    binary_path = out / "binary.jsonl"
    with open(binary_path, "w", encoding="utf-8") as f:
        for rec in make_binary_dataset(n_binary, seed):
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    multi_path = out / "multilabel.jsonl"
    with open(multi_path, "w", encoding="utf-8") as f:
        for rec in make_multilabel_dataset(n_multilabel, seed):
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return {"corpus": str(corpus_path), "binary": str(binary_path),
            "multilabel": str(multi_path)}


if __name__ == "__main__":
    import sys

    target = sys.argv[1] if len(sys.argv) > 1 else "data/toy"
    paths = write_toy_data(target)
    for kind, p in sorted(paths.items()):
        print(f"{kind}: {p}")
