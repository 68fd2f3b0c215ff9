"""Seeded synthetic catalog and dialog generator for pipeline exercises.

Every item gets a genre plus a unique keyword, and every dialog names both in
the user's request, so the target item is inferable from context alone and
perfect Recall@1 is achievable in principle. Each dialog also carries one
pure-chat exchange so both response modes appear in training data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import numpy as np

GREETINGS = (
    "hi there",
    "hello",
    "good evening",
    "hey , how are you ?",
    "hi , got a minute ?",
)
CHAT_REPLIES = (
    "hello ! what are you in the mood for ?",
    "hi ! tell me what you feel like watching",
    "hey ! happy to help you pick something",
    "good to see you , what sounds fun today ?",
    "hello ! describe what you want to watch",
)
REQUESTS = (
    "i want a {genre} movie about {kw}",
    "looking for something {genre} , maybe with {kw}",
    "any {genre} films featuring {kw} ?",
    "can you recommend a {genre} story with {kw} ?",
    "please find me a {genre} picture on {kw}",
)
REC_REPLIES = (
    "you should watch @{item} , a great {genre} pick",
    "try @{item} , it is all about {kw}",
    "@{item} fits perfectly , a {genre} classic",
    "my pick is @{item} , pure {genre} with lots of {kw}",
    "go with @{item} , the best {genre} take on {kw}",
)


@dataclass(frozen=True)
class SyntheticSpec:
    n_items: int = 40
    n_genres: int = 8
    dialogs_per_item: int = 5
    seed: int = 7

    def __post_init__(self):
        if not self.n_items >= self.n_genres >= 1:
            raise ValueError("need n_items >= n_genres >= 1")
        if self.dialogs_per_item < 1:
            raise ValueError("dialogs_per_item must be >= 1")


def _item_id(i: int) -> str:
    return f"item{i:03d}"


def make_synthetic(spec: SyntheticSpec, out_dir) -> Dict[str, str]:
    """Write catalog.jsonl and dialogs.jsonl; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    catalog_path = out / "catalog.jsonl"
    with open(catalog_path, "w", encoding="utf-8") as fh:
        for i in range(spec.n_items):
            genre = f"genre{i % spec.n_genres}"
            kw = f"kw{i}"
            rec = {
                "item_id": _item_id(i),
                "title": f"The {kw} {genre} story",
                "year": 1980 + i,
                "genres": [genre],
                "keywords": [kw, genre],
                "plot": f"a {genre} tale centered on {kw}",
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def pick(options):
        return options[int(rng.integers(0, len(options)))]

    dialogs_path = out / "dialogs.jsonl"
    with open(dialogs_path, "w", encoding="utf-8") as fh:
        for i in range(spec.n_items):
            genre = f"genre{i % spec.n_genres}"
            kw = f"kw{i}"
            for j in range(spec.dialogs_per_item):
                turns = [
                    {"role": "user", "text": pick(GREETINGS)},
                    {"role": "assistant", "text": pick(CHAT_REPLIES)},
                    {"role": "user",
                     "text": pick(REQUESTS).format(genre=genre, kw=kw)},
                    {"role": "assistant",
                     "text": pick(REC_REPLIES).format(
                         item=_item_id(i), genre=genre, kw=kw)},
                ]
                rec = {"dialog_id": f"dlg{i:03d}_{j}", "turns": turns}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    return {"catalog": str(catalog_path), "dialogs": str(dialogs_path)}
