"""Prompt templates and the catalog they are drawn from."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

MARKER = "[content]"


@dataclass(frozen=True)
class PromptTemplate:
    """A system message plus a user body with ``[content]`` slots.

    ``arity`` counts papers, not slots. A body may carry one slot per paper
    (the whole text) or two (title, then abstract); in the latter case each
    text is split at its first newline.
    """

    id: str
    system_message: str
    body: str
    arity: int = 1
    description: str = ""

    def __post_init__(self):
        if self.arity not in (1, 2):
            raise ValueError(f"template {self.id!r}: arity must be 1 or 2")
        slots = self.body.count(MARKER)
        if slots == 0 or slots % self.arity or slots // self.arity > 2:
            raise ValueError(
                f"template {self.id!r}: {slots} {MARKER} markers do not fit arity {self.arity}"
            )

    @property
    def slots_per_text(self) -> int:
        return self.body.count(MARKER) // self.arity


def split_title_abstract(text: str) -> tuple[str, str]:
    title, _, abstract = text.partition("\n")
    return title.strip(), abstract.strip()


def render_prompt(template: PromptTemplate, texts) -> list[dict]:
    """Fill the template's slots in order and return system + user chat messages."""
    if isinstance(texts, str):
        texts = [texts]
    texts = list(texts)
    if len(texts) != template.arity:
        raise ValueError(f"template {template.id!r} takes {template.arity} text(s), got {len(texts)}")
    fills = []
    for text in texts:
        if template.slots_per_text == 1:
            fills.append(text)
        else:
            fills.extend(split_title_abstract(text))
    pieces = template.body.split(MARKER)
    # interleave instead of str.replace so inserted text is never re-scanned
    user = pieces[0] + "".join(f + rest for f, rest in zip(fills, pieces[1:]))
    return [
        {"role": "system", "content": template.system_message},
        {"role": "user", "content": user},
    ]


class PromptCatalog:
    def __init__(self, templates):
        self.templates = tuple(templates)
        if not self.templates:
            raise ValueError("prompt catalog is empty")
        ids = [t.id for t in self.templates]
        if len(set(ids)) != len(ids):
            raise ValueError("prompt catalog has duplicate template ids")
        if not self.single():
            raise ValueError("prompt catalog needs at least one arity-1 template")

    def __len__(self):
        return len(self.templates)

    def __iter__(self):
        return iter(self.templates)

    def __getitem__(self, template_id: str) -> PromptTemplate:
        for t in self.templates:
            if t.id == template_id:
                return t
        raise KeyError(template_id)

    def single(self) -> tuple:
        return tuple(t for t in self.templates if t.arity == 1)

    def pairwise(self) -> tuple:
        return tuple(t for t in self.templates if t.arity == 2)

    @classmethod
    def from_dict(cls, obj) -> PromptCatalog:
        return cls(PromptTemplate(**t) for t in obj["templates"])

    @classmethod
    def load(cls, path) -> PromptCatalog:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> PromptCatalog:
        text = resources.files("ellagnn").joinpath("data/prompt_catalog.json").read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "templates": [
                {
                    "id": t.id,
                    "system_message": t.system_message,
                    "body": t.body,
                    "arity": t.arity,
                    "description": t.description,
                }
                for t in self.templates
            ]
        }
