"""Semantic ID tokens, the special-token vocabulary, and the prefix trie.

An item's code sequence renders as level-tagged tokens like
"<a_17><b_63><c_0><d_25>". Sid tokens plus the special tokens form one
contiguous id block that sits directly after the base text vocabulary, so
the trainable-embedding policy can address "new tokens" as an id range.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .collision import IdAssignment

BOI = "<BOI>"
EOI = "<EOI>"
RESP = "<RESP>"
MODE_REC = "<MODE=REC>"
MODE_CHAT = "<MODE=CHAT>"
MOVIE = "<movie>"

SPECIAL_TOKENS = (BOI, EOI, RESP, MODE_REC, MODE_CHAT, MOVIE)

_SID_TOKEN_RE = re.compile(r"<([a-z])_(\d+)>")


class SidError(ValueError):
    """Malformed semantic ID input."""


@dataclass(frozen=True)
class SidVocabulary:
    num_levels: int
    codebook_size: int
    id_offset: int = 0
    level_prefixes: Tuple[str, ...] = ()

    def __post_init__(self):
        if not 1 <= self.num_levels <= 26:
            raise SidError("num_levels must be in [1, 26]")
        if self.codebook_size < 1:
            raise SidError("codebook_size must be >= 1")
        if not self.level_prefixes:
            object.__setattr__(
                self, "level_prefixes",
                tuple(string.ascii_lowercase[: self.num_levels]))
        if len(self.level_prefixes) != self.num_levels:
            raise SidError("level_prefixes must have one entry per level")

    def sid_token(self, level: int, k: int) -> str:
        return f"<{self.level_prefixes[level]}_{k}>"

    @property
    def sid_tokens(self) -> List[str]:
        return [self.sid_token(l, k)
                for l in range(self.num_levels)
                for k in range(self.codebook_size)]

    @property
    def special_tokens(self) -> Tuple[str, ...]:
        return SPECIAL_TOKENS

    @property
    def all_tokens(self) -> List[str]:
        """The appended block in id order: sid tokens by level, then specials."""
        return self.sid_tokens + list(SPECIAL_TOKENS)

    @property
    def token_ids(self) -> Dict[str, int]:
        return {tok: self.id_offset + i for i, tok in enumerate(self.all_tokens)}

    @property
    def size(self) -> int:
        return self.num_levels * self.codebook_size + len(SPECIAL_TOKENS)

    def token_id(self, token: str) -> int:
        return self.token_ids[token]

    def parse_sid_token(self, token: str) -> Optional[Tuple[int, int]]:
        """(level, k) if token is a sid token of this vocabulary, else None."""
        m = _SID_TOKEN_RE.fullmatch(token)
        if not m:
            return None
        prefix, k = m.group(1), int(m.group(2))
        try:
            level = self.level_prefixes.index(prefix)
        except ValueError:
            return None
        if k >= self.codebook_size:
            return None
        return level, k


def render_tokens(codes: Sequence[int], vocab: SidVocabulary) -> str:
    if len(codes) != vocab.num_levels:
        raise SidError(
            f"expected {vocab.num_levels} codes, got {len(codes)}")
    out = []
    for level, k in enumerate(codes):
        k = int(k)
        if not 0 <= k < vocab.codebook_size:
            raise SidError(
                f"code {k} at level {level} outside [0, {vocab.codebook_size})")
        out.append(vocab.sid_token(level, k))
    return "".join(out)


def parse_tokens(s: str, vocab: SidVocabulary) -> Tuple[int, ...]:
    tokens = _SID_TOKEN_RE.findall(s)
    rebuilt = "".join(f"<{p}_{k}>" for p, k in tokens)
    if rebuilt != s:
        raise SidError(f"malformed sid string {s!r}")
    if len(tokens) != vocab.num_levels:
        raise SidError(
            f"expected {vocab.num_levels} sid tokens, got {len(tokens)}")
    codes = []
    for level, (prefix, digits) in enumerate(tokens):
        if prefix != vocab.level_prefixes[level]:
            raise SidError(
                f"level {level} has prefix {prefix!r}, "
                f"expected {vocab.level_prefixes[level]!r}")
        k = int(digits)
        if k >= vocab.codebook_size:
            raise SidError(f"code {k} outside [0, {vocab.codebook_size})")
        codes.append(k)
    return tuple(codes)


@dataclass
class TrieNode:
    children: Dict[int, "TrieNode"] = field(default_factory=dict)
    item_id: Optional[str] = None


@dataclass(frozen=True)
class SidTrie:
    root: TrieNode
    num_levels: int
    size: int


def build_trie(assignment: IdAssignment, catalog) -> SidTrie:
    """Index every assigned ID; leaves carry the owning item_id."""
    codes_by_item = assignment.codes_by_item
    if len(codes_by_item) != len(catalog):
        raise SidError(
            f"assignment covers {len(codes_by_item)} items, "
            f"catalog has {len(catalog)}")
    num_levels = len(codes_by_item[0]) if codes_by_item else 0
    root = TrieNode()
    for pos, codes in enumerate(codes_by_item):
        node = root
        for code in codes:
            node = node.children.setdefault(int(code), TrieNode())
        if node.item_id is not None:
            raise SidError(
                f"duplicate ID {tuple(codes)} for items "
                f"{node.item_id!r} and {catalog.items[pos].item_id!r}")
        node.item_id = catalog.items[pos].item_id
    return SidTrie(root=root, num_levels=num_levels, size=len(codes_by_item))


def _walk(trie: SidTrie, prefix: Sequence[int]) -> TrieNode:
    node = trie.root
    for depth, code in enumerate(prefix):
        child = node.children.get(int(code))
        if child is None:
            raise SidError(f"prefix {tuple(prefix[:depth + 1])} not in trie")
        node = child
    return node


def allowed_next(trie: SidTrie, prefix: Sequence[int]) -> Set[int]:
    return set(_walk(trie, prefix).children.keys())


def lookup(trie: SidTrie, codes: Sequence[int]) -> str:
    node = _walk(trie, codes)
    if node.item_id is None:
        raise SidError(f"{tuple(codes)} is not a complete ID")
    return node.item_id


def save_sid_table(path, assignment: IdAssignment, catalog,
                   vocab: SidVocabulary) -> None:
    """Tab-separated rows: item_id, comma-joined codes, rendered tokens."""
    with open(path, "w", encoding="utf-8") as fh:
        for item, codes in zip(catalog.items, assignment.codes_by_item):
            rendered = render_tokens(codes, vocab)
            joined = ",".join(str(int(c)) for c in codes)
            fh.write(f"{item.item_id}\t{joined}\t{rendered}\n")


def load_sid_table(path) -> Dict[str, Tuple[int, ...]]:
    """item_id -> codes, preserving nothing but the mapping."""
    table: Dict[str, Tuple[int, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise SidError(f"{path}:{lineno}: expected 3 columns")
            item_id, joined, _rendered = parts
            if item_id in table:
                raise SidError(f"{path}:{lineno}: duplicate item {item_id!r}")
            table[item_id] = tuple(int(c) for c in joined.split(","))
    return table


def save_vocab_block(path, vocab: SidVocabulary) -> None:
    """One token per line, in appended-block id order."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.all_tokens:
            fh.write(tok + "\n")
