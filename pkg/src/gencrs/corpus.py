"""Dialog corpus preparation: mention rewriting, tokenization, and the four
structured training formats.

Dialogs arrive as line-delimited JSON with inline item mentions (`@item_id`).
Mentions are rewritten to `<BOI>` + sid tokens + `<EOI>`, the text is
word-tokenized (lowercased, punctuation split off, angle tokens kept whole),
and every assistant turn becomes one or more (context, target) samples
depending on the format:

  FULL       mode token, leading item segment for recommendations, response
  RESP       response text only
  MODE_RESP  mode token and response, no item segment
  SID_ONLY   bare wrapped sid per recommended item, no text
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .sid import BOI, EOI, MODE_CHAT, MODE_REC, RESP, SidVocabulary, render_tokens

log = logging.getLogger(__name__)

FULL = "FULL"
RESP_ONLY = "RESP"
MODE_RESP = "MODE_RESP"
SID_ONLY = "SID_ONLY"
FORMATS = (FULL, RESP_ONLY, MODE_RESP, SID_ONLY)

REC = "REC"
CHAT = "CHAT"

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
EOS_TOKEN = "<eos>"

MENTION_RE = re.compile(r"@([A-Za-z0-9_\-]+)")
_PIECE_RE = re.compile(r"<[^<>\s]+>|\w+|[^\w\s]")

_ROLES = ("user", "assistant")


class CorpusError(ValueError):
    """Malformed dialog data or sample input."""


@dataclass(frozen=True)
class Turn:
    role: str
    text: str
    # (item_id, codes) per mention, in order of appearance; filled in by
    # replace_mentions so downstream code never re-parses sid segments
    mentions: Tuple[Tuple[str, Tuple[int, ...]], ...] = ()


@dataclass(frozen=True)
class Dialog:
    dialog_id: str
    turns: Tuple[Turn, ...]


@dataclass(frozen=True)
class StructuredSample:
    dialog_id: str
    turn_index: int
    format: str
    mode: str
    target_item: Optional[str]
    context_tokens: Tuple[int, ...]
    target_tokens: Tuple[int, ...]


def load_dialogs(path, known_items=None) -> List[Dialog]:
    """Parse line-delimited dialog records, validating mention ids if given."""
    dialogs: List[Dialog] = []
    seen: Set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid record: {exc}") from exc
            did = rec.get("dialog_id")
            if not did:
                raise CorpusError(f"{path}:{lineno}: missing dialog_id")
            if did in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate dialog_id {did!r}")
            seen.add(did)
            turns_raw = rec.get("turns")
            if not turns_raw:
                raise CorpusError(f"{path}:{lineno}: dialog {did!r} has no turns")
            turns = []
            for t in turns_raw:
                role, text = t.get("role"), t.get("text")
                if role not in _ROLES:
                    raise CorpusError(
                        f"{path}:{lineno}: dialog {did!r} has bad role {role!r}")
                if text is None:
                    raise CorpusError(
                        f"{path}:{lineno}: dialog {did!r} has a turn without text")
                if known_items is not None:
                    for item_id in MENTION_RE.findall(text):
                        if item_id not in known_items:
                            raise CorpusError(
                                f"{path}:{lineno}: unknown item @{item_id}")
                turns.append(Turn(role=role, text=text))
            dialogs.append(Dialog(dialog_id=did, turns=tuple(turns)))
    return dialogs


def replace_mentions(dialog: Dialog, sids: Dict[str, Tuple[int, ...]],
                     vocab: SidVocabulary) -> Dialog:
    """Rewrite every `@item_id` as `<BOI>` + rendered sid + `<EOI>`."""
    new_turns = []
    for turn in dialog.turns:
        mentions: List[Tuple[str, Tuple[int, ...]]] = []

        def rewrite(match):
            item_id = match.group(1)
            codes = sids.get(item_id)
            if codes is None:
                raise CorpusError(
                    f"dialog {dialog.dialog_id!r}: mention @{item_id} "
                    f"has no semantic ID")
            mentions.append((item_id, tuple(codes)))
            return BOI + render_tokens(codes, vocab) + EOI

        text = MENTION_RE.sub(rewrite, turn.text)
        new_turns.append(Turn(role=turn.role, text=text,
                              mentions=tuple(mentions)))
    return Dialog(dialog_id=dialog.dialog_id, turns=tuple(new_turns))


@dataclass(frozen=True)
class Tokenizer:
    """Word-level tokenizer with the sid block appended after base tokens.

    Words are lowercased; single punctuation marks are their own tokens;
    `<...>` tokens are kept whole and matched case-sensitively. Ids 0..2 are
    <pad>, <unk>, <eos>.
    """
    id_to_token: Tuple[str, ...]
    base_size: int
    sid_vocab: SidVocabulary
    token_to_id: Dict[str, int] = field(compare=False, default=None)

    def __post_init__(self):
        if self.token_to_id is None:
            object.__setattr__(
                self, "token_to_id",
                {tok: i for i, tok in enumerate(self.id_to_token)})

    @classmethod
    def build(cls, texts: Iterable[str], sid_vocab: SidVocabulary) -> "Tokenizer":
        words: Set[str] = set()
        for text in texts:
            for piece in _PIECE_RE.findall(text):
                if piece.startswith("<") and piece.endswith(">") and len(piece) > 2:
                    continue  # angle tokens live in the appended block or map to <unk>
                words.add(piece.lower())
        base = [PAD_TOKEN, UNK_TOKEN, EOS_TOKEN] + sorted(words)
        block_vocab = SidVocabulary(
            num_levels=sid_vocab.num_levels,
            codebook_size=sid_vocab.codebook_size,
            id_offset=len(base),
            level_prefixes=sid_vocab.level_prefixes)
        return cls(id_to_token=tuple(base) + tuple(block_vocab.all_tokens),
                   base_size=len(base), sid_vocab=block_vocab)

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def new_token_range(self) -> Tuple[int, int]:
        """Id range [start, end) of the appended sid + special block."""
        return self.base_size, self.vocab_size

    def token_id(self, token: str) -> int:
        return self.token_to_id[token]

    def encode(self, text: str) -> List[int]:
        ids = []
        for piece in _PIECE_RE.findall(text):
            tid = self.token_to_id.get(piece)
            if tid is None:
                tid = self.token_to_id.get(piece.lower(), self.unk_id)
            ids.append(tid)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.id_to_token[i] for i in ids)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path, sid_vocab: SidVocabulary) -> "Tokenizer":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        base_size = len(tokens) - sid_vocab.size
        if base_size < 3:
            raise CorpusError(f"{path}: vocabulary too small for sid block")
        block_vocab = SidVocabulary(
            num_levels=sid_vocab.num_levels,
            codebook_size=sid_vocab.codebook_size,
            id_offset=base_size,
            level_prefixes=sid_vocab.level_prefixes)
        if tokens[base_size:] != block_vocab.all_tokens:
            raise CorpusError(f"{path}: sid block does not match vocabulary")
        return cls(id_to_token=tuple(tokens), base_size=base_size,
                   sid_vocab=block_vocab)


def serialize_context(turns: Sequence[Turn]) -> str:
    """Prior turns as role-prefixed lines, ending with the assistant prefix."""
    lines = [f"{t.role.capitalize()}: {t.text}" for t in turns]
    lines.append("Assistant:")
    return "\n".join(lines)


def turn_mode(turn: Turn) -> str:
    return REC if turn.mentions else CHAT


def build_samples(dialog: Dialog, format: str,
                  tokenizer: Tokenizer) -> List[StructuredSample]:
    """One sample group per assistant turn of a rewritten dialog."""
    if format not in FORMATS:
        raise CorpusError(f"unknown format {format!r}")
    vocab = tokenizer.sid_vocab
    samples: List[StructuredSample] = []
    for idx, turn in enumerate(dialog.turns):
        if turn.role != "assistant":
            continue
        context = tuple(tokenizer.encode(serialize_context(dialog.turns[:idx])))
        mode = turn_mode(turn)

        def emit(target_text: str, target_item: Optional[str],
                 append_eos: bool = True) -> None:
            target = tokenizer.encode(target_text)
            if append_eos:
                target.append(tokenizer.eos_id)
            samples.append(StructuredSample(
                dialog_id=dialog.dialog_id, turn_index=idx, format=format,
                mode=mode, target_item=target_item,
                context_tokens=context, target_tokens=tuple(target)))

        if format == FULL:
            if mode == REC:
                for item_id, codes in turn.mentions:
                    segment = BOI + render_tokens(codes, vocab) + EOI
                    emit(f"{MODE_REC}{segment}{RESP} {turn.text}", item_id)
            else:
                emit(f"{MODE_CHAT}{RESP} {turn.text}", None)
        elif format == RESP_ONLY:
            first = turn.mentions[0][0] if turn.mentions else None
            emit(turn.text, first)
        elif format == MODE_RESP:
            mode_tok = MODE_REC if mode == REC else MODE_CHAT
            first = turn.mentions[0][0] if turn.mentions else None
            emit(f"{mode_tok}{RESP} {turn.text}", first)
        else:  # SID_ONLY
            for item_id, codes in turn.mentions:
                segment = BOI + render_tokens(codes, vocab) + EOI
                emit(segment, item_id, append_eos=False)
    return samples


def split_eval(samples: Sequence[StructuredSample], dialogs: Sequence[Dialog],
               test_fraction: float = 0.2, seed: int = 0):
    """Dialog-level split: no dialog contributes to both sides."""
    if not 0.0 <= test_fraction < 1.0:
        raise CorpusError("test_fraction must be in [0, 1)")
    ids = [d.dialog_id for d in dialogs]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n_test = int(len(ids) * test_fraction)
    if n_test == 0 and test_fraction > 0.0:
        log.warning("split_eval: %d dialog(s) is too few for a %.0f%% test "
                    "split; everything goes to train",
                    len(ids), 100 * test_fraction)
    test_ids = {ids[i] for i in order[:n_test]}
    train = [s for s in samples if s.dialog_id not in test_ids]
    test = [s for s in samples if s.dialog_id in test_ids]
    return {"train": train, "test": test}


def save_samples(path, samples: Sequence[StructuredSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(asdict(s), sort_keys=True,
                                ensure_ascii=True) + "\n")


def load_samples(path) -> List[StructuredSample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid sample: {exc}") from exc
            out.append(StructuredSample(
                dialog_id=rec["dialog_id"], turn_index=rec["turn_index"],
                format=rec["format"], mode=rec["mode"],
                target_item=rec["target_item"],
                context_tokens=tuple(rec["context_tokens"]),
                target_tokens=tuple(rec["target_tokens"])))
    return out
