"""Structured generation over token masks, plus constrained top-k retrieval.

Decoding is a four-phase state machine: mode decision, trie-constrained item
segment, response marker, free text. The masks make every emitted item segment
resolve to a real catalog item, so generation cannot hallucinate an ID.
Recommendation reuses the item-segment masks inside a beam search whose score
is the sum of the L sid-token log-probabilities; forced structural tokens
contribute nothing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from .corpus import CHAT, REC, Tokenizer
from .sid import BOI, EOI, MODE_CHAT, MODE_REC, RESP, SidTrie, allowed_next, lookup
from .toylm import LmModel, next_token_logprobs

log = logging.getLogger(__name__)

MODE = "MODE"
ITEM = "ITEM"
RESP_MARK = "RESP_MARK"
TEXT = "TEXT"


@dataclass(frozen=True)
class GenState:
    """Decoding phase; prefix is the partial sid path during ITEM."""
    phase: str
    prefix: Tuple[int, ...] = ()


@dataclass(frozen=True)
class BeamHypothesis:
    codes: Tuple[int, ...]
    logprob: float


@dataclass(frozen=True)
class RecEntry:
    item_id: str
    score: float
    codes: Tuple[int, ...]


@dataclass(frozen=True)
class RecList:
    entries: Tuple[RecEntry, ...]

    def __post_init__(self):
        scores = [e.score for e in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")
        ids = [e.item_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("item ids must be distinct")

    def item_ids(self) -> List[str]:
        return [e.item_id for e in self.entries]


@dataclass(frozen=True)
class GenerationResult:
    mode: str
    item_id: Optional[str]
    text_tokens: Tuple[str, ...]
    tokens: Tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.text_tokens)


def phase_mask(state: GenState, tokenizer: Tokenizer, trie: SidTrie,
               inline_items: bool = False) -> Set[int]:
    """Token ids legal in the given phase."""
    sv = tokenizer.sid_vocab
    if state.phase == MODE:
        return {tokenizer.token_id(MODE_REC), tokenizer.token_id(MODE_CHAT)}
    if state.phase == ITEM:
        level = len(state.prefix)
        if level == sv.num_levels:
            return {tokenizer.token_id(EOI)}
        return {tokenizer.token_id(sv.sid_token(level, c))
                for c in allowed_next(trie, state.prefix)}
    if state.phase == RESP_MARK:
        return {tokenizer.token_id(RESP)}
    if state.phase == TEXT:
        ids = set(range(tokenizer.base_size))
        if inline_items:
            ids.add(tokenizer.token_id(BOI))
        return ids
    raise ValueError(f"unknown phase {state.phase!r}")


def _fit_context(context_tokens: Sequence[int], context_len: int,
                 budget: int) -> List[int]:
    """Left-truncate the context so the generation budget fits the window."""
    room = context_len - budget
    if room < 1:
        raise ValueError(
            f"context window of {context_len} cannot fit a generation "
            f"budget of {budget} tokens")
    ctx = list(context_tokens)
    return ctx[-room:] if len(ctx) > room else ctx


def _greedy_pick(model: LmModel, seq: Sequence[int], mask: Set[int]) -> int:
    """Highest-probability token inside the mask; ties go to the lowest id."""
    ids = sorted(mask)
    if len(ids) == 1:
        return ids[0]
    lp = next_token_logprobs(model, [seq])[0]
    return ids[int(np.argmax(lp[ids]))]


def _codes_for_item(trie: SidTrie, item_id: str) -> Tuple[int, ...]:
    stack = [(trie.root, ())]
    while stack:
        node, prefix = stack.pop()
        if node.item_id == item_id:
            return prefix
        for code in sorted(node.children, reverse=True):
            stack.append((node.children[code], prefix + (code,)))
    raise ValueError(f"item {item_id!r} is not in the semantic-ID trie")


def generate(model: LmModel, tokenizer: Tokenizer, trie: SidTrie,
             context_tokens: Sequence[int], *,
             mode_override: Optional[str] = None,
             item_override: Optional[str] = None,
             max_text_tokens: int = 40,
             inline_items: bool = False) -> GenerationResult:
    """Greedy decode one structured response.

    mode_override pins the mode token; item_override (implies REC) forces the
    whole item segment and decoding resumes at the response marker. The text
    phase stops at end-of-sequence or after max_text_tokens emissions, inline
    item tokens included.
    """
    if mode_override not in (None, REC, CHAT):
        raise ValueError(f"unknown mode {mode_override!r}")
    if item_override is not None and mode_override == CHAT:
        raise ValueError("item_override implies REC mode")
    sv = tokenizer.sid_vocab
    levels = sv.num_levels
    budget = levels + 4 + max_text_tokens
    seq = _fit_context(context_tokens, model.config.context_len, budget)
    out: List[str] = []

    def emit(token_id: int) -> None:
        seq.append(token_id)
        out.append(tokenizer.id_to_token[token_id])

    if mode_override == REC or item_override is not None:
        emit(tokenizer.token_id(MODE_REC))
    elif mode_override == CHAT:
        emit(tokenizer.token_id(MODE_CHAT))
    else:
        emit(_greedy_pick(model, seq, phase_mask(GenState(MODE), tokenizer, trie)))
    mode = REC if out[-1] == MODE_REC else CHAT

    item_id = None
    if mode == REC:
        if item_override is not None:
            codes = _codes_for_item(trie, item_override)
            emit(tokenizer.token_id(BOI))
            for level, code in enumerate(codes):
                emit(tokenizer.token_id(sv.sid_token(level, code)))
            emit(tokenizer.token_id(EOI))
            item_id = item_override
        else:
            emit(tokenizer.token_id(BOI))
            prefix: Tuple[int, ...] = ()
            for level in range(levels):
                mask = phase_mask(GenState(ITEM, prefix), tokenizer, trie)
                tid = _greedy_pick(model, seq, mask)
                emit(tid)
                prefix += (sv.parse_sid_token(out[-1])[1],)
            emit(tokenizer.token_id(EOI))
            item_id = lookup(trie, prefix)

    emit(tokenizer.token_id(RESP))

    text: List[str] = []
    emitted = 0
    boi_id = tokenizer.token_id(BOI)
    while emitted < max_text_tokens:
        mask = phase_mask(GenState(TEXT), tokenizer, trie, inline_items)
        # an inline segment needs levels + 2 tokens of budget
        if inline_items and max_text_tokens - emitted < levels + 2:
            mask.discard(boi_id)
        tid = _greedy_pick(model, seq, mask)
        if tid == tokenizer.eos_id:
            out.append(tokenizer.id_to_token[tid])
            break
        emit(tid)
        text.append(out[-1])
        emitted += 1
        if tid == boi_id:
            prefix = ()
            for level in range(levels):
                inner = phase_mask(GenState(ITEM, prefix), tokenizer, trie)
                inner_tid = _greedy_pick(model, seq, inner)
                emit(inner_tid)
                text.append(out[-1])
                prefix += (sv.parse_sid_token(out[-1])[1],)
            emit(tokenizer.token_id(EOI))
            text.append(out[-1])
            emitted += levels + 1
    return GenerationResult(mode=mode, item_id=item_id,
                            text_tokens=tuple(text), tokens=tuple(out))


def recommend_topk(model: LmModel, tokenizer: Tokenizer, trie: SidTrie,
                   context_tokens: Sequence[int], beam_width: int = 50,
                   k: int = 10) -> RecList:
    """Constrained beam search over the sid space after a forced REC prefix.

    Hypotheses are ranked by summed log-probability with lexicographic code
    order breaking ties; fewer than k items come back (with a warning) when
    beam_width cannot reach k distinct leaves.
    """
    if k > beam_width:
        raise ValueError(f"k={k} exceeds beam width {beam_width}")
    if trie.size == 0:
        raise ValueError("empty trie")
    sv = tokenizer.sid_vocab
    levels = sv.num_levels
    seq = _fit_context(context_tokens, model.config.context_len, levels + 2)
    base = seq + [tokenizer.token_id(MODE_REC), tokenizer.token_id(BOI)]
    beams = [BeamHypothesis(codes=(), logprob=0.0)]
    for level in range(levels):
        rows = [base + [tokenizer.token_id(sv.sid_token(d, c))
                        for d, c in enumerate(b.codes)] for b in beams]
        lps = next_token_logprobs(model, rows)
        candidates = []
        for beam, lp in zip(beams, lps):
            for code in sorted(allowed_next(trie, beam.codes)):
                tid = tokenizer.token_id(sv.sid_token(level, code))
                candidates.append(BeamHypothesis(
                    codes=beam.codes + (code,),
                    logprob=beam.logprob + float(lp[tid])))
        candidates.sort(key=lambda h: (-h.logprob, h.codes))
        beams = candidates[:beam_width]
    entries = tuple(RecEntry(item_id=lookup(trie, h.codes), score=h.logprob,
                             codes=h.codes)
                    for h in beams[:k])
    if len(entries) < k:
        log.warning("beam width %d reached only %d of %d requested items",
                    beam_width, len(entries), k)
    return RecList(entries=entries)
