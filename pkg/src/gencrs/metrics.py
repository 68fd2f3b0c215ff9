"""Ranking metrics, corpus perplexity, BLEU, Distinct-n, and the eval driver.

Rank metrics use the single-relevant-item form (binary gain, ideal DCG = 1).
BLEU pools clipped n-gram counts across the corpus with uniform 1/4 weights
and no smoothing; orders with no candidate n-grams at all are skipped so an
identity corpus of short sentences still scores 100. Perplexity pools token
NLL across the corpus, so longer references weigh more.

The protocol driver scores recommendation and dialog quality separately. For
dialog metrics both candidate and reference are mapped to a placeholder view:
a leading `<movie>` for REC turns, then the post-`<RESP>` tokens with every
`<BOI>`..`<EOI>` span collapsed to `<movie>`. Perplexity keeps the reference's
real prefix (mode and item tokens) as conditioning and scores only the
placeholder-substituted tokens after `<RESP>`.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import EOS_TOKEN, REC, StructuredSample, Tokenizer
from .decoder import RecList, generate, recommend_topk
from .sid import BOI, EOI, MOVIE, RESP, SidTrie
from .toylm import LmModel, ntp_loss

RECALL_KS = (1, 5, 10, 20)
RANK_KS = (5, 10, 20)
DISTINCT_NS = (1, 2, 3, 4)


@dataclass(frozen=True)
class RecEvalInstance:
    context_tokens: Tuple[int, ...]
    truth_item: str
    predictions: RecList


@dataclass(frozen=True)
class MetricReport:
    recall: Dict[int, float] = field(default_factory=dict)
    ndcg: Dict[int, float] = field(default_factory=dict)
    mrr: Dict[int, float] = field(default_factory=dict)
    ppl: Optional[float] = None
    bleu: Optional[float] = None
    distinct: Dict[int, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for family in (self.recall, self.ndcg, self.mrr, self.distinct):
            for k, v in family.items():
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"rate {v} for k={k} outside [0, 1]")
        if self.ppl is not None and self.ppl < 1.0:
            raise ValueError(f"perplexity {self.ppl} below 1")
        if self.bleu is not None and not 0.0 <= self.bleu <= 100.0:
            raise ValueError(f"bleu {self.bleu} outside [0, 100]")

    def to_dict(self) -> dict:
        return {
            "recall": {str(k): v for k, v in sorted(self.recall.items())},
            "ndcg": {str(k): v for k, v in sorted(self.ndcg.items())},
            "mrr": {str(k): v for k, v in sorted(self.mrr.items())},
            "ppl": self.ppl,
            "bleu": self.bleu,
            "distinct": {str(k): v for k, v in sorted(self.distinct.items())},
            "counts": dict(sorted(self.counts.items())),
        }


def _rank(instance: RecEvalInstance) -> Optional[int]:
    ids = instance.predictions.item_ids()
    try:
        return ids.index(instance.truth_item) + 1
    except ValueError:
        return None


def _check_instances(instances, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    if not instances:
        raise ValueError("empty instance set")


def recall_at_k(instances: Sequence[RecEvalInstance], k: int) -> float:
    _check_instances(instances, k)
    hits = [1.0 if (r := _rank(inst)) is not None and r <= k else 0.0
            for inst in instances]
    return float(np.mean(hits))


def ndcg_at_k(instances: Sequence[RecEvalInstance], k: int) -> float:
    _check_instances(instances, k)
    gains = []
    for inst in instances:
        r = _rank(inst)
        gains.append(1.0 / np.log2(r + 1) if r is not None and r <= k else 0.0)
    return float(np.mean(gains))


def mrr_at_k(instances: Sequence[RecEvalInstance], k: int) -> float:
    _check_instances(instances, k)
    recips = []
    for inst in instances:
        r = _rank(inst)
        recips.append(1.0 / r if r is not None and r <= k else 0.0)
    return float(np.mean(recips))


def corpus_ppl(model: LmModel,
               references: Sequence[Tuple[Sequence[int], Sequence[int]]]) -> float:
    """exp of token-pooled NLL; longer references weigh more."""
    if not references:
        raise ValueError("empty reference set")
    total_nll = 0.0
    total_tokens = 0
    for ctx, tgt in references:
        # without context the first target token has no conditioning input
        scored = len(tgt) if ctx else len(tgt) - 1
        if scored <= 0:
            continue
        sample = StructuredSample(
            dialog_id="", turn_index=0, format="", mode="", target_item=None,
            context_tokens=tuple(ctx), target_tokens=tuple(tgt))
        total_nll += ntp_loss(model, sample) * scored
        total_tokens += scored
    if total_tokens == 0:
        raise ValueError("references contain zero target tokens")
    return float(np.exp(total_nll / total_tokens))


def _ngram_counts(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence[Sequence], references: Sequence[Sequence],
         max_n: int = 4) -> float:
    """Corpus BLEU in [0, 100]: pooled clipped precisions, no smoothing."""
    if len(candidates) != len(references):
        raise ValueError(
            f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("empty candidate corpus")
    matched = [0] * max_n
    possible = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cc = _ngram_counts(cand, n)
            rc = _ngram_counts(ref, n)
            matched[n - 1] += sum(min(count, rc[g]) for g, count in cc.items())
            possible[n - 1] += sum(cc.values())
    log_precisions = []
    for num, den in zip(matched, possible):
        if den == 0:
            continue  # order vacuous for this corpus; keep bleu(x, x) = 100
        if num == 0:
            return 0.0
        log_precisions.append(np.log(num / den))
    if not log_precisions:
        return 0.0
    geo = np.exp(np.mean(log_precisions))
    bp = 1.0 if cand_len > ref_len else float(np.exp(1.0 - ref_len / cand_len))
    return float(100.0 * geo * min(bp, 1.0))


def distinct_n(candidates: Sequence[Sequence], n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not candidates:
        raise ValueError("empty candidate corpus")
    seen = set()
    total = 0
    for cand in candidates:
        for i in range(len(cand) - n + 1):
            seen.add(tuple(cand[i:i + n]))
            total += 1
    if total == 0:
        raise ValueError(f"corpus has no {n}-grams")
    return len(seen) / total


def _collapse_spans(tokens: List[str]) -> List[str]:
    """Replace every <BOI>..<EOI> span with the <movie> placeholder."""
    out: List[str] = []
    i = 0
    while i < len(tokens):
        if tokens[i] == BOI:
            j = i + 1
            while j < len(tokens) and tokens[j] != EOI:
                j += 1
            out.append(MOVIE)
            i = j + 1
        else:
            out.append(tokens[i])
            i += 1
    return out


def placeholder_view(tokens: Sequence[str], mode: str) -> List[str]:
    """(leading <movie> for REC) + span-collapsed tokens, eos dropped."""
    body = _collapse_spans([t for t in tokens if t != EOS_TOKEN])
    return ([MOVIE] if mode == REC else []) + body


def _reference_parts(sample: StructuredSample, tokenizer: Tokenizer):
    """Split a target at <RESP>: (prefix ids incl. <RESP>, response ids)."""
    resp_id = tokenizer.token_id(RESP)
    tgt = list(sample.target_tokens)
    if resp_id not in tgt:
        return None
    cut = tgt.index(resp_id) + 1
    return tgt[:cut], tgt[cut:]


def _substitute_ids(ids: Sequence[int], tokenizer: Tokenizer) -> List[int]:
    boi, eoi = tokenizer.token_id(BOI), tokenizer.token_id(EOI)
    movie = tokenizer.token_id(MOVIE)
    out: List[int] = []
    i = 0
    while i < len(ids):
        if ids[i] == boi:
            while i < len(ids) and ids[i] != eoi:
                i += 1
            out.append(movie)
            i += 1
        else:
            out.append(ids[i])
            i += 1
    return out


def _dedupe_turns(samples: Sequence[StructuredSample]) -> List[StructuredSample]:
    """One sample per (dialog, turn); multi-mention expansions collapse."""
    seen = set()
    turns = []
    for s in samples:
        key = (s.dialog_id, s.turn_index)
        if key not in seen:
            seen.add(key)
            turns.append(s)
    return turns


def mode_accuracy(model: LmModel, tokenizer: Tokenizer, trie: SidTrie,
                  samples: Sequence[StructuredSample],
                  max_text_tokens: int = 40) -> float:
    """Fraction of turns whose auto-decoded mode matches the ground truth."""
    turns = _dedupe_turns(samples)
    if not turns:
        raise ValueError("empty sample set")
    hits = 0
    for s in turns:
        out = generate(model, tokenizer, trie, s.context_tokens,
                       max_text_tokens=max_text_tokens)
        hits += 1 if out.mode == s.mode else 0
    return hits / len(turns)


def eval_protocol(model: LmModel, tokenizer: Tokenizer, trie: SidTrie,
                  samples: Sequence[StructuredSample], beam_width: int = 50,
                  max_text_tokens: int = 40) -> MetricReport:
    """Appendix-style evaluation over a test split."""
    rec_instances = []
    for s in samples:
        if s.mode != REC or s.target_item is None:
            continue
        top = recommend_topk(model, tokenizer, trie, s.context_tokens,
                             beam_width=beam_width,
                             k=min(max(RECALL_KS), beam_width))
        rec_instances.append(RecEvalInstance(
            context_tokens=tuple(s.context_tokens),
            truth_item=s.target_item, predictions=top))

    turns = _dedupe_turns(samples)
    candidates: List[List[str]] = []
    references: List[List[str]] = []
    ppl_refs: List[Tuple[List[int], List[int]]] = []
    for s in turns:
        parts = _reference_parts(s, tokenizer)
        if parts is None:
            continue
        prefix, response = parts
        out = generate(model, tokenizer, trie, s.context_tokens,
                       mode_override=s.mode, max_text_tokens=max_text_tokens)
        candidates.append(placeholder_view(out.text_tokens, out.mode))
        ref_tokens = [tokenizer.id_to_token[i] for i in response]
        references.append(placeholder_view(ref_tokens, s.mode))
        ppl_refs.append((list(s.context_tokens) + prefix,
                         _substitute_ids(response, tokenizer)))

    recall = {k: recall_at_k(rec_instances, k) for k in RECALL_KS} \
        if rec_instances else {}
    ndcg = {k: ndcg_at_k(rec_instances, k) for k in RANK_KS} \
        if rec_instances else {}
    mrr = {k: mrr_at_k(rec_instances, k) for k in RANK_KS} \
        if rec_instances else {}
    ppl = corpus_ppl(model, ppl_refs) if ppl_refs else None
    bleu_score = bleu(candidates, references) if candidates else None
    distinct = {n: distinct_n(candidates, n) for n in DISTINCT_NS
                if candidates and any(len(c) >= n for c in candidates)}
    return MetricReport(
        recall=recall, ndcg=ndcg, mrr=mrr, ppl=ppl, bleu=bleu_score,
        distinct=distinct,
        counts={"rec": len(rec_instances), "dialog": len(candidates)})


def average_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Field-wise mean across seeded runs; counts must agree."""
    if not reports:
        raise ValueError("no reports to average")
    first = reports[0]
    for r in reports[1:]:
        if r.counts != first.counts:
            raise ValueError("reports cover different instance counts")

    def mean_dict(dicts):
        keys = dicts[0].keys()
        return {k: float(np.mean([d[k] for d in dicts])) for k in keys}

    def mean_opt(values):
        return None if values[0] is None else float(np.mean(values))

    return MetricReport(
        recall=mean_dict([r.recall for r in reports]) if first.recall else {},
        ndcg=mean_dict([r.ndcg for r in reports]) if first.ndcg else {},
        mrr=mean_dict([r.mrr for r in reports]) if first.mrr else {},
        ppl=mean_opt([r.ppl for r in reports]),
        bleu=mean_opt([r.bleu for r in reports]),
        distinct=mean_dict([r.distinct for r in reports])
        if first.distinct else {},
        counts=dict(first.counts))
