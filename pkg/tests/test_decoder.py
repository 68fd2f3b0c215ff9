import logging

import numpy as np
import pytest

from gencrs.catalog import Catalog, ItemRecord
from gencrs.collision import IdAssignment
from gencrs.corpus import CHAT, REC, Tokenizer
from gencrs.decoder import (
    ITEM,
    MODE,
    RESP_MARK,
    TEXT,
    GenState,
    RecList,
    RecEntry,
    generate,
    phase_mask,
    recommend_topk,
)
from gencrs.sid import (
    BOI,
    EOI,
    MODE_CHAT,
    MODE_REC,
    RESP,
    SidTrie,
    SidVocabulary,
    TrieNode,
    allowed_next,
    build_trie,
    lookup,
)
from gencrs.toylm import LmConfig, init_lm, logits

CODES = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 3),
         (2, 2), (3, 0), (3, 1), (3, 3)]


def make_scenario():
    items = [ItemRecord(item_id=f"m{i}", title=f"Movie {i}")
             for i in range(len(CODES))]
    catalog = Catalog.from_items(items)
    trie = build_trie(IdAssignment(codes_by_item=list(CODES), changed=set()),
                      catalog)
    sv = SidVocabulary(num_levels=2, codebook_size=4)
    tok = Tokenizer.build(["hello world nice movie fun :"], sv)
    return catalog, trie, tok


def make_model(tok, seed=0, n_layers=1, context_len=64):
    cfg = LmConfig(vocab_size=tok.vocab_size, d_model=16, n_layers=n_layers,
                   n_heads=2, context_len=context_len, seed=seed)
    return init_lm(cfg)


def zeroed_model(tok, context_len=64):
    model = make_model(tok, n_layers=0, context_len=context_len)
    for arr in model.params.values():
        arr[:] = 0.0
    return model


def context_ids(tok):
    return tok.encode("User : hello\nAssistant :")


class TestPhaseMask:
    def setup_method(self):
        self.catalog, self.trie, self.tok = make_scenario()

    def test_mode_phase(self):
        mask = phase_mask(GenState(MODE), self.tok, self.trie)
        assert mask == {self.tok.token_id(MODE_REC),
                        self.tok.token_id(MODE_CHAT)}

    def test_item_level_zero_projects_trie(self):
        mask = phase_mask(GenState(ITEM, ()), self.tok, self.trie)
        expected = {self.tok.token_id(f"<a_{c}>") for c in (0, 1, 2, 3)}
        assert mask == expected

    def test_item_level_one_follows_prefix(self):
        mask = phase_mask(GenState(ITEM, (2,)), self.tok, self.trie)
        assert mask == {self.tok.token_id("<b_2>")}

    def test_item_completion_allows_only_eoi(self):
        mask = phase_mask(GenState(ITEM, (2, 2)), self.tok, self.trie)
        assert mask == {self.tok.token_id(EOI)}

    def test_resp_mark(self):
        mask = phase_mask(GenState(RESP_MARK), self.tok, self.trie)
        assert mask == {self.tok.token_id(RESP)}

    def test_text_excludes_structure(self):
        mask = phase_mask(GenState(TEXT), self.tok, self.trie)
        assert mask == set(range(self.tok.base_size))
        for special in (BOI, EOI, RESP, MODE_REC, "<a_0>", "<b_3>"):
            assert self.tok.token_id(special) not in mask

    def test_text_inline_adds_boi_only(self):
        base = phase_mask(GenState(TEXT), self.tok, self.trie)
        inline = phase_mask(GenState(TEXT), self.tok, self.trie,
                            inline_items=True)
        assert inline - base == {self.tok.token_id(BOI)}

    def test_unknown_phase(self):
        with pytest.raises(ValueError, match="phase"):
            phase_mask(GenState("BAD"), self.tok, self.trie)


def enumerate_leaf_scores(model, tok, trie, ctx):
    """Exhaustive oracle: score every leaf path with per-step log-softmax."""
    sv = tok.sid_vocab
    base = list(ctx) + [tok.token_id(MODE_REC), tok.token_id(BOI)]
    results = []

    def descend(prefix, seq, lp):
        if len(prefix) == trie.num_levels:
            results.append((lookup(trie, prefix), lp, prefix))
            return
        row = logits(model, seq)[-1]
        row = row - row.max()
        logz = np.log(np.exp(row).sum())
        for code in sorted(allowed_next(trie, prefix)):
            tid = tok.token_id(sv.sid_token(len(prefix), code))
            descend(prefix + (code,), seq + [tid], lp + float(row[tid] - logz))

    descend((), base, 0.0)
    results.sort(key=lambda r: (-r[1], r[2]))
    return results


class TestRecommendTopk:
    def setup_method(self):
        self.catalog, self.trie, self.tok = make_scenario()

    def test_matches_exhaustive_enumeration(self):
        for seed in (0, 1, 2):
            model = make_model(self.tok, seed=seed)
            ctx = context_ids(self.tok)
            expected = enumerate_leaf_scores(model, self.tok, self.trie, ctx)
            got = recommend_topk(model, self.tok, self.trie, ctx,
                                 beam_width=16, k=10)
            assert got.item_ids() == [r[0] for r in expected]
            for entry, (_, score, codes) in zip(got.entries, expected):
                assert entry.score == pytest.approx(score, abs=1e-5)
                assert entry.codes == codes

    def test_scores_are_log_probabilities(self):
        model = make_model(self.tok, seed=3)
        got = recommend_topk(model, self.tok, self.trie,
                             context_ids(self.tok), beam_width=16, k=10)
        assert all(e.score <= 0.0 for e in got.entries)

    def test_uniform_model_ranks_lexicographically(self):
        model = zeroed_model(self.tok)
        got = recommend_topk(model, self.tok, self.trie,
                             context_ids(self.tok), beam_width=16, k=10)
        assert [e.codes for e in got.entries] == sorted(CODES)
        expected = 2.0 * -np.log(self.tok.vocab_size)
        assert got.entries[0].score == pytest.approx(expected, rel=1e-9)
        assert got.entries[0].score == got.entries[-1].score

    def test_shrinking_k_returns_prefix(self):
        model = make_model(self.tok, seed=4)
        ctx = context_ids(self.tok)
        big = recommend_topk(model, self.tok, self.trie, ctx,
                             beam_width=16, k=10)
        small = recommend_topk(model, self.tok, self.trie, ctx,
                               beam_width=16, k=3)
        assert small.entries == big.entries[:3]

    def test_delta_model_puts_item_first_with_zero_score(self):
        model = zeroed_model(self.tok)
        ctx = context_ids(self.tok)
        boi_pos = len(ctx) + 1
        # position rows steer the next-token choice; E rows answer them
        model.params["P"][boi_pos, 2] = 100.0
        model.params["P"][boi_pos + 1, 3] = 100.0
        model.params["lnf.g"][:] = 1.0
        model.params["E"][self.tok.token_id("<a_2>"), 2] = 60.0
        model.params["E"][self.tok.token_id("<b_2>"), 3] = 60.0
        got = recommend_topk(model, self.tok, self.trie, ctx,
                             beam_width=16, k=10)
        assert got.entries[0].item_id == "m6"
        assert got.entries[0].codes == (2, 2)
        assert -1e-6 < got.entries[0].score <= 0.0

    def test_k_larger_than_beam_rejected(self):
        model = make_model(self.tok)
        with pytest.raises(ValueError, match="beam width"):
            recommend_topk(model, self.tok, self.trie, [1, 2],
                           beam_width=4, k=8)

    def test_empty_trie_rejected(self):
        model = make_model(self.tok)
        empty = SidTrie(root=TrieNode(), num_levels=2, size=0)
        with pytest.raises(ValueError, match="empty"):
            recommend_topk(model, self.tok, empty, [1, 2])

    def test_sparse_trie_returns_short_list_with_warning(self, caplog):
        items = [ItemRecord(item_id=f"m{i}", title=f"Movie {i}")
                 for i in range(3)]
        catalog = Catalog.from_items(items)
        trie = build_trie(
            IdAssignment(codes_by_item=[(0, 0), (0, 1), (2, 3)],
                         changed=set()), catalog)
        model = make_model(self.tok, seed=5)
        with caplog.at_level(logging.WARNING, logger="gencrs.decoder"):
            got = recommend_topk(model, self.tok, trie,
                                 context_ids(self.tok), beam_width=5, k=5)
        assert len(got.entries) == 3
        assert any("beam width" in r.message for r in caplog.records)

    def test_reclist_invariants_enforced(self):
        with pytest.raises(ValueError, match="non-increasing"):
            RecList(entries=(RecEntry("a", -2.0, (0,)),
                             RecEntry("b", -1.0, (1,))))
        with pytest.raises(ValueError, match="distinct"):
            RecList(entries=(RecEntry("a", -1.0, (0,)),
                             RecEntry("a", -2.0, (1,))))


class TestGenerate:
    def setup_method(self):
        self.catalog, self.trie, self.tok = make_scenario()

    def test_chat_override_has_no_item_segment(self):
        model = make_model(self.tok, seed=0)
        out = generate(model, self.tok, self.trie, context_ids(self.tok),
                       mode_override=CHAT, max_text_tokens=8)
        assert out.mode == CHAT
        assert out.item_id is None
        assert out.tokens[0] == MODE_CHAT
        assert out.tokens[1] == RESP
        assert BOI not in out.tokens

    def test_rec_override_emits_constrained_segment(self):
        model = make_model(self.tok, seed=1)
        out = generate(model, self.tok, self.trie, context_ids(self.tok),
                       mode_override=REC, max_text_tokens=8)
        assert out.mode == REC
        assert out.tokens[0] == MODE_REC and out.tokens[1] == BOI
        assert out.tokens[4] == EOI and out.tokens[5] == RESP
        codes = tuple(self.tok.sid_vocab.parse_sid_token(t)[1]
                      for t in out.tokens[2:4])
        assert lookup(self.trie, codes) == out.item_id

    def test_item_override_forces_exact_segment(self):
        model = make_model(self.tok, seed=2)
        out = generate(model, self.tok, self.trie, context_ids(self.tok),
                       item_override="m5", max_text_tokens=4)
        assert out.mode == REC
        assert out.item_id == "m5"
        assert out.tokens[:6] == (MODE_REC, BOI, "<a_1>", "<b_3>", EOI, RESP)

    def test_unknown_item_override_rejected(self):
        model = make_model(self.tok)
        with pytest.raises(ValueError, match="not in the semantic-ID trie"):
            generate(model, self.tok, self.trie, [1], item_override="nope")

    def test_item_override_with_chat_mode_rejected(self):
        model = make_model(self.tok)
        with pytest.raises(ValueError, match="implies REC"):
            generate(model, self.tok, self.trie, [1],
                     mode_override=CHAT, item_override="m1")

    def test_every_emitted_item_is_real(self):
        ctx_pool = ["hello", "nice movie", "world fun :", "hello world"]
        for seed in range(8):
            model = make_model(self.tok, seed=seed)
            ctx = self.tok.encode(ctx_pool[seed % len(ctx_pool)])
            out = generate(model, self.tok, self.trie, ctx,
                           max_text_tokens=6)
            if out.mode == REC:
                assert out.item_id in {f"m{i}" for i in range(10)}
            else:
                assert out.item_id is None
            for t in out.text_tokens:
                assert self.tok.token_id(t) < self.tok.base_size

    def test_text_budget_respected(self):
        model = make_model(self.tok, seed=6)
        out = generate(model, self.tok, self.trie, context_ids(self.tok),
                       mode_override=CHAT, max_text_tokens=5)
        assert len(out.text_tokens) <= 5

    def test_zero_text_budget(self):
        model = make_model(self.tok, seed=6)
        out = generate(model, self.tok, self.trie, context_ids(self.tok),
                       mode_override=CHAT, max_text_tokens=0)
        assert out.text_tokens == ()

    def test_window_too_small_rejected(self):
        cfg = LmConfig(vocab_size=self.tok.vocab_size, d_model=8,
                       n_layers=0, n_heads=1, context_len=8, seed=0)
        model = init_lm(cfg)
        with pytest.raises(ValueError, match="cannot fit"):
            generate(model, self.tok, self.trie, [1, 2],
                     max_text_tokens=40)

    def test_long_context_truncates_from_left(self):
        model = make_model(self.tok, seed=7, context_len=32)
        long_ctx = self.tok.encode("hello world nice movie fun") * 20
        out = generate(model, self.tok, self.trie, long_ctx,
                       max_text_tokens=4)
        assert out.mode in (REC, CHAT)

    def test_deterministic(self):
        model = make_model(self.tok, seed=8)
        ctx = context_ids(self.tok)
        a = generate(model, self.tok, self.trie, ctx, max_text_tokens=10)
        b = generate(model, self.tok, self.trie, ctx, max_text_tokens=10)
        assert a == b

    def test_inline_items_stay_constrained(self):
        model = zeroed_model(self.tok)
        # constant preference: BOI strongest, then one valid path per level
        model.params["lnf.g"][:] = 0.0
        model.params["lnf.b"][0] = 1.0
        model.params["E"][self.tok.token_id(BOI), 0] = 90.0
        model.params["E"][self.tok.token_id("<a_3>"), 0] = 60.0
        model.params["E"][self.tok.token_id("<b_1>"), 0] = 60.0
        out = generate(model, self.tok, self.trie, context_ids(self.tok),
                       mode_override=CHAT, max_text_tokens=9,
                       inline_items=True)
        assert len(out.text_tokens) <= 9
        spans = []
        i = 0
        toks = list(out.text_tokens)
        while i < len(toks):
            if toks[i] == BOI:
                assert toks[i + 3] == EOI
                codes = tuple(self.tok.sid_vocab.parse_sid_token(t)[1]
                              for t in toks[i + 1:i + 3])
                spans.append(lookup(self.trie, codes))
                i += 4
            else:
                i += 1
        assert spans == ["m8", "m8"]

    def test_inline_disabled_by_default(self):
        model = zeroed_model(self.tok)
        model.params["lnf.g"][:] = 0.0
        model.params["lnf.b"][0] = 1.0
        model.params["E"][self.tok.token_id(BOI), 0] = 90.0
        out = generate(model, self.tok, self.trie, context_ids(self.tok),
                       mode_override=CHAT, max_text_tokens=9)
        assert BOI not in out.text_tokens
