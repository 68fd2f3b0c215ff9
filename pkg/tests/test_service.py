import re
from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from gencrs import pipeline as pl
from gencrs import synth
from gencrs.service import build_app_from_artifacts, create_app


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    spec = synth.SyntheticSpec(n_items=8, n_genres=3, dialogs_per_item=2,
                               seed=3)
    synth.make_synthetic(spec, root / "data")
    config = pl.PipelineConfig(
        catalog=str(root / "data" / "catalog.jsonl"),
        dialogs=str(root / "data" / "dialogs.jsonl"),
        out_dir=str(root / "run"),
        embedding_dim=24, rqvae_hidden_layers=1, rqvae_latent_dim=8,
        rqvae_levels=2, rqvae_codebook_size=6, rqvae_epochs=3,
        lm_d_model=32, lm_layers=1, lm_heads=2, lm_context_len=128,
        lm_steps=150, beam_width=12)
    result = pl.run_pipeline(config)
    return config, result


def make_client(artifacts, **kwargs) -> TestClient:
    config, result = artifacts
    app = build_app_from_artifacts(
        model_path=result.paths["lm"], sids_path=result.paths["sids"],
        catalog_path=config.catalog, corpus_dir=result.paths["corpus_dir"],
        beam_width=12, **kwargs)
    return TestClient(app)


@pytest.fixture(scope="module")
def client(artifacts):
    return make_client(artifacts)


def new_session(client) -> str:
    resp = client.post("/api/sessions")
    assert resp.status_code == 200, resp.text
    return resp.json()["session_id"]


class TestHealth:
    def test_ok(self, client):
        resp = client.get("/api/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["items"] == 8

    def test_loading_without_runtime(self):
        bare = TestClient(create_app(None))
        assert bare.get("/api/health").json() == {"status": "loading"}


class TestSessions:
    def test_create_returns_distinct_ids(self, client):
        ids = {new_session(client) for _ in range(5)}
        assert len(ids) == 5

    def test_new_session_history_empty(self, client):
        sid = new_session(client)
        view = client.get(f"/api/sessions/{sid}").json()
        assert view["session_id"] == sid
        assert view["history"] == []
        assert "created_at" in view

    def test_hundred_concurrent_creations(self, client):
        with ThreadPoolExecutor(max_workers=16) as pool:
            ids = list(pool.map(
                lambda _: client.post("/api/sessions").json()["session_id"],
                range(100)))
        assert len(set(ids)) == 100

    def test_unknown_session_404(self, client):
        resp = client.get("/api/sessions/nope")
        assert resp.status_code == 404
        body = resp.json()
        assert body["code"] == "unknown_session"
        assert "message" in body

    def test_create_without_model_503(self):
        bare = TestClient(create_app(None))
        resp = bare.post("/api/sessions")
        assert resp.status_code == 503
        assert resp.json()["code"] == "model_not_loaded"


class TestPostMessage:
    def test_chat_forced_has_no_item_fields(self, client):
        sid = new_session(client)
        resp = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "hi there",
                                 "mode_override": "chat"})
        assert resp.status_code == 200, resp.text
        body = resp.json()
        assert body["mode"] == "CHAT"
        assert "item_id" not in body
        assert "item_title" not in body
        assert "topk" not in body
        assert isinstance(body["response_text"], str)

    def test_rec_forced_has_item_fields(self, client, artifacts):
        from gencrs.catalog import load_catalog
        config, _ = artifacts
        catalog = load_catalog(config.catalog)
        sid = new_session(client)
        resp = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "i want a genre0 movie about kw0",
                                 "mode_override": "rec"})
        body = resp.json()
        assert body["mode"] == "REC"
        assert body["item_id"] in catalog
        assert body["item_title"] == catalog.get(body["item_id"]).title

    def test_item_override_pins_item(self, client):
        sid = new_session(client)
        resp = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "show me that one",
                                 "item_override": "item003"})
        body = resp.json()
        assert body["mode"] == "REC"
        assert body["item_id"] == "item003"

    def test_unknown_item_override_400(self, client):
        sid = new_session(client)
        resp = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "x", "item_override": "nope"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "unknown_item"

    def test_item_override_with_chat_mode_400(self, client):
        sid = new_session(client)
        resp = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "x", "mode_override": "chat",
                                 "item_override": "item003"})
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_override"

    def test_want_topk(self, client):
        sid = new_session(client)
        resp = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "i want a genre1 movie about kw1",
                                 "mode_override": "rec", "want_topk": 5})
        body = resp.json()
        topk = body["topk"]
        assert 1 <= len(topk) <= 5
        scores = [row["score"] for row in topk]
        assert scores == sorted(scores, reverse=True)
        assert all(set(row) == {"item_id", "title", "score", "sid"}
                   for row in topk)
        assert all(re.fullmatch(r"(<[a-z]_\d+>)+", row["sid"])
                   for row in topk)

    def test_topk_absent_for_chat(self, client):
        sid = new_session(client)
        resp = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "hello", "mode_override": "chat",
                                 "want_topk": 5})
        assert "topk" not in resp.json()

    def test_unknown_session_404(self, client):
        resp = client.post("/api/sessions/nope/messages",
                           json={"text": "hi"})
        assert resp.status_code == 404

    def test_bad_mode_override_422_with_code(self, client):
        sid = new_session(client)
        resp = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "x", "mode_override": "loud"})
        assert resp.status_code == 422
        assert resp.json()["code"] == "invalid_request"


class TestHistory:
    def test_two_turns_per_post_in_order(self, client):
        sid = new_session(client)
        for i, text in enumerate(["hi there", "another message"]):
            client.post(f"/api/sessions/{sid}/messages",
                        json={"text": text, "mode_override": "chat"})
        history = client.get(f"/api/sessions/{sid}").json()["history"]
        assert len(history) == 4
        assert [h["role"] for h in history] == ["user", "assistant"] * 2
        assert history[0]["text"] == "hi there"
        assert history[2]["text"] == "another message"

    def test_rec_turn_records_item_id(self, client):
        sid = new_session(client)
        client.post(f"/api/sessions/{sid}/messages",
                    json={"text": "pick one", "item_override": "item001"})
        history = client.get(f"/api/sessions/{sid}").json()["history"]
        assert history[1]["item_id"] == "item001"
        assert "item_id" not in history[0]

    def test_sessions_are_isolated(self, client):
        a, b = new_session(client), new_session(client)
        client.post(f"/api/sessions/{a}/messages",
                    json={"text": "only in a", "mode_override": "chat"})
        assert client.get(f"/api/sessions/{b}").json()["history"] == []
        assert len(client.get(f"/api/sessions/{a}").json()["history"]) == 2

    def test_response_text_matches_history(self, client):
        sid = new_session(client)
        body = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "hi", "mode_override": "chat"}).json()
        history = client.get(f"/api/sessions/{sid}").json()["history"]
        assert history[1]["text"] == body["response_text"]


class TestDebugFlag:
    def test_tokens_hidden_by_default(self, client):
        sid = new_session(client)
        body = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "hi", "mode_override": "chat"}).json()
        assert "tokens" not in body

    def test_tokens_shown_with_debug(self, artifacts):
        client = make_client(artifacts, debug=True)
        sid = new_session(client)
        body = client.post(f"/api/sessions/{sid}/messages",
                           json={"text": "hi", "mode_override": "chat"}).json()
        assert body["tokens"][0] == "<MODE=CHAT>"


class TestItemSearch:
    def test_title_substring(self, client):
        resp = client.get("/api/items", params={"query": "kw1"})
        items = resp.json()["items"]
        assert any(row["item_id"] == "item001" for row in items)
        assert all(set(row) == {"item_id", "title"} for row in items)

    def test_empty_query_returns_nothing(self, client):
        assert client.get("/api/items").json() == {"items": []}
