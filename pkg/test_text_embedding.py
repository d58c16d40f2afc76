import numpy as np
import pytest
import requests

import gemini_client
import text_embedding as te
from errors import FetchError, FormatError
from graph_model import Gene
from text_embedding import (
    EmbedClientConfig,
    EmbeddingStore,
    build_embedding_store,
    describe_gene,
    describe_path,
    fetch_embeddings,
    load_embedding_store,
    mock_embed,
    mock_embedder,
    resolve_gene_matrix,
    save_embedding_store,
)


class _Resp:
    def __init__(self, text, status=200):
        self.text = text
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"status {self.status_code}")


def test_describe_gene_prefers_description():
    assert describe_gene(Gene("G1", "TP53", "Tumor suppressor.")) == "Tumor suppressor."
    assert describe_gene(Gene("G2", "MYC")) == "Gene MYC (G2)."


def test_describe_path_roles(five_gene_graph):
    text = describe_path((1, 2, 3, 4), five_gene_graph)
    assert text.startswith("In this pathway: receptor gene S2 connect to signaling gene S3")
    assert text.endswith("signaling gene S4 connect to target gene S5.")


def test_describe_path_two_genes(five_gene_graph):
    assert describe_path((0, 2), five_gene_graph) == "In this pathway: receptor gene S1 connect to target gene S3."


def test_mock_embed_unit_norm_and_deterministic():
    a = mock_embed("hello", 32, seed=1)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    np.testing.assert_array_equal(a, mock_embed("hello", 32, seed=1))
    assert not np.array_equal(a, mock_embed("hello", 32, seed=2))
    assert not np.array_equal(a, mock_embed("hello!", 32, seed=1))


def test_store_round_trip(tmp_path, five_gene_graph, five_gene_paths):
    store = build_embedding_store(five_gene_graph, five_gene_paths, mock_embedder(8), 8)
    save_embedding_store(store, tmp_path / "e.tnge")
    back = load_embedding_store(tmp_path / "e.tnge")
    assert back.equals(store)
    assert len(back.gene_vectors) == 5 and len(back.path_vectors) == 2


def test_store_bad_magic(tmp_path):
    (tmp_path / "x.tnge").write_bytes(b"XXXX" + b"\0" * 20)
    with pytest.raises(FormatError):
        load_embedding_store(tmp_path / "x.tnge")


def test_store_missing_file(tmp_path):
    with pytest.raises(FormatError, match="cannot read"):
        load_embedding_store(tmp_path / "absent.tnge")


def test_store_truncated(tmp_path, five_gene_graph, five_gene_paths):
    store = build_embedding_store(five_gene_graph, five_gene_paths, mock_embedder(8), 8)
    save_embedding_store(store, tmp_path / "e.tnge")
    raw = (tmp_path / "e.tnge").read_bytes()
    (tmp_path / "cut.tnge").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_embedding_store(tmp_path / "cut.tnge")


def test_missing_gene_falls_back_to_mock(five_gene_graph):
    store = EmbeddingStore(d_llm=4, gene_vectors={"G1": np.ones(4)})
    m = resolve_gene_matrix(store, five_gene_graph, seed=0)
    np.testing.assert_array_equal(m[0], np.ones(4))
    np.testing.assert_array_equal(m[1], mock_embed(describe_gene(five_gene_graph.genes[1]), 4, 0))


def test_fetch_preserves_order_across_batches(monkeypatch):
    calls = []

    def fake_post(url, data, timeout, headers):
        lines = data.decode("utf-8").split("\n")
        calls.append(lines)
        return _Resp("\n".join(f"{len(t)},0" for t in lines))

    monkeypatch.setattr(te.requests, "post", fake_post)
    cfg = EmbedClientConfig(endpoint="http://embed.local", batch_size=2, d_llm=2, max_workers=2)
    texts = ["a", "bb", "ccc", "dddd", "eeeee"]
    out = fetch_embeddings(cfg, texts)
    assert [v[0] for v in out] == [1, 2, 3, 4, 5]
    assert len(calls) == 3


def test_fetch_empty_makes_no_request(monkeypatch):
    monkeypatch.setattr(te.requests, "post", lambda *a, **k: pytest.fail("no request expected"))
    assert fetch_embeddings(EmbedClientConfig(endpoint="http://x"), []) == []


def test_fetch_retries_then_fails(monkeypatch):
    attempts = []

    def boom(*a, **k):
        attempts.append(1)
        raise requests.ConnectionError("unreachable")

    monkeypatch.setattr(te.requests, "post", boom)
    monkeypatch.setattr(te.time, "sleep", lambda s: None)
    cfg = EmbedClientConfig(endpoint="http://x", retries=2, d_llm=2)
    with pytest.raises(FetchError) as exc:
        fetch_embeddings(cfg, ["a"])
    assert len(attempts) == 3
    assert "batch 0" in str(exc.value)


def test_fetch_width_mismatch(monkeypatch):
    monkeypatch.setattr(te.requests, "post", lambda *a, **k: _Resp("1,2,3"))
    with pytest.raises(FetchError):
        fetch_embeddings(EmbedClientConfig(endpoint="http://x", d_llm=2), ["a"])


def test_gemini_backend_checks_width(monkeypatch):
    monkeypatch.setattr(gemini_client, "_embed_one", lambda text, model: [0.1, 0.2, 0.3])
    vecs = gemini_client.embed_texts_gemini(["a", "b"], d_llm=3)
    assert len(vecs) == 2
    with pytest.raises(FetchError):
        gemini_client.embed_texts_gemini(["a"], d_llm=4)


def test_gemini_backend_wraps_sdk_errors(monkeypatch):
    def fail(text, model):
        raise RuntimeError("quota")

    monkeypatch.setattr(gemini_client, "_embed_one", fail)
    with pytest.raises(FetchError):
        gemini_client.embed_texts_gemini(["a"], d_llm=3)
