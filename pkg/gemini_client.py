# gemini_client.py

import os
from typing import List, Sequence

import numpy as np
from dotenv import load_dotenv

from errors import FetchError

try:
    # New SDK: google-genai
    from google import genai  # type: ignore
    from google.genai import types  # type: ignore
    _SDK = "google-genai"
except Exception:
    # Fallback: older SDK (google-generativeai)
    import google.generativeai as genai  # type: ignore
    types = None
    _SDK = "google-generativeai"

load_dotenv()

EMBED_MODEL = os.getenv("GEMINI_EMBED_MODEL", "models/text-embedding-004").strip() or "models/text-embedding-004"

_client = None


def _get_client():
    """Configure the SDK on first use so importing this module never needs a key."""
    global _client
    key = os.getenv("GEMINI_API_KEY", "").strip()
    if not key:
        raise FetchError("GEMINI_API_KEY is not set. Add it to .env or the environment.")
    if _SDK == "google-genai":
        if _client is None:
            _client = genai.Client(api_key=key)
        return _client
    genai.configure(api_key=key)
    return None


def _embed_one(text: str, model: str) -> List[float]:
    if _SDK == "google-genai":
        resp = _get_client().models.embed_content(
            model=model,
            contents=text,
            config=types.EmbedContentConfig(task_type="SEMANTIC_SIMILARITY"),
        )
        return list(resp.embeddings[0].values)

    # google-generativeai fallback
    _get_client()
    resp = genai.embed_content(model=model, content=text, task_type="semantic_similarity")
    return list(resp["embedding"])


def embed_texts_gemini(texts: Sequence[str], *, d_llm: int, model: str = EMBED_MODEL) -> List[np.ndarray]:
    """One pooled sentence vector per text, in input order."""
    out: List[np.ndarray] = []
    for i, text in enumerate(texts):
        try:
            values = _embed_one(text, model)
        except FetchError:
            raise
        except Exception as e:
            raise FetchError(f"Gemini embedding failed for text {i}: {type(e).__name__}: {e}") from e
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (d_llm,):
            raise FetchError(f"Gemini returned width {vec.size} for text {i}, expected {d_llm}")
        out.append(vec)
    return out
