from __future__ import annotations

import hashlib
import itertools
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gainrag.embedding import DIM, HashingEmbedder, embed, embed_all, get_embedder


def reference_embed(text: str, dim: int = DIM) -> np.ndarray:
    # independent restatement of the hashing scheme
    toks = [t.lower() for t in re.findall(r"[A-Za-z0-9]+", text)]
    feats = ["u:" + t for t in toks] + ["b:" + a + " " + b for a, b in zip(toks, toks[1:])]
    v = np.zeros(dim)
    for f in feats:
        h = int.from_bytes(hashlib.blake2b(f.encode(), digest_size=8).digest(), "little")
        v[h % dim] += 1.0 if h >> 63 else -1.0
    n = np.linalg.norm(v)
    return v / n if n else v


def test_empty_text_is_zero():
    v = embed("")
    assert v.shape == (DIM,) and not v.any()
    assert not embed(";;; ==").any()


def test_deterministic():
    t = "task_enum=pick; main_object=cube"
    assert np.array_equal(embed(t), embed(t))
    assert np.array_equal(HashingEmbedder().embed(t), embed(t))


def test_cube_vs_fruit_distance():
    # 9 features each (5 unigrams + 4 bigrams), no bucket collisions; 2 differ on each side
    a = embed("task=pick; main_object=cube")
    b = embed("task=pick; main_object=fruit")
    assert np.linalg.norm(a - b) == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_matches_reference(db):
    for rec in db:
        np.testing.assert_array_equal(embed(rec.description), reference_embed(rec.description))


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=80))
def test_norm_is_one_or_zero(text):
    v = embed(text)
    assert np.all(np.isfinite(v))
    n = np.linalg.norm(v)
    assert n == 0.0 or abs(n - 1.0) < 1e-9


def test_embed_all():
    assert embed_all([]) == []
    (v,) = embed_all(["a b"])
    assert np.array_equal(v, embed("a b"))


def test_seed_vectors_distinct(db):
    vecs = embed_all([r.description for r in db])
    assert len(vecs) == 16
    for a, b in itertools.combinations(vecs, 2):
        assert np.linalg.norm(a - b) > 0


def test_pair_order_matters(db):
    pairs = db[0].description.split("; ")
    shuffled = "; ".join(pairs[::-1])
    assert np.linalg.norm(embed(shuffled) - embed(db[0].description)) > 0


def test_unigram_only_is_order_blind():
    e = HashingEmbedder(bigrams=False)
    assert np.array_equal(e.embed("a=1; b=2"), e.embed("b=2; a=1"))


def test_registry():
    assert isinstance(get_embedder("hashing"), HashingEmbedder)
    with pytest.raises(ValueError):
        get_embedder("minilm")
