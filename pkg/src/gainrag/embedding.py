"""Text embedders mapping canonical query text to 384-d vectors.

The default :class:`HashingEmbedder` needs no model: it hashes word unigrams
and adjacent-word bigrams into signed buckets and L2-normalizes. Bigrams make
the vector sensitive to the order of ``key=value`` pairs, which is why query
text is always emitted in a fixed key order.
"""

from __future__ import annotations

import hashlib
import json
import re
import urllib.request
from typing import Sequence

import numpy as np

DIM = 384

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+")


class Embedder:
    name = "abstract"
    dimension = DIM

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def embed_all(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


def tokenize(text: str) -> list[str]:
    return [t.lower() for t in _TOKEN_RE.findall(text)]


def _bucket(feature: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "little")
    sign = 1.0 if (h >> 63) & 1 else -1.0
    return h % dim, sign


class HashingEmbedder(Embedder):
    name = "hashing"

    def __init__(self, dimension: int = DIM, bigrams: bool = True):
        self.dimension = dimension
        self.bigrams = bigrams

    def features(self, text: str) -> list[str]:
        toks = tokenize(text)
        feats = ["u:" + t for t in toks]
        if self.bigrams:
            feats += [f"b:{a} {b}" for a, b in zip(toks, toks[1:])]
        return feats

    def embed(self, text: str) -> np.ndarray:
        v = np.zeros(self.dimension)
        for feat in self.features(text):
            i, s = _bucket(feat, self.dimension)
            v[i] += s
        n = np.linalg.norm(v)
        if n > 0:
            v /= n
        return v


class RemoteEmbedder(Embedder):
    """Client for an HTTP embedding service: POST ``{"text": ...}`` -> ``{"vector": [...]}``."""

    name = "remote"

    def __init__(self, url: str, timeout: float = 5.0, dimension: int = DIM):
        self.url = url
        self.timeout = timeout
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        body = json.dumps({"text": text}).encode()
        req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            vec = np.asarray(json.loads(resp.read())["vector"], dtype=float)
        if vec.shape != (self.dimension,) or not np.all(np.isfinite(vec)):
            raise ValueError(f"remote embedder returned shape {vec.shape}, expected ({self.dimension},)")
        return vec


EMBEDDERS = {"hashing": HashingEmbedder, "remote": RemoteEmbedder}


def get_embedder(name: str = "hashing", **kwargs) -> Embedder:
    try:
        cls = EMBEDDERS[name]
    except KeyError:
        raise ValueError(f"unknown embedder {name!r}; choose from {sorted(EMBEDDERS)}") from None
    return cls(**kwargs)


_default = HashingEmbedder()


def embed(text: str) -> np.ndarray:
    return _default.embed(text)


def embed_all(texts: Sequence[str]) -> list[np.ndarray]:
    return _default.embed_all(texts)
