"""
文本向量化模块
提供向量化接口、余弦相似度，以及测试用的确定性哈希向量器
"""

import logging
import re
import threading
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence

import httpx
import numpy as np

from .config import ENV_EMBED_API_KEY, ENV_EMBED_BASE_URL, env_setting
from .errors import BackendError, ValidationError, classify_error

logger = logging.getLogger(__name__)

# 向量就是一维 float64 数组，单位长度
EmbeddingVector = np.ndarray

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK_64 = 0xFFFFFFFFFFFFFFFF

_TOKEN_RE = re.compile(r"[^\W_]+")


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64 位哈希"""
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK_64
    return h


def tokenize(text: str) -> List[str]:
    """小写后按非字母数字字符切分"""
    return _TOKEN_RE.findall(text.lower())


def _check_text(text: str) -> str:
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("text must be non-empty", field="text")
    return text


def normalize(values) -> EmbeddingVector:
    """
    L2 归一化

    参数:
    values: 任意实数序列

    返回:
    EmbeddingVector: 单位向量
    """
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise ValidationError(f"expected non-empty 1D vector, got shape {vec.shape}", field="values")
    if not np.all(np.isfinite(vec)):
        raise ValidationError("vector contains NaN or Inf values", field="values")
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ValidationError("cannot normalize a zero vector", field="values")
    return vec / norm


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """
    两个单位向量的余弦相似度

    参数:
    a (EmbeddingVector): 向量 a
    b (EmbeddingVector): 向量 b

    返回:
    float: [-1, 1] 之间的相似度
    """
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}", field="dimension")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


class EmbeddingProvider(ABC):
    """向量化接口，构造后无状态"""

    dimension: Optional[int] = None

    @abstractmethod
    def embed(self, text: str) -> EmbeddingVector:
        """把一段文本变成单位向量"""

    def embed_many(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        """批量向量化，默认逐条调用"""
        return [self.embed(t) for t in texts]

    def similarity(self, text_a: str, text_b: str) -> float:
        return cosine(self.embed(text_a), self.embed(text_b))


class HashingEmbedder(EmbeddingProvider):
    """
    确定性词袋向量器
    每个词用 FNV-1a 64 位哈希映射到 256 个桶之一，计数后归一化
    """

    def __init__(self, dimension: int = 256):
        self.dimension = dimension

    def embed(self, text: str) -> EmbeddingVector:
        _check_text(text)
        tokens = tokenize(text)
        if not tokens:
            # 纯符号文本，整体当作一个词
            tokens = [text.strip()]
        counts = np.zeros(self.dimension, dtype=np.float64)
        for token in tokens:
            counts[fnv1a_64(token.encode("utf-8")) % self.dimension] += 1.0
        return normalize(counts)


class HttpEmbedder(EmbeddingProvider):
    """远程向量服务，POST {"input": [...], "model": ...}"""

    def __init__(self, model: str, base_url: Optional[str] = None, api_key: Optional[str] = None,
                 timeout: float = 60.0):
        self.model = model
        self.base_url = base_url or env_setting(ENV_EMBED_BASE_URL, "https://api.openai.com/v1")
        self.api_key = api_key or env_setting(ENV_EMBED_API_KEY)
        self.timeout = timeout

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        for text in texts:
            _check_text(text)
        if not texts:
            return []
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"input": list(texts), "model": self.model}
        logger.debug("embedding %d texts with %s", len(texts), self.model)
        try:
            response = httpx.post(f"{self.base_url}/embeddings", json=payload, headers=headers,
                                  timeout=self.timeout)
            response.raise_for_status()
            body = response.json()
        except (httpx.HTTPError, ValueError) as e:
            raise BackendError(f"embedding request failed: {e}", classify_error(e)) from e

        # 兼容 OpenAI 格式和纯数组格式
        rows = body.get("data", body) if isinstance(body, dict) else body
        try:
            vectors = [normalize(r["embedding"] if isinstance(r, dict) else r) for r in rows]
        except (KeyError, TypeError, ValidationError) as e:
            raise BackendError(f"malformed embedding response: {e}") from e
        if len(vectors) != len(texts):
            raise BackendError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        return vectors


class MemoEmbedder(EmbeddingProvider):
    """按原文缓存的包装器"""

    def __init__(self, inner: EmbeddingProvider):
        self.inner = inner
        self.dimension = inner.dimension
        self._memo: Dict[str, EmbeddingVector] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> EmbeddingVector:
        with self._lock:
            cached = self._memo.get(text)
        if cached is not None:
            return cached
        vec = self.inner.embed(text)
        with self._lock:
            self._memo[text] = vec
        return vec

    def embed_many(self, texts: Sequence[str]) -> List[EmbeddingVector]:
        with self._lock:
            missing = [t for t in dict.fromkeys(texts) if t not in self._memo]
        if missing:
            fresh = self.inner.embed_many(missing)
            with self._lock:
                self._memo.update(zip(missing, fresh))
        with self._lock:
            return [self._memo[t] for t in texts]

    def __len__(self):
        return len(self._memo)
