"""
搜索与网页抓取工具
严格按时间截止过滤，防止收盘后的信息泄漏进作答过程
"""

import json
import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import httpx

from .config import ENV_SEARCH_API_KEY, ENV_SEARCH_URL, env_setting
from .errors import ToolError, ValidationError
from .llm_backend import OP_PAGE_SUMMARY, ChatBackend
from .prompts import PAGE_SUMMARY_TEMPLATE
from .tasks import format_timestamp, parse_timestamp

logger = logging.getLogger(__name__)

DEFAULT_PAGE_CHAR_BUDGET = 20000

_TAG_RE = re.compile(r"<[^>]+>")
_SPACE_RE = re.compile(r"\s+")


@dataclass(frozen=True)
class SearchRequest:
    query: str
    cutoff: datetime


@dataclass(frozen=True)
class Snippet:
    title: str
    url: str
    text: str
    published_at: Optional[datetime]


@dataclass(frozen=True)
class SearchResult:
    snippets: Sequence[Snippet] = field(default_factory=tuple)

    def render(self) -> str:
        if not self.snippets:
            return "No results."
        blocks = []
        for i, s in enumerate(self.snippets, 1):
            blocks.append(f"{i}. {s.title} ({format_timestamp(s.published_at)})\n{s.url}\n{s.text}")
        return "\n\n".join(blocks)


class SearchBackend(ABC):
    """搜索后端接口，必须能承受并发请求"""

    @abstractmethod
    def search(self, request: SearchRequest) -> SearchResult:
        """按查询搜索，尽量只返回截止时间之前的文档"""

    @abstractmethod
    def fetch(self, url: str, cutoff: datetime) -> str:
        """抓取网页原文"""


class FixtureSearchBackend(SearchBackend):
    """
    本地语料搜索，测试全部使用
    语料为 JSONL: {"url", "title", "text", "published_at"}，查询中的每个词都出现才算命中
    """

    def __init__(self, documents: Sequence[Dict], max_results: int = 10):
        self.documents: List[Snippet] = []
        self._by_url: Dict[str, Snippet] = {}
        self.max_results = max_results
        for i, doc in enumerate(documents):
            published = doc.get("published_at")
            snippet = Snippet(
                title=str(doc.get("title", "")),
                url=str(doc["url"]),
                text=str(doc.get("text", "")),
                published_at=parse_timestamp(published, f"documents[{i}].published_at") if published else None,
            )
            self.documents.append(snippet)
            self._by_url[snippet.url] = snippet

    @classmethod
    def from_file(cls, path, max_results: int = 10) -> "FixtureSearchBackend":
        docs = []
        with Path(path).open(encoding="utf-8") as f:
            for line_num, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    doc = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ValidationError(f"invalid JSON: {e.msg}", line_number=line_num) from e
                if not isinstance(doc, dict) or "url" not in doc:
                    raise ValidationError("document needs a url", field="url", line_number=line_num)
                docs.append(doc)
        return cls(docs, max_results)

    def search(self, request: SearchRequest) -> SearchResult:
        terms = request.query.lower().split()
        hits = []
        for doc in self.documents:
            haystack = f"{doc.title}\n{doc.text}".lower()
            if terms and all(t in haystack for t in terms):
                hits.append(doc)
        return SearchResult(tuple(hits[: self.max_results]))

    def fetch(self, url: str, cutoff: datetime) -> str:
        doc = self._by_url.get(url)
        if doc is None:
            raise ToolError(f"unknown url: {url}")
        if doc.published_at is None or doc.published_at > cutoff:
            raise ToolError(f"page not available before cutoff: {url}")
        return doc.text


class SerperSearchBackend(SearchBackend):
    """Google 搜索 API，通过改写查询加入 before: 时间过滤"""

    DATE_FORMATS = ("%b %d, %Y", "%d %b %Y", "%Y-%m-%d", "%B %d, %Y")

    def __init__(self, api_key: Optional[str] = None, url: Optional[str] = None, num_results: int = 10,
                 timeout: float = 30.0):
        self.api_key = api_key or env_setting(ENV_SEARCH_API_KEY)
        self.url = url or env_setting(ENV_SEARCH_URL, "https://google.serper.dev/search")
        self.num_results = num_results
        self.timeout = timeout

    def _parse_date(self, value) -> Optional[datetime]:
        if not value:
            return None
        for fmt in self.DATE_FORMATS:
            try:
                return datetime.strptime(value, fmt).replace(tzinfo=timezone.utc)
            except ValueError:
                continue
        return None

    def search(self, request: SearchRequest) -> SearchResult:
        if not self.api_key:
            raise ToolError(f"search API key missing, set {ENV_SEARCH_API_KEY}")
        query = f"{request.query} before:{request.cutoff.date().isoformat()}"
        try:
            response = httpx.post(self.url, json={"q": query, "num": self.num_results},
                                  headers={"X-API-KEY": self.api_key}, timeout=self.timeout)
            response.raise_for_status()
            body = response.json()
        except (httpx.HTTPError, ValueError) as e:
            raise ToolError(f"search failed: {e}") from e
        snippets = []
        for item in body.get("organic", []):
            snippets.append(Snippet(item.get("title", ""), item.get("link", ""),
                                    item.get("snippet", ""), self._parse_date(item.get("date"))))
        return SearchResult(tuple(snippets))

    def fetch(self, url: str, cutoff: datetime) -> str:
        try:
            response = httpx.get(url, timeout=self.timeout, follow_redirects=True)
            response.raise_for_status()
        except httpx.HTTPError as e:
            raise ToolError(f"fetch failed: {e}") from e
        return _SPACE_RE.sub(" ", _TAG_RE.sub(" ", response.text)).strip()


def search(tool_backend: SearchBackend, request: SearchRequest) -> SearchResult:
    """
    带时间截止的搜索

    参数:
    tool_backend (SearchBackend): 搜索后端
    request (SearchRequest): 查询和截止时间

    返回:
    SearchResult: 只含 published_at <= cutoff 的结果，无日期的文档被丢弃
    """
    if request.cutoff is None:
        raise ValidationError("cutoff is required", field="cutoff")
    result = tool_backend.search(request)
    kept = tuple(s for s in result.snippets
                 if s.published_at is not None and s.published_at <= request.cutoff)
    dropped = len(result.snippets) - len(kept)
    if dropped:
        logger.debug("丢弃 %d 条截止时间之后或无日期的结果", dropped)
    return SearchResult(kept)


def fetch_page(tool_backend: SearchBackend, url: str, cutoff: datetime,
               summarizer: Optional[ChatBackend] = None, char_budget: int = DEFAULT_PAGE_CHAR_BUDGET,
               question: str = "", task_id: str = "", temperature: float = 0.2) -> str:
    """
    抓取网页，超出字符预算时交给模型摘要

    参数:
    tool_backend (SearchBackend): 搜索后端
    url (str): 网页地址
    cutoff (datetime): 截止时间
    summarizer (ChatBackend): 摘要用的对话后端，为空时直接截断
    char_budget (int): 字符预算

    返回:
    str: 原文或摘要
    """
    text = tool_backend.fetch(url, cutoff)
    if len(text) <= char_budget:
        return text
    if summarizer is None:
        return text[:char_budget]
    prompt = PAGE_SUMMARY_TEMPLATE.substitute(question=question, content=text)
    return summarizer.complete(prompt, operation=OP_PAGE_SUMMARY, task_id=task_id, temperature=temperature)
