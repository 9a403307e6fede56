"""
对话后端
HTTP chat-completion 客户端，以及按 (操作, 任务id) 回放脚本的确定性模拟后端
"""

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import httpx

from .config import ENV_CHAT_API_KEY, ENV_CHAT_BASE_URL, env_setting
from .errors import BackendError, BackendErrorType, ValidationError, classify_error

logger = logging.getLogger(__name__)

# 操作名，也是脚本规则的键
OP_GENERATE_QUERIES = "generate_queries"
OP_COMPILE_GUIDELINE = "compile_guideline"
OP_REFLECT = "reflect"
OP_SUMMARIZE_EXPERIENCE = "summarize_experience"
OP_PREDICT = "predict"
OP_PAGE_SUMMARY = "page_summary"

WILDCARD_TASK = "*"


@dataclass(frozen=True)
class ToolCall:
    id: str
    name: str
    arguments: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ChatReply:
    """模型一次回复：文本内容和可选的工具调用"""
    content: str = ""
    tool_calls: Sequence[ToolCall] = ()


class ChatBackend(ABC):
    """对话后端接口"""

    @abstractmethod
    def chat(self, messages: List[Dict[str, Any]], *, operation: str, task_id: str,
             tools: Optional[List[Dict[str, Any]]] = None, temperature: float = 0.2) -> ChatReply:
        """发送对话并返回第一条候选回复"""

    def complete(self, prompt: str, *, operation: str, task_id: str, temperature: float = 0.2) -> str:
        """单轮用户消息，只取文本"""
        reply = self.chat([{"role": "user", "content": prompt}], operation=operation,
                          task_id=task_id, temperature=temperature)
        return reply.content


class HttpChatBackend(ChatBackend):
    """OpenAI 兼容的 chat-completion 接口"""

    def __init__(self, model: str, base_url: Optional[str] = None, api_key: Optional[str] = None,
                 timeout: float = 120.0):
        self.model = model
        self.base_url = base_url or env_setting(ENV_CHAT_BASE_URL, "https://api.openai.com/v1")
        self.api_key = api_key or env_setting(ENV_CHAT_API_KEY)
        self.timeout = timeout

    def chat(self, messages, *, operation, task_id, tools=None, temperature=0.2) -> ChatReply:
        payload = {
            "model": self.model,
            "temperature": temperature,
            "messages": messages,
        }
        if tools:
            payload["tools"] = tools
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        logger.debug("chat %s/%s with %d messages", operation, task_id, len(messages))
        try:
            response = httpx.post(f"{self.base_url}/chat/completions", json=payload,
                                  headers=headers, timeout=self.timeout)
            response.raise_for_status()
            body = response.json()
        except (httpx.HTTPError, ValueError) as e:
            raise BackendError(f"chat request failed ({operation}/{task_id}): {e}",
                               classify_error(e)) from e

        try:
            message = body["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as e:
            raise BackendError(f"malformed chat response: {e}", BackendErrorType.API_ERROR) from e

        tool_calls = []
        for call in message.get("tool_calls") or []:
            function = call.get("function", {})
            try:
                arguments = json.loads(function.get("arguments") or "{}")
            except json.JSONDecodeError:
                arguments = {"_raw": function.get("arguments")}
            tool_calls.append(ToolCall(call.get("id", ""), function.get("name", ""), arguments))
        return ChatReply(message.get("content") or "", tuple(tool_calls))


def _prompt_text(messages) -> str:
    return "\n".join(str(m.get("content") or "") for m in messages)


def _assistant_turns(messages) -> int:
    return sum(1 for m in messages if m.get("role") == "assistant")


class ScriptedBackend(ChatBackend):
    """
    脚本回放后端
    规则格式: {"operation", "task_id", "when": [标记...], "reply"}
    task_id 可以是 "*"；多条规则命中时，when 标记最多的优先，其次精确 id 优先，再按文件顺序。
    reply 为列表时按对话中已有的 assistant 轮数取第几项（多轮工具调用脚本）。
    """

    def __init__(self, rules: Sequence[Dict[str, Any]] = ()):
        self.rules: List[Dict[str, Any]] = []
        for i, rule in enumerate(rules):
            self.rules.append(self._check_rule(rule, i))

    @staticmethod
    def _check_rule(rule, index):
        if not isinstance(rule, dict):
            raise ValidationError("rule must be an object", field=f"rules[{index}]")
        for key in ("operation", "task_id", "reply"):
            if key not in rule:
                raise ValidationError("missing key", field=f"rules[{index}].{key}")
        when = rule.get("when") or []
        if isinstance(when, str):
            when = [when]
        return {"operation": rule["operation"], "task_id": str(rule["task_id"]),
                "when": list(when), "reply": rule["reply"]}

    @classmethod
    def from_file(cls, path) -> "ScriptedBackend":
        """读取 JSON 脚本文件，顶层可以是规则列表或 {"rules": [...]}"""
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValidationError(f"transcript is not valid JSON: {e.msg}", line_number=e.lineno) from e
        if isinstance(data, dict):
            data = data.get("rules", [])
        return cls(data)

    def add_rule(self, operation, task_id, reply, when=()):
        self.rules.append(self._check_rule(
            {"operation": operation, "task_id": task_id, "reply": reply, "when": list(when)},
            len(self.rules)))

    def to_dict(self) -> Dict[str, Any]:
        return {"rules": [dict(r) for r in self.rules]}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n",
                              encoding="utf-8", newline="\n")

    def find_rule(self, operation: str, task_id: str, prompt: str) -> Optional[Dict[str, Any]]:
        best, best_key = None, None
        for index, rule in enumerate(self.rules):
            if rule["operation"] != operation:
                continue
            if rule["task_id"] not in (task_id, WILDCARD_TASK):
                continue
            if not all(marker in prompt for marker in rule["when"]):
                continue
            key = (-len(rule["when"]), 0 if rule["task_id"] == task_id else 1, index)
            if best_key is None or key < best_key:
                best, best_key = rule, key
        return best

    def chat(self, messages, *, operation, task_id, tools=None, temperature=0.2) -> ChatReply:
        rule = self.find_rule(operation, task_id, _prompt_text(messages))
        if rule is None:
            raise BackendError(f"no scripted reply for ({operation}, {task_id})")
        reply = rule["reply"]
        turn = _assistant_turns(messages)
        if isinstance(reply, list):
            if not reply:
                raise BackendError(f"empty scripted reply list for ({operation}, {task_id})")
            reply = reply[min(turn, len(reply) - 1)]
        return self._to_reply(reply, turn, operation, task_id)

    @staticmethod
    def _to_reply(item, turn, operation, task_id) -> ChatReply:
        if isinstance(item, str):
            return ChatReply(item)
        if isinstance(item, dict):
            if "error" in item:
                raise BackendError(f"scripted failure ({operation}/{task_id}): {item['error']}")
            if "tool" in item:
                call = ToolCall(f"call_{turn}", item["tool"], dict(item.get("arguments") or {}))
                return ChatReply(item.get("content", ""), (call,))
            if "content" in item:
                return ChatReply(str(item["content"]))
            # 其余对象原样当作 JSON 文本回复
            return ChatReply(json.dumps(item, ensure_ascii=False))
        raise BackendError(f"unsupported scripted reply for ({operation}, {task_id}): {item!r}")

