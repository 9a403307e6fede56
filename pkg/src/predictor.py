"""
作答智能体
给定任务和可选准则，带工具的对话循环产出概率预测和轨迹
"""

import json
import logging
from typing import Callable, Dict, List, Optional, Set, Tuple

from .cognition import Guideline
from .errors import LiveEvoError, ToolError
from .json_utils import extract_json_object
from .llm_backend import OP_PREDICT, ChatBackend, ChatReply, ToolCall
from .prompts import (GUIDELINE_BLOCK_TEMPLATE, PREDICTION_TEMPLATE, format_bullets,
                      format_outcomes)
from .search_tools import (DEFAULT_PAGE_CHAR_BUDGET, SearchBackend, SearchRequest, fetch_page,
                           search)
from .tasks import (STEP_MODEL_MESSAGE, STEP_TOOL_CALL, STEP_TOOL_RESULT, Forecast, Task,
                    Trajectory, format_timestamp)

logger = logging.getLogger(__name__)

DEFAULT_TURN_CAP = 20

FORMAT_REMINDER = ("Reply with only a JSON object mapping each possible outcome to its probability.")

TOOL_SPECS = [
    {
        "type": "function",
        "function": {
            "name": "search",
            "description": "Search the web. Only results published before the information cutoff are returned.",
            "parameters": {
                "type": "object",
                "properties": {"query": {"type": "string"}},
                "required": ["query"],
            },
        },
    },
    {
        "type": "function",
        "function": {
            "name": "fetch_page",
            "description": "Fetch the text of a page returned by a previous search.",
            "parameters": {
                "type": "object",
                "properties": {"url": {"type": "string"}},
                "required": ["url"],
            },
        },
    },
]


def render_prediction_prompt(task: Task, guideline: Optional[Guideline], cutoff_text: str) -> str:
    """渲染预测提示词；准则为空时整块省略"""
    if guideline is None or guideline.is_empty:
        block = ""
    else:
        block = GUIDELINE_BLOCK_TEMPLATE.substitute(bullets=format_bullets(guideline.bullets))
    example = json.dumps({c: round(1.0 / task.k, 4) for c in task.candidates}, ensure_ascii=False)
    return PREDICTION_TEMPLATE.substitute(
        question=task.question,
        outcomes=format_outcomes(task.candidates),
        guideline_block=block,
        cutoff=cutoff_text,
        example=example,
    )


def parse_forecast(content: str, candidates) -> Optional[Forecast]:
    """
    从最终回复中解析候选到概率的映射，缺失候选记 0 后归一化

    返回:
    Forecast 或 None（无法解析时）
    """
    data = extract_json_object(content)
    if data is None:
        return None
    for key in ("probabilities", "forecast", "probs"):
        if isinstance(data.get(key), dict):
            data = data[key]
            break
    lowered = {str(k).strip().lower(): v for k, v in data.items()}
    mapping = {}
    for label in candidates:
        value = data.get(label, lowered.get(label.lower()))
        if value is None:
            continue
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return None
        mapping[label] = float(value)
    if not mapping:
        return None
    try:
        return Forecast.from_mapping(mapping, candidates)
    except LiveEvoError:
        return None


class ForecastAgent:
    """基础搜索智能体"""

    def __init__(self, backend: ChatBackend, tools: Optional[SearchBackend] = None,
                 turn_cap: int = DEFAULT_TURN_CAP, temperature: float = 0.2,
                 cutoff_offset_hours: float = 6.0, page_char_budget: int = DEFAULT_PAGE_CHAR_BUDGET,
                 clock: Optional[Callable[[], str]] = None):
        self.backend = backend
        self.tools = tools
        self.turn_cap = turn_cap
        self.temperature = temperature
        self.cutoff_offset_hours = cutoff_offset_hours
        self.page_char_budget = page_char_budget
        # 轨迹时间戳默认留空，回放时保持字节一致
        self.clock = clock or (lambda: "")

    @classmethod
    def from_config(cls, backend, tools, config) -> "ForecastAgent":
        return cls(backend, tools, turn_cap=config.turn_cap, temperature=config.temperature,
                   cutoff_offset_hours=config.cutoff_offset_hours,
                   page_char_budget=config.page_char_budget)

    def predict(self, task: Task, guideline: Optional[Guideline] = None) -> Tuple[Forecast, Trajectory]:
        """
        执行一次作答

        参数:
        task (Task): 任务
        guideline (Guideline): 准则，为空或空准则时为无记忆版本

        返回:
        tuple: (Forecast, Trajectory)
        """
        cutoff = task.cutoff(self.cutoff_offset_hours)
        prompt = render_prediction_prompt(task, guideline, format_timestamp(cutoff))
        messages: List[Dict] = [{"role": "user", "content": prompt}]
        trajectory = Trajectory()
        tool_specs = TOOL_SPECS if self.tools is not None else None
        # 本次作答中搜索返回过的网址，只有这些可以抓取
        seen_urls: Set[str] = set()

        for _ in range(self.turn_cap):
            reply = self.backend.chat(messages, operation=OP_PREDICT, task_id=task.id,
                                      tools=tool_specs, temperature=self.temperature)
            trajectory.add(STEP_MODEL_MESSAGE, reply.content, self.clock())
            if reply.tool_calls:
                messages.append(_assistant_message(reply))
                for call in reply.tool_calls:
                    trajectory.add(STEP_TOOL_CALL, json.dumps({"name": call.name, "arguments": call.arguments},
                                                              ensure_ascii=False, sort_keys=True), self.clock())
                    result = self._run_tool(call, task, cutoff, seen_urls)
                    trajectory.add(STEP_TOOL_RESULT, result, self.clock())
                    messages.append({"role": "tool", "tool_call_id": call.id, "content": result})
                continue

            forecast = parse_forecast(reply.content, task.candidates)
            if forecast is not None:
                return forecast, trajectory
            messages.append({"role": "assistant", "content": reply.content})
            messages.append({"role": "user", "content": FORMAT_REMINDER})

        logger.warning("任务 %s 在 %d 轮内没有给出可解析的预测，使用均匀分布", task.id, self.turn_cap)
        trajectory.used_fallback = True
        return Forecast.uniform(task.k), trajectory

    def _run_tool(self, call: ToolCall, task: Task, cutoff, seen_urls: Set[str]) -> str:
        """执行工具调用，失败写进轨迹而不是中断"""
        if self.tools is None:
            return "ERROR: no tools available"
        try:
            if call.name == "search":
                query = str(call.arguments.get("query", "")).strip()
                if not query:
                    raise ToolError("search needs a query")
                result = search(self.tools, SearchRequest(query, cutoff))
                seen_urls.update(s.url for s in result.snippets)
                return result.render()
            if call.name == "fetch_page":
                url = str(call.arguments.get("url", ""))
                if url not in seen_urls:
                    raise ToolError(f"url was not returned by an earlier search: {url}")
                return fetch_page(self.tools, url, cutoff, summarizer=self.backend,
                                  char_budget=self.page_char_budget, question=task.question,
                                  task_id=task.id, temperature=self.temperature)
            raise ToolError(f"unknown tool: {call.name}")
        except LiveEvoError as e:
            logger.info("任务 %s 工具调用失败: %s", task.id, e)
            return f"ERROR: {e}"


def _assistant_message(reply: ChatReply) -> Dict:
    return {
        "role": "assistant",
        "content": reply.content,
        "tool_calls": [
            {"id": c.id, "type": "function",
             "function": {"name": c.name, "arguments": json.dumps(c.arguments, ensure_ascii=False)}}
            for c in reply.tool_calls
        ],
    }


def predict(agent_backend: ChatBackend, task: Task, guideline: Optional[Guideline] = None,
            tools: Optional[SearchBackend] = None, **kwargs) -> Tuple[Forecast, Trajectory]:
    """函数式入口，等价于 ForecastAgent(...).predict"""
    return ForecastAgent(agent_backend, tools, **kwargs).predict(task, guideline)
