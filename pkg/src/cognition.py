"""
认知能力模块
查询生成、准则编译、失败反思、经验总结四个提示词能力，都带严格的输出解析
"""

import logging
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .errors import ParseError, ValidationError
from .json_utils import extract_json, extract_json_object
from .llm_backend import (OP_COMPILE_GUIDELINE, OP_GENERATE_QUERIES, OP_REFLECT,
                          OP_SUMMARIZE_EXPERIENCE, ChatBackend)
from .memory_bank import (TARGET_EXPERIENCE, TARGET_QUESTION, Experience, MetaGuideline,
                          RetrievalHit, RetrievalQuery, make_id)
from .prompts import (GUIDELINE_COMPILE_TEMPLATE, QUERY_GENERATION_TEMPLATE, REFLECTION_TEMPLATE,
                      SUMMARIZATION_TEMPLATE, applicability_section, format_bullets,
                      format_outcomes)
from .tasks import Outcome, Task, Trajectory

logger = logging.getLogger(__name__)

MAX_QUERIES = 3
MAX_BULLETS = 8
# 未经编译的准则不对应任何元准则
RAW_GUIDELINE_META_ID = "none"

_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$")


@dataclass(frozen=True)
class Guideline:
    """编译出的任务准则，bullets 为空时表示只跑无记忆版本"""
    bullets: Tuple[str, ...] = ()
    source_experience_ids: Tuple[str, ...] = ()
    meta_guideline_id: str = "default"

    @property
    def is_empty(self) -> bool:
        return not self.bullets


EMPTY_GUIDELINE = Guideline()


@dataclass(frozen=True)
class ReflectionRecord:
    failure_pattern: str
    synthesis_instruction: str


def _coerce_target(value) -> str:
    text = str(value or "").strip().lower()
    return TARGET_EXPERIENCE if text.startswith("exp") else TARGET_QUESTION


def parse_queries(reply: str, question: str) -> List[RetrievalQuery]:
    """
    解析 {"queries": [{"query", "search_target"}]}，最多取 3 条；
    无法解析时退回为用原问题检索 question 字段
    """
    data = extract_json(reply)
    items = []
    if isinstance(data, dict):
        items = data.get("queries") or []
    elif isinstance(data, list):
        items = data
    queries = []
    if isinstance(items, list):
        for item in items:
            if not isinstance(item, dict):
                continue
            text = item.get("query")
            if not isinstance(text, str) or not text.strip():
                continue
            queries.append(RetrievalQuery(text.strip(), _coerce_target(item.get("search_target"))))
            if len(queries) == MAX_QUERIES:
                break
    if not queries:
        logger.warning("查询生成回复无法解析，改用原问题检索")
        return [RetrievalQuery(question, TARGET_QUESTION)]
    return queries


def generate_queries(backend: ChatBackend, task: Task, temperature: float = 0.2) -> List[RetrievalQuery]:
    """
    让模型为任务生成 2-3 条检索查询

    参数:
    backend (ChatBackend): 对话后端
    task (Task): 当前任务
    temperature (float): 采样温度

    返回:
    list: RetrievalQuery 列表
    """
    if not task.question.strip():
        raise ValidationError("must be non-empty", field="question")
    prompt = QUERY_GENERATION_TEMPLATE.substitute(question=task.question)
    reply = backend.complete(prompt, operation=OP_GENERATE_QUERIES, task_id=task.id,
                             temperature=temperature)
    return parse_queries(reply, task.question)


def summarize_hit(index: int, exp: Experience) -> str:
    parts = [f"Failure reason: {exp.failure_reason}" if exp.failure_reason else "",
             f"Improvement: {exp.improvement}",
             f"Missed information: {exp.missed_information}" if exp.missed_information else ""]
    body = "; ".join(p for p in parts if p)
    category = f", {exp.category}" if exp.category else ""
    return f"[Experience {index} (id {exp.id}{category}) Summary: {body}]"


def render_compile_prompt(task: Task, experiences: Sequence[Experience], meta: MetaGuideline) -> str:
    lines = [summarize_hit(i, exp) for i, exp in enumerate(experiences, 1)]
    return GUIDELINE_COMPILE_TEMPLATE.substitute(
        question=task.question,
        experiences="\n".join(lines),
        applicability=applicability_section(meta.synthesis_instruction),
    )


def parse_bullets(reply: str) -> List[str]:
    """
    解析准则要点：先试 JSON（字符串列表或含 bullets/guideline 的对象），
    再按 -、*、•、数字编号行解析，最多 8 条
    """
    data = extract_json(reply)
    if isinstance(data, dict):
        data = data.get("bullets", data.get("guideline"))
    if isinstance(data, list) and data and all(isinstance(b, str) for b in data):
        bullets = [b.strip() for b in data if b.strip()]
    else:
        bullets = []
        for line in (reply or "").splitlines():
            m = _BULLET_RE.match(line)
            if m:
                bullets.append(m.group(1))
        if not bullets:
            bullets = [line.strip() for line in (reply or "").splitlines() if line.strip()]
    return bullets[:MAX_BULLETS]


def _hit_experiences(hits: Sequence[RetrievalHit]) -> List[Experience]:
    ordered = sorted(hits, key=lambda h: (-h.weighted_score, h.experience_id))
    experiences = []
    for hit in ordered:
        if hit.experience is None:
            raise ValidationError(f"hit {hit.experience_id} carries no experience", field="hits")
        experiences.append(hit.experience)
    return experiences


def compile_guideline(backend: ChatBackend, task: Task, hits: Sequence[RetrievalHit],
                      meta: MetaGuideline, temperature: float = 0.2) -> Guideline:
    """
    在元准则指导下把检索到的经验编译成任务准则

    参数:
    backend (ChatBackend): 对话后端
    task (Task): 当前任务
    hits (list): 检索命中，按加权得分降序写入提示词
    meta (MetaGuideline): 选中的元准则

    返回:
    Guideline: 编译出的准则；没有命中时返回 EMPTY_GUIDELINE
    """
    if not hits:
        return EMPTY_GUIDELINE
    experiences = _hit_experiences(hits)
    prompt = render_compile_prompt(task, experiences, meta)
    reply = backend.complete(prompt, operation=OP_COMPILE_GUIDELINE, task_id=task.id,
                             temperature=temperature)
    bullets = parse_bullets(reply)
    if not bullets:
        logger.warning("任务 %s 的准则回复为空，只跑无记忆版本", task.id)
        return EMPTY_GUIDELINE
    return Guideline(tuple(bullets), tuple(e.id for e in experiences), meta.id)


def raw_guideline(hits: Sequence[RetrievalHit]) -> Guideline:
    """
    不经模型编译，直接把检索到的经验作为准则要点注入

    参数:
    hits (list): 检索命中，按加权得分降序，最多取 8 条

    返回:
    Guideline: 每条经验一条要点；没有命中时返回 EMPTY_GUIDELINE
    """
    if not hits:
        return EMPTY_GUIDELINE
    experiences = _hit_experiences(hits)[:MAX_BULLETS]
    bullets = tuple(summarize_hit(i, e) for i, e in enumerate(experiences, 1))
    return Guideline(bullets, tuple(e.id for e in experiences), RAW_GUIDELINE_META_ID)


def reflect(backend: ChatBackend, task: Task, guideline: Guideline, hits: Sequence[RetrievalHit],
            temperature: float = 0.2) -> ReflectionRecord:
    """
    准则没有带来收益时，反思编译过程并产出新的元准则

    返回:
    ReflectionRecord: 失败模式和合成指令

    异常:
    ParseError: 回复格式不对时抛出，不做回退
    """
    experiences = _hit_experiences(hits)
    prompt = REFLECTION_TEMPLATE.substitute(
        question=task.question,
        bullets=format_bullets(guideline.bullets),
        experiences="\n".join(summarize_hit(i, e) for i, e in enumerate(experiences, 1)),
    )
    reply = backend.complete(prompt, operation=OP_REFLECT, task_id=task.id, temperature=temperature)
    data = extract_json_object(reply)
    if data is None:
        raise ParseError(f"reflection reply for {task.id} is not a JSON object")
    pattern = data.get("failure_pattern")
    instruction = data.get("synthesis_instruction")
    if not isinstance(pattern, str) or not pattern.strip():
        raise ParseError(f"reflection reply for {task.id} lacks failure_pattern")
    if not isinstance(instruction, str) or not instruction.strip():
        raise ParseError(f"reflection reply for {task.id} lacks synthesis_instruction")
    return ReflectionRecord(pattern.strip(), instruction.strip())


def summarize_experience(backend: ChatBackend, task: Task, trajectory: Trajectory, outcome: Outcome,
                         batch_id: Optional[int] = None, temperature: float = 0.2) -> Experience:
    """
    从有记忆的作答轨迹中总结候选经验（权重未设置）

    参数:
    backend (ChatBackend): 对话后端
    task (Task): 任务
    trajectory (Trajectory): 有记忆版本的轨迹
    outcome (Outcome): 实际结果
    batch_id (int): 当前批次，默认取任务批次

    返回:
    Experience: 候选经验
    """
    if trajectory is None or len(trajectory) == 0:
        raise ValidationError("trajectory must be non-empty", field="trajectory")
    batch = task.batch_id if batch_id is None else batch_id
    prompt = SUMMARIZATION_TEMPLATE.substitute(
        question=task.question,
        outcomes=format_outcomes(task.candidates),
        outcome=task.candidates[outcome.index],
        trajectory=trajectory.text(),
    )
    reply = backend.complete(prompt, operation=OP_SUMMARIZE_EXPERIENCE, task_id=task.id,
                             temperature=temperature)
    data = extract_json_object(reply)
    if data is None:
        raise ParseError(f"summary reply for {task.id} is not a JSON object")

    fields = {}
    for name in ("category", "failure_reason", "improvement", "missed_information"):
        value = data.get(name, "")
        if not isinstance(value, str):
            raise ParseError(f"summary field {name} for {task.id} is not text")
        fields[name] = value.strip()
    if not fields["improvement"]:
        raise ParseError(f"summary reply for {task.id} has an empty improvement")

    return Experience(
        id=make_id("exp", batch, task.id, fields["improvement"]),
        question=task.question,
        created_batch=batch,
        weight=None,
        **fields,
    )
