"""
任务流读取与合成
JSONL 任务流格式、校验、按批次分组，以及带机制切换的合成任务流生成器
"""

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .llm_backend import (OP_COMPILE_GUIDELINE, OP_GENERATE_QUERIES, OP_PREDICT, OP_REFLECT,
                          OP_SUMMARIZE_EXPERIENCE, WILDCARD_TASK, ScriptedBackend)
from .memory_bank import TARGET_EXPERIENCE, Experience
from .prompts import GUIDELINE_SECTION_MARKER
from .tasks import Task, format_timestamp, parse_timestamp

logger = logging.getLogger(__name__)

STREAM_FIELDS = ("id", "batch_id", "question", "candidates", "market_prices", "close_time",
                 "outcome_index", "price_snapshot_time")

NEUTRAL_TAG = "neutral"
SYNTHETIC_CANDIDATES = ("Alpha", "Beta")
SYNTHETIC_START = datetime(2025, 1, 6, 18, 0, tzinfo=timezone.utc)


def tag_marker(tag: str) -> str:
    """合成世界里经验和准则携带的标记"""
    return f"<<{tag}>>"


# ---------------- 读写 ----------------

def task_from_record(data: Dict, line_num: Optional[int] = None) -> Task:
    """由一条 JSON 记录构建任务，出错时报出字段和行号"""
    for name in ("id", "batch_id", "question", "candidates", "close_time"):
        if name not in data:
            raise ValidationError("missing field", field=name, line_number=line_num)
    if not isinstance(data["id"], str):
        raise ValidationError("expected string", field="id", line_number=line_num)
    if not isinstance(data["batch_id"], int) or isinstance(data["batch_id"], bool):
        raise ValidationError("expected integer", field="batch_id", line_number=line_num)
    candidates = data["candidates"]
    if not isinstance(candidates, list) or not all(isinstance(c, str) for c in candidates):
        raise ValidationError("expected list of strings", field="candidates", line_number=line_num)
    prices = data.get("market_prices")
    if prices is not None:
        if not isinstance(prices, list) or not all(isinstance(p, (int, float)) and not isinstance(p, bool)
                                                   for p in prices):
            raise ValidationError("expected list of numbers", field="market_prices", line_number=line_num)
        prices = tuple(float(p) for p in prices)
    outcome_index = data.get("outcome_index")
    if outcome_index is not None and (not isinstance(outcome_index, int) or isinstance(outcome_index, bool)):
        raise ValidationError("expected integer", field="outcome_index", line_number=line_num)
    snapshot = data.get("price_snapshot_time")

    try:
        return Task(
            id=data["id"],
            question=data["question"] if isinstance(data["question"], str) else "",
            candidates=tuple(candidates),
            close_time=parse_timestamp(data["close_time"], "close_time"),
            batch_id=data["batch_id"],
            market_prices=prices,
            outcome_index=outcome_index,
            price_snapshot_time=parse_timestamp(snapshot, "price_snapshot_time") if snapshot else None,
        )
    except ValidationError as e:
        err = ValidationError(str(e), line_number=line_num)
        err.field = e.field
        raise err from e


def task_to_record(task: Task) -> Dict:
    return {
        "id": task.id,
        "batch_id": task.batch_id,
        "question": task.question,
        "candidates": list(task.candidates),
        "market_prices": None if task.market_prices is None else list(task.market_prices),
        "close_time": format_timestamp(task.close_time),
        "outcome_index": task.outcome_index,
        "price_snapshot_time": None if task.price_snapshot_time is None else format_timestamp(task.price_snapshot_time),
    }


def group_batches(tasks: Sequence[Task]) -> List[List[Task]]:
    """按 batch_id 分组，保持原顺序"""
    batches: List[List[Task]] = []
    for task in tasks:
        if batches and batches[-1][0].batch_id == task.batch_id:
            batches[-1].append(task)
        else:
            batches.append([task])
    return batches


def read_tasks(path) -> List[Task]:
    """逐行读取并校验，batch_id 必须单调不减，任务 id 不能重复"""
    path = Path(path)
    tasks: List[Task] = []
    seen = set()
    last_batch = None
    with path.open(encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"invalid JSON: {e.msg}", line_number=line_num) from e
            if not isinstance(data, dict):
                raise ValidationError("record must be a JSON object", line_number=line_num)
            task = task_from_record(data, line_num)
            if task.id in seen:
                raise ValidationError(f"duplicate task id {task.id}", field="id", line_number=line_num)
            if last_batch is not None and task.batch_id < last_batch:
                raise ValidationError(f"batch_id {task.batch_id} decreases after {last_batch}",
                                      field="batch_id", line_number=line_num)
            seen.add(task.id)
            last_batch = task.batch_id
            tasks.append(task)
    return tasks


def load_stream(path) -> List[List[Task]]:
    """
    读取任务流

    参数:
    path: JSONL 文件路径

    返回:
    list: 批次列表，每个批次是任务列表
    """
    return group_batches(read_tasks(path))


def dump_stream(tasks: Sequence[Task], path):
    """任务流写成 JSONL，一行一个任务"""
    lines = [json.dumps(task_to_record(t), ensure_ascii=False) + "\n" for t in tasks]
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")


# ---------------- 合成任务流 ----------------

@dataclass(frozen=True)
class Regime:
    """一段时期内哪些经验有用、哪些有害"""
    start_batch: int
    helpful_experience_tags: Tuple[str, ...] = ()
    harmful_experience_tags: Tuple[str, ...] = ()
    base_brier_on: float = 0.1
    base_brier_off: float = 0.3

    @property
    def harmful_brier(self) -> float:
        return 2.0 * self.base_brier_off - self.base_brier_on

    @property
    def tags(self) -> Tuple[str, ...]:
        return tuple(self.helpful_experience_tags) + tuple(self.harmful_experience_tags)


@dataclass(frozen=True)
class SyntheticSpec:
    n_batches: int
    tasks_per_batch: int
    regimes: Tuple[Regime, ...]
    seed: int = 0

    def validate(self) -> "SyntheticSpec":
        if self.n_batches < 1:
            raise ValidationError("must be >= 1", field="n_batches")
        if self.tasks_per_batch < 1:
            raise ValidationError("must be >= 1", field="tasks_per_batch")
        if not self.regimes:
            raise ValidationError("need at least one regime", field="regimes")
        if self.regimes[0].start_batch != 0:
            raise ValidationError("first regime must start at batch 0", field="regimes")
        for prev, cur in zip(self.regimes, self.regimes[1:]):
            if cur.start_batch <= prev.start_batch:
                raise ValidationError("regime starts must be strictly increasing", field="regimes")
        for i, regime in enumerate(self.regimes):
            if not regime.tags:
                raise ValidationError("regime needs at least one tag", field=f"regimes[{i}]")
            if NEUTRAL_TAG in regime.tags:
                raise ValidationError(f"tag {NEUTRAL_TAG!r} is reserved", field=f"regimes[{i}]")
            for name in ("base_brier_on", "base_brier_off", "harmful_brier"):
                value = getattr(regime, name)
                if not (0.0 <= value <= 2.0):
                    raise ValidationError(f"{name} {value} outside [0, 2]", field=f"regimes[{i}]")
        return self

    @classmethod
    def from_dict(cls, data: Dict) -> "SyntheticSpec":
        try:
            regimes = tuple(
                Regime(
                    start_batch=int(r["start_batch"]),
                    helpful_experience_tags=tuple(r.get("helpful_experience_tags", ())),
                    harmful_experience_tags=tuple(r.get("harmful_experience_tags", ())),
                    base_brier_on=float(r.get("base_brier_on", 0.1)),
                    base_brier_off=float(r.get("base_brier_off", 0.3)),
                )
                for r in data["regimes"]
            )
            spec = cls(int(data["n_batches"]), int(data["tasks_per_batch"]), regimes, int(data.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"invalid synthetic spec: {e}") from e
        return spec.validate()

    def regime_for(self, batch_id: int) -> Regime:
        current = self.regimes[0]
        for regime in self.regimes:
            if regime.start_batch <= batch_id:
                current = regime
        return current

    def all_tags(self) -> List[str]:
        return list(dict.fromkeys(t for r in self.regimes for t in r.tags))


@dataclass
class SyntheticArtifacts:
    tasks: List[Task]
    transcript: ScriptedBackend
    seed_experiences: List[Experience] = field(default_factory=list)


def forecast_for_brier(target_brier: float, outcome_index: int, k: int = 2) -> List[float]:
    """二分类下构造 Brier 恰为 target 的预测：2(1-p)^2 = b"""
    p = 1.0 - math.sqrt(target_brier / 2.0)
    probs = [(1.0 - p) / (k - 1)] * k
    probs[outcome_index] = p
    return probs


def _forecast_reply(probs: Sequence[float]) -> str:
    return json.dumps(dict(zip(SYNTHETIC_CANDIDATES, probs)))


def seed_experience(tag: str) -> Experience:
    """合成世界的种子经验，内容只含标记，检索时彼此正交"""
    return Experience(
        id=f"seed-{tag}",
        question=f"Synthetic lesson {tag}",
        category="synthetic",
        failure_reason="",
        improvement=tag_marker(tag),
        missed_information="",
        weight=None,
        created_batch=0,
    )


def generate_synthetic(spec: SyntheticSpec) -> SyntheticArtifacts:
    """
    生成合成任务流和配套脚本

    每个任务按轮转分配一个当期标签；准则带有帮助标签时预测 Brier 为 base_brier_on，
    带有害标签时为 2*base_brier_off - base_brier_on，不带标签为 base_brier_off。
    新总结的经验一律是中性的。

    参数:
    spec (SyntheticSpec): 合成参数

    返回:
    SyntheticArtifacts: 任务、脚本后端、种子经验
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    transcript = ScriptedBackend()
    tasks: List[Task] = []
    k = len(SYNTHETIC_CANDIDATES)
    all_tags = spec.all_tags()

    for tag in all_tags + [NEUTRAL_TAG]:
        transcript.add_rule(OP_COMPILE_GUIDELINE, WILDCARD_TASK,
                            f"- Apply lesson {tag_marker(tag)} to this task.", when=[tag_marker(tag)])
    transcript.add_rule(OP_COMPILE_GUIDELINE, WILDCARD_TASK, "- Prioritize fresh evidence close to the event.")
    transcript.add_rule(OP_REFLECT, WILDCARD_TASK, json.dumps({
        "failure_pattern": "A lesson that no longer matches current conditions was applied without checking.",
        "synthesis_instruction": "Only transfer a lesson after confirming that the conditions it was learned "
                                 "under still hold for the current task.",
    }))
    transcript.add_rule(OP_SUMMARIZE_EXPERIENCE, WILDCARD_TASK, json.dumps({
        "category": "synthetic",
        "failure_reason": "",
        "improvement": tag_marker(NEUTRAL_TAG),
        "missed_information": "",
    }))

    for batch_id in range(spec.n_batches):
        regime = spec.regime_for(batch_id)
        tags = regime.tags
        for i in range(spec.tasks_per_batch):
            tag = tags[i % len(tags)]
            task_id = f"b{batch_id:03d}-t{i:03d}"
            outcome_index = int(rng.integers(0, k))
            price = float(np.round(rng.uniform(0.05, 0.95), 4))
            close_time = SYNTHETIC_START + timedelta(weeks=batch_id, hours=i)
            task = Task(
                id=task_id,
                question=f"Synthetic event {task_id}: which side wins under topic {tag}?",
                candidates=SYNTHETIC_CANDIDATES,
                close_time=close_time,
                batch_id=batch_id,
                market_prices=(price, float(np.round(1.0 - price, 4))),
                outcome_index=outcome_index,
                price_snapshot_time=close_time - timedelta(hours=6),
            )
            tasks.append(task)

            transcript.add_rule(OP_GENERATE_QUERIES, task_id, json.dumps({
                "queries": [{"query": tag_marker(tag), "search_target": TARGET_EXPERIENCE}],
            }))
            off_reply = _forecast_reply(forecast_for_brier(regime.base_brier_off, outcome_index, k))
            transcript.add_rule(OP_PREDICT, task_id, off_reply)
            transcript.add_rule(OP_PREDICT, task_id, off_reply, when=[GUIDELINE_SECTION_MARKER])
            for other in all_tags:
                if other in regime.helpful_experience_tags:
                    target = regime.base_brier_on
                elif other in regime.harmful_experience_tags:
                    target = regime.harmful_brier
                else:
                    target = regime.base_brier_off
                transcript.add_rule(OP_PREDICT, task_id,
                                    _forecast_reply(forecast_for_brier(target, outcome_index, k)),
                                    when=[GUIDELINE_SECTION_MARKER, tag_marker(other)])

    seeds = [seed_experience(tag) for tag in all_tags]
    logger.info("生成合成任务流: %d 个任务, %d 条脚本规则", len(tasks), len(transcript.rules))
    return SyntheticArtifacts(tasks, transcript, seeds)
