"""
评分模块
多分类 Brier、市场收益、效用换算、按周汇总和累计投资组合
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .tasks import Forecast, Outcome, Task

logger = logging.getLogger(__name__)

REPORT_FIELDS = ("batch_id", "mean_brier", "mean_brier_off", "mean_return", "n_tasks",
                 "portfolio_value_after")


@dataclass(frozen=True)
class TaskScore:
    """单个任务的得分"""
    task_id: str
    brier: float
    market_return: Optional[float] = None
    utility: float = 0.0
    correct: bool = False

    def to_record(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class WeeklyReport:
    """一周（一个批次）的汇总"""
    batch_id: int
    mean_brier: float
    mean_return: float
    n_tasks: int
    portfolio_value_after: float
    mean_brier_off: Optional[float] = None

    def to_record(self) -> Dict:
        return {name: getattr(self, name) for name in REPORT_FIELDS}


def brier(forecast: Forecast, outcome: Outcome) -> float:
    """
    多分类 Brier 分数 sum_k (p_k - y_k)^2

    参数:
    forecast (Forecast): 预测概率
    outcome (Outcome): one-hot 结果

    返回:
    float: [0, 2] 之间，越小越好
    """
    p = np.asarray(forecast.probs, dtype=np.float64)
    y = np.asarray(outcome.y, dtype=np.float64)
    if p.shape != y.shape:
        raise ValidationError(f"dimension mismatch: {p.size} vs {y.size}", field="dimension")
    return float(np.sum((p - y) ** 2))


def market_return(forecast: Forecast, prices: Optional[Sequence[float]], outcome: Outcome) -> Optional[float]:
    """
    对每个 p_k > m_k 的候选各买一手，收益 sum (y_k - m_k)

    参数:
    forecast (Forecast): 预测概率
    prices: 市场价格，缺失时返回 None
    outcome (Outcome): 实际结果

    返回:
    float 或 None
    """
    if prices is None:
        return None
    p = np.asarray(forecast.probs, dtype=np.float64)
    m = np.asarray(prices, dtype=np.float64)
    y = np.asarray(outcome.y, dtype=np.float64)
    if not (p.shape == m.shape == y.shape):
        raise ValidationError(f"dimension mismatch: {p.size}/{m.size}/{y.size}", field="dimension")
    if np.any(m < 0.0) or np.any(m > 1.0):
        raise ValidationError("prices must be in [0, 1]", field="market_prices")
    bought = p > m
    return float(np.sum((y - m)[bought]))


def utility(score: TaskScore, policy: str = "brier") -> float:
    """
    效用越大越好：默认为 -brier，accuracy 策略为是否答对

    参数:
    score (TaskScore): 任务得分
    policy (str): "brier" 或 "accuracy"

    返回:
    float: 效用
    """
    if policy == "brier":
        return -score.brier
    if policy == "accuracy":
        return 1.0 if score.correct else 0.0
    raise ValidationError(f"unknown utility policy {policy!r}", field="utility_policy")


def score_task(task: Task, forecast: Forecast, policy: str = "brier") -> TaskScore:
    """对一个已结算的任务打分"""
    outcome = task.outcome()
    b = brier(forecast, outcome)
    r = market_return(forecast, task.market_prices, outcome)
    partial = TaskScore(task.id, b, r, 0.0, forecast.argmax() == outcome.index)
    return TaskScore(task.id, b, r, utility(partial, policy), partial.correct)


def gain(score_on: TaskScore, score_off: TaskScore) -> float:
    """有记忆相对无记忆的效用增益"""
    return score_on.utility - score_off.utility


def portfolio_accumulate(weekly_mean_returns: Sequence[float], stake_per_week: float,
                         start_value: float = 0.0) -> List[float]:
    """
    每周投入固定本金，当周结算，不复投

    参数:
    weekly_mean_returns (list): 每周平均收益率
    stake_per_week (float): 每周投入金额
    start_value (float): 起始累计值

    返回:
    list: 每周结束后的累计价值
    """
    if not stake_per_week > 0:
        raise ValidationError("must be > 0", field="stake_per_week")
    values = []
    value = start_value
    for r in weekly_mean_returns:
        value = value + stake_per_week * (1.0 + r)
        values.append(value)
    return values


def _mean(values: Iterable[float]) -> Optional[float]:
    values = list(values)
    if not values:
        return None
    return math.fsum(values) / len(values)


def weekly_report(batch_id: int, scores_on: Sequence[TaskScore], previous_value: float,
                  stake_per_week: float, scores_off: Sequence[TaskScore] = ()) -> WeeklyReport:
    """
    汇总一个批次

    参数:
    batch_id (int): 批次号
    scores_on (list): 有记忆的得分
    previous_value (float): 上周结束时的组合价值
    stake_per_week (float): 每周投入
    scores_off (list): 无记忆的得分，可选

    返回:
    WeeklyReport: 汇总结果
    """
    if not scores_on:
        raise ValidationError("a weekly report needs at least one task", field="n_tasks")
    mean_brier = _mean(s.brier for s in scores_on)
    mean_return = _mean(s.market_return for s in scores_on if s.market_return is not None) or 0.0
    value = portfolio_accumulate([mean_return], stake_per_week, previous_value)[-1]
    return WeeklyReport(batch_id, mean_brier, mean_return, len(scores_on), value,
                        _mean(s.brier for s in scores_off))


def write_reports_jsonl(reports: Sequence[WeeklyReport], path):
    lines = [json.dumps(r.to_record(), ensure_ascii=False) + "\n" for r in reports]
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")


def write_reports_csv(reports: Sequence[WeeklyReport], path):
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for r in reports:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v
                             for v in (getattr(r, name) for name in REPORT_FIELDS)])


def read_reports_jsonl(path) -> List[WeeklyReport]:
    reports = []
    with Path(path).open(encoding="utf-8") as f:
        for line in f:
            if line.strip():
                data = json.loads(line)
                reports.append(WeeklyReport(**data))
    return reports


def score_forecasts(tasks: Sequence[Task], forecasts: Dict[str, Forecast], stake_per_week: float = 100.0,
                    policy: str = "brier"):
    """
    独立评分器：给定外部预测和任务流，算出逐任务和逐周的成绩

    返回:
    tuple: (逐任务得分列表, 逐周汇总列表)
    """
    missing = sorted(t.id for t in tasks if t.id not in forecasts)
    if missing:
        raise ValidationError(f"forecasts missing for task ids: {', '.join(missing)}", field="task_id")
    scores: List[TaskScore] = []
    by_batch: Dict[int, List[TaskScore]] = {}
    for task in tasks:
        forecast = forecasts[task.id]
        if len(forecast.probs) != task.k:
            raise ValidationError(f"forecast for {task.id} has {len(forecast.probs)} entries, "
                                  f"expected {task.k}", field="probs")
        s = score_task(task, forecast, policy)
        scores.append(s)
        by_batch.setdefault(task.batch_id, []).append(s)

    reports = []
    value = 0.0
    for batch_id in sorted(by_batch):
        report = weekly_report(batch_id, by_batch[batch_id], value, stake_per_week)
        value = report.portfolio_value_after
        reports.append(report)
    return scores, reports


SCORE_FIELDS = ("task_id", "brier", "market_return", "utility", "correct")


def write_scores_csv(scores: Sequence[TaskScore], path):
    """逐任务得分写成 CSV"""
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SCORE_FIELDS)
        for s in scores:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v
                             for v in (getattr(s, name) for name in SCORE_FIELDS)])


def read_forecasts(path, tasks: Sequence[Task]) -> Dict[str, Forecast]:
    """
    读取外部预测 JSONL

    每行带 task_id，概率可以是 probs 列表（按候选顺序），
    或 forecast / forecast_on 映射（候选 -> 概率），因此运行账本可以直接拿来评分

    参数:
    path: 预测文件路径
    tasks (list): 任务流，用于查候选顺序

    返回:
    dict: task_id -> Forecast
    """
    by_id = {t.id: t for t in tasks}
    forecasts: Dict[str, Forecast] = {}
    with Path(path).open(encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"invalid JSON: {e.msg}", line_number=line_num) from e
            if not isinstance(data, dict) or not isinstance(data.get("task_id"), str):
                raise ValidationError("missing field", field="task_id", line_number=line_num)
            task = by_id.get(data["task_id"])
            if task is None:
                raise ValidationError(f"unknown task id {data['task_id']}", field="task_id", line_number=line_num)
            try:
                if isinstance(data.get("probs"), list):
                    forecast = Forecast(tuple(float(p) for p in data["probs"]))
                else:
                    mapping = data.get("forecast", data.get("forecast_on"))
                    if not isinstance(mapping, dict):
                        raise ValidationError("need probs, forecast or forecast_on", field="probs")
                    forecast = Forecast.from_mapping({k: float(v) for k, v in mapping.items()}, task.candidates)
            except (TypeError, ValueError) as e:
                raise ValidationError(f"invalid probability: {e}", field="probs", line_number=line_num) from e
            except ValidationError as e:
                err = ValidationError(str(e), line_number=line_num)
                err.field = e.field
                raise err from e
            forecasts[task.id] = forecast
    return forecasts
