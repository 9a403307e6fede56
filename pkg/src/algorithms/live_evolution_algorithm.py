"""
在线自演化算法
每个批次：检索 -> 编译 -> 有/无记忆对照作答 -> 更新权重 -> 最差任务经验获取
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from ..cognition import (EMPTY_GUIDELINE, Guideline, compile_guideline, generate_queries, raw_guideline,
                         reflect, summarize_experience)
from ..config import EvolutionConfig
from ..embedding import EmbeddingProvider
from ..errors import BackendError, DuplicateIdError, LiveEvoError, ParseError, ValidationError
from ..llm_backend import ChatBackend
from ..memory_bank import (DEFAULT_META_GUIDELINE, DEFAULT_WEIGHT, ExperienceBank, MetaGuideline,
                           MetaGuidelineBank, RetrievalHit, RetrievalQuery, TARGET_QUESTION, make_id)
from ..metrics import TaskScore, WeeklyReport, gain, score_task, weekly_report
from ..predictor import ForecastAgent
from ..search_tools import SearchBackend
from ..tasks import Forecast, Task, Trajectory
from .algorithm_utils import AlgorithmUtils
from .base_algorithm import BaseAlgorithm

logger = logging.getLogger(__name__)


@dataclass
class ContrastiveResult:
    """一个任务的有/无记忆对照结果"""
    task_id: str
    batch_id: int
    forecast_on: Forecast
    forecast_off: Forecast
    score_on: TaskScore
    score_off: TaskScore
    gain: float
    trajectory_on: Trajectory
    retrieved_ids: Tuple[str, ...] = ()
    guideline: Guideline = EMPTY_GUIDELINE
    memory_used: bool = False
    degraded: bool = False
    added_meta_guideline_id: Optional[str] = None
    weights_after: Dict[str, float] = field(default_factory=dict)

    def to_record(self, candidates: Sequence[str]) -> Dict:
        """账本记录，字段顺序固定"""
        return {
            "batch_id": self.batch_id,
            "task_id": self.task_id,
            "forecast_on": self.forecast_on.as_mapping(candidates),
            "forecast_off": self.forecast_off.as_mapping(candidates),
            "brier_on": self.score_on.brier,
            "brier_off": self.score_off.brier,
            "return_on": self.score_on.market_return,
            "return_off": self.score_off.market_return,
            "gain": self.gain,
            "memory_used": self.memory_used,
            "degraded": self.degraded,
            "retrieved_ids": list(self.retrieved_ids),
            "meta_guideline_id": self.guideline.meta_guideline_id,
            "guideline": list(self.guideline.bullets),
            "added_meta_guideline_id": self.added_meta_guideline_id,
            "weights_after": dict(self.weights_after),
            "used_fallback": self.trajectory_on.used_fallback,
        }


@dataclass
class BatchOutcome:
    """一个批次处理完后的全部产出"""
    batch_id: int
    results: List[ContrastiveResult]
    report: WeeklyReport
    committed_experience_ids: List[str] = field(default_factory=list)
    added_meta_guideline_ids: List[str] = field(default_factory=list)
    skipped_task_ids: List[str] = field(default_factory=list)
    tasks: Dict[str, Task] = field(default_factory=dict, repr=False)


class LiveEvolutionAlgorithm(BaseAlgorithm):
    """在线演化主循环，持有两个记忆库并逐批次更新"""

    def __init__(self, backend: ChatBackend, embedder: EmbeddingProvider,
                 experience_bank: Optional[ExperienceBank] = None,
                 meta_bank: Optional[MetaGuidelineBank] = None,
                 tools: Optional[SearchBackend] = None,
                 config: Optional[EvolutionConfig] = None,
                 on_batch: Optional[Callable[["BatchOutcome"], None]] = None):
        """
        初始化演化算法

        参数:
        backend (ChatBackend): 对话后端，所有提示词能力和作答共用
        embedder (EmbeddingProvider): 向量器
        experience_bank (ExperienceBank): 经验库，默认为空
        meta_bank (MetaGuidelineBank): 元准则库，默认为空
        tools (SearchBackend): 作答用的搜索后端，可选
        config (EvolutionConfig): 演化参数
        on_batch: 每个批次结束后的回调，用于落盘
        """
        super().__init__(config)
        self.backend = backend
        self.embedder = embedder
        self.experience_bank = experience_bank if experience_bank is not None else ExperienceBank()
        self.meta_bank = meta_bank if meta_bank is not None else MetaGuidelineBank()
        self.agent = ForecastAgent.from_config(backend, tools, self.config)
        self.on_batch = on_batch
        self.portfolio_value = 0.0
        self.reports: List[WeeklyReport] = []

    # ---------------- 单任务 ----------------

    def _rollout(self, task: Task, guideline: Optional[Guideline]) -> Tuple[Forecast, Trajectory]:
        return self.agent.predict(task, guideline)

    def _queries(self, task: Task) -> List[RetrievalQuery]:
        """主动检索时由模型生成查询，关闭时直接用原问题检索"""
        if self.config.active_retrieve:
            return generate_queries(self.backend, task, self.config.temperature)
        return [RetrievalQuery(task.question, TARGET_QUESTION)]

    def _build_guideline(self, task: Task, hits: Sequence[RetrievalHit], meta: MetaGuideline) -> Guideline:
        if self.config.compile_guidelines:
            return compile_guideline(self.backend, task, hits, meta, self.config.temperature)
        return raw_guideline(hits)

    def _prepare_guideline(self, task: Task) -> Tuple[List[RetrievalHit], Guideline]:
        """检索并编译准则；失败时抛出 LiveEvoError 由调用方降级"""
        cfg = self.config
        hits = self.experience_bank.retrieve(self._queries(task), cfg.top_k, cfg.retrieval_threshold,
                                             self.embedder)
        if not hits:
            return [], EMPTY_GUIDELINE
        if cfg.use_meta_guidelines:
            meta = self.meta_bank.select_meta_guideline(task.question, self.embedder,
                                                        cfg.meta_selection_threshold)
        else:
            meta = DEFAULT_META_GUIDELINE
        return hits, self._build_guideline(task, hits, meta)

    def process_task(self, task: Task) -> ContrastiveResult:
        """
        对一个任务做有/无记忆对照，并据此更新经验权重和元准则库

        参数:
        task (Task): 已结算的任务

        返回:
        ContrastiveResult: 对照结果

        异常:
        LiveEvoError: 无记忆作答失败或任务本身不合法时抛出
        """
        cfg = self.config
        task.outcome()

        degraded = False
        try:
            hits, guideline = self._prepare_guideline(task)
        except (BackendError, ParseError) as e:
            logger.warning("任务 %s 检索/编译失败，降级为无记忆: %s", task.id, e)
            hits, guideline, degraded = [], EMPTY_GUIDELINE, True

        run_on = not guideline.is_empty
        forecast_on = trajectory_on = None
        if run_on and cfg.parallel_rollouts:
            with ThreadPoolExecutor(max_workers=2) as pool:
                off_future = pool.submit(self._rollout, task, None)
                on_future = pool.submit(self._rollout, task, guideline)
                forecast_off, trajectory_off = off_future.result()
                try:
                    forecast_on, trajectory_on = on_future.result()
                except BackendError as e:
                    logger.warning("任务 %s 有记忆作答失败，降级: %s", task.id, e)
                    run_on, degraded = False, True
        else:
            forecast_off, trajectory_off = self._rollout(task, None)
            if run_on:
                try:
                    forecast_on, trajectory_on = self._rollout(task, guideline)
                except BackendError as e:
                    logger.warning("任务 %s 有记忆作答失败，降级: %s", task.id, e)
                    run_on, degraded = False, True

        score_off = score_task(task, forecast_off, cfg.utility_policy)
        if not run_on:
            return ContrastiveResult(task.id, task.batch_id, forecast_off, forecast_off, score_off, score_off,
                                     0.0, trajectory_off, degraded=degraded)

        score_on = score_task(task, forecast_on, cfg.utility_policy)
        g = gain(score_on, score_off)
        retrieved = tuple(h.experience_id for h in hits)
        weights = {}
        for exp_id in retrieved:
            if cfg.update_weights:
                weights[exp_id] = self.experience_bank.update_weight(exp_id, g).weight
            else:
                weights[exp_id] = self.experience_bank.get(exp_id).weight
        logger.debug("任务 %s gain=%.4f 检索 %s", task.id, g, ",".join(retrieved))

        result = ContrastiveResult(task.id, task.batch_id, forecast_on, forecast_off, score_on, score_off, g,
                                   trajectory_on, retrieved, guideline, memory_used=True,
                                   weights_after=weights)
        if g <= 0.0 and cfg.use_meta_guidelines:
            result.added_meta_guideline_id = self._reflect(task, guideline, hits)
        return result

    def _reflect(self, task: Task, guideline: Guideline, hits: Sequence[RetrievalHit]) -> Optional[str]:
        """准则无效时反思，返回新加入的元准则 id"""
        try:
            record = reflect(self.backend, task, guideline, hits, self.config.temperature)
        except (ParseError, BackendError) as e:
            logger.warning("任务 %s 反思失败，跳过: %s", task.id, e)
            return None
        mg = MetaGuideline(
            id=make_id("meta", task.batch_id, task.id, record.synthesis_instruction),
            failure_pattern=record.failure_pattern,
            synthesis_instruction=record.synthesis_instruction,
            created_batch=task.batch_id,
        )
        try:
            added, entry = self.meta_bank.add_meta_guideline(mg, self.embedder, self.config.meta_dedup_threshold)
        except DuplicateIdError:
            logger.info("元准则 %s 已存在", mg.id)
            return None
        if not added:
            logger.info("任务 %s 的反思与元准则 %s 重复", task.id, entry.id)
            return None
        return entry.id

    # ---------------- 经验获取 ----------------

    def acquire_experiences(self, tasks: Dict[str, Task], results: Sequence[ContrastiveResult],
                            worst_ids: Sequence[str]) -> List[str]:
        """
        对最差任务总结候选经验，重跑验证后才入库

        参数:
        tasks (dict): 任务 id -> Task
        results (list): 本批次对照结果
        worst_ids (list): 最差任务 id

        返回:
        list: 入库的经验 id
        """
        by_id = {r.task_id: r for r in results}
        committed = []
        for task_id in worst_ids:
            task, result = tasks[task_id], by_id[task_id]
            try:
                candidate = summarize_experience(self.backend, task, result.trajectory_on, task.outcome(),
                                                 task.batch_id, self.config.temperature)
                hit = RetrievalHit(candidate.id, 1.0, 1.0, candidate)
                guideline = self._build_guideline(task, [hit], DEFAULT_META_GUIDELINE)
                if guideline.is_empty:
                    logger.info("任务 %s 候选经验编译为空，丢弃", task_id)
                    continue
                forecast, _ = self._rollout(task, guideline)
            except LiveEvoError as e:
                logger.warning("任务 %s 经验获取失败，跳过: %s", task_id, e)
                continue

            improvement = score_task(task, forecast, self.config.utility_policy).utility - result.score_on.utility
            if not AlgorithmUtils.meets_improvement(improvement, self.config.min_improvement):
                logger.debug("任务 %s 候选经验改进 %.4f 不足，丢弃", task_id, improvement)
                continue
            candidate.weight = DEFAULT_WEIGHT
            try:
                self.experience_bank.add_experience(candidate)
            except DuplicateIdError:
                logger.info("经验 %s 已存在", candidate.id)
                continue
            committed.append(candidate.id)
        return committed

    # ---------------- 批次 ----------------

    def process_batch(self, batch: Sequence[Task]) -> BatchOutcome:
        """
        处理一个批次（一周）

        参数:
        batch (list): 同一 batch_id 的已结算任务

        返回:
        BatchOutcome: 对照结果、周报和本批次新增的记忆
        """
        if not batch:
            raise ValidationError("batch must be non-empty", field="batch")
        batch_id = batch[0].batch_id
        if any(t.batch_id != batch_id for t in batch):
            raise ValidationError("all tasks in a batch must share batch_id", field="batch_id")
        for t in batch:
            if t.outcome_index is None:
                raise ValidationError(f"task {t.id} is not resolved", field="outcome_index")

        ordered = sorted(batch, key=lambda t: t.id)
        results: List[ContrastiveResult] = []
        skipped: List[str] = []
        for i, task in enumerate(ordered):
            if self.update_progress(int(100 * i / len(ordered)), f"批次 {batch_id} 任务 {task.id}"):
                raise LiveEvoError("cancelled")
            try:
                results.append(self.process_task(task))
            except LiveEvoError as e:
                logger.warning("任务 %s 失败，跳过: %s", task.id, e)
                skipped.append(task.id)
        if not results:
            raise LiveEvoError(f"every task in batch {batch_id} failed")

        tasks = {t.id: t for t in ordered}
        worst = AlgorithmUtils.select_worst(results, self.config.bad_case_fraction)
        committed = self.acquire_experiences(tasks, results, worst)

        report = weekly_report(batch_id, [r.score_on for r in results], self.portfolio_value,
                               self.config.stake_per_week, [r.score_off for r in results])
        self.portfolio_value = report.portfolio_value_after
        self.reports.append(report)

        added = [r.added_meta_guideline_id for r in results if r.added_meta_guideline_id]
        outcome = BatchOutcome(batch_id, results, report, committed, added, skipped, tasks)
        self.result['results'].extend(results)
        self.result['committed_experience_ids'].extend(committed)
        self.result['added_meta_guideline_ids'].extend(added)
        self.result['skipped_task_ids'].extend(skipped)
        self.update_progress(100, f"批次 {batch_id} 完成")
        logger.info("批次 %d: %d 个任务, mean_brier=%.4f, 新经验 %d, 新元准则 %d",
                    batch_id, report.n_tasks, report.mean_brier, len(committed), len(added))
        if self.on_batch is not None:
            self.on_batch(outcome)
        return outcome

    def execute(self, batches: Sequence[Sequence[Task]]) -> Dict:
        """
        依次处理多个批次

        参数:
        batches (list): 按 batch_id 升序的批次列表

        返回:
        dict: 结果字典
        """
        self.reset_result()
        outcomes = [self.process_batch(batch) for batch in batches]
        self.result['outcomes'] = outcomes
        self.message = (f"处理 {len(outcomes)} 个批次, "
                        f"新增经验 {len(self.result['committed_experience_ids'])} 条, "
                        f"新增元准则 {len(self.result['added_meta_guideline_ids'])} 条, "
                        f"跳过任务 {len(self.result['skipped_task_ids'])} 个")
        return self.result
