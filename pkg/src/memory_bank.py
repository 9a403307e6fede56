"""
记忆库
经验库（带检索权重）和元准则库：加权检索、权重更新与截断、去重、JSONL 持久化
"""

import hashlib
import json
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from .embedding import EmbeddingProvider, cosine
from .errors import DuplicateIdError, NotFoundError, ValidationError

logger = logging.getLogger(__name__)

WEIGHT_MIN = 0.0
WEIGHT_MAX = 10.0
DEFAULT_WEIGHT = 1.0

TARGET_QUESTION = "question"
TARGET_EXPERIENCE = "experience"
RETRIEVAL_TARGETS = (TARGET_QUESTION, TARGET_EXPERIENCE)

DEFAULT_META_ID = "default"
DEFAULT_SYNTHESIS_INSTRUCTION = (
    "CRITICAL: Experience Applicability Check\n"
    "Before applying lessons from past experiences, you MUST assess whether each experience "
    "is truly applicable to this specific task type. Identify which lessons are directly "
    "applicable vs. need adaptation."
)

EXPERIENCE_FIELDS = ("id", "question", "category", "failure_reason", "improvement",
                     "missed_information", "weight", "created_batch", "times_retrieved",
                     "cumulative_gain")
META_FIELDS = ("id", "failure_pattern", "synthesis_instruction", "created_batch")


def clamp_weight(value: float) -> float:
    """把权重截断到 [0, 10]"""
    return min(WEIGHT_MAX, max(WEIGHT_MIN, value))


def make_id(*parts) -> str:
    """由内容生成确定性的短 id，回放时保持一致"""
    digest = hashlib.sha1("\x1f".join(str(p) for p in parts).encode("utf-8")).hexdigest()
    return digest[:8]


@dataclass
class Experience:
    """一条经验：从过往任务中提炼的教训，附带检索权重"""
    id: str
    question: str
    category: str = ""
    failure_reason: str = ""
    improvement: str = ""
    missed_information: str = ""
    weight: Optional[float] = None
    created_batch: int = 0
    times_retrieved: int = 0
    cumulative_gain: float = 0.0

    def content_text(self) -> str:
        """经验内容检索时比对的文本"""
        parts = [self.improvement, self.failure_reason, self.missed_information]
        return " ".join(p for p in parts if p)

    def to_record(self) -> Dict:
        return {name: getattr(self, name) for name in EXPERIENCE_FIELDS}


@dataclass
class MetaGuideline:
    """元准则：指导如何把经验编译成任务准则"""
    id: str
    failure_pattern: str
    synthesis_instruction: str
    created_batch: int = 0

    def to_record(self) -> Dict:
        return {name: getattr(self, name) for name in META_FIELDS}


DEFAULT_META_GUIDELINE = MetaGuideline(
    id=DEFAULT_META_ID,
    failure_pattern="",
    synthesis_instruction=DEFAULT_SYNTHESIS_INSTRUCTION,
    created_batch=0,
)


@dataclass(frozen=True)
class RetrievalQuery:
    """检索查询，target 指定比对问题还是经验内容"""
    query: str
    target: str = TARGET_QUESTION

    def __post_init__(self):
        if not self.query or not self.query.strip():
            raise ValidationError("query must be non-empty", field="query")
        if self.target not in RETRIEVAL_TARGETS:
            raise ValidationError(f"target must be one of {RETRIEVAL_TARGETS}", field="target")


@dataclass(frozen=True)
class RetrievalHit:
    """检索命中，weighted_score = weight * similarity"""
    experience_id: str
    similarity: float
    weighted_score: float
    experience: Optional[Experience] = field(default=None, compare=False, repr=False)


class ExperienceBank:
    """经验库"""

    def __init__(self, experiences: Sequence[Experience] = ()):
        self._items: Dict[str, Experience] = {}
        self._lock = threading.RLock()
        for exp in experiences:
            self.add_experience(exp)

    def __len__(self):
        return len(self._items)

    def __iter__(self) -> Iterator[Experience]:
        with self._lock:
            return iter(list(self._items.values()))

    def __contains__(self, experience_id):
        return experience_id in self._items

    def ids(self) -> List[str]:
        with self._lock:
            return list(self._items)

    def get(self, experience_id: str) -> Experience:
        try:
            return self._items[experience_id]
        except KeyError:
            raise NotFoundError(f"experience not found: {experience_id}") from None

    def add_experience(self, experience: Experience) -> Experience:
        """
        加入一条经验

        参数:
        experience (Experience): 新经验，weight 未设置时初始化为 1.0

        返回:
        Experience: 已入库的经验
        """
        if not experience.id:
            raise ValidationError("id must be non-empty", field="id")
        if not experience.question or not experience.question.strip():
            raise ValidationError("question must be non-empty", field="question")
        if not experience.improvement or not experience.improvement.strip():
            raise ValidationError("improvement must be non-empty", field="improvement")
        with self._lock:
            if experience.id in self._items:
                raise DuplicateIdError(f"duplicate experience id: {experience.id}")
            if experience.weight is None:
                experience.weight = DEFAULT_WEIGHT
            elif not math.isfinite(experience.weight):
                raise ValidationError("weight must be finite", field="weight")
            experience.weight = clamp_weight(float(experience.weight))
            self._items[experience.id] = experience
        return experience

    def retrieve(self, queries: Sequence[RetrievalQuery], k: int, threshold: float,
                 embedder: EmbeddingProvider) -> List[RetrievalHit]:
        """
        按 weight * sim 加权检索

        参数:
        queries (list): 检索查询，多个查询的命中按经验取最大得分合并
        k (int): 最多返回条数
        threshold (float): 加权得分下限（含）
        embedder (EmbeddingProvider): 向量器

        返回:
        list: 按加权得分降序、id 升序排列的命中
        """
        if k < 1:
            raise ValidationError("k must be >= 1", field="k")
        if not math.isfinite(threshold):
            raise ValidationError("threshold must be finite", field="threshold")
        if not queries:
            return []

        with self._lock:
            items = list(self._items.values())
        if not items:
            return []

        question_vecs = None
        content_vecs = None
        best: Dict[str, RetrievalHit] = {}
        for query in queries:
            query_vec = embedder.embed(query.query)
            if query.target == TARGET_QUESTION:
                if question_vecs is None:
                    question_vecs = embedder.embed_many([e.question for e in items])
                vecs = question_vecs
            else:
                if content_vecs is None:
                    content_vecs = embedder.embed_many([e.content_text() for e in items])
                vecs = content_vecs

            for exp, vec in zip(items, vecs):
                sim = cosine(query_vec, vec)
                score = exp.weight * sim
                current = best.get(exp.id)
                if current is None or score > current.weighted_score:
                    best[exp.id] = RetrievalHit(exp.id, sim, score, exp)

        hits = [h for h in best.values() if h.weighted_score >= threshold]
        hits.sort(key=lambda h: (-h.weighted_score, h.experience_id))
        return hits[:k]

    def update_weight(self, experience_id: str, gain: float) -> Experience:
        """
        权重更新：w' = clamp(w + gain, 0, 10)

        参数:
        experience_id (str): 经验 id
        gain (float): utility(有记忆) - utility(无记忆)

        返回:
        Experience: 更新后的经验
        """
        if not math.isfinite(gain):
            raise ValidationError("gain must be finite", field="gain")
        with self._lock:
            exp = self.get(experience_id)
            exp.weight = clamp_weight(exp.weight + gain)
            exp.times_retrieved += 1
            exp.cumulative_gain += gain
        return exp

    def top_by_weight(self, n: Optional[int] = None, lowest: bool = False) -> List[Experience]:
        """按权重排序，权重相同按 id"""
        with self._lock:
            items = list(self._items.values())
        if lowest:
            items.sort(key=lambda e: (e.weight, e.id))
        else:
            items.sort(key=lambda e: (-e.weight, e.id))
        return items if n is None else items[:n]


class MetaGuidelineBank:
    """元准则库，保持插入顺序"""

    def __init__(self, entries: Sequence[MetaGuideline] = ()):
        self._items: Dict[str, MetaGuideline] = {}
        self._lock = threading.RLock()
        for mg in entries:
            self._insert(mg)

    def __len__(self):
        return len(self._items)

    def __iter__(self) -> Iterator[MetaGuideline]:
        with self._lock:
            return iter(list(self._items.values()))

    def __contains__(self, mg_id):
        return mg_id in self._items

    def ids(self) -> List[str]:
        with self._lock:
            return list(self._items)

    def _insert(self, mg: MetaGuideline):
        if not mg.synthesis_instruction or not mg.synthesis_instruction.strip():
            raise ValidationError("synthesis_instruction must be non-empty", field="synthesis_instruction")
        if not mg.id:
            raise ValidationError("id must be non-empty", field="id")
        if mg.id in self._items:
            raise DuplicateIdError(f"duplicate meta-guideline id: {mg.id}")
        self._items[mg.id] = mg

    def add_meta_guideline(self, mg: MetaGuideline, embedder: EmbeddingProvider,
                           dedup_threshold: float = 0.9) -> Tuple[bool, MetaGuideline]:
        """
        加入元准则，与已有条目文本相似度 > dedup_threshold 时视为重复

        参数:
        mg (MetaGuideline): 新元准则
        embedder (EmbeddingProvider): 向量器
        dedup_threshold (float): 去重阈值

        返回:
        tuple: (是否加入, 加入的条目或与之重复的已有条目)
        """
        if not mg.synthesis_instruction or not mg.synthesis_instruction.strip():
            raise ValidationError("synthesis_instruction must be non-empty", field="synthesis_instruction")
        with self._lock:
            new_vec = embedder.embed(mg.synthesis_instruction)
            for existing in self._items.values():
                sim = cosine(new_vec, embedder.embed(existing.synthesis_instruction))
                if sim > dedup_threshold:
                    logger.info("元准则与 %s 重复 (sim=%.3f)，未加入", existing.id, sim)
                    return False, existing
            self._insert(mg)
        return True, mg

    def select_meta_guideline(self, question: str, embedder: EmbeddingProvider,
                              min_similarity: float = 0.3) -> MetaGuideline:
        """
        选出与任务问题最相似的元准则，相似度不足时返回默认元准则

        参数:
        question (str): 任务问题
        embedder (EmbeddingProvider): 向量器
        min_similarity (float): 最低相似度

        返回:
        MetaGuideline: 选中的元准则
        """
        with self._lock:
            entries = list(self._items.values())
        if not entries:
            return DEFAULT_META_GUIDELINE
        query_vec = embedder.embed(question)
        vecs = embedder.embed_many([mg.synthesis_instruction for mg in entries])
        best, best_sim = None, -math.inf
        for mg, vec in zip(entries, vecs):
            sim = cosine(query_vec, vec)
            if sim > best_sim:
                best, best_sim = mg, sim
        if best_sim >= min_similarity:
            return best
        return DEFAULT_META_GUIDELINE


# ---------------- 持久化 ----------------

def _dump_line(record: Dict) -> str:
    return json.dumps(record, ensure_ascii=False, allow_nan=False)


def _read_records(path):
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"invalid JSON: {e.msg}", line_number=line_num) from e
            if not isinstance(data, dict):
                raise ValidationError("record must be a JSON object", line_number=line_num)
            yield line_num, data


def _require(data, name, kind, line_num):
    if name not in data:
        raise ValidationError("missing field", field=name, line_number=line_num)
    value = data[name]
    ok = isinstance(value, kind) and not isinstance(value, bool)
    if not ok:
        raise ValidationError(f"expected {getattr(kind, '__name__', kind)}", field=name, line_number=line_num)
    return value


def experience_from_record(data: Dict, line_num: Optional[int] = None) -> Experience:
    """从 JSON 记录构建经验并校验不变量"""
    exp = Experience(
        id=_require(data, "id", str, line_num),
        question=_require(data, "question", str, line_num),
        category=_require(data, "category", str, line_num),
        failure_reason=_require(data, "failure_reason", str, line_num),
        improvement=_require(data, "improvement", str, line_num),
        missed_information=_require(data, "missed_information", str, line_num),
        weight=float(_require(data, "weight", (int, float), line_num)),
        created_batch=_require(data, "created_batch", int, line_num),
        times_retrieved=_require(data, "times_retrieved", int, line_num),
        cumulative_gain=float(_require(data, "cumulative_gain", (int, float), line_num)),
    )
    if not exp.id:
        raise ValidationError("must be non-empty", field="id", line_number=line_num)
    if not exp.question.strip():
        raise ValidationError("must be non-empty", field="question", line_number=line_num)
    if not exp.improvement.strip():
        raise ValidationError("must be non-empty", field="improvement", line_number=line_num)
    if not (WEIGHT_MIN <= exp.weight <= WEIGHT_MAX):
        raise ValidationError("must be in [0, 10]", field="weight", line_number=line_num)
    if exp.times_retrieved < 0:
        raise ValidationError("must be >= 0", field="times_retrieved", line_number=line_num)
    if not math.isfinite(exp.cumulative_gain):
        raise ValidationError("must be finite", field="cumulative_gain", line_number=line_num)
    return exp


def meta_from_record(data: Dict, line_num: Optional[int] = None) -> MetaGuideline:
    """从 JSON 记录构建元准则并校验"""
    mg = MetaGuideline(
        id=_require(data, "id", str, line_num),
        failure_pattern=_require(data, "failure_pattern", str, line_num),
        synthesis_instruction=_require(data, "synthesis_instruction", str, line_num),
        created_batch=_require(data, "created_batch", int, line_num),
    )
    if not mg.id:
        raise ValidationError("must be non-empty", field="id", line_number=line_num)
    if not mg.synthesis_instruction.strip():
        raise ValidationError("must be non-empty", field="synthesis_instruction", line_number=line_num)
    return mg


def save_experiences(bank: ExperienceBank, path):
    """经验库写成 JSONL，一行一条"""
    lines = [_dump_line(exp.to_record()) + "\n" for exp in bank]
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")


def load_experiences(path) -> ExperienceBank:
    """读取经验库，违反不变量的记录报出行号"""
    bank = ExperienceBank()
    for line_num, data in _read_records(path):
        exp = experience_from_record(data, line_num)
        try:
            bank.add_experience(exp)
        except DuplicateIdError as e:
            raise ValidationError(str(e), field="id", line_number=line_num) from e
    return bank


def save_meta_guidelines(bank: MetaGuidelineBank, path):
    """元准则库写成 JSONL"""
    lines = [_dump_line(mg.to_record()) + "\n" for mg in bank]
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")


def load_meta_guidelines(path) -> MetaGuidelineBank:
    """读取元准则库"""
    bank = MetaGuidelineBank()
    for line_num, data in _read_records(path):
        mg = meta_from_record(data, line_num)
        try:
            bank._insert(mg)
        except DuplicateIdError as e:
            raise ValidationError(str(e), field="id", line_number=line_num) from e
    return bank
