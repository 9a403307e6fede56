"""
配置管理
演化参数来自 JSON 配置文件 + 命令行覆盖，密钥和地址只来自环境变量
"""

import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import ValidationError

# 环境变量名
ENV_CHAT_BASE_URL = "LIVE_EVO_CHAT_BASE_URL"
ENV_CHAT_API_KEY = "LIVE_EVO_CHAT_API_KEY"
ENV_EMBED_BASE_URL = "LIVE_EVO_EMBED_BASE_URL"
ENV_EMBED_API_KEY = "LIVE_EVO_EMBED_API_KEY"
ENV_SEARCH_URL = "LIVE_EVO_SEARCH_URL"
ENV_SEARCH_API_KEY = "LIVE_EVO_SEARCH_API_KEY"

UTILITY_POLICIES = ("brier", "accuracy")


@dataclass(frozen=True)
class EvolutionConfig:
    """演化循环的全部超参数"""

    bad_case_fraction: float = 0.3
    min_improvement: float = 0.05
    top_k: int = 5
    retrieval_threshold: float = 0.5
    turn_cap: int = 20
    temperature: float = 0.2
    stake_per_week: float = 100.0
    cutoff_offset_hours: float = 6.0
    meta_selection_threshold: float = 0.3
    meta_dedup_threshold: float = 0.9
    page_char_budget: int = 20000
    utility_policy: str = "brier"
    parallel_rollouts: bool = False
    # 消融开关，全部为 True 时是完整方法
    update_weights: bool = True
    use_meta_guidelines: bool = True
    compile_guidelines: bool = True
    active_retrieve: bool = True
    chat_model: str = "gpt-4.1-mini"
    embedding_model: str = "text-embedding-3-small"

    def validate(self) -> "EvolutionConfig":
        """
        检查所有字段是否满足约束

        返回:
        EvolutionConfig: 自身，便于链式调用
        """
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not math.isfinite(value):
                raise ValidationError("must be finite", field=f.name)
        if not 0.0 < self.bad_case_fraction <= 1.0:
            raise ValidationError("must be in (0, 1]", field="bad_case_fraction")
        if self.min_improvement < 0.0:
            raise ValidationError("must be >= 0", field="min_improvement")
        if self.top_k < 1:
            raise ValidationError("must be >= 1", field="top_k")
        if self.turn_cap < 1:
            raise ValidationError("must be >= 1", field="turn_cap")
        if self.stake_per_week <= 0.0:
            raise ValidationError("must be > 0", field="stake_per_week")
        if self.cutoff_offset_hours < 0.0:
            raise ValidationError("must be >= 0", field="cutoff_offset_hours")
        if self.page_char_budget < 1:
            raise ValidationError("must be >= 1", field="page_char_budget")
        if self.utility_policy not in UTILITY_POLICIES:
            raise ValidationError(f"must be one of {UTILITY_POLICIES}", field="utility_policy")
        return self

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvolutionConfig":
        """从字典构建，拒绝未知键"""
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in known:
                raise ValidationError("unknown config key", field=key)
            kwargs[key] = _coerce(known[key].type, value, key)
        return cls(**kwargs).validate()

    @classmethod
    def from_file(cls, path) -> "EvolutionConfig":
        """
        读取 JSON 配置文件

        参数:
        path: 配置文件路径

        返回:
        EvolutionConfig: 校验通过的配置
        """
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValidationError(f"config is not valid JSON: {e}", line_number=e.lineno) from e
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "EvolutionConfig":
        """用命令行参数覆盖，值为 None 的忽略"""
        changes = {k: v for k, v in overrides.items() if v is not None}
        if not changes:
            return self
        return replace(self, **changes).validate()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _coerce(type_name, value, key):
    # dataclass 字段类型在这里是字符串或类型对象
    name = type_name if isinstance(type_name, str) else getattr(type_name, "__name__", "")
    try:
        if name == "float":
            return float(value)
        if name == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if name == "bool":
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        return str(value)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"invalid value {value!r}", field=key) from e


def env_setting(name: str, default: Optional[str] = None) -> Optional[str]:
    """读取环境变量，空字符串视为未设置"""
    value = os.environ.get(name, "")
    return value if value else default
