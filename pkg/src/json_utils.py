"""
从模型回复中提取 JSON，永不抛异常
"""

import json
import re
from typing import Any, Optional

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)
_DECODER = json.JSONDecoder()


def extract_json(text: str) -> Optional[Any]:
    """
    提取回复中的第一个 JSON 对象或数组

    参数:
    text (str): 模型回复

    返回:
    解析出的对象，失败时为 None
    """
    if not isinstance(text, str):
        return None
    stripped = text.strip()
    candidates = [stripped]
    candidates.extend(m.group(1).strip() for m in _FENCE_RE.finditer(text))
    for candidate in candidates:
        try:
            return json.loads(candidate)
        except (json.JSONDecodeError, ValueError):
            pass
    # 回复中夹杂文字时，从每个括号处尝试解码
    for i, ch in enumerate(text):
        if ch in "{[":
            try:
                value, _ = _DECODER.raw_decode(text, i)
                return value
            except (json.JSONDecodeError, ValueError):
                continue
    return None


def extract_json_object(text: str) -> Optional[dict]:
    value = extract_json(text)
    return value if isinstance(value, dict) else None
