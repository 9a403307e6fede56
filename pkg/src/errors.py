"""
异常定义
所有模块共用的错误类型，CLI 根据类型决定退出码
"""

from enum import Enum
from typing import Optional


class LiveEvoError(Exception):
    """所有业务异常的基类"""


class ValidationError(LiveEvoError):
    """输入或不变量校验失败"""

    def __init__(self, message: str, field: Optional[str] = None, line_number: Optional[int] = None):
        prefix = ""
        if line_number is not None:
            prefix += f"line {line_number}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)
        self.field = field
        self.line_number = line_number


class DuplicateIdError(LiveEvoError):
    """记忆库中已存在相同 id"""


class NotFoundError(LiveEvoError):
    """记忆库中找不到指定 id"""


class BackendErrorType(Enum):
    """后端错误类型分类"""
    TIMEOUT = "timeout"         # 超时
    RATE_LIMIT = "rate_limit"   # 速率限制
    API_ERROR = "api_error"     # 服务端错误
    UNKNOWN = "unknown"         # 未知错误


class BackendError(LiveEvoError):
    """对话/向量后端的传输错误"""

    def __init__(self, message: str, error_type: BackendErrorType = BackendErrorType.UNKNOWN):
        super().__init__(message)
        self.error_type = error_type


class ToolError(LiveEvoError):
    """搜索/网页抓取工具错误，记录进轨迹，不中断预测"""


class ParseError(LiveEvoError):
    """后端返回内容无法解析，且该操作没有回退方案"""


def classify_error(error: Exception) -> BackendErrorType:
    """
    根据异常文本粗略分类

    参数:
    error (Exception): 原始异常

    返回:
    BackendErrorType: 错误类型
    """
    error_msg = str(error).lower()
    if "timeout" in error_msg or "timed out" in error_msg:
        return BackendErrorType.TIMEOUT
    if "rate limit" in error_msg or "429" in error_msg:
        return BackendErrorType.RATE_LIMIT
    if "500" in error_msg or "502" in error_msg or "503" in error_msg:
        return BackendErrorType.API_ERROR
    return BackendErrorType.UNKNOWN
