"""
基础算法接口
定义了所有演化算法共用的接口和方法
"""

import logging
from typing import Callable, Optional

from ..config import EvolutionConfig

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, str], bool]


class BaseAlgorithm:
    """所有演化算法的基类"""

    def __init__(self, config: Optional[EvolutionConfig] = None):
        """
        初始化算法

        参数:
        config (EvolutionConfig): 演化参数，默认使用 EvolutionConfig()
        """
        self.config = (config or EvolutionConfig()).validate()
        self.result = {
            'results': [],
            'committed_experience_ids': [],
            'added_meta_guideline_ids': [],
            'skipped_task_ids': [],
        }
        self.message = ""
        self.progress_callback: Optional[ProgressCallback] = None

    def set_progress_callback(self, callback: Optional[ProgressCallback]):
        """
        设置进度回调

        参数:
        callback: callback(value, text)，返回 True 表示取消
        """
        self.progress_callback = callback

    def update_progress(self, value, text=None):
        """
        报告进度

        参数:
        value (int): 当前进度值 0-100
        text (str): 进度文本，可选

        返回:
        bool: 是否取消
        """
        if text:
            logger.debug("[%3d%%] %s", value, text)
        if self.progress_callback:
            return bool(self.progress_callback(value, text or ""))
        return False

    def reset_result(self):
        for key in self.result:
            self.result[key] = []

    def execute(self, *args, **kwargs):
        """
        执行算法(需要子类实现)

        返回:
        dict: 结果字典
        """
        raise NotImplementedError("子类必须实现execute方法")

    def get_result_message(self):
        """
        获取结果消息

        返回:
        str: 结果消息
        """
        return self.message
