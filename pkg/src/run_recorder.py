"""
运行记录
运行清单、逐任务账本、两个记忆库和周报在每个批次结束后落盘，中途失败也保留已完成部分
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import ValidationError
from .memory_bank import ExperienceBank, MetaGuidelineBank, save_experiences, save_meta_guidelines
from .metrics import WeeklyReport, write_reports_csv, write_reports_jsonl

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
EXPERIENCES_FILE = "experiences.jsonl"
META_GUIDELINES_FILE = "meta_guidelines.jsonl"
LEDGER_FILE = "ledger.jsonl"
TRAJECTORIES_FILE = "trajectories.jsonl"
WEEKLY_JSONL_FILE = "weekly.jsonl"
WEEKLY_CSV_FILE = "weekly.csv"


@dataclass(frozen=True)
class RunManifest:
    """复现一次运行所需的全部输入"""
    config: Dict[str, Any]
    stream_path: str
    mode: str
    output_dir: str
    transcript_path: Optional[str] = None
    experience_bank_path: Optional[str] = None
    meta_bank_path: Optional[str] = None
    start_batch: Optional[int] = None
    end_batch: Optional[int] = None

    def to_record(self) -> Dict[str, Any]:
        return {
            "config": dict(self.config),
            "stream_path": self.stream_path,
            "mode": self.mode,
            "transcript_path": self.transcript_path,
            "experience_bank_path": self.experience_bank_path,
            "meta_bank_path": self.meta_bank_path,
            "output_dir": self.output_dir,
            "start_batch": self.start_batch,
            "end_batch": self.end_batch,
        }


@dataclass
class RunRecorder:
    """把运行产物写到输出目录"""
    output_dir: Path
    reports: List[WeeklyReport] = field(default_factory=list)

    def __post_init__(self):
        self.output_dir = Path(self.output_dir)

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def start(self, manifest: RunManifest):
        """
        建立输出目录，写入清单并清空旧账本

        参数:
        manifest (RunManifest): 运行清单
        """
        self.output_dir.mkdir(parents=True, exist_ok=True)
        text = json.dumps(manifest.to_record(), ensure_ascii=False, indent=2) + "\n"
        self.path(MANIFEST_FILE).write_text(text, encoding="utf-8", newline="\n")
        self.path(LEDGER_FILE).write_text("", encoding="utf-8", newline="\n")
        self.path(TRAJECTORIES_FILE).write_text("", encoding="utf-8", newline="\n")
        self.reports = []
        logger.info("运行输出目录: %s", self.output_dir)

    def record_batch(self, outcome, experience_bank: ExperienceBank, meta_bank: MetaGuidelineBank):
        """
        一个批次结束后追加账本和有记忆轨迹，重写两个库和周报

        参数:
        outcome (BatchOutcome): 批次产出
        experience_bank (ExperienceBank): 经验库
        meta_bank (MetaGuidelineBank): 元准则库
        """
        lines, trajectories = [], []
        for result in outcome.results:
            candidates = outcome.tasks[result.task_id].candidates
            lines.append(json.dumps(result.to_record(candidates), ensure_ascii=False, allow_nan=False) + "\n")
            record = {"batch_id": result.batch_id, "task_id": result.task_id}
            record.update(result.trajectory_on.to_record())
            trajectories.append(json.dumps(record, ensure_ascii=False) + "\n")
        with self.path(LEDGER_FILE).open("a", encoding="utf-8", newline="\n") as f:
            f.writelines(lines)
        with self.path(TRAJECTORIES_FILE).open("a", encoding="utf-8", newline="\n") as f:
            f.writelines(trajectories)
        save_experiences(experience_bank, self.path(EXPERIENCES_FILE))
        save_meta_guidelines(meta_bank, self.path(META_GUIDELINES_FILE))
        self.reports.append(outcome.report)
        write_reports_jsonl(self.reports, self.path(WEEKLY_JSONL_FILE))
        write_reports_csv(self.reports, self.path(WEEKLY_CSV_FILE))


def read_ledger(path) -> List[Dict[str, Any]]:
    """读取账本，坏行报出行号"""
    records = []
    with Path(path).open(encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValidationError(f"invalid JSON: {e.msg}", line_number=line_num) from e
            if not isinstance(data, dict) or "batch_id" not in data or "task_id" not in data:
                raise ValidationError("ledger record needs batch_id and task_id", line_number=line_num)
            records.append(data)
    return records
