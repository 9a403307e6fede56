"""
命令行入口
run: 在任务流上运行在线演化
inspect: 查看经验权重及其逐周轨迹
score: 独立评分外部预测
generate: 生成合成任务流、脚本和种子经验
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .algorithms import AlgorithmUtils, LiveEvolutionAlgorithm
from .config import ENV_CHAT_API_KEY, EvolutionConfig, env_setting
from .embedding import HashingEmbedder, HttpEmbedder, MemoEmbedder
from .errors import LiveEvoError
from .llm_backend import HttpChatBackend, ScriptedBackend
from .memory_bank import (ExperienceBank, MetaGuidelineBank, load_experiences, load_meta_guidelines,
                          save_experiences)
from .metrics import read_forecasts, score_forecasts, write_reports_csv, write_scores_csv
from .run_recorder import (EXPERIENCES_FILE, LEDGER_FILE, RunManifest, RunRecorder, read_ledger)
from .search_tools import FixtureSearchBackend, SerperSearchBackend
from .stream import SyntheticSpec, dump_stream, generate_synthetic, load_stream, read_tasks

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2


class CliError(LiveEvoError):
    """命令行层面的用户错误"""


def configure_logging(verbose: bool = False):
    """配置根日志：stderr 单一输出，verbose 时为 DEBUG"""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


# --without 的取值 -> EvolutionConfig 中对应的开关
ABLATIONS = {
    "weight-update": "update_weights",
    "meta-guideline": "use_meta_guidelines",
    "compile": "compile_guidelines",
    "active-retrieve": "active_retrieve",
}


def _require_file(path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise CliError(f"{what} not found: {path}")
    return path


def _load_config(args) -> EvolutionConfig:
    config = EvolutionConfig.from_file(_require_file(args.config, "config")) if args.config else EvolutionConfig()
    disabled = {ABLATIONS[name]: False for name in (getattr(args, "without", None) or ())}
    return config.with_overrides(
        top_k=getattr(args, "top_k", None),
        retrieval_threshold=getattr(args, "retrieval_threshold", None),
        stake_per_week=getattr(args, "stake", None),
        **disabled,
    )


def format_week_line(report) -> str:
    """与周报对应的一行输出"""
    off = "-" if report.mean_brier_off is None else f"{report.mean_brier_off:.4f}"
    return (f"week {report.batch_id}: brier_on={report.mean_brier:.4f} brier_off={off} "
            f"return={report.mean_return:.4f} portfolio={report.portfolio_value_after:.2f}")


# ---------------- run ----------------

def _build_backends(args, config):
    if args.mode == "scripted":
        if not args.transcript:
            raise CliError("scripted mode needs --transcript")
        backend = ScriptedBackend.from_file(_require_file(args.transcript, "transcript"))
        embedder = HashingEmbedder()
        tools = FixtureSearchBackend.from_file(_require_file(args.corpus, "corpus")) if args.corpus else None
        return backend, embedder, tools

    if not env_setting(ENV_CHAT_API_KEY):
        raise CliError(f"live mode needs credentials, set {ENV_CHAT_API_KEY}")
    backend = HttpChatBackend(config.chat_model)
    embedder = MemoEmbedder(HttpEmbedder(config.embedding_model))
    tools = FixtureSearchBackend.from_file(_require_file(args.corpus, "corpus")) if args.corpus \
        else SerperSearchBackend()
    return backend, embedder, tools


def cmd_run(args) -> int:
    """在任务流上按批次运行演化，每批落盘"""
    stream_path = Path(args.stream)
    if not stream_path.is_file():
        raise CliError(f"stream not found: {stream_path}")
    config = _load_config(args)
    batches = load_stream(stream_path)
    batches = [b for b in batches
               if (args.start_batch is None or b[0].batch_id >= args.start_batch)
               and (args.end_batch is None or b[0].batch_id <= args.end_batch)]
    if not batches:
        raise CliError("no batches in the selected range")

    experience_bank = load_experiences(_require_file(args.experience_bank, "experience bank")) \
        if args.experience_bank else ExperienceBank()
    meta_bank = load_meta_guidelines(_require_file(args.meta_bank, "meta-guideline bank")) \
        if args.meta_bank else MetaGuidelineBank()
    backend, embedder, tools = _build_backends(args, config)

    recorder = RunRecorder(Path(args.out))
    recorder.start(RunManifest(
        config=config.to_dict(),
        stream_path=str(stream_path),
        mode=args.mode,
        output_dir=str(args.out),
        transcript_path=args.transcript,
        experience_bank_path=args.experience_bank,
        meta_bank_path=args.meta_bank,
        start_batch=args.start_batch,
        end_batch=args.end_batch,
    ))

    algorithm = LiveEvolutionAlgorithm(backend, embedder, experience_bank, meta_bank, tools, config)

    def on_batch(outcome):
        recorder.record_batch(outcome, algorithm.experience_bank, algorithm.meta_bank)
        print(format_week_line(outcome.report), flush=True)

    algorithm.on_batch = on_batch
    algorithm.execute(batches)
    logger.info(algorithm.get_result_message())
    return EXIT_OK


# ---------------- inspect ----------------

def _trajectory_text(points, batch_ids) -> str:
    known = dict(points)
    parts, last = [], None
    for batch_id in batch_ids:
        last = known.get(batch_id, last)
        parts.append(f"{batch_id}:{'-' if last is None else format(last, '.4f')}")
    return " ".join(parts)


def cmd_inspect(args) -> int:
    """打印权重最高/最低的经验及其逐周权重"""
    out = Path(args.out)
    bank = load_experiences(_require_file(out / EXPERIENCES_FILE, "experience bank"))
    ledger = read_ledger(_require_file(out / LEDGER_FILE, "ledger"))
    if len(bank) == 0:
        print("no experiences")
        return EXIT_OK

    trajectories = AlgorithmUtils.weight_trajectories(ledger)
    batch_ids = sorted({r["batch_id"] for r in ledger})

    if args.experience_id:
        exp = bank.get(args.experience_id)
        print(f"{exp.id} weight={exp.weight:.4f} retrieved={exp.times_retrieved} "
              f"gain={exp.cumulative_gain:.4f}")
        print(f"  weeks {_trajectory_text(trajectories.get(exp.id, []), batch_ids)}")
        return EXIT_OK

    top = bank.top_by_weight(args.top)
    shown = {e.id for e in top}
    bottom = [e for e in bank.top_by_weight(args.top, lowest=True) if e.id not in shown]
    for title, rows in (("top", top), ("bottom", bottom)):
        if not rows:
            continue
        print(f"{title} experiences by weight:")
        for exp in rows:
            print(f"  {exp.id} weight={exp.weight:.4f} retrieved={exp.times_retrieved} "
                  f"improvement={exp.improvement[:60]!r}")
            print(f"    weeks {_trajectory_text(trajectories.get(exp.id, []), batch_ids)}")
    return EXIT_OK


# ---------------- score ----------------

def cmd_score(args) -> int:
    """对外部预测逐任务、逐周评分"""
    config = _load_config(args)
    tasks = read_tasks(_require_file(args.stream, "stream"))
    forecasts = read_forecasts(_require_file(args.forecasts, "forecasts"), tasks)
    scores, reports = score_forecasts(tasks, forecasts, config.stake_per_week, config.utility_policy)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scores_csv(scores, out / "scores.csv")
    write_reports_csv(reports, out / "weekly.csv")
    for report in reports:
        print(format_week_line(report))
    return EXIT_OK


# ---------------- generate ----------------

def cmd_generate(args) -> int:
    """生成合成任务流、脚本后端文件和种子经验库"""
    spec_path = _require_file(args.spec, "synthetic spec")
    try:
        data = json.loads(spec_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CliError(f"synthetic spec is not valid JSON: {e.msg}") from e
    artifacts = generate_synthetic(SyntheticSpec.from_dict(data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_stream(artifacts.tasks, out / "stream.jsonl")
    artifacts.transcript.save(out / "transcript.json")
    save_experiences(ExperienceBank(artifacts.seed_experiences), out / "seed_experiences.jsonl")
    print(f"wrote {len(artifacts.tasks)} tasks, {len(artifacts.transcript.rules)} rules, "
          f"{len(artifacts.seed_experiences)} seed experiences to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", help="输出 DEBUG 日志")
    parser = argparse.ArgumentParser(prog="live-evo", description="在线自演化记忆的预测智能体")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="在任务流上运行在线演化")
    run.add_argument("--stream", required=True, help="任务流 JSONL")
    run.add_argument("--config", help="JSON 配置文件")
    run.add_argument("--mode", choices=("live", "scripted"), default="scripted", help="后端模式")
    run.add_argument("--transcript", help="scripted 模式的脚本文件")
    run.add_argument("--corpus", help="本地搜索语料 JSONL")
    run.add_argument("--out", required=True, help="输出目录")
    run.add_argument("--start-batch", type=int, help="起始批次（含）")
    run.add_argument("--end-batch", type=int, help="结束批次（含）")
    run.add_argument("--experience-bank", help="初始经验库 JSONL")
    run.add_argument("--meta-bank", help="初始元准则库 JSONL")
    run.add_argument("--top-k", type=int, help="覆盖配置中的 top_k")
    run.add_argument("--retrieval-threshold", type=float, help="覆盖配置中的 retrieval_threshold")
    run.add_argument("--stake", type=float, help="覆盖配置中的 stake_per_week")
    run.add_argument("--without", action="append", choices=sorted(ABLATIONS),
                     help="关闭某个组件做消融，可重复")
    run.set_defaults(func=cmd_run)

    inspect = sub.add_parser("inspect", parents=[common], help="查看经验权重轨迹")
    inspect.add_argument("--out", required=True, help="run 的输出目录")
    inspect.add_argument("--experience-id", help="只看一条经验")
    inspect.add_argument("--top", type=int, default=5, help="显示最高/最低各几条")
    inspect.set_defaults(func=cmd_inspect)

    score = sub.add_parser("score", parents=[common], help="独立评分外部预测")
    score.add_argument("--forecasts", required=True, help="预测 JSONL（也可以直接用 ledger.jsonl）")
    score.add_argument("--stream", required=True, help="任务流 JSONL")
    score.add_argument("--out", required=True, help="输出目录")
    score.add_argument("--config", help="JSON 配置文件")
    score.add_argument("--stake", type=float, help="覆盖配置中的 stake_per_week")
    score.set_defaults(func=cmd_score)

    generate = sub.add_parser("generate", parents=[common], help="生成合成任务流")
    generate.add_argument("--spec", required=True, help="合成参数 JSON")
    generate.add_argument("--out", required=True, help="输出目录")
    generate.set_defaults(func=cmd_generate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """命令行主函数，返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return args.func(args)
    except (LiveEvoError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        logger.exception("未预期的错误")
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
