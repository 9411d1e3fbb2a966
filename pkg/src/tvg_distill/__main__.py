#!/usr/bin/env python3
"""
TVG Distill Lab - 主程式入口
============================

此檔案允許套件透過 `python -m tvg_distill` 執行。

使用方法:
  python -m tvg_distill gen --config configs/standard_fixture.conf
  python -m tvg_distill train --config ... --set algo=grpo --threads 4
  python -m tvg_distill eval --config ... --checkpoint runs/x/checkpoints/final.ckpt
  python -m tvg_distill analyze kl-check --config ...
  python -m tvg_distill compare --determinism a/metrics.jsonl b/metrics.jsonl

退出碼：0 成功，2 配置錯誤，3 檢查或決定性比對失敗，1 其他錯誤。
"""

import argparse
import json
import sys
from typing import Any

from .config import ExperimentConfig, load_config
from .utils.error_handler import ConfigurationError, ErrorHandler, LabError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="扁平配置文件路徑")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="覆寫配置鍵，例如 --set grpo.group_size=8（可重複）",
    )
    parser.add_argument("--seed", type=int, help="覆寫 seed")
    parser.add_argument("--algo", choices=["grpo", "opd", "oprkd", "opfkd"], help="覆寫 algo")
    parser.add_argument("--output-dir", help="覆寫運行目錄")
    parser.add_argument("--threads", type=int, help="工作執行緒數（不影響任何輸出位元組）")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tvg-distill",
        description="TVG Distill Lab - 合成時間定位任務上的策略梯度與在線蒸餾實驗",
    )
    subparsers = parser.add_subparsers(dest="command", help="可用命令")

    _add_common(subparsers.add_parser("gen", help="生成訓練池與保留集"))

    train = subparsers.add_parser("train", help="執行所選訓練器")
    _add_common(train)
    train.add_argument("--resume", action="store_true", help="從最新的檢查點續跑")
    train.add_argument("--teacher-checkpoint", help="教師檢查點（覆寫 teacher.*）")
    train.add_argument("--selection", help="只在此 id 清單上訓練")
    train.add_argument("--stop-after", type=int, help="在此累計步數停止")

    evaluate = subparsers.add_parser("eval", help="貪婪解碼評估檢查點")
    _add_common(evaluate)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--holdout", help="保留集 JSONL（預設為運行目錄內的）")
    evaluate.add_argument("--name", default="eval", help="輸出文件名前綴")

    score = subparsers.add_parser("score", help="對訓練池做可靠度與分歧評分")
    _add_common(score)
    score.add_argument("--student-checkpoint")
    score.add_argument("--teacher-checkpoint")

    select = subparsers.add_parser("select", help="依課程策略從評分 CSV 選樣")
    _add_common(select)
    select.add_argument("--scored", help="評分 CSV（預設為運行目錄內的 scored.csv）")

    analyze = subparsers.add_parser("analyze", help="梯度變異數、KL 恆等式、預算比較")
    analyses = analyze.add_subparsers(dest="analysis", required=True)

    variance = analyses.add_parser("variance", help="量測單軌跡梯度估計量的變異數")
    _add_common(variance)
    variance.add_argument("--estimators", nargs="+", default=["grpo", "opd"], choices=["grpo", "opd"])
    variance.add_argument("--n-samples", type=int, default=1000)
    variance.add_argument("--instance-index", type=int, default=0)
    variance.add_argument("--n-boot", type=int, default=1000)
    variance.add_argument("--student-checkpoint")
    variance.add_argument("--teacher-checkpoint")

    kl_check = analyses.add_parser("kl-check", help="反向 KL 梯度恆等式的蒙地卡羅檢查")
    _add_common(kl_check)
    kl_check.add_argument("--n-samples", type=int, default=200_000)
    kl_check.add_argument("--instance-index", type=int, default=0)
    kl_check.add_argument("--prefix", nargs="*", default=[], help="前綴 token 名稱，例如 1 SEP")
    kl_check.add_argument("--threshold", type=float, help="max |z| 門檻（預設 Šidák 校正）")
    kl_check.add_argument("--student-checkpoint")
    kl_check.add_argument("--teacher-checkpoint")

    budget = analyses.add_parser("budget", help="達到目標 mIoU 的 token 與時間成本")
    _add_common(budget)
    budget.add_argument("--metrics", nargs="+", required=True, help="各演算法的 metrics.jsonl")
    budget.add_argument("--target", type=float, required=True, help="目標保留集 mIoU")

    compare = subparsers.add_parser("compare", help="決定性比對與消融")
    _add_common(compare)
    mode = compare.add_mutually_exclusive_group(required=True)
    mode.add_argument("--determinism", nargs=2, metavar=("A", "B"), help="比對兩個指標流")
    mode.add_argument("--strategies", nargs="*", help="逐一比較取樣策略（預設全部）")
    mode.add_argument("--teachers", nargs="+", help="oracle:S[:C]、grammar:S 或檢查點路徑")
    compare.add_argument("--teacher-checkpoint")

    subparsers.add_parser("version", help="顯示版本資訊")
    return parser


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """配置文件 < --set < 具名旗標"""
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides: dict[str, Any] = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set 需要 KEY=VALUE: {item}")
        overrides[key.strip()] = value.strip()
    for key, attr in (("seed", "seed"), ("algo", "algo"), ("output_dir", "output_dir")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return config.with_overrides(overrides) if overrides else config.validate()


def _print_json(data: Any) -> None:
    print(json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True))


def run_command(args: argparse.Namespace) -> int:
    from .env.metrics import format_report_table
    from .runner import commands

    config = build_config(args)
    ctx = commands.RunContext(config, commands.resolve_threads(args.threads, config))

    if args.command == "gen":
        _print_json(commands.cmd_gen(ctx))
    elif args.command == "train":
        _print_json(
            commands.cmd_train(
                ctx,
                resume=args.resume,
                teacher_checkpoint=args.teacher_checkpoint,
                selection=args.selection,
                stop_after=args.stop_after,
            )
        )
    elif args.command == "eval":
        report = commands.cmd_eval(ctx, args.checkpoint, args.holdout, args.name)
        print(format_report_table(report, args.checkpoint))
    elif args.command == "score":
        path = commands.cmd_score(ctx, args.student_checkpoint, args.teacher_checkpoint)
        print(str(path))
    elif args.command == "select":
        print("\n".join(commands.cmd_select(ctx, args.scored)))
    elif args.command == "analyze":
        if args.analysis == "variance":
            output = commands.analyze_variance(
                ctx, args.estimators, args.n_samples, args.instance_index,
                args.student_checkpoint, args.teacher_checkpoint, args.n_boot,
            )
            _print_json(output)
        elif args.analysis == "kl-check":
            output = commands.analyze_kl_check(
                ctx, args.n_samples, args.instance_index, args.prefix, args.threshold,
                args.student_checkpoint, args.teacher_checkpoint,
            )
            _print_json({k: output[k] for k in ("max_z_score", "threshold", "passed")})
        else:
            print(commands.analyze_budget(ctx, args.metrics, args.target)["table"])
    elif args.command == "compare":
        if args.determinism:
            commands.compare_determinism(ctx, *args.determinism)
            print("✅ 指標流一致（已排除 wallclock 欄位）", file=sys.stderr)
        elif args.teachers:
            _print_json(commands.compare_teachers(ctx, args.teachers))
        else:
            from .config import STRATEGIES

            _print_json(
                commands.compare_strategies(ctx, args.strategies or STRATEGIES, args.teacher_checkpoint)
            )
    return 0


def show_version() -> None:
    from . import __author__, __version__

    print(f"TVG Distill Lab v{__version__}")
    print(f"作者: {__author__}")


def main(argv: list[str] | None = None) -> int:
    """主程式入口點"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "version":
        show_version()
        return 0
    if args.command is None:
        parser.print_help()
        return 1

    try:
        return run_command(args)
    except (LabError, OSError) as e:
        error_id = ErrorHandler.log_error_with_context(e, context={"operation": args.command})
        print(
            ErrorHandler.format_user_error(e, context={"operation": args.command}),
            file=sys.stderr,
        )
        for solution in ErrorHandler.get_error_solutions(ErrorHandler.classify_error(e)):
            print(f"💡 {solution}", file=sys.stderr)
        print(f"錯誤ID: {error_id}", file=sys.stderr)
        return ErrorHandler.exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
