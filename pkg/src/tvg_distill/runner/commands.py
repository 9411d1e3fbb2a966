"""
執行器命令
==========

每個命令只讀寫 `config.output_dir` 之下的文件（外部輸入以路徑明示），
並在結束時更新 MANIFEST.json。運行目錄佈局：

    config.conf                  配置快照（首行 config_hash 註解）
    pools/train.jsonl            訓練池
    pools/holdout.jsonl          保留集
    teacher.ckpt                 本次運行使用的教師
    metrics.jsonl                逐步指標與 event = eval 的保留集評估
    checkpoints/step_XXXXXX.ckpt 週期性訓練器檢查點
    checkpoints/final.ckpt       最終訓練器檢查點
    eval.json / eval.txt         最終評估
    scored.csv / selection.txt   課程評分與篩選
    rounds/round_N.txt           多輪課程每輪的選擇
    analysis/*.json|csv          變異數、KL 恆等式、預算比較
    compare/*.json               決定性比對與消融
"""

import csv
import io
import os
import re
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..analysis import (
    BudgetCurve,
    budget_compare,
    format_budget_table,
    kl_identity_check,
    measure_variance,
    token_ratio,
    variance_dominance,
)
from ..config import STRATEGIES, ExperimentConfig, get_runtime_settings
from ..curriculum import (
    base_model_ious,
    difficulty_gaussian_sample,
    read_scored_csv,
    read_selection,
    run_rounds,
    score_pool,
    scored_to_csv,
    select_samples,
    selection_to_text,
)
from ..debug import runner_debug_log
from ..env.grammar import tokens_from_names
from ..env.instances import GroundingInstance, generate_pools, read_pool, write_pool
from ..env.metrics import EvalReport, format_report_table
from ..policy.model import ParamPolicy, Policy, PolicyState
from ..policy.params import PolicyParams
from ..policy.teachers import GrammarTeacher, load_policy, make_oracle_teacher, save_teacher
from ..trainers import (
    TrainerState,
    evaluate_policy,
    load_trainer_checkpoint,
    make_base_student,
    make_trainer,
    save_trainer_checkpoint,
)
from ..utils.error_handler import CheckFailure, ConfigurationError, InvalidInputError
from ..utils.resource_manager import RunResourceManager, jsonl_line, read_jsonl
from ..utils.rng import derive_rng


TRAIN_POOL = "pools/train.jsonl"
HOLDOUT_POOL = "pools/holdout.jsonl"
CONFIG_FILE = "config.conf"
METRICS_FILE = "metrics.jsonl"
TEACHER_FILE = "teacher.ckpt"
CHECKPOINT_DIR = "checkpoints"
FINAL_CHECKPOINT = f"{CHECKPOINT_DIR}/final.ckpt"
SCORED_FILE = "scored.csv"
SELECTION_FILE = "selection.txt"

_STEP_CHECKPOINT = re.compile(r"step_(\d+)\.ckpt$")


def resolve_threads(cli_threads: int | None, config: ExperimentConfig) -> int:
    """命令列 --threads > TVG_THREADS > train.threads"""
    if cli_threads is not None:
        if cli_threads < 1:
            raise ConfigurationError(f"--threads 必須 ≥ 1: {cli_threads}")
        return cli_threads
    if os.getenv("TVG_THREADS"):
        return get_runtime_settings().threads
    return config.train.threads


@dataclass
class RunContext:
    config: ExperimentConfig
    threads: int = 1

    @property
    def run_dir(self) -> Path:
        return Path(self.config.output_dir)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def manager(self, command: str) -> RunResourceManager:
        return RunResourceManager(self.run_dir, self.config_hash, command)

    def pools(self) -> tuple[list[GroundingInstance], list[GroundingInstance]]:
        return read_pool(self.run_dir / TRAIN_POOL), read_pool(self.run_dir / HOLDOUT_POOL)

    def base_student(self, pool: Sequence[GroundingInstance]) -> PolicyParams:
        return make_base_student(self.config, pool, self.threads)


def write_config_snapshot(rm: RunResourceManager, config: ExperimentConfig) -> Path:
    return rm.write_text(CONFIG_FILE, f"# config_hash={rm.config_hash}\n" + config.render())


# ---- 教師 ----


def resolve_teacher(config: ExperimentConfig, checkpoint: str | Path | None = None) -> Policy:
    """--teacher-checkpoint > teacher.kind = checkpoint > 構造式教師"""
    spec = config.teacher
    path = checkpoint or (spec.checkpoint if spec.kind == "checkpoint" else None)
    if path:
        if not Path(path).exists():
            raise FileNotFoundError(f"教師檢查點不存在: {path}")
        return load_policy(path)
    if spec.kind == "grammar":
        return GrammarTeacher(spec.sharpness)
    return make_oracle_teacher(spec, derive_rng(config.seed, "teacher"))


def parse_teacher_option(text: str, seed: int) -> Policy:
    """`oracle:SHARPNESS[:CORRUPTION]`、`grammar:SHARPNESS` 或檢查點路徑"""
    kind, _, rest = text.partition(":")
    if kind in ("oracle", "grammar") and rest:
        parts = rest.split(":")
        try:
            values = [float(p) for p in parts]
        except ValueError as exc:
            raise ConfigurationError(f"教師規格無法解析: {text}") from exc
        if kind == "grammar":
            return GrammarTeacher(values[0])
        corruption = values[1] if len(values) > 1 else 0.0
        return make_oracle_teacher(
            {"sharpness": values[0], "corruption_rate": corruption},
            derive_rng(seed, "teacher"),
        )
    if not Path(text).exists():
        raise ConfigurationError(f"教師規格既不是 oracle/grammar 也不是存在的檢查點: {text}")
    return load_policy(text)


# ---- gen ----


def cmd_gen(ctx: RunContext) -> dict[str, Any]:
    config = ctx.config
    train, holdout = generate_pools(
        config.seed, config.env, config.train.train_size, config.eval.holdout_size
    )
    rm = ctx.manager("gen")
    write_config_snapshot(rm, config)
    for relative, split, instances in (
        (TRAIN_POOL, "train", train),
        (HOLDOUT_POOL, "holdout", holdout),
    ):
        path = rm.path(relative)
        write_pool(path, instances, rm.config_hash, split)
        rm.register_file(path)
    rm.finalize({"train_size": len(train), "holdout_size": len(holdout)})
    return {"config_hash": rm.config_hash, "train": len(train), "holdout": len(holdout)}


# ---- train ----


def _strip_wallclock(record: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in record.items() if "wallclock" not in k}


def truncate_metrics(records: Sequence[dict[str, Any]], step: int, eval_every: int) -> list[dict[str, Any]]:
    """續跑時保留的紀錄：步數 ≤ step，評估只保留週期性的那些"""
    kept = []
    for record in records:
        if record["step"] > step:
            continue
        if record.get("event") == "eval":
            if eval_every <= 0 or record["step"] % eval_every != 0:
                continue
        kept.append(record)
    return kept


def latest_checkpoint(run_dir: Path) -> Path | None:
    found = []
    for path in (run_dir / CHECKPOINT_DIR).glob("step_*.ckpt"):
        match = _STEP_CHECKPOINT.search(path.name)
        if match:
            found.append((int(match.group(1)), path))
    return max(found)[1] if found else None


def _training_pool(
    ctx: RunContext,
    pool: list[GroundingInstance],
    base: PolicyParams,
    selection: str | Path | None,
) -> list[GroundingInstance]:
    config = ctx.config
    if selection is not None:
        ids = read_selection(selection)
        by_id = {inst.id: inst for inst in pool}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise InvalidInputError(f"選擇清單中有 {len(missing)} 個 id 不在訓練池")
        return [by_id[i] for i in ids]
    k = config.train.difficulty_select
    if config.algo == "grpo" and k > 0:
        if k > len(pool):
            raise ConfigurationError(f"train.difficulty_select ({k}) 大於訓練池")
        ious = base_model_ious(ParamPolicy(base), pool, config.env.max_len, ctx.threads)
        return difficulty_gaussian_sample(
            pool, ious, k, config.difficulty.mu, config.difficulty.sigma,
            derive_rng(config.seed, "difficulty"),
        )
    return pool


def cmd_train(
    ctx: RunContext,
    resume: bool = False,
    teacher_checkpoint: str | Path | None = None,
    selection: str | Path | None = None,
    stop_after: int | None = None,
) -> dict[str, Any]:
    """
    Args:
        resume: 從最新的 step 檢查點續跑，並把指標流截斷到該步
        selection: 只在清單中的實例上訓練（不重新評分）
        stop_after: 在此累計步數停止（模擬中斷）
    """
    config = ctx.config
    train_pool, holdout = ctx.pools()
    curriculum = config.curriculum.enabled
    needs_teacher = config.algo != "grpo" or curriculum
    teacher = resolve_teacher(config, teacher_checkpoint) if needs_teacher else None
    trainer = make_trainer(config, teacher, ctx.threads)
    rm = ctx.manager("train")
    write_config_snapshot(rm, config)
    if teacher is not None:
        rm.register_file(save_teacher(rm.path(TEACHER_FILE), teacher, rm.config_hash))

    metrics_path = rm.path(METRICS_FILE)
    if resume:
        if curriculum:
            raise ConfigurationError("多輪課程不支援 --resume")
        checkpoint = latest_checkpoint(ctx.run_dir)
        if checkpoint is None:
            raise ConfigurationError(f"{ctx.run_dir} 沒有可續跑的檢查點")
        state = load_trainer_checkpoint(checkpoint)
        _, records = read_jsonl(metrics_path) if metrics_path.exists() else (None, [])
        kept = truncate_metrics(records, state.step, config.eval.eval_every)
        rm.write_jsonl(METRICS_FILE, kept, kind="metrics")
        runner_debug_log(f"從 {checkpoint.name} 續跑，保留 {len(kept)} 筆指標")
    else:
        state = TrainerState.initial(ctx.base_student(train_pool), config.seed)
        rm.write_jsonl(METRICS_FILE, [], kind="metrics")

    pool = _training_pool(ctx, train_pool, state.ref_params, selection)

    def sink(record: dict[str, Any]) -> None:
        rm.append_jsonl(METRICS_FILE, record, kind="metrics")

    def on_checkpoint(current: TrainerState) -> None:
        path = rm.path(f"{CHECKPOINT_DIR}/step_{current.step:06d}.ckpt")
        rm.register_file(save_trainer_checkpoint(path, current, rm.config_hash))

    summary: dict[str, Any] = {"algo": config.algo, "config_hash": rm.config_hash}
    if curriculum:
        result = run_rounds(
            state, teacher, pool, holdout, config, trainer,
            derive_rng(config.seed, "curriculum"), sink=sink,
            on_round=lambda report: rm.write_text(
                f"rounds/round_{report.round}.txt",
                selection_to_text(report.selection_ids, rm.config_hash),
            ),
        )
        state = result.state
        final_eval = result.rounds[-1].eval_report
        summary["rounds"] = [r.summary() for r in result.rounds]
        if result.teacher_report is not None:
            summary["teacher_eval"] = result.teacher_report.to_dict()
    else:
        total = config.train.steps if stop_after is None else min(stop_after, config.train.steps)
        trained = trainer.train(
            state, pool, holdout, steps=max(0, total - state.step),
            sink=sink, on_checkpoint=on_checkpoint,
        )
        state = trained.state
        final_eval = trained.final_eval

    rm.register_file(save_trainer_checkpoint(rm.path(FINAL_CHECKPOINT), state, rm.config_hash))
    rm.register_file(metrics_path)
    if final_eval is not None:
        rm.write_json("eval.json", final_eval.to_dict())
        rm.write_text("eval.txt", format_report_table(final_eval, f"{config.algo} holdout") + "\n")
        summary["eval"] = final_eval.to_dict()
    summary.update(step=state.step, tokens_generated=state.tokens_generated)
    rm.finalize({"step": state.step, "tokens_generated": state.tokens_generated})
    return summary


# ---- eval ----


def cmd_eval(
    ctx: RunContext,
    checkpoint: str | Path,
    holdout_path: str | Path | None = None,
    name: str = "eval",
) -> EvalReport:
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"檢查點不存在: {checkpoint}")
    policy = load_policy(checkpoint)
    holdout = read_pool(holdout_path or ctx.run_dir / HOLDOUT_POOL)
    if not holdout:
        raise InvalidInputError("保留集為空")
    report = evaluate_policy(
        policy, holdout, ctx.config.env.max_len, ctx.config.eval.thresholds, ctx.threads
    )
    rm = ctx.manager("eval")
    rm.write_json(f"{name}.json", {"checkpoint": str(checkpoint), **report.to_dict()})
    rm.write_text(f"{name}.txt", format_report_table(report, Path(checkpoint).name) + "\n")
    rm.finalize({"checkpoint": str(checkpoint), "mean_iou": report.mean_iou})
    return report


# ---- score / select ----


def _student_policy(ctx: RunContext, pool: Sequence[GroundingInstance], checkpoint: str | Path | None) -> Policy:
    if checkpoint is not None:
        return load_policy(checkpoint)
    return ParamPolicy(ctx.base_student(pool))


def cmd_score(
    ctx: RunContext,
    student_checkpoint: str | Path | None = None,
    teacher_checkpoint: str | Path | None = None,
) -> Path:
    config = ctx.config
    pool, _ = ctx.pools()
    student = _student_policy(ctx, pool, student_checkpoint)
    teacher = resolve_teacher(config, teacher_checkpoint)
    scored = score_pool(
        student, teacher, pool, config.curriculum, derive_rng(config.seed, "score"),
        config.env.max_len, ctx.threads,
    )
    rm = ctx.manager("score")
    path = rm.write_csv(SCORED_FILE, scored_to_csv(scored, rm.config_hash))
    rm.finalize({"n_scored": len(scored), "n_reliable": sum(s.reliable for s in scored)})
    return path


def cmd_select(ctx: RunContext, scored_path: str | Path | None = None) -> list[str]:
    config = ctx.config
    pool, _ = ctx.pools()
    scored = read_scored_csv(scored_path or ctx.run_dir / SCORED_FILE, pool)
    selected = select_samples(scored, config.curriculum, derive_rng(config.seed, "select"))
    ids = [s.id for s in selected]
    rm = ctx.manager("select")
    rm.write_text(SELECTION_FILE, selection_to_text(ids, rm.config_hash))
    rm.finalize({"strategy": config.curriculum.strategy, "n_selected": len(ids)})
    return ids


# ---- analyze ----


def _analysis_params(ctx: RunContext, pool: Sequence[GroundingInstance], checkpoint: str | Path | None) -> PolicyParams:
    policy = _student_policy(ctx, pool, checkpoint)
    if not isinstance(policy, ParamPolicy):
        raise ConfigurationError("分析需要參數化的學生檢查點")
    return policy.params


def _rows_to_csv(rows: Sequence[dict[str, Any]], config_hash: str) -> str:
    buffer = io.StringIO()
    buffer.write(f"# config_hash={config_hash}\n")
    if rows:
        writer = csv.DictWriter(buffer, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
    return buffer.getvalue()


def analyze_variance(
    ctx: RunContext,
    estimators: Sequence[str] = ("grpo", "opd"),
    n_samples: int = 1000,
    instance_index: int = 0,
    student_checkpoint: str | Path | None = None,
    teacher_checkpoint: str | Path | None = None,
    n_boot: int = 1000,
) -> dict[str, Any]:
    config = ctx.config
    pool, _ = ctx.pools()
    if not 0 <= instance_index < len(pool):
        raise InvalidInputError(f"instance_index 越界: {instance_index}")
    params = _analysis_params(ctx, pool, student_checkpoint)
    instance = pool[instance_index]
    rm = ctx.manager("analyze variance")
    reports = {}
    for name in estimators:
        context = resolve_teacher(config, teacher_checkpoint) if name == "opd" else config.grpo
        reports[name] = measure_variance(
            name, params, context, instance, n_samples,
            derive_rng(config.seed, "variance", name), config.env.max_len, ctx.threads,
        )
        rm.memory.record(f"variance {name}")
    output: dict[str, Any] = {
        "instance_id": instance.id,
        "reports": {name: report.to_dict() for name, report in reports.items()},
    }
    if "opd" in reports and "grpo" in reports:
        dominance = variance_dominance(
            reports["opd"], reports["grpo"], n_boot, derive_rng(config.seed, "bootstrap")
        )
        output["opd_minus_grpo"] = dominance.to_dict()
    rm.write_json("analysis/variance.json", output)
    rm.write_csv(
        "analysis/variance.csv",
        _rows_to_csv([r.csv_row() for r in reports.values()], rm.config_hash),
    )
    rm.finalize({"estimators": list(estimators), "n_samples": n_samples})
    return output


def analyze_kl_check(
    ctx: RunContext,
    n_samples: int = 200_000,
    instance_index: int = 0,
    prefix: Sequence[str] = (),
    threshold: float | None = None,
    student_checkpoint: str | Path | None = None,
    teacher_checkpoint: str | Path | None = None,
) -> dict[str, Any]:
    """
    Raises:
        CheckFailure: max |z| 超過門檻（退出碼 3）
    """
    config = ctx.config
    pool, _ = ctx.pools()
    if not 0 <= instance_index < len(pool):
        raise InvalidInputError(f"instance_index 越界: {instance_index}")
    params = _analysis_params(ctx, pool, student_checkpoint)
    teacher = resolve_teacher(config, teacher_checkpoint)
    state = PolicyState(pool[instance_index], tokens_from_names(prefix))
    result = kl_identity_check(
        params, teacher, state, n_samples, derive_rng(config.seed, "kl-check"), threshold
    )
    output = {"instance_id": state.instance.id, "prefix": list(prefix), **result.to_dict()}
    rm = ctx.manager("analyze kl-check")
    rm.write_json("analysis/kl_check.json", output)
    rm.finalize({"passed": result.passed, "max_z_score": result.max_z_score})
    if not result.passed:
        raise CheckFailure(
            f"KL 恆等式檢查未通過: max|z| = {result.max_z_score:.3f} > {result.threshold:.3f}"
        )
    return output


def analyze_budget(
    ctx: RunContext, metrics_paths: Sequence[str | Path], target_miou: float
) -> dict[str, Any]:
    curves = [BudgetCurve.from_records(read_jsonl(path)[1]) for path in metrics_paths]
    rows = budget_compare(curves, target_miou)
    output: dict[str, Any] = {
        "target_miou": target_miou,
        "rows": [row.to_dict() for row in rows],
        "table": format_budget_table(rows),
    }
    algos = {row.algo for row in rows}
    if {"opd", "grpo"} <= algos:
        output["opd_over_grpo_tokens"] = token_ratio(rows, "opd", "grpo")
    rm = ctx.manager("analyze budget")
    rm.write_json("analysis/budget.json", output)
    rm.write_csv(
        "analysis/budget.csv", _rows_to_csv([row.to_dict() for row in rows], rm.config_hash)
    )
    rm.finalize({"target_miou": target_miou, "n_streams": len(curves)})
    return output


# ---- compare ----


def metrics_differences(a: str | Path, b: str | Path, limit: int = 5) -> list[str]:
    """兩個指標流在排除 wallclock 欄位後的差異描述"""
    header_a, records_a = read_jsonl(a)
    header_b, records_b = read_jsonl(b)
    problems = []
    if header_a != header_b:
        problems.append(f"header 不同: {header_a} != {header_b}")
    if len(records_a) != len(records_b):
        problems.append(f"紀錄數不同: {len(records_a)} != {len(records_b)}")
    for index, (left, right) in enumerate(zip(records_a, records_b, strict=False)):
        if jsonl_line(_strip_wallclock(left)) != jsonl_line(_strip_wallclock(right)):
            problems.append(f"第 {index} 筆不同: {left} != {right}")
            if len(problems) >= limit:
                break
    return problems


def compare_determinism(ctx: RunContext, a: str | Path, b: str | Path) -> dict[str, Any]:
    """
    Raises:
        CheckFailure: 兩個指標流不相同（退出碼 3）
    """
    problems = metrics_differences(a, b)
    output = {"a": str(a), "b": str(b), "identical": not problems, "differences": problems}
    rm = ctx.manager("compare determinism")
    rm.write_json("compare/determinism.json", output)
    rm.finalize({"identical": not problems})
    if problems:
        raise CheckFailure(f"指標流不一致: {problems[0]}")
    return output


def compare_strategies(
    ctx: RunContext,
    strategies: Sequence[str] = STRATEGIES,
    teacher_checkpoint: str | Path | None = None,
) -> dict[str, Any]:
    """同一訓練池與基礎學生，逐一以各取樣策略跑多輪課程"""
    config = ctx.config
    pool, holdout = ctx.pools()
    teacher = resolve_teacher(config, teacher_checkpoint)
    base = ctx.base_student(pool)
    results = {}
    for strategy in strategies:
        variant = config.with_overrides(
            {"curriculum.strategy": strategy, "curriculum.enabled": True}
        )
        trainer = make_trainer(variant, teacher, ctx.threads)
        outcome = run_rounds(
            base, teacher, pool, holdout, variant, trainer, derive_rng(config.seed, "curriculum")
        )
        results[strategy] = {
            "mean_iou_per_round": outcome.mean_ious(),
            "final_eval": outcome.rounds[-1].eval_report.to_dict()
            if outcome.rounds[-1].eval_report
            else None,
            "tokens_generated": outcome.state.tokens_generated if outcome.state else 0,
        }
        runner_debug_log(f"策略 {strategy}: {results[strategy]['mean_iou_per_round']}")
    rm = ctx.manager("compare strategies")
    rm.write_json("compare/strategies.json", {"strategies": results})
    rm.finalize({"strategies": list(strategies)})
    return results


def compare_teachers(ctx: RunContext, teachers: Sequence[str]) -> dict[str, Any]:
    """以不同強度的教師各跑一次在線蒸餾，並列出教師自身的保留集 mIoU"""
    config = ctx.config.with_overrides({"algo": "opd"})
    pool, holdout = ctx.pools()
    if not holdout:
        raise InvalidInputError("保留集為空")
    base = ctx.base_student(pool)
    results = {}
    for label in teachers:
        teacher = parse_teacher_option(label, config.seed)
        trainer = make_trainer(config, teacher, ctx.threads)
        trained = trainer.train(TrainerState.initial(base, config.seed), pool, holdout)
        teacher_report = evaluate_policy(
            teacher, holdout, config.env.max_len, config.eval.thresholds, ctx.threads
        )
        results[label] = {
            "teacher_mean_iou": teacher_report.mean_iou,
            "student_mean_iou": trained.final_eval.mean_iou if trained.final_eval else None,
            "tokens_generated": trained.state.tokens_generated,
        }
    rm = ctx.manager("compare teachers")
    rm.write_json("compare/teachers.json", {"teachers": results})
    rm.finalize({"teachers": list(teachers)})
    return results
