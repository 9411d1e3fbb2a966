"""
運行目錄資源管理器
==================

一次運行的所有輸出都放在同一個目錄下，並經由此管理器寫入：

- 追蹤每個寫入的文件（相對路徑、大小、SHA-256）
- JSONL 文件第一行為 {"header": {..., "config_hash": ...}}
- CSV 與 id 清單以 `# config_hash=<hash>` 註解行開頭（由呼叫端產生內容）
- MANIFEST.json：文件清單、配置雜湊、命令歷史與內存快照摘要

同一目錄可被多個命令依序使用；MANIFEST 會合併既有條目。
"""

import hashlib
import json
from collections.abc import Iterable, Mapping
from datetime import datetime
from pathlib import Path
from typing import Any

from ..debug import runner_debug_log
from .error_handler import ErrorHandler, ErrorType, InvalidInputError
from .memory_monitor import MemoryMonitor


MANIFEST_NAME = "MANIFEST.json"


def jsonl_line(record: Mapping[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def read_jsonl(path: str | Path) -> tuple[dict[str, Any] | None, list[dict[str, Any]]]:
    """回傳 (header, records)；沒有 header 行時 header 為 None"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"JSONL 文件不存在: {path}")
    header = None
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        if "header" in record and header is None and not records:
            header = record["header"]
            continue
        records.append(record)
    return header, records


class RunResourceManager:
    """單一運行目錄的輸出追蹤"""

    def __init__(self, run_dir: str | Path, config_hash: str, command: str = ""):
        self.run_dir = Path(run_dir)
        self.config_hash = config_hash
        self.command = command
        self.tracked: dict[str, Path] = {}
        self.stats: dict[str, int] = {"files_written": 0, "bytes_written": 0}
        self.memory = MemoryMonitor()
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            error_id = ErrorHandler.log_error_with_context(
                e,
                context={"operation": "建立運行目錄", "file_path": str(self.run_dir)},
                error_type=ErrorType.FILE_IO,
            )
            runner_debug_log(f"建立運行目錄失敗 [錯誤ID: {error_id}]: {e}")
            raise
        self.memory.record("start")
        runner_debug_log(f"運行目錄 {self.run_dir} config_hash={config_hash}")

    # ---- 路徑 ----

    def path(self, relative: str | Path) -> Path:
        relative = Path(relative)
        if relative.is_absolute() or ".." in relative.parts:
            raise InvalidInputError(f"輸出路徑必須位於運行目錄內: {relative}")
        target = self.run_dir / relative
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def register_file(self, path: str | Path) -> Path:
        """追蹤一個已由其他程式碼寫入運行目錄的文件"""
        path = Path(path)
        if not path.is_absolute():
            path = self.run_dir / path
        try:
            relative = path.resolve().relative_to(self.run_dir.resolve())
        except ValueError as exc:
            raise InvalidInputError(f"文件不在運行目錄內: {path}") from exc
        self.tracked[relative.as_posix()] = path
        self.stats["files_written"] += 1
        self.stats["bytes_written"] += path.stat().st_size
        runner_debug_log(f"寫入 {relative.as_posix()}")
        return path

    # ---- 寫入 ----

    def write_text(self, relative: str | Path, text: str) -> Path:
        target = self.path(relative)
        target.write_text(text, encoding="utf-8")
        return self.register_file(target)

    def write_json(self, relative: str | Path, data: Any) -> Path:
        payload = {"config_hash": self.config_hash, **data} if isinstance(data, dict) else data
        return self.write_text(
            relative, json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n"
        )

    def header(self, kind: str, **extra: Any) -> dict[str, Any]:
        return {"header": {"kind": kind, **extra, "config_hash": self.config_hash}}

    def write_jsonl(
        self, relative: str | Path, records: Iterable[Mapping[str, Any]], kind: str = "records"
    ) -> Path:
        lines = [jsonl_line(self.header(kind))]
        lines.extend(jsonl_line(r) for r in records)
        return self.write_text(relative, "\n".join(lines) + "\n")

    def append_jsonl(self, relative: str | Path, record: Mapping[str, Any], kind: str = "records") -> None:
        """逐筆附加；文件不存在時先寫 header"""
        target = self.path(relative)
        with target.open("a", encoding="utf-8") as fh:
            if target.stat().st_size == 0:
                fh.write(jsonl_line(self.header(kind)) + "\n")
            fh.write(jsonl_line(record) + "\n")
        self.tracked[Path(relative).as_posix()] = target

    def write_csv(self, relative: str | Path, text: str) -> Path:
        """text 須已含 `# config_hash=` 行"""
        if not text.startswith("# config_hash="):
            text = f"# config_hash={self.config_hash}\n" + text
        return self.write_text(relative, text)

    # ---- MANIFEST ----

    def _existing_manifest(self) -> dict[str, Any]:
        manifest = self.run_dir / MANIFEST_NAME
        if not manifest.exists():
            return {}
        try:
            return json.loads(manifest.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            runner_debug_log("既有 MANIFEST 無法解析，將重建")
            return {}

    def finalize(self, extra: Mapping[str, Any] | None = None) -> Path:
        """合併既有條目並重寫 MANIFEST.json"""
        self.memory.record("end")
        previous = self._existing_manifest()
        files: dict[str, dict[str, Any]] = {}
        for name in previous.get("files", {}):
            path = self.run_dir / name
            if path.exists() and name not in self.tracked:
                self.tracked[name] = path
        for name, path in sorted(self.tracked.items()):
            files[name] = {"bytes": path.stat().st_size, "sha256": file_sha256(path)}
        commands = list(previous.get("commands", []))
        commands.append(
            {
                "command": self.command,
                "finished_at": datetime.now().isoformat(timespec="seconds"),
                "memory": self.memory.summary(),
                **dict(extra or {}),
            }
        )
        manifest = {
            "config_hash": self.config_hash,
            "files": files,
            "commands": commands,
        }
        target = self.run_dir / MANIFEST_NAME
        target.write_text(
            json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        runner_debug_log(f"MANIFEST 更新：{len(files)} 個文件")
        return target
