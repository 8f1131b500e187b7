import time
import threading
from dataclasses import dataclass
from enum import Enum

from rich.table import Table


class FileStatus(Enum):
    """文件处理状态枚举"""
    PENDING = "等待中"
    PARSED = "已解析"
    SKIPPED = "已跳过"
    ERROR = "错误"
    WRITTEN = "已写出"


STATUS_COLORS = {
    FileStatus.PENDING: "grey50",
    FileStatus.PARSED: "green",
    FileStatus.SKIPPED: "yellow",
    FileStatus.ERROR: "red",
    FileStatus.WRITTEN: "cyan",
}


@dataclass
class FileStatusItem:
    """单个文件的处理状态"""
    path: str
    status: FileStatus = FileStatus.PENDING
    bars: int = 0
    message: str = ""
    started: float = 0.0
    elapsed: float = 0.0


class StatusMonitor:
    """收集并行处理中每个文件的状态，线程安全"""

    def __init__(self, title="文件状态"):
        self.title = title
        self._items = {}
        self._lock = threading.Lock()

    def start(self, path):
        with self._lock:
            self._items[path] = FileStatusItem(path=path, started=time.monotonic())

    def set_status(self, path, status, bars=0, message=""):
        with self._lock:
            item = self._items.setdefault(path, FileStatusItem(path=path, started=time.monotonic()))
            item.status = status
            item.bars = bars
            item.message = message
            item.elapsed = time.monotonic() - item.started

    def items(self):
        with self._lock:
            return [self._items[k] for k in sorted(self._items)]

    def summary(self):
        counts = {status: 0 for status in FileStatus}
        for item in self.items():
            counts[item.status] += 1
        return counts

    def render_table(self):
        table = Table(title=self.title)
        table.add_column("文件", style="bold")
        table.add_column("状态")
        table.add_column("小节数", justify="right")
        table.add_column("耗时(秒)", justify="right")
        table.add_column("说明")
        for item in self.items():
            color = STATUS_COLORS[item.status]
            table.add_row(item.path, f"[{color}]{item.status.value}[/{color}]", str(item.bars),
                          f"{item.elapsed:.2f}", item.message)
        return table
