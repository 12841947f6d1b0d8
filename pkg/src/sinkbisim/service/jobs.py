"""In-process job registry for long-running experiment requests.

Jobs run on daemon threads; numpy releases the GIL inside the heavy kernels,
so a polling client stays responsive. State is process-local by design — the
service is a local experiment runner, not a distributed queue.
"""

from __future__ import annotations

import threading
import traceback
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable


@dataclass
class Job:
    job_id: str
    kind: str
    status: str = "pending"
    progress: float = 0.0
    detail: str = ""
    result: Any = None
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def set_progress(self, fraction: float, detail: str = "") -> None:
        with self._lock:
            self.progress = float(fraction)
            if detail:
                self.detail = detail

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "job_id": self.job_id,
                "kind": self.kind,
                "status": self.status,
                "progress": self.progress,
                "detail": self.detail,
            }


class JobRegistry:
    def __init__(self):
        self._jobs: dict[str, Job] = {}
        self._lock = threading.Lock()

    def submit(self, kind: str, work: Callable[[Job], Any]) -> Job:
        job = Job(job_id=uuid.uuid4().hex[:12], kind=kind)
        with self._lock:
            self._jobs[job.job_id] = job

        def runner():
            job.status = "running"
            try:
                job.result = work(job)
                job.status = "done"
                job.progress = 1.0
            except Exception as exc:  # surfaced through the status endpoint
                job.status = "failed"
                job.detail = f"{type(exc).__name__}: {exc}"
                job.result = traceback.format_exc()

        threading.Thread(target=runner, daemon=True).start()
        return job

    def get(self, job_id: str) -> Job | None:
        with self._lock:
            return self._jobs.get(job_id)
