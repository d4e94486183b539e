from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

log = logging.getLogger("attractorlab.jobs")


@dataclass
class Job:
    id: int
    kind: str
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class JobResult:
    id: int
    status: str
    value: Any = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "done"


def _run_one(job: Job, fn: Callable[[Job], Any]) -> JobResult:
    log.info("job %s start: kind=%s %s", job.id, job.kind, job.params)
    try:
        value = fn(job)
    except Exception as exc:
        log.warning("job %s error: %s", job.id, exc)
        return JobResult(id=job.id, status="error", error=str(exc) or type(exc).__name__)
    log.info("job %s done", job.id)
    return JobResult(id=job.id, status="done", value=value)


def run_jobs(jobs: Iterable[Job], fn: Callable[[Job], Any], workers: int = 1) -> list[JobResult]:
    """Run every job, never aborting on a failed one; results ordered by job id."""
    jobs = list(jobs)
    ids = [job.id for job in jobs]
    if len(set(ids)) != len(ids):
        raise ValueError("job ids must be unique")
    if workers <= 1 or len(jobs) <= 1:
        results = [_run_one(job, fn) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda job: _run_one(job, fn), jobs))
    return sorted(results, key=lambda result: result.id)
