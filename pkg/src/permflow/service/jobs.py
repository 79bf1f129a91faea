"""In-memory registry for long-running inference jobs."""

import threading
import traceback
import uuid


class Job:
    def __init__(self, kind):
        self.id = uuid.uuid4().hex
        self.kind = kind
        self.state = "queued"
        self.result = None
        self.error = None

    def info(self):
        detail = self.error if self.state == "error" else None
        return {"id": self.id, "kind": self.kind, "state": self.state, "detail": detail}


class JobRegistry:
    """Runs job functions on daemon threads and keeps their results."""

    def __init__(self):
        self._jobs = {}
        self._lock = threading.Lock()

    def submit(self, kind, fn):
        job = Job(kind)
        with self._lock:
            self._jobs[job.id] = job

        def runner():
            job.state = "running"
            try:
                job.result = fn()
                job.state = "done"
            except Exception as exc:  # surfaced via the job API
                job.error = f"{type(exc).__name__}: {exc}"
                job.traceback = traceback.format_exc()
                job.state = "error"

        thread = threading.Thread(target=runner, daemon=True)
        thread.start()
        return job

    def get(self, job_id):
        with self._lock:
            return self._jobs.get(job_id)
