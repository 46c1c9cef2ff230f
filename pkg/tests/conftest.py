import os

import pytest

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture(scope="session")
def acceptance_dir():
    """Stable directory for the heavy acceptance experiments.

    Completed seeds are reused across pytest invocations (the runner resumes
    from finished CSVs), so only the first run on a machine pays the full
    training cost.  Point PTSL_ACCEPTANCE_DIR elsewhere to isolate runs.
    """
    path = os.environ.get(
        "PTSL_ACCEPTANCE_DIR", os.path.join(REPO_ROOT, "acceptance_runs")
    )
    os.makedirs(path, exist_ok=True)
    return path
