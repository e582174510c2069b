import numpy as np
import pytest

from lps.data import MultiViewBatch
from lps.kernels import available_backends


@pytest.fixture(params=sorted(available_backends()))
def backend(request, monkeypatch):
    """Run a test once per importable kernel backend."""
    import lps.kernels as kernels

    impl = available_backends()[request.param]
    monkeypatch.setattr(kernels, "lsap", impl.lsap)
    monkeypatch.setattr(kernels, "contrastive", impl.contrastive)
    return request.param


def random_batch(rng, B=8, K=4, D=3, n_labeled=3, n_confident=2):
    """A partitioned batch with random logits for both views.

    Labeled samples come first; the first ``n_confident`` unlabeled samples are
    marked confident with random pseudo-labels.
    """
    labels = np.full(B, -1)
    labels[:n_labeled] = rng.integers(0, K, n_labeled)
    is_labeled = np.arange(B) < n_labeled
    confident = np.zeros(B, dtype=bool)
    confident[n_labeled:n_labeled + n_confident] = True
    pseudo = np.where(is_labeled, -1, rng.integers(0, K, B))
    batch = MultiViewBatch(np.arange(B), rng.standard_normal((B, D)), rng.standard_normal((B, D)),
                           labels, is_labeled, confident, pseudo)
    return batch, rng.standard_normal((B, K)), rng.standard_normal((B, K))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def _report(name: str, ok: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
