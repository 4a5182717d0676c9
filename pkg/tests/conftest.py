import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from nlqre.treeplex import TreeplexBuilder

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def treeplexes(draw, max_infosets=8, max_actions=4):
    """Random canonical treeplexes built by attaching infosets to random sequences."""
    n = draw(st.integers(1, max_infosets))
    b = TreeplexBuilder()
    n_seq = 1
    for _ in range(n):
        parent = draw(st.integers(0, n_seq - 1))
        k = draw(st.integers(1, max_actions))
        b.add_infoset(parent, k)
        n_seq += k
    return b.build()[0]


def random_behavioral(t, rng, low=0.05):
    b = np.ones(t.n_sequences)
    raw = rng.uniform(low, 1.0, t.n_sequences)
    tot = t.action_sum(np.where(np.arange(t.n_sequences) > 0, raw, 0.0))
    b[1:] = raw[1:] / tot[t.seq_infoset[1:]]
    return b


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
