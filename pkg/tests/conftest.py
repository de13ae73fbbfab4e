import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from cptsketch.generator import GenParams, generate_cpt, rationalize
from cptsketch.model import activity, condition, loop, par, seq, silent, xor

settings.register_profile(
    "default", deadline=None, max_examples=200,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture
def sample_tree():
    return seq(activity("a_1"), xor("c_1", loop("c_2", activity("a_4")),
                                    par(activity("a_2"), activity("a_3"))))


@pytest.fixture
def report():
    def _report(name, ok, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _leaves():
    return st.one_of(
        st.integers(1, 40).map(lambda k: activity(f"a_{k}")),
        st.just(silent()),
        st.integers(1, 9).map(lambda k: condition(f"c_{k}")),
    )


def _grow(children):
    cond = st.integers(1, 9).map(lambda k: f"c_{k}")
    return st.one_of(
        st.lists(children, min_size=2, max_size=4).map(lambda k: seq(*k)),
        st.lists(children, min_size=2, max_size=4).map(lambda k: par(*k)),
        st.tuples(cond, children, children).map(lambda t: xor(*t)),
        st.tuples(cond, children).map(lambda t: loop(*t)),
    )


def valid_trees(max_leaves=25):
    """Arbitrary valid trees, including silent and stray condition leaves."""
    raw = st.recursive(_leaves(), _grow, max_leaves=max_leaves)
    return raw.map(lambda t: rationalize(t))


def generated_trees():
    return st.builds(
        lambda depth, seed: generate_cpt(GenParams(depth=depth, seed=seed)),
        st.integers(1, 5), st.integers(0, 2**64 - 1),
    )
