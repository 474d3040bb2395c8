import time

import numpy as np
import pytest

from climbsim.model import Corpus, Document, EmbedderParams, Query

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def desk_run():
    from climbsim.scenario import ScenarioConfig, run_scenario

    t0 = time.perf_counter()
    outcome = run_scenario(ScenarioConfig())
    outcome.elapsed = time.perf_counter() - t0
    assert outcome.report["status"] == "ok", outcome.report.get("diagnostic")
    return outcome


@pytest.fixture
def tiny_corpus():
    docs = [
        Document("d1", "the battery lasts all day", "pos", "battery"),
        Document("d2", "battery died after an hour", "neg", "battery"),
        Document("d3", "shipping was quick and the box was fine", "pos", "shipping"),
        Document("d4", "the screen is bright and sharp", "pos", "display"),
        Document("d5", "refund took weeks", "neg", "returns"),
        Document("d6", "the screen cracked", "neg", "display"),
    ]
    return Corpus(docs)


@pytest.fixture
def query():
    return Query("q1", "how long does the battery last", "neu", "battery")


def random_params(d_out=4, d_in=8, seed=0, tau=0.07):
    return EmbedderParams.random(d_out, d_in=d_in, seed=seed, tau=tau)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
