import pytest
import torch

from faithlog.synth import SynthConfig, generate, split

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def corpus():
    return generate(SynthConfig())


@pytest.fixture(scope="session")
def corpus_split(corpus):
    return split(corpus.sequences, 0.8, seed=7)


@pytest.fixture(scope="session")
def small_corpus():
    return generate(SynthConfig(n_sequences=120, seq_length=8, seed=3))


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
