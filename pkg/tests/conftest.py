import pytest
import torch

from simmaml.corpus import build_corpus, generate_synthetic

torch.set_num_threads(1)

# acceptance criteria append (number, title, passed, detail) here; printed at the end.
# passed=None marks an opt-in criterion that was not run.
ACCEPTANCE: list[tuple[int, str, bool | None, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {num:>2}. {title}: {detail}")


@pytest.fixture(scope="session")
def synth():
    return generate_synthetic()


@pytest.fixture(scope="session")
def tiny():
    pairs = [
        ("walk", "WALK", "prim"), ("run", "RUN", "prim"), ("jump", "JUMP", "prim"),
        ("walk twice", "WALK WALK", "rep"), ("run twice", "RUN RUN", "rep"),
        ("jump twice", "JUMP JUMP", "rep"), ("walk and run", "WALK RUN", "conj"),
        ("run and jump", "RUN JUMP", "conj"), ("jump and walk", "JUMP WALK", "conj"),
        ("walk thrice", "WALK WALK WALK", "rep"),
    ]
    return build_corpus(pairs, "tiny")
