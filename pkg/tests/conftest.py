import pytest
import torch
from hypothesis import HealthCheck, settings

from xlkd.corpus import GeneratorConfig, generate_synthetic_parallel
from xlkd.tokenization import build_vocab

torch.set_num_threads(1)

settings.register_profile(
    "kit", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("kit")


@pytest.fixture(scope="session")
def tiny_corpus():
    """Two aligned synthetic languages, small enough for unit tests."""
    base = GeneratorConfig(
        lang="syn1", pair_count=48, vocab_size=40, min_len=10, max_len=14, seed=7
    )
    from dataclasses import replace

    return {
        "syn1": generate_synthetic_parallel(base),
        "syn2": generate_synthetic_parallel(replace(base, lang="syn2")),
    }


@pytest.fixture(scope="session")
def tiny_vocabs(tiny_corpus):
    sources = [p.source for p in tiny_corpus["syn1"]]
    all_texts = [
        t for pairs in tiny_corpus.values() for p in pairs for t in (p.source, p.target)
    ]
    teacher = build_vocab(sources, 200)
    student = build_vocab(all_texts, 400)
    return teacher, student


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    severity = {"passed": 0, "skipped": 1, "failed": 2, "error": 2}
    results: dict[str, str] = {}
    for outcome in severity:
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            name = nodeid.split("::", 1)[1]
            if name not in results or severity[outcome] > severity[results[name]]:
                results[name] = outcome
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results):
        verdict = "PASS" if results[name] == "passed" else results[name].upper()
        terminalreporter.write_line(f"{name}: {verdict}")
