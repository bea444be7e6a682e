import acceptance_log
import pytest

from tesan.journeys import build_samples, build_vocabulary
from tesan.synth import SynthConfig, generate


@pytest.fixture(scope="session")
def tiny_corpus():
    """(journeys, truth, vocab, samples) for a 2 x 6 concept corpus."""
    cfg = SynthConfig(n_groups=2, concepts_per_group=6, n_patients=60, visits_per_patient=(2, 4),
                      codes_per_visit=(1, 3), inter_visit_gap=(1, 20), seed=3)
    journeys, truth = generate(cfg)
    vocab = build_vocabulary(journeys, min_count=1)
    return journeys, truth, vocab, build_samples(journeys, vocab, window=2)


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
