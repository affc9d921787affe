import pytest

from cain.config import ModelConfig
from cain.data.synthetic import GeneratorConfig, generate_synthetic

SMALL_GEN = GeneratorConfig(n_users=40, n_items=60, n_authors=20, seq_length=16,
                            samples_per_user=4, short_length=5, seed=3)


@pytest.fixture(scope="session")
def small_data():
    return generate_synthetic(SMALL_GEN)


def small_model_config(vocab, **overrides) -> ModelConfig:
    kw = dict(vocab=vocab, emb_dim=4, context_length=1, layers=2, deep_stride=2, tcn_dim=6,
              peg_hidden=6, top_k=8, inner_dim=6, mlp_hidden=(16, 8))
    kw.update(overrides)
    return ModelConfig(**kw)


# one line per acceptance criterion, echoed in the terminal summary
VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in VERDICTS:
            terminalreporter.write_line(line)
