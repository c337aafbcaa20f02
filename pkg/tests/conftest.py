import pytest

from motifbox import pipeline

TINY_SYNTH = {"train_versions": 2, "val_versions": 1, "test_versions": 1, "clips_per_version": 8}
TINY_TRAIN = {"detector": {"channels": [2, 2, 4, 4, 4], "depths": [1, 1, 1, 1, 1]}, "max_epochs": 2, "patience": 1}


def tiny_config(**overrides) -> pipeline.ExperimentConfig:
    raw = {"seed": 11, "synth": dict(TINY_SYNTH), "train": dict(TINY_TRAIN)}
    raw.update(overrides)
    return pipeline.ExperimentConfig(**raw)


@pytest.fixture(scope="session")
def tiny_ws(tmp_path_factory):
    """A synthesized, anchored and prepared 32-clip corpus (no training)."""
    ws = pipeline.Workspace(tmp_path_factory.mktemp("tiny"), tiny_config())
    pipeline.stage_synth(ws)
    pipeline.stage_anchors(ws)
    pipeline.stage_prepare(ws)
    return ws


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
