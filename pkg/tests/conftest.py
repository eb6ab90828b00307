import shutil

import pytest

from tagstack import pipeline
from tagstack.config import load_config

SMALL = [
    "synth.n_classes=3",
    "synth.clips_per_class=20",
    "synth.min_duration_s=0.5",
    "synth.max_duration_s=2.0",
    "learner.logmel_softmax.epochs=3",
    "learner.mfcc_mlp.epochs=3",
    "gbdt.n_rounds=20",
]


def small_config(root, extra=()):
    overrides = list(SMALL) + [f"paths.data_dir={root}/data", f"paths.cache_dir={root}/cache",
                               f"paths.output_dir={root}/out"] + list(extra)
    return load_config(overrides=overrides)


@pytest.fixture(scope="session")
def stacked_root(tmp_path_factory):
    """A tiny dataset taken through synth, extract and stack once per session."""
    root = tmp_path_factory.mktemp("stacked")
    cfg = small_config(root)
    pipeline.cmd_synth(cfg)
    pipeline.cmd_extract(cfg)
    pipeline.cmd_stack(cfg)
    return root


@pytest.fixture
def stacked(stacked_root, tmp_path):
    """A private copy of the stacked dataset, safe to modify."""
    dst = tmp_path / "run"
    shutil.copytree(stacked_root, dst)
    return small_config(dst), dst


# criterion number -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
