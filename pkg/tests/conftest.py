import os
import re

import pytest
import torch

from mixgan.data import synth_content_corpus, synth_style_corpus
from mixgan.nets import ArchSpec
from mixgan.train import TrainConfig, train_content_stage, train_mixture_stage

torch.set_num_threads(1)

TINY_ARCH = ArchSpec(
    image_size=16, latent_dim=4, base_width=8, fc_widths=(16, 16),
    latent_disc_width=16, patch_width=16, patch_layers=1,
)


@pytest.fixture(scope="session")
def content16():
    return synth_content_corpus(0, 128, 16)


@pytest.fixture(scope="session")
def style16():
    return synth_style_corpus(0, 128, 16)


@pytest.fixture(scope="session")
def tiny_content_ckpt(content16):
    return train_content_stage(TrainConfig(epochs=2, batch_size=32, seed=0), content16, TINY_ARCH)


@pytest.fixture(scope="session")
def tiny_mixture_ckpt(tiny_content_ckpt, style16):
    config = TrainConfig(stage="mixture", epochs=1, batch_size=32, seed=0, freeze_content_decoder=True)
    return train_mixture_stage(config, tiny_content_ckpt, style16)


# acceptance outcomes recorded by test_acceptance.py, printed one line per criterion
ACCEPTANCE = {}
N_CRITERIA = 10
_RECORDED = set()


def record(criterion, ok, detail):
    """Log a (partial) outcome for ``criterion``; returns the message for the assert."""
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    _RECORDED.add(os.environ.get("PYTEST_CURRENT_TEST", "").rsplit(" ", 1)[0])
    return f"criterion {criterion}: {detail}"


def pytest_runtest_logreport(report):
    # a criterion test that errors before recording still counts as a failure
    match = re.search(r"test_criterion_(\d+)", report.nodeid)
    if match and report.failed and report.nodeid not in _RECORDED:
        _RECORDED.add(report.nodeid)
        reason = report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash") else report.when
        ACCEPTANCE.setdefault(int(match.group(1)), []).append((False, f"error: {reason.splitlines()[0]}"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in range(1, N_CRITERIA + 1):
        entries = ACCEPTANCE.get(criterion)
        if not entries:
            terminalreporter.write_line(f"criterion {criterion:>2}: FAIL  not evaluated")
            continue
        ok = all(flag for flag, _ in entries)
        detail = "; ".join(text for _, text in entries)
        terminalreporter.write_line(f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
