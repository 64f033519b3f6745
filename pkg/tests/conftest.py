import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from twopass.config import ModelConfig  # noqa: E402
from twopass.data import DataConfig  # noqa: E402
from twopass.model import TwoPassModel  # noqa: E402


def tiny_model_config(**changes) -> ModelConfig:
    base = dict(enc_layers=1, enc_hidden=6, enc_proj=5, time_reduction_after=0,
                time_reduction_factor=2, pred_layers=1, pred_hidden=5, pred_proj=4,
                joint_dim=6, d_emb=4, bidi_layers=1, bidi_hidden=4, bidi_proj=5,
                ae_layers=1, ae_hidden=4, dec_layers=1, dec_hidden=6, heads=2,
                att_dim=4, ctx_dim=4, init_scale=0.5)
    base.update(changes)
    return ModelConfig(**base)


def tiny_data_config(**changes) -> DataConfig:
    base = dict(n_symbols=3, feat_dim=3, min_len=1, max_len=3, frames_per_token=2,
                noise_sigma=0.3, stack_prev=1, stride=2, l_pad=5)
    base.update(changes)
    return DataConfig(**base)


def tiny_model(seed: int = 0, model=None, data=None) -> TwoPassModel:
    return TwoPassModel(model or tiny_model_config(), data or tiny_data_config(), seed)


@pytest.fixture
def model():
    return tiny_model(0)


ACCEPTANCE: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
