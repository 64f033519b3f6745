import numpy as np
import pytest

from twopass.config import DecodeConfig
from twopass.data import FormatError, Vocab, generate_corpus
from twopass.decoding import run_first_pass
from twopass.metrics import compute_wer
from twopass.report import (
    FIRST_PASS_ID, REPORT_HEADER, AblationCell, checkpoint_name, export_heatmap, full_matrix,
    read_heatmap_csv, read_pgm, run_ablation_suite, text_attention,
)
from conftest import tiny_data_config, tiny_model, tiny_model_config

FIXED = [
    np.array([[1.0]]),
    np.full((1, 4), 0.25),
    np.array([[0.1, 0.2, 0.7], [0.0, 1.0, 0.0], [0.333333, 0.333333, 0.333334],
              [0.5, 0.498, 0.002]]),
]


@pytest.mark.parametrize("w", FIXED, ids=["one", "uniform", "steps"])
def test_heatmap_files(tmp_path, w):
    src = [f"s{j}" for j in range(w.shape[1])]
    out = [f"o{i}" for i in range(w.shape[0])]
    csv_path, pgm_path = export_heatmap(w, src, out, tmp_path / "att")
    back, src2, out2 = read_heatmap_csv(csv_path)
    assert (src2, out2) == (src, out)
    np.testing.assert_array_equal(back, np.round(w, 6))
    pixels = read_pgm(pgm_path)
    assert pixels.shape == w.shape
    np.testing.assert_array_equal(pixels, np.floor(255 * w + 0.5).astype(np.uint8))


def test_heatmap_pixel_examples(tmp_path):
    export_heatmap(FIXED[0], ["a"], ["b"], tmp_path / "one")
    assert read_pgm(tmp_path / "one.pgm").tolist() == [[255]]
    export_heatmap(FIXED[1], list("abcd"), ["x"], tmp_path / "uni")
    assert read_pgm(tmp_path / "uni.pgm").tolist() == [[64, 64, 64, 64]]
    assert (tmp_path / "uni.pgm").read_bytes().startswith(b"P5\n4 1\n255\n")


def test_heatmap_validation(tmp_path):
    with pytest.raises(ValueError):
        export_heatmap(np.ones((2, 2)), ["a"], ["x", "y"], tmp_path / "h")
    with pytest.raises(ValueError):
        export_heatmap(np.array([[1.5]]), ["a"], ["x"], tmp_path / "h")
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n\0")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "bad.pgm")


def test_text_attention_shapes(model):
    cfg = model.data_cfg
    utt = generate_corpus(1, 0, Vocab.default(cfg.n_symbols), cfg)[0]
    fp = run_first_pass(model, utt, 3)
    w, src, out = text_attention(model, fp, utt.reference, H=2)
    assert w.shape == (len(utt.reference) + 1, 2 * cfg.l_pad)
    assert len(src) == w.shape[1] and len(out) == w.shape[0]
    assert src[0].startswith("1:") and src[-1] == "2:</s>" and out[-1] == "</s>"
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_matrix_and_names():
    cells = full_matrix()
    assert len(cells) == 4 * 3 * 2 * 2
    assert len({c.config_id for c in cells}) == len(cells)
    assert checkpoint_name("both", 8, True) == "both-H8-ae.ckpt"
    assert AblationCell("text_only", 2, False, "rescore").config_id == "text_only-H2-noae-rescore"


@pytest.fixture
def ablation(tmp_path):
    base = tiny_model(0)
    ckpts, cells = {}, []
    for mode in ("both", "text_only"):
        for H in (1, 2):
            m = tiny_model(0, model=tiny_model_config(attention=mode))
            for g in ("enc", "rnnt"):
                for k, t in base.groups[g].items():
                    m.groups[g][k].data = t.data.copy()
            path = tmp_path / checkpoint_name(mode, H, False)
            m.save(path)
            ckpts[(mode, H, False)] = path
            cells += [AblationCell(mode, H, False, d) for d in ("beam", "rescore")]
    cfg = tiny_data_config()
    corpus = generate_corpus(5, 1, Vocab.default(cfg.n_symbols), cfg)
    return base, corpus, ckpts, cells


def test_ablation_report(tmp_path, ablation):
    base, corpus, ckpts, cells = ablation
    dc = DecodeConfig(b1=3, b2=2)
    report = run_ablation_suite(corpus, ckpts, cells, dc)
    assert len(report.rows) == len(cells) + 1
    first = report.rows[0]
    assert first.config_id == FIRST_PASS_ID
    direct = [run_first_pass(base, u, 3).beam[0].tokens for u in corpus]
    assert first.wer == compute_wer([u.reference for u in corpus], direct)
    assert [r.config_id for r in report.rows[1:]] == [c.config_id for c in cells]
    assert all(r.gflops > 0 and r.wer >= 0 for r in report.rows[1:])
    again = run_ablation_suite(corpus, ckpts, cells, dc)
    assert [r.wer for r in again.rows] == [r.wer for r in report.rows]
    report.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER)
    assert len(lines) == len(cells) + 2


def test_ablation_requires_checkpoints(ablation):
    _, corpus, ckpts, cells = ablation
    del ckpts[("both", 1, False)]
    with pytest.raises(FileNotFoundError):
        run_ablation_suite(corpus, ckpts, cells)


def test_ablation_rejects_mismatched_first_pass(ablation, tmp_path):
    _, corpus, ckpts, cells = ablation
    tiny_model(7).save(tmp_path / "other.ckpt")
    ckpts[("text_only", 2, False)] = tmp_path / "other.ckpt"
    with pytest.raises(ValueError):
        run_ablation_suite(corpus, ckpts, cells)
