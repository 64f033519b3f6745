"""Attention heatmaps and the ablation report."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .config import ATTENTION_MODES, DecodeConfig
from .data import EOS, FormatError, Utterance, pad_hypothesis
from .decoding import FirstPass, build_sources, decode_corpus, first_pass_corpus
from .deliberation import select_hypotheses
from .flops import estimate_flops, model_flops_input
from .metrics import compute_wer
from .model import TwoPassModel

REPORT_HEADER = ("config_id", "mode", "H", "AE", "decode", "wer", "gflops")


# ------------------------------------------------------------------- heatmaps

def export_heatmap(weights: np.ndarray, source_labels: Sequence[str],
                   output_labels: Sequence[str], path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.pgm`` for a (steps, sources) matrix.

    The CSV header holds the source labels after an ``output`` column; each
    row is one decoding step.  The PGM is 8-bit binary with one pixel row per
    step and pixel ``round(255 * p)``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("attention weights must be a 2-D matrix")
    if w.shape != (len(output_labels), len(source_labels)):
        raise ValueError(f"labels ({len(output_labels)}, {len(source_labels)}) do not match "
                         f"weights {w.shape}")
    if not np.isfinite(w).all() or w.min(initial=0.0) < 0 or w.max(initial=0.0) > 1:
        raise ValueError("attention weights must lie in [0, 1]")
    base = Path(path)
    csv_path, pgm_path = base.with_suffix(".csv"), base.with_suffix(".pgm")
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["output", *source_labels])
        for label, row in zip(output_labels, w):
            writer.writerow([label, *(f"{v:.6f}" for v in row)])
    pixels = np.floor(255.0 * w + 0.5).astype(np.uint8)
    header = f"P5\n{w.shape[1]} {w.shape[0]}\n255\n".encode("ascii")
    pgm_path.write_bytes(header + pixels.tobytes())
    return csv_path, pgm_path


def read_heatmap_csv(path) -> tuple[np.ndarray, list[str], list[str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["output"]:
        raise FormatError(f"{path}: not a heatmap CSV")
    sources = rows[0][1:]
    outputs = [r[0] for r in rows[1:]]
    weights = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return weights.reshape(len(outputs), len(sources)), sources, outputs


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise FormatError(f"{path}: not an 8-bit binary PGM")
    width, height = (int(v) for v in parts[1].split())
    if len(parts[3]) != width * height:
        raise FormatError(f"{path}: pixel data size mismatch")
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)


def text_attention(model: TwoPassModel, first: FirstPass, output: Sequence[int],
                   H: int) -> tuple[np.ndarray, list[str], list[str]]:
    """Head-averaged text-attention weights while teacher-forcing ``output``.

    Source labels are ``<hypothesis rank>:<symbol>`` over the padded
    first-pass hypotheses; output labels are the emitted symbols.
    """
    if model.cfg.attention == "acoustics_only":
        raise ValueError("the model has no text attention")
    vocab = model.vocab
    with ad.no_grad():
        src = build_sources(model, first, H)
        _, _, _, w_text, _ = model.delib.teacher_force(src, [list(output) + [EOS]])
    weights = np.stack([w[0] for w in w_text])
    sources = [f"{rank}:{vocab.symbols[t]}"
               for rank, hyp in enumerate(select_hypotheses(first.beam, H), 1)
               for t in pad_hypothesis(hyp, model.data_cfg.l_pad)]
    outputs = [vocab.symbols[t] for t in list(output) + [EOS]]
    return weights, sources, outputs


# --------------------------------------------------------------------- report

@dataclass(frozen=True)
class AblationCell:
    mode: str
    H: int
    ae: bool
    decode: str

    @property
    def config_id(self) -> str:
        return f"{self.mode}-H{self.H}-{'ae' if self.ae else 'noae'}-{self.decode}"

    @property
    def key(self) -> tuple[str, int, bool]:
        return (self.mode, self.H, self.ae)


FIRST_PASS_ID = "first_pass"


@dataclass
class ReportRow:
    config_id: str
    mode: str
    H: int
    ae: bool
    decode: str
    wer: float
    gflops: float
    wall_s: float


@dataclass
class Report:
    rows: list[ReportRow]

    def row(self, config_id: str) -> ReportRow:
        for r in self.rows:
            if r.config_id == config_id:
                return r
        raise KeyError(config_id)

    def write_csv(self, path) -> None:
        lines = [",".join(REPORT_HEADER)]
        for r in self.rows:
            lines.append(f"{r.config_id},{r.mode},{r.H},{'on' if r.ae else 'off'},"
                         f"{r.decode},{r.wer:.6f},{r.gflops:.6f}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def full_matrix(hyps=(1, 2, 4, 8), modes=ATTENTION_MODES, ae=(False, True),
                decodes=("beam", "rescore")) -> list[AblationCell]:
    return [AblationCell(m, h, a, d) for h in hyps for m in modes for a in ae for d in decodes]


def checkpoint_name(mode: str, H: int, ae: bool) -> str:
    return f"{mode}-H{H}-{'ae' if ae else 'noae'}.ckpt"


def run_ablation_suite(corpus: Sequence[Utterance],
                       checkpoints: Mapping[tuple[str, int, bool], object],
                       matrix: Sequence[AblationCell], decode: DecodeConfig | None = None,
                       models: Mapping[tuple[str, int, bool], TwoPassModel] | None = None) -> Report:
    """One row per matrix cell plus a leading first-pass row.

    ``checkpoints`` maps (mode, H, AE) to checkpoint paths; ``models`` may
    supply already-loaded models under the same keys.  All models must share
    the first pass, which is decoded once.
    """
    decode = decode or DecodeConfig()
    models = dict(models or {})
    for cell in matrix:
        if cell.key in models:
            continue
        path = checkpoints.get(cell.key)
        if path is None or not Path(path).is_file():
            raise FileNotFoundError(f"missing checkpoint for {cell.config_id}: {path}")
        models[cell.key] = TwoPassModel.load(path, attention=cell.mode, ae=cell.ae)
    if not models:
        raise ValueError("empty ablation matrix")
    refs = [u.reference for u in corpus]
    reference = models[matrix[0].key] if matrix else next(iter(models.values()))
    t0 = time.perf_counter()
    firsts = first_pass_corpus(reference, corpus, decode.b1, decode.max_symbols, decode.threads)
    rows = [ReportRow(FIRST_PASS_ID, "none", 0, False, "beam",
                      compute_wer(refs, [fp.beam[0].tokens for fp in firsts]), 0.0,
                      time.perf_counter() - t0)]
    frames = float(np.mean([fp.encoding.shape[0] for fp in firsts]))
    for cell in matrix:
        model = models[cell.key]
        if (model.group_hash("enc"), model.group_hash("rnnt")) != \
                (reference.group_hash("enc"), reference.group_hash("rnnt")):
            raise ValueError(f"{cell.config_id}: first pass differs from the other checkpoints")
        cfg = DecodeConfig(b1=decode.b1, b2=decode.b2, hyps=cell.H, decode=cell.decode,
                           max_symbols=decode.max_symbols, length_norm=decode.length_norm,
                           threads=decode.threads)
        t0 = time.perf_counter()
        beams = decode_corpus(model, corpus, cfg, cell.mode, firsts)
        wall = time.perf_counter() - t0
        hyps = [b[0].tokens for b in beams]
        n_tokens = float(np.mean([len(h) + 1 for h in hyps]))
        width = decode.b2 if cell.decode == "beam" else decode.b1
        gflops = estimate_flops(model_flops_input(model, n_tokens, frames, cell.H, width,
                                                  cell.mode)) / 1e9
        rows.append(ReportRow(cell.config_id, cell.mode, cell.H, cell.ae, cell.decode,
                              compute_wer(refs, hyps), gflops, wall))
    return Report(rows)
