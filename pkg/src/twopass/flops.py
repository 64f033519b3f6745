"""Second-pass complexity estimate.

FLOPS = M_B * N * H + M_D * N * B + sum over attention layers of
(source_size * T_source + query_size * N), where T_source is the number of
acoustic frames for the acoustic layer and H * L_pad for the text layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .nn import param_count

SOURCES = ("acoustic", "text")


@dataclass(frozen=True)
class AttentionLayer:
    source: str          # "acoustic" or "text"
    source_size: float   # parameters applied per source frame
    query_size: float    # parameters applied per decoded token

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown attention source {self.source!r}")
        if self.source_size < 0 or self.query_size < 0:
            raise ValueError("attention sizes must be non-negative")


@dataclass(frozen=True)
class FlopsInput:
    M_B: float
    M_D: float
    N: float
    H: float
    B: float
    T_frames: float
    L_pad: float
    layers: tuple[AttentionLayer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("M_B", "M_D", "N", "H", "B", "T_frames", "L_pad"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def split_attention(total_params: float, sources=SOURCES) -> tuple[AttentionLayer, ...]:
    """Spread ``total_params`` evenly over the layers, half source, half query."""
    per_layer = total_params / len(sources)
    return tuple(AttentionLayer(s, per_layer / 2, per_layer / 2) for s in sources)


def attention_flops(f: FlopsInput) -> float:
    total = 0.0
    for layer in f.layers:
        t_source = f.T_frames if layer.source == "acoustic" else f.H * f.L_pad
        total += layer.source_size * t_source + layer.query_size * f.N
    return total


def estimate_flops(f: FlopsInput) -> float:
    return f.M_B * f.N * f.H + f.M_D * f.N * f.B + attention_flops(f)


def las_configuration(f: FlopsInput) -> FlopsInput:
    """The same decoder without hypothesis encoder or text attention."""
    return replace(f, M_B=0.0, layers=tuple(l for l in f.layers if l.source == "acoustic"))


def model_flops_input(model, N: float, T_frames: float, H: int, B: int,
                      mode: str | None = None) -> FlopsInput:
    """Sizes taken from a toy model's parameter groups.

    M_B counts the hypothesis embedding and bidirectional layers, M_D the
    decoder embedding, recurrent layers, output layer and (when enabled) AE.
    Per attention layer the key/value matrices are the source size and the
    query/output matrices the query size.
    """
    p = model.groups["delib"]
    cfg = model.cfg
    mode = mode or cfg.attention
    m_b = param_count(p, "hyp_emb") + sum(
        param_count(p, f"{k}{i}.") for i in range(cfg.bidi_layers) for k in ("bf", "bb", "bp"))
    m_d = param_count(p, "dec_emb") + param_count(p, "out.") + sum(
        param_count(p, f"dec{i}.") for i in range(cfg.dec_layers))
    if cfg.ae:
        m_d += sum(param_count(p, f"{k}{i}.") for i in range(cfg.ae_layers) for k in ("ae", "aep"))
    layers = []
    for source, name, modes in (("acoustic", "att_a", ("both", "acoustics_only")),
                                ("text", "att_t", ("both", "text_only"))):
        if mode in modes:
            layers.append(AttentionLayer(source, p[f"{name}.k"].size + p[f"{name}.v"].size,
                                         p[f"{name}.q"].size + p[f"{name}.o"].size))
    if mode == "acoustics_only":
        m_b = 0
    return FlopsInput(float(m_b), float(m_d), float(N), float(H), float(B), float(T_frames),
                      float(model.data_cfg.l_pad), tuple(layers))
