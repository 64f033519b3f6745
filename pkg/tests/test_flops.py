import pytest
from hypothesis import given
from hypothesis import strategies as st

from twopass.flops import (
    AttentionLayer, FlopsInput, estimate_flops, las_configuration, model_flops_input,
    split_attention,
)
from conftest import tiny_model, tiny_model_config


def published_inputs(**changes) -> FlopsInput:
    base = dict(M_B=22e6, M_D=42e6, N=14, H=8, B=8, T_frames=109, L_pad=120,
                layers=split_attention(2e6))
    base.update(changes)
    return FlopsInput(**base)


def test_published_configuration_lands_in_band():
    # Hand evaluation: bidi 22e6*14*8, decoder 42e6*14*8, acoustic layer
    # 0.5e6*109 + 0.5e6*14, text layer 0.5e6*(8*120) + 0.5e6*14.
    expected = 22e6 * 112 + 42e6 * 112 + (0.5e6 * 123) + (0.5e6 * 974)
    got = estimate_flops(published_inputs())
    assert got == pytest.approx(expected, rel=1e-15)
    assert got == pytest.approx(7.7165e9, rel=1e-12)
    assert 7.0e9 <= got <= 9.5e9


def test_las_ratio_lands_in_band():
    f = published_inputs()
    las = estimate_flops(las_configuration(f))
    assert las == pytest.approx(42e6 * 112 + 0.5e6 * 123, rel=1e-15)
    assert 1.5 <= estimate_flops(f) / las <= 2.1


def test_zero_tokens_leaves_only_source_terms():
    assert estimate_flops(published_inputs(N=0)) == 0.5e6 * 109 + 0.5e6 * 960


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_estimate_is_affine_in_tokens(n1, n2):
    f0, f1, f2 = (estimate_flops(published_inputs(N=n)) for n in (0.0, n1, n2))
    slope = (22e6 * 8 + 42e6 * 8 + 1e6)
    assert f1 - f0 == pytest.approx(slope * n1, rel=1e-9, abs=1e-3)
    assert f2 - f0 == pytest.approx(slope * n2, rel=1e-9, abs=1e-3)


def test_split_attention():
    layers = split_attention(2e6)
    assert [l.source for l in layers] == ["acoustic", "text"]
    assert all(l.source_size == l.query_size == 0.5e6 for l in layers)


def test_inputs_validated():
    with pytest.raises(ValueError):
        published_inputs(N=-1)
    with pytest.raises(ValueError):
        AttentionLayer("video", 1, 1)
    with pytest.raises(ValueError):
        AttentionLayer("text", -1, 1)


def count(model, *prefixes):
    return sum(t.size for k, t in model.groups["delib"].items() if k.startswith(prefixes))


@pytest.mark.parametrize("ae", [False, True])
def test_model_sizes_follow_parameter_groups(ae):
    model = tiny_model(0, model=tiny_model_config(ae=ae))
    f = model_flops_input(model, N=3, T_frames=4, H=2, B=3)
    assert f.M_B == count(model, "hyp_emb", "bf0.", "bb0.", "bp0.")
    assert f.M_D == count(model, "dec_emb", "dec0.", "out.") + (count(model, "ae0.", "aep0.")
                                                                 if ae else 0)
    assert [l.source for l in f.layers] == ["acoustic", "text"]
    text = f.layers[1]
    assert text.source_size == count(model, "att_t.k", "att_t.v")
    assert text.query_size == count(model, "att_t.q", "att_t.o")
    assert f.L_pad == model.data_cfg.l_pad


def test_single_attention_modes():
    model = tiny_model(0)
    acoustic = model_flops_input(model, 3, 4, 2, 3, mode="acoustics_only")
    assert acoustic.M_B == 0 and [l.source for l in acoustic.layers] == ["acoustic"]
    text = model_flops_input(model, 3, 4, 2, 3, mode="text_only")
    assert text.M_B > 0 and [l.source for l in text.layers] == ["text"]
