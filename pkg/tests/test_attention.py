"""Cross-attention decoder: projections, window/global agreement, records."""
import numpy as np
import pytest

from wau.attention import AttentionDecoder, WauConfig
from wau.tensor import ContractError, Tape, sum_all, tensor


def dirac(spec):
    """Set a conv projection to the identity (centered Dirac, zero bias)."""
    w = np.zeros(spec.weight.shape, dtype=spec.weight.data.dtype)
    k = w.shape[-1]
    for c in range(min(w.shape[0], w.shape[1])):
        w[c, c, k // 2, k // 2] = 1.0
    spec.weight.data = w
    if spec.bias is not None:
        spec.bias.data = np.zeros_like(spec.bias.data)


def make_decoder(lat_c=8, src_c=16, heads=1, window=2, ratio=2, seed=0,
                 precision="double", **kw):
    cfg = WauConfig(ratio=ratio, window=window, heads=heads,
                    precision=precision, **kw)
    rng = np.random.default_rng(seed)
    return cfg, AttentionDecoder(cfg, lat_c, src_c, rng)


def maps(lat_c=8, src_c=16, h=2, w=2, ratio=2, seed=1, precision="double"):
    rng = np.random.default_rng(seed)
    lat = tensor(rng.normal(size=(1, lat_c, ratio * h, ratio * w)),
                 precision=precision)
    z = tensor(rng.normal(size=(1, src_c, h, w)), precision=precision)
    return lat, z


class TestProjections:
    def test_shapes(self):
        _, dec = make_decoder(lat_c=8, src_c=16)
        lat, z = maps()
        q, k, v = dec.project_qkv(lat, z)
        assert q.shape == (1, 8, 4, 4)
        assert k.shape == (1, 8, 2, 2)
        assert v.shape == (1, 8, 2, 2)

    def test_zero_projections_give_zero_qkv(self):
        _, dec = make_decoder()
        for spec in (dec.q_proj, dec.k_proj, dec.v_proj):
            spec.weight.data[:] = 0.0
            spec.bias.data[:] = 0.0
        q, k, v = dec.project_qkv(*maps())
        assert not q.numpy().any() and not k.numpy().any() and not v.numpy().any()

    def test_dirac_projections_pass_layer_norm_through(self):
        _, dec = make_decoder(lat_c=8, src_c=8)
        for spec in (dec.q_proj, dec.k_proj, dec.v_proj):
            dirac(spec)
        lat, z = maps(src_c=8)
        q, k, v = dec.project_qkv(lat, z)
        np.testing.assert_array_equal(k.numpy(), v.numpy())
        # q equals layer-normalized lateral: mean 0 / unit variance per pixel
        np.testing.assert_allclose(q.numpy().mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(q.numpy().var(axis=1), 1.0, atol=1e-4)

    def test_distinct_key_value_weights(self):
        _, dec = make_decoder()
        assert dec.k_proj.weight is not dec.v_proj.weight
        assert not np.array_equal(dec.k_proj.weight.numpy(),
                                  dec.v_proj.weight.numpy())

    def test_embed_dim_must_match_lateral_channels(self):
        cfg = WauConfig(embed_dim=4, heads=1, precision="double")
        with pytest.raises(ContractError):
            AttentionDecoder(cfg, 8, 16, np.random.default_rng(0))


class TestWadForward:
    def test_output_shape_fig3(self):
        _, dec = make_decoder()
        lat, z = maps()
        out = dec.wad_forward(lat, z)
        assert out.shape == (1, 8, 4, 4)

    def test_heads_must_divide_embed(self):
        with pytest.raises(ContractError):
            WauConfig(heads=3, embed_dim=8).validate()

    def test_window_must_divide_kv_map(self):
        _, dec = make_decoder(window=3)
        lat, z = maps()
        with pytest.raises(Exception):
            dec.wad_forward(lat, z)

    def test_constant_kv_window_uniform_weights_and_mean_value(self):
        cfg, dec = make_decoder(lat_c=4, src_c=4, window=2)
        lat = maps(lat_c=4)[0]
        z = tensor(np.full((1, 4, 2, 2), 3.0), precision="double")
        out, rec = dec.wad_forward(lat, z, record_attention=True)
        m2sq = cfg.window ** 2
        np.testing.assert_allclose(rec.weights, 1.0 / m2sq, atol=1e-12)
        # pre-output-conv window rows must all equal the value mean
        merged, _ = dec.wad_features(lat, z)
        rows = merged.numpy()[0].reshape(4, -1)
        np.testing.assert_allclose(rows - rows[:, :1], 0.0, atol=1e-12)

    def test_record_contents(self):
        _, dec = make_decoder(lat_c=4, src_c=4, heads=2, window=2)
        lat, z = maps(lat_c=4, src_c=4, h=4, w=4)
        out, rec = dec.wad_forward(lat, z, record_attention=True)
        assert rec.weights.shape == (4, 2, 16, 4)
        assert rec.coords == [(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1)]
        assert rec.query_shape == (1, 4, 8, 8)
        assert rec.ratio == 2 and rec.window == 2 and rec.heads == 2

    def test_rows_stochastic(self):
        _, dec = make_decoder(heads=2, window=2)
        lat, z = maps(h=4, w=4)
        _, rec = dec.wad_forward(lat, z, record_attention=True)
        np.testing.assert_allclose(rec.row_sums(), 1.0, atol=1e-12)

    def test_gradcheck_wad(self):
        from wau.analysis import gradcheck
        _, dec = make_decoder(lat_c=4, src_c=4, heads=2, window=2)
        lat, z = maps(lat_c=4, src_c=4)
        lat.requires_grad = z.requires_grad = True
        wrt = ([("lateral", lat), ("z", z)] +
               [(n, t) for n, t in dec.parameters()])
        report = gradcheck(lambda: dec.wad_forward(lat, z), wrt)
        assert report.max_rel_error < 1e-6


class TestGlobalAgreement:
    @pytest.mark.parametrize("h,c,heads", [(2, 4, 1), (4, 8, 2), (2, 8, 2)])
    def test_wad_with_full_window_equals_ad(self, h, c, heads):
        cfg, dec = make_decoder(lat_c=c, src_c=c, heads=heads, window=h)
        lat, z = maps(lat_c=c, src_c=c, h=h, w=h, seed=h * 10 + c)
        wad = dec.wad_forward(lat, z).numpy()
        ad = dec.ad_forward(lat, z).numpy()
        np.testing.assert_allclose(wad, ad, atol=1e-10)

    def test_windowed_differs_from_global_when_windows_are_proper(self):
        cfg, dec = make_decoder(lat_c=4, src_c=4, window=2)
        lat, z = maps(lat_c=4, src_c=4, h=4, w=4)
        wad = dec.wad_forward(lat, z).numpy()
        ad = dec.ad_forward(lat, z).numpy()
        assert np.abs(wad - ad).max() > 1e-6

    def test_batch_equivariance_bitwise(self):
        _, dec = make_decoder(lat_c=4, src_c=4, window=2, precision="single")
        rng = np.random.default_rng(5)
        lat = tensor(rng.normal(size=(3, 4, 4, 4)).astype(np.float32))
        z = tensor(rng.normal(size=(3, 4, 2, 2)).astype(np.float32))
        batched = dec.wad_forward(lat, z).numpy()
        for i in range(3):
            one = dec.wad_forward(
                tensor(lat.numpy()[i:i + 1]), tensor(z.numpy()[i:i + 1])).numpy()
            np.testing.assert_array_equal(batched[i:i + 1], one)
