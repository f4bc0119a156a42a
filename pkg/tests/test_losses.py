import numpy as np
import pytest
from numpy.testing import assert_allclose

from avgzsl.errors import ConfigError, DegeneratePairError, EmptyBatchError
from avgzsl.services.gradcheck import CHECK_ARCH, check_configs, compare_gradients, random_batch, random_params
from avgzsl.services.losses import (
    LossConfig,
    LossReport,
    ModalTuple,
    PairBatch,
    TuplePair,
    loss_at,
    loss_cmd,
    loss_ct,
    loss_cta,
    loss_ctv,
    loss_rec,
    loss_report,
    loss_ta,
    loss_tv,
    loss_vt,
    mse_distance,
    total_loss,
    total_loss_value,
    triplet_hinge,
)
from avgzsl.services.model import ModelParams, decode, embed_audio, embed_text, embed_video
from avgzsl.services.tensor_core import LayerParams, Tape, backward, mean, value_of


def zero_params(arch):
    return ModelParams.from_layers(arch, [LayerParams.zeros(o, i) for o, i in arch.layer_shapes()])


def random_pair(arch, rng, class_p=0, class_q=1):
    def modal(c):
        return ModalTuple(rng.standard_normal(arch.dim_audio_in), rng.standard_normal(arch.dim_video_in),
                          rng.standard_normal(arch.dim_text_in), c)
    return TuplePair(modal(class_p), modal(class_q))


# straight-line numpy versions of the networks and distances

def _mlp(layers, x):
    hidden = np.maximum(layers[0].weight @ x + layers[0].bias, 0.0)
    return layers[1].weight @ hidden + layers[1].bias


def _d(u, v):
    return float(np.mean((u - v) ** 2))


def _hinge(d_pos, d_neg, margin):
    return max(0.0, d_pos - d_neg + margin)


def oracle_terms(pair, params, margin=1.0):
    a_p, a_q = _mlp(params.f_a, pair.p.audio), _mlp(params.f_a, pair.q.audio)
    v_p, v_q = _mlp(params.f_v, pair.p.video), _mlp(params.f_v, pair.q.video)
    t_p = params.f_t.weight @ pair.p.text + params.f_t.bias
    t_q = params.f_t.weight @ pair.q.text + params.f_t.bias
    dec = {name: _mlp(params.f_dec, e) for name, e in
           [('t_p', t_p), ('a_p', a_p), ('a_q', a_q), ('v_p', v_p), ('v_q', v_q)]}
    x = pair.p.text
    return {
        'rec': _d(dec['t_p'], x) + _d(dec['a_p'], x) + _d(dec['v_p'], x),
        'cta': _hinge(_d(dec['t_p'], dec['a_p']), _d(dec['t_p'], dec['a_q']), margin),
        'ctv': _hinge(_d(dec['t_p'], dec['v_p']), _d(dec['t_p'], dec['v_q']), margin),
        'ta': _hinge(_d(a_p, t_p), _d(a_q, t_p), margin),
        'at': _hinge(_d(t_p, a_p), _d(t_q, a_p), margin),
        'tv': _hinge(_d(v_p, t_p), _d(v_q, t_p), margin),
        'vt': _hinge(_d(t_p, v_p), _d(t_q, v_p), margin),
    }


def test_mse_distance_is_coordinate_mean():
    assert float(mse_distance(np.array([0.0, 0.0]), np.array([2.0, 0.0]))) == 2.0
    u = np.array([1.0, -3.0, 0.5])
    assert float(mse_distance(u, u)) == 0.0


def test_mse_distance_symmetric(rng):
    u, v = rng.standard_normal(7), rng.standard_normal(7)
    assert float(mse_distance(u, v)) == float(mse_distance(v, u))


@pytest.mark.parametrize('d_pos,d_neg,expected', [
    (0.2, 1.5, 0.0),
    (0.7, 0.7, 1.0),
    (0.9, 0.4, 1.5),
])
def test_triplet_hinge(d_pos, d_neg, expected):
    assert_allclose(float(triplet_hinge(np.array(d_pos), np.array(d_neg), 1.0)), expected)


def test_triplet_hinge_monotone():
    d = np.linspace(0.0, 3.0, 31)
    assert np.all(np.diff(triplet_hinge(d, np.full_like(d, 1.0), 1.0)) >= 0)
    assert np.all(np.diff(triplet_hinge(np.full_like(d, 1.0), d, 1.0)) <= 0)


def test_mse_distance_symmetric_and_zero_on_identity(rng):
    u, v = rng.standard_normal((2, 1000, 7)) * rng.uniform(0.01, 50.0, size=(1000, 1))
    d_uv, d_vu = mse_distance(u, v), mse_distance(v, u)
    assert d_uv.shape == (1000,)
    assert np.array_equal(d_uv, d_vu)
    assert np.all(d_uv >= 0)
    assert not np.any(mse_distance(u, u))


def test_triplet_hinge_properties(rng):
    n = 1000
    margin = rng.uniform(0.0, 3.0, n)
    d_pos = rng.uniform(0.0, 10.0, n)
    extra = rng.uniform(1e-3, 5.0, n)
    # negative farther than positive plus margin: no loss
    assert not np.any(triplet_hinge(d_pos, d_pos + margin + extra, margin))
    # equal distances pay exactly the margin
    assert np.array_equal(triplet_hinge(d_pos, d_pos, margin), margin)
    d_neg = rng.uniform(0.0, 10.0, n)
    lo, hi = np.sort(rng.uniform(0.0, 10.0, (2, n)), axis=0)
    assert np.all(triplet_hinge(lo, d_neg, margin) <= triplet_hinge(hi, d_neg, margin))
    assert np.all(triplet_hinge(d_pos, lo, margin) >= triplet_hinge(d_pos, hi, margin))


def test_report_identities_hold_for_any_terms(rng):
    terms = ('rec', 'cta', 'ctv', 'ta', 'at', 'tv', 'vt')
    for _ in range(1000):
        enabled = [t for t in terms if rng.random() < 0.6]
        report = LossReport.from_terms({t: float(rng.uniform(0.0, 5.0)) for t in enabled})
        assert report.l_cmd == report.l_rec + report.l_cta + report.l_ctv
        assert report.l_ct == report.l_tv + report.l_vt + report.l_ta + report.l_at
        assert report.total == report.l_cmd + report.l_ct
        for t in terms:
            if t not in enabled:
                assert getattr(report, f'l_{t}') == 0.0


def test_zero_params_reconstruction_is_three_times_mean_square(tiny_arch, rng):
    pair = random_pair(tiny_arch, rng)
    m = float(np.mean(pair.p.text ** 2))
    assert_allclose(loss_rec(pair, zero_params(tiny_arch)), 3.0 * m)


def test_zero_params_zero_text_reconstruction_is_zero(tiny_arch, rng):
    pair = random_pair(tiny_arch, rng)
    pair = TuplePair(ModalTuple(pair.p.audio, pair.p.video, np.zeros(tiny_arch.dim_text_in), 0), pair.q)
    assert loss_rec(pair, zero_params(tiny_arch)) == 0.0


def test_collapsed_decoder_pays_full_margin(tiny_arch, rng):
    pair = random_pair(tiny_arch, rng)
    params = zero_params(tiny_arch)
    assert loss_cta(pair, params, margin=0.75) == 0.75
    assert loss_ctv(pair, params, margin=0.75) == 0.75


def test_identical_embeddings_give_four_margins(tiny_arch, rng):
    pair = random_pair(tiny_arch, rng)
    assert loss_ct(pair, zero_params(tiny_arch), LossConfig(margin=0.5)) == 2.0


def test_all_terms_off_is_zero(tiny_params, rng):
    pair = random_pair(tiny_params.arch, rng)
    off = LossConfig.only()
    assert loss_cmd(pair, tiny_params, off) == 0.0
    assert loss_ct(pair, tiny_params, off) == 0.0
    scalar, report = total_loss(pair, tiny_params, off)
    assert float(value_of(scalar)) == 0.0
    assert report.total == 0.0


def test_only_rec_matches_loss_rec(tiny_params, rng):
    pair = random_pair(tiny_params.arch, rng)
    assert_allclose(loss_cmd(pair, tiny_params, LossConfig.only('rec')), loss_rec(pair, tiny_params))


def test_terms_match_straight_line_oracle(tiny_params, rng):
    pair = random_pair(tiny_params.arch, rng)
    expected = oracle_terms(pair, tiny_params)
    got = {'rec': loss_rec(pair, tiny_params), 'cta': loss_cta(pair, tiny_params),
           'ctv': loss_ctv(pair, tiny_params), 'ta': loss_ta(pair, tiny_params),
           'at': loss_at(pair, tiny_params), 'tv': loss_tv(pair, tiny_params),
           'vt': loss_vt(pair, tiny_params)}
    for term, value in expected.items():
        assert_allclose(got[term], value, rtol=1e-12, atol=1e-14, err_msg=term)


def test_total_is_mean_of_per_pair_sums(tiny_params, rng):
    pairs = [random_pair(tiny_params.arch, rng, c, (c + 1) % 3) for c in range(3) for _ in range(2)]
    brute = sum(sum(oracle_terms(pair, tiny_params).values()) for pair in pairs) / len(pairs)
    scalar, report = total_loss(pairs, tiny_params)
    assert_allclose(float(value_of(scalar)), brute, rtol=1e-12)
    assert_allclose(report.total, brute, rtol=1e-12)
    assert_allclose(total_loss_value(pairs, tiny_params), brute, rtol=1e-12)


def test_single_pair_total_is_cmd_plus_ct(tiny_params, rng):
    pair = random_pair(tiny_params.arch, rng)
    scalar, _ = total_loss(pair, tiny_params)
    assert_allclose(float(value_of(scalar)), loss_cmd(pair, tiny_params) + loss_ct(pair, tiny_params))


def test_batch_of_identical_pairs_equals_single_pair(tiny_params, rng):
    pair = random_pair(tiny_params.arch, rng)
    single = total_loss_value(pair, tiny_params)
    assert_allclose(total_loss_value([pair] * 5, tiny_params), single, rtol=1e-12)


def test_report_sum_identities(tiny_params, rng):
    pairs = [random_pair(tiny_params.arch, rng) for _ in range(4)]
    report = loss_report(pairs, tiny_params)
    assert report.l_cmd == report.l_rec + report.l_cta + report.l_ctv
    assert report.l_ct == report.l_tv + report.l_vt + report.l_ta + report.l_at
    assert report.total == report.l_cmd + report.l_ct
    assert all(value >= 0 for _, value in report.items())


def test_report_from_terms_zero_fills_disabled():
    report = LossReport.from_terms({'rec': 1.5, 'ta': 0.25})
    assert (report.l_cmd, report.l_ct, report.total) == (1.5, 0.25, 1.75)


def test_swapping_roles_moves_audio_text_term(tiny_params, rng):
    pair = random_pair(tiny_params.arch, rng, 2, 5)
    swapped = TuplePair(pair.q, pair.p)
    assert_allclose(loss_ta(swapped, tiny_params), oracle_terms(swapped, tiny_params)['ta'])
    assert_allclose(loss_ta(pair, tiny_params), oracle_terms(pair, tiny_params)['ta'])


def test_degenerate_pair_rejected(tiny_arch, rng):
    with pytest.raises(DegeneratePairError):
        random_pair(tiny_arch, rng, 3, 3)


def test_degenerate_batch_rejected(tiny_params, rng):
    batch = PairBatch.from_pairs([random_pair(tiny_params.arch, rng)])
    batch.class_q = batch.class_p.copy()
    with pytest.raises(DegeneratePairError):
        total_loss(batch, tiny_params)


def test_empty_batch_rejected(tiny_params):
    with pytest.raises(EmptyBatchError):
        total_loss([], tiny_params)


def test_negative_margin_rejected():
    with pytest.raises(ConfigError):
        LossConfig(margin=-0.1)


def test_presets():
    assert LossConfig.preset('full').enabled_terms() == ('rec', 'cta', 'ctv', 'ta', 'at', 'tv', 'vt')
    assert LossConfig.preset('audio-only').enabled_terms() == ('ta', 'at')
    assert LossConfig.preset('video-only').enabled_terms() == ('tv', 'vt')
    with pytest.raises(ConfigError):
        LossConfig.preset('text-only')


def test_without_unknown_term():
    with pytest.raises(ConfigError):
        LossConfig().without('xyz')


@pytest.mark.parametrize('name,config', check_configs())
def test_gradient_matches_finite_differences(name, config):
    rng = np.random.default_rng(sum(map(ord, name)))
    for _ in range(10):
        batch = random_batch(CHECK_ARCH, 8, rng)
        params = random_params(CHECK_ARCH, rng)
        assert compare_gradients(batch, params, config) < 1e-4


def test_shared_decoder_accumulates_all_reconstruction_paths(tiny_params, rng):
    batch = PairBatch.from_pairs([random_pair(tiny_params.arch, rng, c, c + 1) for c in range(4)])
    scalar, _ = total_loss(batch, tiny_params, LossConfig.only('rec'))
    combined = backward(scalar, wrt=list(tiny_params.f_dec))

    paths = [(embed_text, batch.text_p), (embed_audio, batch.audio_p), (embed_video, batch.video_p)]
    separate = []
    for embed, features in paths:
        tape = Tape()
        path = mean(mse_distance(decode(tiny_params, embed(tiny_params, tape.constant(features))), batch.text_p))
        separate.append(backward(path, wrt=list(tiny_params.f_dec)))

    for layer in tiny_params.f_dec:
        for k, got in enumerate(combined[layer].arrays()):
            parts = [grads[layer].arrays()[k] for grads in separate]
            assert all(np.any(part) for part in parts)
            assert_allclose(got, parts[0] + parts[1] + parts[2], rtol=1e-10, atol=1e-13)
