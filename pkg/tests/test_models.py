import math

import numpy as np
import pytest

from kernelseer.decoding import greedy_decode
from kernelseer.errors import DimensionError, EmptyInputError, InputTooShortError, ParameterError
from kernelseer.models import (
    VARIANTS,
    AttentionParams,
    ModelConfig,
    attention_weights,
    build_model,
    context_vector,
    encdec_forward,
    attn2_forward,
    hybrid2_decode,
    hybrid_encode,
    init_params,
)
from kernelseer.nn import autograd as ag
from kernelseer.nn.layers import LstmCellParams, dense_forward, lstm_cell_step
from kernelseer.training import TrainConfig, loss_and_grads, sequence_loss, train

from conftest import central_difference, rel_error, tiny_config

INPUT_SIZES = (3, 4, 2, 2, 3, 1, 1)
OUTPUT_SIZES = (4, 5, 16, 7, 8, 6, 8, 4)


def random_tokens(rng, n, sizes=INPUT_SIZES):
    return np.stack([rng.integers(0, s, size=n) for s in sizes], axis=1)


def model_for(variant, seed=0, output_sizes=OUTPUT_SIZES, **kw):
    return build_model(init_params(tiny_config(variant, **kw), INPUT_SIZES, output_sizes, seed))


@pytest.mark.parametrize("variant", VARIANTS)
def test_outputs_are_distributions(variant, rng):
    model = model_for(variant)
    x = random_tokens(rng, 5)
    dists = model.forward(x)
    assert len(dists) == len(OUTPUT_SIZES) == 8
    for d, size in zip(dists, OUTPUT_SIZES):
        assert d.shape == (5, size)
        assert np.all(np.abs(d.sum(axis=1) - 1.0) < 1e-9)


@pytest.mark.parametrize("variant", VARIANTS)
def test_batch_rows_match_single_inputs(variant, rng):
    model = model_for(variant)
    x = random_tokens(rng, 4)
    batch = model.forward(x)
    for i in range(4):
        single = model.forward(x[i])
        for b, s in zip(batch, single):
            assert np.allclose(b[i], s[0], atol=1e-12)


@pytest.mark.parametrize("variant", VARIANTS)
def test_greedy_is_deterministic(variant, rng):
    model = model_for(variant)
    x = random_tokens(rng, 6)
    assert np.array_equal(greedy_decode(model, x), greedy_decode(model_for(variant), x))


@pytest.mark.parametrize("variant", VARIANTS)
def test_initial_loss_near_uniform(variant, rng):
    model = model_for(variant)
    x = random_tokens(rng, 64)
    y = np.stack([rng.integers(0, s, size=64) for s in OUTPUT_SIZES], axis=1)
    loss, _ = loss_and_grads(model, x, y)
    expected = np.mean(np.log(OUTPUT_SIZES))
    assert abs(loss - expected) / expected < 0.1


@pytest.mark.parametrize("variant", VARIANTS)
def test_full_model_gradients(variant):
    rng = np.random.default_rng(7)
    params = init_params(tiny_config(variant), INPUT_SIZES, (3, 4, 2), 3)
    model = build_model(params)
    x = random_tokens(rng, 2)
    y = np.stack([rng.integers(0, s, size=2) for s in (3, 4, 2)], axis=1)
    _, grads = loss_and_grads(model, x, y)

    def loss():
        return float(sequence_loss(model, x, y, model.context(requires_grad=False))[0].value)

    names = sorted(params.tensors)
    for _ in range(8):
        name = names[rng.integers(len(names))]
        arr = params.tensors[name]
        idx = tuple(int(rng.integers(n)) for n in arr.shape)
        model._infer_weights = None
        numeric = central_difference(loss, arr, idx)
        if abs(numeric) < 1e-8 and abs(grads[name][idx]) < 1e-8:
            continue
        assert rel_error(grads[name][idx], numeric) <= 1e-3, (name, idx)


def test_bad_inputs(rng):
    model = model_for("enc-dec")
    with pytest.raises(DimensionError):
        model.forward(np.zeros((1, 6), dtype=int))
    with pytest.raises(DimensionError):
        model.forward(np.array([[3, 0, 0, 0, 0, 0, 0]]))


def test_config_validation():
    with pytest.raises(ParameterError):
        ModelConfig(variant="transformer")
    with pytest.raises(ParameterError):
        ModelConfig(dropout=1.0)
    with pytest.raises(ParameterError):
        ModelConfig(encoder_size=0)
    with pytest.raises(ParameterError):
        ModelConfig(conv_layers=((4, 0, 1),))
    with pytest.raises(InputTooShortError):
        init_params(tiny_config("hybrid", conv_layers=((4, 8, 1),)), INPUT_SIZES, OUTPUT_SIZES)


def test_default_config_values():
    cfg = ModelConfig()
    assert (cfg.encoder_size, cfg.pre_attention_size, cfg.post_attention_size, cfg.attention_dense) == (256, 256, 512, 2)
    assert (cfg.decoder_size, cfg.dropout, cfg.recurrent_dropout) == (256, 0.2, 0.2)


# teacher forcing -------------------------------------------------------------


@pytest.mark.parametrize("variant", ["enc-dec", "attn"])
def test_teacher_forcing_on_greedy_path_matches_greedy(variant, rng):
    model = model_for(variant)
    x = random_tokens(rng, 5)
    path = greedy_decode(model, x)
    free = model.forward(x)
    forced = encdec_forward(model, x, path)
    for a, b in zip(free, forced):
        assert np.array_equal(a, b)


def test_teacher_forcing_with_saturated_heads():
    params = init_params(tiny_config("enc-dec"), INPUT_SIZES, OUTPUT_SIZES, 0)
    targets = [i % s for i, s in enumerate(OUTPUT_SIZES)]
    for i, (t, size) in enumerate(zip(targets, OUTPUT_SIZES)):
        params.tensors[f"head{i}.weight"][:] = 0.0
        params.tensors[f"head{i}.bias"][:] = -40.0
        params.tensors[f"head{i}.bias"][t] = 40.0
    model = build_model(params)
    x = np.zeros((1, 7), dtype=int)
    assert greedy_decode(model, x[0]).tokens == tuple(targets)
    forced = encdec_forward(model, x, np.array([targets]))
    for d, t in zip(forced, targets):
        assert d[0].argmax() == t and d[0, t] > 1 - 1e-12


# attention -------------------------------------------------------------------


def attention_params(rng, ns=3, na2=4, nd=2, zero=False):
    def draw(*shape):
        return np.zeros(shape) if zero else rng.normal(size=shape)

    return AttentionParams(*(ag.Var(v) for v in (draw(ns, nd), draw(na2, nd), draw(nd), draw(nd, 1), draw(1))))


def test_attention_single_step(rng):
    alpha = attention_weights(rng.normal(size=3), [rng.normal(size=4)], attention_params(rng))
    assert alpha.value.tolist() == [1.0]


def test_attention_zero_dense_is_uniform(rng):
    acts = [rng.normal(size=4) for _ in range(5)]
    alpha = attention_weights(rng.normal(size=3), acts, attention_params(rng, zero=True))
    assert np.allclose(alpha.value, 0.2, atol=1e-15)


def test_attention_matches_scalar_reference(rng):
    att = attention_params(rng)
    s = rng.normal(size=3)
    acts = [rng.normal(size=4) for _ in range(6)]
    ws, wa, b, v, vb = (p.value for p in (att.ws, att.wa, att.b, att.v, att.vb))
    energies = []
    for a in acts:
        e = vb[0]
        for j in range(len(b)):
            pre = b[j] + sum(s[r] * ws[r, j] for r in range(3)) + sum(a[r] * wa[r, j] for r in range(4))
            e += math.tanh(pre) * v[j, 0]
        energies.append(e)
    top = max(energies)
    expo = [math.exp(e - top) for e in energies]
    expected = [x / sum(expo) for x in expo]
    got = attention_weights(s, acts, att).value
    assert np.max(np.abs(got - expected)) < 1e-12
    assert abs(got.sum() - 1.0) < 1e-12


def test_attention_state_mismatch(rng):
    with pytest.raises(DimensionError):
        attention_weights(rng.normal(size=5), [rng.normal(size=4)], attention_params(rng))
    with pytest.raises(EmptyInputError):
        attention_weights(rng.normal(size=3), [], attention_params(rng))


def test_context_vector_cases(rng):
    acts = [rng.normal(size=4) for _ in range(3)]
    assert np.allclose(context_vector(np.array([0.0, 1.0, 0.0]), acts).value, acts[1])
    assert np.allclose(context_vector(np.full(3, 1 / 3), acts).value, np.mean(acts, axis=0))
    alpha = rng.dirichlet(np.ones(3))
    expected = [sum(alpha[t] * acts[t][j] for t in range(3)) for j in range(4)]
    assert np.allclose(context_vector(alpha, acts).value, expected, atol=1e-14)
    with pytest.raises(DimensionError):
        context_vector(np.ones(2) / 2, acts)


def test_attn2_ignores_target_tokens(rng):
    model = model_for("attn-2")
    x = random_tokens(rng, 3)
    base = model.forward(x)
    for _ in range(3):
        teacher = np.stack([rng.integers(0, s, size=3) for s in OUTPUT_SIZES], axis=1)
        for a, b in zip(base, model.forward(x, teacher)):
            assert np.array_equal(a, b)


def test_attn_uses_feedback(rng):
    model = model_for("attn")
    x = random_tokens(rng, 2)
    t1 = np.zeros((2, 8), dtype=int)
    t2 = t1.copy()
    t2[:, 0] = 3
    assert not np.allclose(model.forward(x, t1)[1], model.forward(x, t2)[1])


def test_attn2_degenerate_steps_identical(rng):
    sizes = (5, 5, 5, 5)
    params = init_params(tiny_config("attn-2"), INPUT_SIZES, sizes, 2)
    t = params.tensors
    t["att.v"][:] = 0.0  # uniform attention, so the context never changes
    n_in = t["post.weight"].shape[0] - t["post.weight"].shape[1] // 4
    ns = t["post.weight"].shape[1] // 4
    t["post.weight"][n_in:] = 0.0  # no recurrent weights
    t["post.bias"][ns : 2 * ns] = -60.0  # forget gate shut, cell does not carry over
    for i in range(1, len(sizes)):
        t[f"head{i}.weight"][:] = t["head0.weight"]
        t[f"head{i}.bias"][:] = t["head0.bias"]
    out = attn2_forward(build_model(params), random_tokens(rng, 2))
    for d in out[1:]:
        assert np.allclose(d, out[0], atol=1e-12)


# hybrid ----------------------------------------------------------------------


def test_hybrid_encode_sizes(rng):
    one = model_for("hybrid", conv_layers=((4, 3, 1),))
    assert hybrid_encode(one, random_tokens(rng, 1)).shape == (1, 20)
    two = model_for("hybrid", conv_layers=((4, 3, 1), (2, 3, 1)))
    assert hybrid_encode(two, random_tokens(rng, 1)).shape == (1, 6)


def test_hybrid_encode_delta_filters():
    params = init_params(tiny_config("hybrid", conv_layers=((1, 3, 2),)), INPUT_SIZES, OUTPUT_SIZES, 0)
    w = np.zeros_like(params.tensors["conv0.weight"])
    c_in = max(INPUT_SIZES)
    w[1 * c_in + 2, 0] = 1.0  # tap 1, channel 2
    params.tensors["conv0.weight"] = w
    tokens = np.array([[2, 1, 1, 0, 2, 0, 0]])
    onehot = np.eye(c_in)[tokens[0]]
    feats = hybrid_encode(build_model(params), tokens)
    assert feats[0].tolist() == onehot[1:6:2, 2].tolist()


def test_hybrid_flatten_is_filter_major(rng):
    model = model_for("hybrid", conv_layers=((3, 3, 1),))
    tokens = random_tokens(rng, 1)
    w = model.params.tensors
    onehot = np.eye(max(INPUT_SIZES))[tokens[0]]
    fmap = np.zeros((3, 5))
    for f in range(3):
        for o in range(5):
            fmap[f, o] = max(0.0, w["conv0.bias"][f] + (onehot[o : o + 3].reshape(-1) @ w["conv0.weight"][:, f]))
    assert np.allclose(hybrid_encode(model, tokens)[0], fmap.reshape(-1), atol=1e-14)


def reference_hybrid2(params, encoded, zero_intermediate):
    """Layered decoder written step by step: bi-LSTM-1 only hands over its final states."""
    t = params.tensors
    steps = len(params.output_sizes)
    hidden = params.config.decoder_size

    def cell(prefix):
        return LstmCellParams(t[f"{prefix}.weight"], t[f"{prefix}.bias"])

    def run(prefix, inputs, order, h, c):
        out = {}
        for i in order:
            h, c = (v.value for v in lstm_cell_step(inputs[i], h, c, cell(prefix)))
            out[i] = h
        return out, h, c

    zeros = np.zeros(hidden)
    first = [encoded] * steps
    f_states, hf, cf = run("dec1_f", first, range(steps), zeros, zeros)
    b_states, hb, cb = run("dec1_b", first, range(steps - 1, -1, -1), zeros, zeros)
    if zero_intermediate:
        f_states = {i: np.zeros(hidden) for i in f_states}
        b_states = {i: np.zeros(hidden) for i in b_states}
    second = [np.concatenate([hf, hb])] * steps
    f2, _, _ = run("dec2_f", second, range(steps), hf, cf)
    b2, _, _ = run("dec2_b", second, range(steps - 1, -1, -1), hb, cb)
    outs = []
    for i in range(steps):
        logits = dense_forward(np.concatenate([f2[i], b2[i]]), t[f"head{i}.weight"], t[f"head{i}.bias"]).value
        e = np.exp(logits - logits.max())
        outs.append(e / e.sum())
    return outs


def test_hybrid2_matches_reference_and_ignores_intermediate_states(rng):
    params = init_params(tiny_config("hybrid-2"), INPUT_SIZES, OUTPUT_SIZES, 5)
    model = build_model(params)
    tokens = random_tokens(rng, 1)
    encoded = hybrid_encode(model, tokens)[0]
    got = hybrid2_decode(model, encoded[None])
    assert len(got) == len(OUTPUT_SIZES)
    for zero in (False, True):
        ref = reference_hybrid2(params, encoded, zero)
        for g, r in zip(got, ref):
            assert np.allclose(g[0], r, atol=1e-12)
            assert abs(g[0].sum() - 1.0) < 1e-9


def test_hybrid_variants_differ(rng):
    a = init_params(tiny_config("hybrid"), INPUT_SIZES, OUTPUT_SIZES, 1)
    b = init_params(tiny_config("hybrid-2"), INPUT_SIZES, OUTPUT_SIZES, 1)
    assert {k: v.shape for k, v in a.tensors.items()} == {k: v.shape for k, v in b.tensors.items()}
    x = random_tokens(rng, 2)
    assert not np.allclose(build_model(a).forward(x)[0], build_model(b).forward(x)[0])


# training ----------------------------------------------------------------------


@pytest.mark.parametrize("variant", VARIANTS)
def test_memorises_single_sample(variant):
    params = init_params(
        tiny_config(variant, encoder_size=12, decoder_size=12, post_attention_size=12), INPUT_SIZES, (4, 5, 3), 0
    )
    x = np.array([[1, 2, 0, 1, 2, 0, 0]] * 16)
    y = np.array([[3, 0, 2]] * 16)
    _, history = train(params, x, y, TrainConfig(epochs=200, batch_size=4, seed=0))
    assert len(history) == 200
    assert history[-1].train_loss < 0.01


def test_training_is_deterministic_and_leaves_input_untouched(rng):
    params = init_params(tiny_config("hybrid-2", dropout=0.2, recurrent_dropout=0.2), INPUT_SIZES, (4, 5), 0)
    before = {k: v.copy() for k, v in params.tensors.items()}
    x = random_tokens(rng, 20)
    y = np.stack([rng.integers(0, s, size=20) for s in (4, 5)], axis=1)
    cfg = TrainConfig(epochs=3, batch_size=8, seed=4)
    p1, h1 = train(params, x, y, cfg, x[:5], y[:5])
    p2, h2 = train(params, x, y, cfg, x[:5], y[:5])
    assert h1 == h2
    assert all(np.array_equal(p1.tensors[k], p2.tensors[k]) for k in p1.tensors)
    assert all(np.array_equal(before[k], params.tensors[k]) for k in before)
    assert not np.array_equal(p1.tensors["head0.weight"], params.tensors["head0.weight"])


def test_train_empty_dataset():
    params = init_params(tiny_config("enc-dec"), INPUT_SIZES, (4,), 0)
    with pytest.raises(EmptyInputError):
        train(params, np.zeros((0, 7), dtype=int), np.zeros((0, 1), dtype=int), TrainConfig(epochs=1))
