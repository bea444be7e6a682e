import math

import numpy as np
import pytest

import oracles
from tesan.attention import Mode, init_params, tesan_forward
from tesan.journeys import ContextSample, Vocabulary
from tesan.training import (
    ConfigError,
    TrainConfig,
    Trainer,
    TrainingDivergedError,
    backward,
    finite_diff_grad,
    forward_backward,
    load_checkpoint,
    load_embeddings,
    nsg_objective,
    save_checkpoint,
    save_embeddings,
    train,
)
from tesan.training.backprop import batch_loss
from tesan.training.checkpoint import CheckpointError
from tesan.training.embio import EmbeddingFormatError
from tesan.training.gradcheck import check_case, random_case, relative_error, run_gradcheck
from tesan.training.optim import SGD, Adam

MODES = list(Mode)


def small_config(**kw):
    base = dict(dim=4, window=2, negatives=2, epochs=2, batch_size=8, seed=0, dtype="float64")
    return TrainConfig(**{**base, **kw})


# objective ------------------------------------------------------------------

def test_nsg_objective_half():
    p = init_params(3, 2, 1, np.random.default_rng(0), dual_tables=False)
    assert nsg_objective(np.zeros(2), 1, [], p) == pytest.approx(math.log(0.5), abs=1e-12)


def test_nsg_objective_saturation_limit():
    p = init_params(3, 2, 1, np.random.default_rng(0), dual_tables=True)
    p.output_table[:] = [[1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]]
    j = nsg_objective(np.array([800.0, 0.0]), 0, [1, 2], p)
    assert j <= 0.0 and j > -1e-300


def test_nsg_objective_loop_oracle_and_bound():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p, _ = random_case(rng, Mode.TESA, dim=2, dual_tables=bool(seed % 2))
        h = rng.normal(size=2) * 2
        negs = rng.integers(0, p.concept_table.shape[0], size=2)
        j = nsg_objective(h, 1, negs, p)
        assert j == pytest.approx(oracles.objective(h.tolist(), 1, negs.tolist(), p), abs=1e-12)
        assert j <= 0.0


def test_nsg_objective_index_error():
    p = init_params(3, 2, 1, np.random.default_rng(0))
    with pytest.raises(IndexError):
        nsg_objective(np.zeros(2), 3, [], p)
    with pytest.raises(IndexError):
        nsg_objective(np.zeros(2), 0, [-1], p)


# finite differences ------------------------------------------------------------

def test_finite_diff_quadratic_and_linear():
    p = init_params(1, 1, 0, np.random.default_rng(0))
    p.concept_table[0, 0] = 3.0
    g = finite_diff_grad(lambda q: q.concept_table[0, 0] ** 2, p, 1e-4)
    assert g["concept_table"][0, 0] == pytest.approx(6.0, abs=1e-8)
    assert p.concept_table[0, 0] == 3.0
    for eps in (1e-1, 1.0, 7.0):
        g = finite_diff_grad(lambda q: 2.5 * q.gate_b[0] - 1.0, p, eps)
        assert g["gate_b"][0] == pytest.approx(2.5, abs=1e-12)
    with pytest.raises(ValueError):
        finite_diff_grad(lambda q: 0.0, p, 0.0)


def test_relative_error_floor():
    assert relative_error(np.array([1e-9]), np.array([0.0]))[0] == pytest.approx(1e-3)
    assert relative_error(np.array([2.0]), np.array([1.0]))[0] == 0.5


# analytic gradients ----------------------------------------------------------

@pytest.mark.parametrize("mode", MODES, ids=lambda m: m.value)
@pytest.mark.parametrize("dual", [False, True], ids=["single", "dual"])
def test_gradients_match_finite_differences(mode, dual):
    rng = np.random.default_rng([MODES.index(mode), int(dual)])
    for _ in range(6):
        params, batch = random_case(rng, mode, dual_tables=dual)
        assert check_case(params, batch) < 1e-4


def test_gradients_padded_batch():
    rng = np.random.default_rng(5)
    params, _ = random_case(rng, Mode.TESA, dim=3)
    n = params.concept_table.shape[0]
    ids = rng.integers(0, n, size=(3, 4))
    days = np.sort(rng.integers(0, 6, size=(3, 4)), axis=1)
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0], [1, 0, 0, 0]], dtype=bool)
    batch = (ids, days, mask, rng.integers(0, n, size=3), rng.integers(0, n, size=(3, 2)))
    assert check_case(params, batch) < 1e-4


def test_padded_batch_equals_sum_of_samples():
    rng = np.random.default_rng(6)
    params, _ = random_case(rng, Mode.TESA, dim=3)
    n = params.concept_table.shape[0]
    lengths = [4, 2, 1]
    ids = rng.integers(0, n, size=(3, 4))
    days = np.sort(rng.integers(0, 9, size=(3, 4)), axis=1)
    mask = np.arange(4)[None, :] < np.array(lengths)[:, None]
    targets, negs = rng.integers(0, n, size=3), rng.integers(0, n, size=(3, 2))
    loss, grads = forward_backward(params, ids, days, mask, targets, negs)
    total = 0.0
    acc = {k: np.zeros_like(v) for k, v in grads.items()}
    for b, m in enumerate(lengths):
        part, g = backward(ContextSample(int(targets[b]), ids[b, :m], days[b, :m]), negs[b], params)
        total += part
        for k in acc:
            acc[k] += g[k]
    assert loss == pytest.approx(total, abs=1e-12)
    for k in acc:
        np.testing.assert_allclose(grads[k], acc[k], atol=1e-12)


def test_backward_loss_matches_objective():
    rng = np.random.default_rng(7)
    params, (ids, days, _, target, negs) = random_case(rng, Mode.TESA, dim=2, length=3, n_neg=2)
    sample = ContextSample(int(target[0]), ids[0], days[0])
    loss, _ = backward(sample, negs[0], params)
    h = tesan_forward(sample, params)
    assert loss == pytest.approx(-nsg_objective(h, sample.target, negs[0], params), abs=1e-12)


def test_zero_parameters_symmetric_sample():
    p = init_params(4, 3, 2, np.random.default_rng(0), dual_tables=False)
    for _, arr in p.tensors():
        arr[:] = 0.0
    p.concept_table[:] = [[0.3, -0.2, 0.1], [0.5, 0.4, -0.6], [-0.1, 0.2, 0.7], [0.9, -0.3, 0.2]]
    sample = ContextSample(0, np.array([1, 1]), np.array([0, 0]))
    _, grads = backward(sample, [2, 3], p)
    numeric = finite_diff_grad(lambda q: backward(sample, [2, 3], q)[0], p, 1e-5)
    for k in grads:
        np.testing.assert_allclose(grads[k], numeric[k], atol=1e-8)
    for row in (0, 2, 3):
        assert np.abs(grads["concept_table"][row]).sum() > 0
    # identical context rows: every score-side weight is irrelevant to the output
    for name in ("attn_w1", "attn_w2", "attn_w", "pool_w", "pool_w1"):
        np.testing.assert_array_equal(grads[name], 0.0)


def test_duplicated_sample_doubles_gradient():
    rng = np.random.default_rng(8)
    params, (ids, days, mask, t, negs) = random_case(rng, Mode.TESA, dim=3, length=3, n_neg=2)
    loss1, g1 = forward_backward(params, ids, days, mask, t, negs)
    twice = [np.concatenate([a, a]) for a in (ids, days, mask, t, negs)]
    loss2, g2 = forward_backward(params, *twice)
    assert loss2 == pytest.approx(2 * loss1, abs=1e-12)
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], atol=1e-12)


def test_untouched_rows_have_zero_gradient():
    rng = np.random.default_rng(9)
    params = init_params(10, 3, 4, rng, dual_tables=False).astype(np.float64)
    _, g = backward(ContextSample(0, np.array([1, 2]), np.array([0, 3])), [3], params)
    assert not g["concept_table"][4:].any()
    assert not g["interval_table"][[1, 2, 4]].any()


def test_multi_sa_never_touches_interval_parameters():
    rng = np.random.default_rng(10)
    for mode in (Mode.MULTI_SA, Mode.NORMAL_SA):
        for _ in range(10):
            params, batch = random_case(rng, mode)
            _, g = forward_backward(params, *batch)
            assert not g["interval_table"].any() and not g["attn_w3"].any()


def test_interval_mode_never_touches_content_score_weights():
    params, batch = random_case(np.random.default_rng(11), Mode.INTERVAL, length=3)
    _, g = forward_backward(params, *batch)
    assert not g["attn_w1"].any() and not g["attn_w2"].any()


def test_non_finite_gradient_names_layer():
    params, batch = random_case(np.random.default_rng(12), Mode.TESA, length=2)
    params.pool_w[0, 0] = np.inf
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError, match="attention pooling"):
        forward_backward(params, *batch)


def test_run_gradcheck_small():
    assert run_gradcheck(trials=8, epsilon=1e-4, seed=3) < 1e-4


# optimizers --------------------------------------------------------------------

def test_sgd_step():
    p = init_params(2, 2, 1, np.random.default_rng(0))
    before = p.gate_b.copy()
    grads = {k: np.zeros_like(v) for k, v in p.tensors()}
    grads["gate_b"][:] = 2.0
    SGD(p, lr=0.1).step(p, grads)
    np.testing.assert_allclose(p.gate_b, before - 0.2)


def test_adam_first_step_is_lr_sign():
    p = init_params(2, 2, 1, np.random.default_rng(0))
    before = p.gate_b.copy()
    grads = {k: np.zeros_like(v) for k, v in p.tensors()}
    grads["gate_b"][:] = [3.0, -0.5]
    opt = Adam(p, lr=0.01)
    opt.step(p, grads)
    np.testing.assert_allclose(p.gate_b - before, [-0.01, 0.01], rtol=1e-6)
    state = opt.state()
    fresh = Adam(p, lr=0.01)
    fresh.load_state(state)
    for k, v in state.items():
        np.testing.assert_array_equal(fresh.state()[k], v)


# config -------------------------------------------------------------------------

def test_config_defaults_and_presets():
    cfg = TrainConfig()
    assert (cfg.dim, cfg.window, cfg.negatives, cfg.epochs, cfg.batch_size) == (100, 6, 10, 30, 64)
    cms = TrainConfig.from_preset("cms-like")
    assert (cms.negatives, cms.epochs, cms.window, cms.batch_size) == (5, 20, 7, 128)
    assert TrainConfig.from_preset("mimic-like", epochs=3).epochs == 3
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("bad", [
    dict(epochs=0), dict(dim=0), dict(negatives=-1), dict(batch_size=0), dict(mode="lstm"),
    dict(learning_rate=0.0), dict(workers=0), dict(optimizer="rmsprop"), dict(dtype="int8"),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)
    with pytest.raises(ConfigError):
        TrainConfig.from_preset("nope")


# embeddings file ------------------------------------------------------------------

def test_embedding_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    vecs = rng.normal(size=(3, 4)) * 1e-3
    path = tmp_path / "emb.txt"
    save_embeddings(["A", "B", "C"], vecs, path)
    loaded = load_embeddings(path)
    assert list(loaded) == ["A", "B", "C"]
    for code, row in zip("ABC", vecs):
        np.testing.assert_array_equal(loaded[code], row)
    assert path.read_text().splitlines()[0] == "3 4"


def test_embedding_row_count_mismatch(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("3 2\nA 0.1 0.2\nB 0.3 0.4\n")
    with pytest.raises(EmbeddingFormatError):
        load_embeddings(path)
    path.write_text("2 2\nA 0.1 0.2\nB 0.3\n")
    with pytest.raises(EmbeddingFormatError):
        load_embeddings(path)


def test_embedding_empty_vocab(tmp_path):
    with pytest.raises(EmbeddingFormatError):
        save_embeddings([], np.zeros((0, 2)), tmp_path / "e.txt")


# training loop ----------------------------------------------------------------------

def test_training_reduces_loss_and_is_deterministic(tiny_corpus):
    _, _, vocab, samples = tiny_corpus
    cfg = small_config(epochs=5, learning_rate=1e-2)
    t1 = Trainer(samples, vocab, cfg)
    t1.fit()
    assert t1.history[-1] < t1.history[0]
    t2 = Trainer(samples, vocab, cfg)
    t2.fit()
    assert t1.history == t2.history
    for (_, a), (_, b) in zip(t1.params.tensors(), t2.params.tensors()):
        assert np.array_equal(a, b)


def test_workers_do_not_change_results(tiny_corpus):
    _, _, vocab, samples = tiny_corpus
    one = train(samples, vocab, small_config(batch_size=40, workers=1))
    four = train(samples, vocab, small_config(batch_size=40, workers=4))
    for (_, a), (_, b) in zip(one.tensors(), four.tensors()):
        assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("mode", MODES, ids=lambda m: m.value)
def test_every_mode_trains(tiny_corpus, mode):
    _, _, vocab, samples = tiny_corpus
    params = train(samples, vocab, small_config(mode=mode.value, epochs=1, dtype="float32"))
    assert params.dtype == np.float32
    assert all(np.all(np.isfinite(a)) for _, a in params.tensors())


def test_multi_sa_training_leaves_interval_parameters(tiny_corpus):
    _, _, vocab, samples = tiny_corpus
    cfg = small_config(mode="multi-sa")
    start = Trainer(samples, vocab, cfg).params.copy()
    params = train(samples, vocab, cfg)
    np.testing.assert_array_equal(params.interval_table, start.interval_table)
    np.testing.assert_array_equal(params.attn_w3, start.attn_w3)


def test_checkpoint_roundtrip_is_byte_identical(tiny_corpus, tmp_path):
    _, _, vocab, samples = tiny_corpus
    trainer = Trainer(samples, vocab, small_config(epochs=1))
    trainer.fit()
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(trainer.checkpoint(), a)
    save_checkpoint(load_checkpoint(a), b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes()[:4] == b"TESA"


def test_resume_reproduces_trajectory(tiny_corpus, tmp_path):
    _, _, vocab, samples = tiny_corpus
    cfg = small_config(epochs=4)
    straight = Trainer(samples, vocab, cfg)
    straight.fit()
    path = tmp_path / "run.ckpt"
    Trainer(samples, vocab, cfg.replace(epochs=2)).fit(path)
    resumed = Trainer(samples, vocab, cfg, resume=load_checkpoint(path))
    resumed.fit()
    assert resumed.history == straight.history[2:]
    for (_, a), (_, b) in zip(resumed.params.tensors(), straight.params.tensors()):
        assert a.tobytes() == b.tobytes()


def test_resume_rejects_other_vocabulary(tiny_corpus):
    _, _, vocab, samples = tiny_corpus
    trainer = Trainer(samples, vocab, small_config(epochs=1))
    other = Vocabulary(list(reversed(vocab.codes)), list(reversed(vocab.counts)))
    with pytest.raises(CheckpointError):
        Trainer(samples, other, small_config(), resume=trainer.checkpoint())


def test_corrupt_checkpoint(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"TESA\x01\x00\x00\x00\x05\x00\x00\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_divergence_saves_last_good_state(tiny_corpus, tmp_path):
    _, _, vocab, samples = tiny_corpus
    cfg = small_config(epochs=3)
    trainer = Trainer(samples, vocab, cfg)
    trainer.run_epoch()
    trainer.params.pool_w[:] = np.nan
    path = tmp_path / "div.ckpt"
    with np.errstate(invalid="ignore"), pytest.raises(TrainingDivergedError, match="epoch 2"):
        trainer.fit(path)
    assert load_checkpoint(path).epoch == 1


def test_batch_loss_matches_forward_backward():
    params, batch = random_case(np.random.default_rng(13), Mode.TESA, length=4)
    assert batch_loss(params, *batch) == pytest.approx(forward_backward(params, *batch)[0], abs=1e-12)
