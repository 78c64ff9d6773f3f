import numpy as np
import pytest

from genre_align.core import ConfigError, DivergenceError
from genre_align.io import FormatError, fixture_config, generate_dataset
from genre_align.losses import DaConfig
from genre_align.sampler import SamplerConfig
from genre_align.trainer import (ProjectionModel, TrainConfig, classification_loss, format_checkpoint,
                                 format_history, forward, initial_model, load_checkpoint,
                                 parse_checkpoint, save_checkpoint, train)

from conftest import central_difference, make_grid_dataset, max_rel_error

# wbda, lambda 0.9, 500 steps with library defaults on the fixture: mean DA loss, first/last 50 steps.
WBDA_500_FIRST, WBDA_500_LAST = 5.274636614260908, 0.44460893512664085
# ProjectionModel.init(4, 3, ["a", "b"], hidden=5, seed=42) on a fixed 2x4 input, generated once.
FORWARD_FIXTURE = [[-0.24962154536422998, 0.005525784658361177, 0.34109381216407075],
                   [-0.46278292474484606, 0.40530205473290687, -0.07531620166909475]]


@pytest.fixture
def tiny_cfg():
    return TrainConfig(da=DaConfig("wbda"), sampler=SamplerConfig(S=3, M=2, seed=1), steps=15,
                       hidden=5, learning_rate=0.05)


def test_identity_layer_passes_through(rng):
    X = rng.normal(size=(5, 4))
    np.testing.assert_array_equal(forward(ProjectionModel.identity(4), X), X)


def test_zero_model_outputs_zero(rng):
    m = ProjectionModel([np.zeros((2, 3))], [np.zeros(2)], np.ones((1, 2)))
    np.testing.assert_array_equal(forward(m, rng.normal(size=(4, 3))), np.zeros((4, 2)))


def test_forward_frozen_fixture():
    m = ProjectionModel.init(4, 3, ["a", "b"], hidden=5, seed=42)
    X = np.arange(8.0).reshape(2, 4) / 4 - 1
    np.testing.assert_allclose(forward(m, X), FORWARD_FIXTURE, rtol=0, atol=1e-15)
    np.testing.assert_allclose(forward(m, X[1]), FORWARD_FIXTURE[1], rtol=0, atol=1e-15)


def test_forward_dim_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        forward(ProjectionModel.identity(3), np.zeros((2, 4)))


def test_aam_zero_margin_is_scaled_cosine_ce(rng):
    E, W = rng.normal(size=(6, 4)), rng.normal(size=(3, 4))
    y = rng.integers(0, 3, size=6)
    aam = classification_loss(E, y, W, "aam_softmax", m=0.0, s=7.0)
    En = E / np.linalg.norm(E, axis=1, keepdims=True)
    Wn = W / np.linalg.norm(W, axis=1, keepdims=True)
    ce = classification_loss(7.0 * En, y, Wn, "softmax_ce")
    assert aam.value == pytest.approx(ce.value, rel=1e-12)


@pytest.mark.parametrize("kind", ["softmax_ce", "aam_softmax"])
def test_single_class_zero_loss(kind, rng):
    out = classification_loss(rng.normal(size=(4, 3)), np.zeros(4, dtype=int), rng.normal(size=(1, 3)), kind)
    assert out.value == pytest.approx(0.0, abs=1e-12)


def test_invalid_labels():
    with pytest.raises(ValueError):
        classification_loss(np.ones((2, 2)), np.array([0, 2]), np.ones((2, 2)))
    with pytest.raises(ValueError):
        classification_loss(np.ones((2, 2)), np.array([0.0, 1.0]), np.ones((2, 2)))


@pytest.mark.parametrize("kind", ["softmax_ce", "aam_softmax"])
@pytest.mark.parametrize("seed", range(20))
def test_classification_gradients(kind, seed):
    rng = np.random.default_rng(seed)
    n, C, d = 6, 4, 5
    E, W = rng.normal(size=(n, d)), rng.normal(size=(C, d))
    y = rng.integers(0, C, size=n)
    out = classification_loss(E, y, W, kind, m=0.2, s=30.0)
    numE = central_difference(lambda Z: classification_loss(Z, y, W, kind, 0.2, 30.0).value, E, step=1e-6)
    numW = central_difference(lambda Z: classification_loss(E, y, Z, kind, 0.2, 30.0).value, W, step=1e-6)
    assert max_rel_error(out.grads[0], numE) <= 1e-4
    assert max_rel_error(out.grads[1], numW) <= 1e-4


def test_model_gradients_match_finite_differences(small_ds):
    """End-to-end: parameter gradients of one training step for CE + lambda*DA."""
    from genre_align.trainer import _backward, _forward
    from genre_align.losses import da_loss
    from genre_align.sampler import sample_genre_pair

    cfg = TrainConfig(da=DaConfig("coral"), sampler=SamplerConfig(S=2, M=3), hidden=4, steps=1)
    model = initial_model(small_ds, cfg)
    batch = sample_genre_pair(small_ds, cfg.sampler, 0)
    X = batch.vectors.reshape(-1, small_ds.dim)
    labels = np.array([model.speakers.index(s) for s in batch.flat_speakers()])

    def objective(W0):
        m = model.copy()
        m.weights[0] = W0
        E, _ = _forward(m, X)
        ce = classification_loss(E, labels, m.class_weights, cfg.loss_kind, cfg.margin, cfg.scale).value
        return ce + 0.1 * da_loss(batch.with_vectors(E), cfg.da).value

    E, outs = _forward(model, X)
    ce = classification_loss(E, labels, model.class_weights, cfg.loss_kind, cfg.margin, cfg.scale)
    gE = ce.grads[0] + 0.1 * da_loss(batch.with_vectors(E), cfg.da).grad.reshape(E.shape)
    gW, _ = _backward(model, outs, gE)
    assert max_rel_error(gW[0], central_difference(objective, model.weights[0], step=1e-6)) < 1e-5


def test_zero_steps_returns_init(small_ds):
    cfg = TrainConfig(steps=0, hidden=3)
    model, history = train(small_ds, cfg)
    assert history == []
    assert model.equals(initial_model(small_ds, cfg))


@pytest.mark.parametrize("method", ["coral", "mmd", "center", "wbda"])
def test_zero_lambda_total_equals_ce(small_ds, method):
    cfg = TrainConfig(da=DaConfig(method, lam=0.0), sampler=SamplerConfig(S=2, M=2), steps=5, hidden=3)
    _, history = train(small_ds, cfg)
    assert all(h.total == h.ce for h in history)


def test_total_is_ce_plus_weighted_da(small_ds, tiny_cfg):
    _, history = train(small_ds, tiny_cfg)
    lam = tiny_cfg.da.effective_lambda
    assert all(abs(h.total - (h.ce + lam * h.da)) <= 1e-12 for h in history)
    assert [h.step for h in history] == list(range(tiny_cfg.steps))


def test_zero_learning_rate_freezes_params(tiny_cfg):
    ds = make_grid_dataset(speakers=5)
    cfg = TrainConfig(da=tiny_cfg.da, sampler=tiny_cfg.sampler, steps=10, hidden=5, learning_rate=0.0)
    model, _ = train(ds, cfg)
    assert model.equals(initial_model(ds, cfg))


def test_training_is_deterministic(tiny_cfg):
    ds = make_grid_dataset(speakers=5)
    m1, h1 = train(ds, tiny_cfg)
    m2, h2 = train(ds, tiny_cfg)
    assert m1.equals(m2)
    assert format_history(h1) == format_history(h2)
    assert format_checkpoint(m1) == format_checkpoint(m2)


def test_training_reduces_ce():
    ds = make_grid_dataset(speakers=5, utts=6, dim=4, seed=3)
    cfg = TrainConfig(sampler=SamplerConfig(S=5, M=4, mode="speaker_only"), steps=300, hidden=8,
                      loss_kind="softmax_ce", learning_rate=0.2)
    _, history = train(ds, cfg)
    assert np.mean([h.ce for h in history[-20:]]) < np.mean([h.ce for h in history[:20]])


def test_embed_dim_and_sampler_mode():
    cfg = TrainConfig(da=DaConfig("center"), sampler=SamplerConfig(S=2, M=2), embed_dim=2, hidden=0, steps=3)
    assert cfg.sampler_for_method().mode == "speaker_only"
    model, _ = train(make_grid_dataset(), cfg)
    assert model.dim == 2 and model.hidden == 0
    assert TrainConfig(da=DaConfig("mmd"), sampler=SamplerConfig(mode="speaker_only")) \
        .sampler_for_method().mode == "genre_pair"


def test_divergence_names_step():
    ds = make_grid_dataset(speakers=4, utts=3)
    cfg = TrainConfig(sampler=SamplerConfig(S=2, M=2), steps=50, learning_rate=1e308,
                      loss_kind="softmax_ce", hidden=0)
    with np.errstate(all="ignore"), pytest.raises(DivergenceError, match="step"):
        train(ds, cfg)


@pytest.mark.parametrize("kwargs,field", [({"steps": -1}, "steps"), ({"learning_rate": -0.1}, "learning_rate"),
                                          ({"loss_kind": "arcface"}, "loss_kind"),
                                          ({"scale": 0.0}, "scale"),
                                          ({"da": DaConfig("wbda"), "sampler": SamplerConfig(S=4, M=1)},
                                           "sampler")])
def test_invalid_train_config(kwargs, field):
    with pytest.raises(ConfigError) as info:
        TrainConfig(**kwargs)
    assert info.value.field == field


def test_checkpoint_roundtrip(tmp_path, tiny_cfg):
    model, _ = train(make_grid_dataset(speakers=5), tiny_cfg)
    save_checkpoint(model, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.equals(model)
    single = ProjectionModel.init(3, 2, ["x"], hidden=0, seed=1, loss_kind="softmax_ce")
    assert parse_checkpoint(format_checkpoint(single)).equals(single)


def test_checkpoint_errors():
    with pytest.raises(FormatError, match="header"):
        parse_checkpoint("")
    text = format_checkpoint(ProjectionModel.init(3, 2, ["x"], seed=1))
    with pytest.raises(FormatError):
        parse_checkpoint(text.rsplit("\n", 2)[0])


def test_history_csv(small_ds):
    _, history = train(small_ds, TrainConfig(sampler=SamplerConfig(S=2, M=2), steps=2, hidden=0))
    lines = format_history(history).splitlines()
    assert lines[0] == "step,ce,da,total" and len(lines) == 3
    assert lines[1].startswith("0,") and lines[1].split(",")[2] == "0.0"


@pytest.mark.slow
def test_wbda_fixture_da_decreases():
    ds = generate_dataset(fixture_config())
    cfg = TrainConfig(da=DaConfig("wbda"), steps=500)
    _, history = train(ds, cfg)
    first = np.mean([h.da for h in history[:50]])
    last = np.mean([h.da for h in history[-50:]])
    assert last < first
    assert first == pytest.approx(WBDA_500_FIRST, rel=1e-9)
    assert last == pytest.approx(WBDA_500_LAST, rel=1e-9)
