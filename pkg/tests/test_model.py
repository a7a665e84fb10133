import math

import numpy as np
import pytest

from ldu.model import (LDUModel, ModelOutput, ModelSpec, PlainMLP, aleatoric_score, build_model, ensemble_predict,
                       epistemic_score, forward_full, load_checkpoint, predict, save_checkpoint, softmax)
from ldu.tensor import ShapeError, Tensor


def out_with(logits=None, unc=None, emb=None):
    logits = Tensor(np.atleast_2d(logits)) if logits is not None else Tensor(np.zeros((1, 2)))
    return ModelOutput(logits, Tensor(np.atleast_2d(emb)) if emb is not None else logits,
                       Tensor(np.array(unc, dtype=float).reshape(-1, 1)) if unc is not None else None, logits)


def test_two_moons_parameter_count():
    m = build_model(ModelSpec())
    assert m.parameter_count() == (2 * 17 + 17) + (17 * 17 + 17) + 16 * 17 + (16 * 2 + 2) + (16 * 1 + 1)


def test_parameter_names_and_shapes():
    m = build_model(ModelSpec())
    shapes = {n: p.shape for n, p in m.named_parameters()}
    assert shapes["prototypes"] == (16, 17)
    assert shapes["head.weight"] == (16, 2)
    assert shapes["unc_head.weight"] == (16, 1)
    assert shapes["feature.1.weight"] == (17, 17)


def test_same_seed_same_parameters():
    a, b = build_model(ModelSpec(seed=3)), build_model(ModelSpec(seed=3))
    for (_, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)
    c = build_model(ModelSpec(seed=4))
    assert not np.array_equal(a.parameters()[0].data, c.parameters()[0].data)


def test_single_prototype_model_runs():
    out = forward_full(build_model(ModelSpec(prototypes=1)), np.zeros((3, 2)))
    assert out.embedding.shape == (3, 1)


def test_forward_shapes_single_row():
    m = build_model(ModelSpec())
    out = m.forward(np.array([[0.3, -0.2]]))
    assert out.logits.shape == (1, 2)
    assert out.embedding.shape == (1, 16)
    assert out.unc_logit.shape == (1, 1)
    assert out.latent.shape == (1, 17)


def test_duplicate_rows_give_duplicate_outputs():
    m = build_model(ModelSpec(seed=1))
    out = predict(m, np.array([[0.1, 0.2], [0.5, 0.5], [0.1, 0.2]]))
    for f in ("logits", "embedding", "unc_logit", "latent"):
        a = getattr(out, f).data
        np.testing.assert_array_equal(a[0], a[2])


def test_forward_is_deterministic_and_bounded():
    m = build_model(ModelSpec(seed=2))
    x = np.random.default_rng(0).normal(size=(20, 2))
    a, b = predict(m, x), predict(m, x)
    np.testing.assert_array_equal(a.logits.data, b.logits.data)
    assert np.all(a.embedding.data >= math.exp(-1)) and np.all(a.embedding.data <= math.e)


def test_input_width_checked():
    with pytest.raises(ShapeError):
        build_model(ModelSpec()).forward(np.zeros((2, 3)))


def test_invalid_spec():
    with pytest.raises(ValueError):
        build_model(ModelSpec(hidden=[]))
    with pytest.raises(ValueError):
        build_model(ModelSpec(dm_variant="manhattan"))


def test_l2_variant_embedding():
    m = build_model(ModelSpec(dm_variant="l2", seed=0))
    out = predict(m, np.array([[0.2, 0.1]]))
    # exp(-DM) with DM = -distance, so every entry is >= 1
    assert np.all(out.embedding.data >= 1.0)


def test_plain_mlp_has_no_uncertainty_head():
    m = build_model(ModelSpec(kind="mlp"))
    assert isinstance(m, PlainMLP) and m.bank is None
    out = m.forward(np.zeros((2, 2)))
    assert out.unc_logit is None and out.embedding.shape == (2, 17)


def test_aleatoric_examples():
    assert aleatoric_score(out_with([10.0, -10.0]))[0] < 1e-8
    assert aleatoric_score(out_with([0.0, 0.0]))[0] == 0.5
    assert abs(aleatoric_score(out_with([1.0, 0.0]))[0] - (1 - math.e / (math.e + 1))) < 1e-15


def test_aleatoric_regression_uses_unc_head():
    assert aleatoric_score(out_with(unc=[0.0]), "regression")[0] == 0.5
    with pytest.raises(ValueError):
        aleatoric_score(out_with(), "regression")


def test_epistemic_examples():
    assert epistemic_score(out_with(unc=[0.0]))[0] == 0.5
    # exact prototype match with m = 1: embedding e^-1, score e - e^-1
    m = build_model(ModelSpec(prototypes=1, seed=0))
    p = m.bank.prototypes.data[0]
    out = ModelOutput(Tensor(np.zeros((1, 2))), Tensor([[math.exp(-1)]]), None, Tensor(p[None]))
    assert abs(epistemic_score(out, "max_embed")[0] - (math.e - math.exp(-1))) < 1e-15
    with pytest.raises(ValueError):
        epistemic_score(out, "entropy")


def test_score_ranges_on_random_batch():
    m = build_model(ModelSpec(outputs=3, seed=5))
    out = predict(m, np.random.default_rng(1).normal(size=(100, 2)) * 5)
    e = epistemic_score(out)
    assert np.all((e > 0) & (e < 1))
    a = aleatoric_score(out)
    assert np.all((a >= 0) & (a <= 1 - 1 / 3 + 1e-15))


def test_argmax_invariant_to_logit_shift():
    logits = np.random.default_rng(2).normal(size=(30, 4))
    np.testing.assert_array_equal(softmax(logits).argmax(1), softmax(logits + 7.5).argmax(1))


def test_ensemble_single_and_pair():
    m = build_model(ModelSpec(seed=0))
    x = np.random.default_rng(3).normal(size=(5, 2))
    np.testing.assert_allclose(ensemble_predict([m], x), softmax(predict(m, x).logits.data))

    class Fixed:
        def __init__(self, p):
            self.p = p

        def forward(self, x):
            return out_with(np.log(np.tile(self.p, (len(x), 1))))

    a, b = Fixed(np.array([1.0, 1e-300])), Fixed(np.array([1e-300, 1.0]))
    np.testing.assert_allclose(ensemble_predict([a, b], np.zeros((1, 2))), [[0.5, 0.5]])
    with pytest.raises(ValueError):
        ensemble_predict([], x)


def test_ensemble_of_three_matches_hand_average():
    x = np.random.default_rng(4).normal(size=(6, 2))
    models = [build_model(ModelSpec(kind="mlp", seed=s)) for s in range(3)]
    probs = [softmax(predict(m, x).logits.data) for m in models]
    np.testing.assert_allclose(ensemble_predict(models, x), (probs[0] + probs[1] + probs[2]) / 3, atol=1e-15)


def test_ensemble_width_mismatch():
    x = np.zeros((2, 2))
    with pytest.raises(ShapeError):
        ensemble_predict([build_model(ModelSpec(outputs=2)), build_model(ModelSpec(outputs=3))], x)


@pytest.mark.parametrize("kind", ["ldu", "mlp"])
def test_checkpoint_round_trip(tmp_path, kind):
    m = build_model(ModelSpec(kind=kind, seed=9, hidden=[5, 4], prototypes=3))
    path = save_checkpoint(m, tmp_path / "ck.json")
    back = load_checkpoint(path)
    assert back.spec == m.spec
    for (n, p), (k, q) in zip(m.named_parameters(), back.named_parameters()):
        assert n == k
        np.testing.assert_array_equal(p.data, q.data)
    # rewriting a loaded model yields the same bytes
    assert save_checkpoint(back, tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError, match="not an LDU checkpoint"):
        load_checkpoint(p)


def test_ldu_model_type():
    assert isinstance(build_model(ModelSpec()), LDUModel)
