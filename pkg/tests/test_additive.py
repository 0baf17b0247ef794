import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ggnam.additive import (
    CoverageError,
    GgnamModel,
    Hyperparams,
    PartitionError,
    PartitionSpec,
    TermLookupError,
    canonical_sum,
    export_shapes_csv,
    fit,
    init_model,
    make_partition,
    model_gradient_check,
    preset_partition,
    shape_function,
)
from ggnam.data import Scaler, TabularDataset
from ggnam.nn import LayerSpec, ShapeError, init_network

FAST = Hyperparams(hidden_widths=(4,), learning_rate=1e-2, max_epochs=40, patience=10, batch_size=64)


def _zero_subnets(model):
    for net in model.subnets:
        for a in (*net.weights, *net.biases):
            a[:] = 0.0
    return model


def _random_model(rng, partition, task="regression", hp=None):
    hp = hp or Hyperparams(hidden_widths=(3,), activation="logistic", l2_lambda=1e-3)
    model = init_model(partition, task, hp, int(rng.integers(1 << 30)))
    model.alpha = float(rng.normal())
    model.beta = rng.normal(size=model.beta.size)
    for net in model.subnets:
        for b in net.biases:
            b[:] = rng.normal(size=b.size) * 0.5
    model.scaler = Scaler(rng.normal(size=partition.p), rng.uniform(0.5, 2.0, partition.p),
                          np.zeros(partition.p, dtype=bool))
    return model


# --- partitions -------------------------------------------------------------

def test_taiwan_architecture():
    part = make_partition(23, [2, 3, 4, 5, *range(7, 24)], [[1], [6]])
    assert list(part.nonlinear) == [1, 6]
    assert len(part.linear) == 21


def test_bankruptcy_architecture():
    linear = [i for i in range(1, 35) if i not in (17, 19, 22)]
    part = make_partition(34, linear, [[19], [17, 22]])
    assert part.groups == ((19,), (17, 22))


def test_overlapping_groups_need_flag():
    p, i, j = 5, 2, 4
    groups = [[v for v in range(1, p + 1) if v != i], [v for v in range(1, p + 1) if v != j]]
    with pytest.raises(PartitionError) as exc:
        make_partition(p, [], groups)
    assert "[1, 3, 5]" in str(exc.value)
    part = make_partition(p, [], groups, allow_overlap=True)
    assert part.allow_overlap


def test_overlap_names_offending_indices():
    with pytest.raises(PartitionError, match=r"\[2\]"):
        make_partition(3, [1, 2], [[2, 3]])


def test_overlap_flag_still_forbids_linear_group_sharing():
    with pytest.raises(PartitionError):
        make_partition(3, [1], [[1, 2], [3]], allow_overlap=True)


def test_uncovered_index():
    with pytest.raises(CoverageError, match=r"\[3\]"):
        make_partition(3, [1], [[2]])


@pytest.mark.parametrize("linear,groups", [([0], [[1, 2]]), ([4], [[1, 2, 3]]), ([1], [[], [2, 3]])])
def test_invalid_partitions(linear, groups):
    with pytest.raises(PartitionError):
        make_partition(3, linear, groups)


def test_presets():
    assert preset_partition("nam", 4).groups == ((1,), (2,), (3,), (4,))
    lalr = preset_partition("lalr", 3)
    assert lalr.linear == (1, 2, 3) and lalr.groups == ()
    fcnn = preset_partition("fcnn", 23)
    assert fcnn.groups == (tuple(range(1, 24)),) and fcnn.linear == ()


def test_partition_dict_roundtrip():
    part = make_partition(4, [1], [[2, 3], [3, 4]], allow_overlap=True)
    assert PartitionSpec.from_dict(part.to_dict()) == part


# --- prediction -------------------------------------------------------------

def test_predict_linear_arithmetic():
    model = init_model(make_partition(2, [1, 2], []), "regression", Hyperparams(), 0)
    model.beta = np.array([1.0, -2.0])
    assert model.predict([3.0, 1.0]) == (1.0, 1.0)


def test_predict_mixed_zeroed_subnets():
    part = make_partition(4, [1], [[2], [3, 4]])
    model = _zero_subnets(init_model(part, "regression", Hyperparams(), 0, alpha=2.0))
    model.beta = np.array([0.5])
    pre, _ = model.predict([4.0, 9.0, -3.0, 7.0])
    assert pre == 4.0


def test_logistic_link_at_zero():
    model = init_model(make_partition(1, [1], []), "binary_classification", Hyperparams(), 0)
    assert model.predict([5.0]) == (0.0, 0.5)


def test_predict_shape_error():
    model = init_model(preset_partition("nam", 3), "regression", Hyperparams(), 0)
    with pytest.raises(ShapeError):
        model.predict([1.0, 2.0])


def test_predict_matches_formula(rng):
    part = make_partition(5, [1, 4], [[2], [3, 5]])
    model = _random_model(rng, part)
    x = rng.normal(size=5)
    z = model.scaler.transform(x[None, :])[0]
    expected = model.alpha + model.beta[0] * z[0] + model.beta[1] * z[3]
    expected += model.subnets[0].forward_batch(z[None, [1]])[0]
    expected += model.subnets[1].forward_batch(z[None, [2, 4]])[0]
    assert model.predict(x)[0] == pytest.approx(expected, abs=1e-12)


# --- contributions ----------------------------------------------------------

def test_contributions_sum_to_prediction(rng):
    model = _random_model(rng, make_partition(5, [1, 4], [[2], [3, 5]]))
    for _ in range(20):
        x = rng.normal(size=5)
        terms = model.contributions(x)
        assert list(terms) == ["intercept", "x1", "x4", "f(x2)", "f(x3,x5)"]
        assert canonical_sum(np.array([list(terms.values())]))[0] == model.predict(x)[0]
        assert abs(sum(terms.values()) - model.predict(x)[0]) < 1e-12


def test_contributions_zero_model():
    model = _zero_subnets(init_model(preset_partition("nam", 3), "regression", Hyperparams(), 0))
    assert all(v == 0.0 for v in model.contributions([1.0, 2.0, 3.0]).values())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(-3, 3))
def test_structural_additivity(seed, a, b):
    rng = np.random.default_rng(seed)
    model = _random_model(rng, make_partition(5, [1], [[2, 3], [4], [5]]))
    x = rng.normal(size=5)
    x2 = x.copy()
    x2[1], x2[2] = a, b
    c1, c2 = model.contributions(x), model.contributions(x2)
    changed = {k for k in c1 if c1[k] != c2[k]}
    assert changed <= {"f(x2,x3)"}
    delta = model.predict(x2)[0] - model.predict(x)[0]
    assert delta == pytest.approx(c2["f(x2,x3)"] - c1["f(x2,x3)"], abs=1e-12)


# --- presets as model families ---------------------------------------------

def test_fcnn_param_count_is_dense_net_plus_intercept():
    hp = Hyperparams(hidden_widths=(5,))
    model = init_model(preset_partition("fcnn", 23), "binary_classification", hp, 0)
    assert model.n_params == init_network(LayerSpec(23, (5,))).n_params + 1
    assert model.beta.size == 0 and len(model.subnets) == 1


def test_lalr_is_affine(rng):
    model = _random_model(rng, preset_partition("lalr", 4))
    x = rng.normal(size=4)
    for k in range(4):
        e = np.eye(4)[k] * 0.7
        second = model.predict(x + e)[0] - 2 * model.predict(x)[0] + model.predict(x - e)[0]
        assert abs(second) < 1e-9


def test_monotone_transform_preserves_ranking(rng):
    model = _random_model(rng, make_partition(3, [1], [[2, 3]]), task="binary_classification")
    X = rng.normal(size=(50, 3))
    p = model.predict_batch(X)
    assert np.array_equal(np.argsort(p, kind="stable"), np.argsort(np.log(p) * 3 + 1, kind="stable"))


# --- serialization ----------------------------------------------------------

def test_json_roundtrip_bit_exact(rng, tmp_path):
    model = _random_model(rng, make_partition(5, [1, 4], [[2], [3, 5]]), task="binary_classification")
    probe = rng.normal(size=(100, 5))
    path = tmp_path / "m.json"
    model.save(path)
    back = GgnamModel.load(path)
    assert np.array_equal(back.predict_batch(probe), model.predict_batch(probe))
    assert back.partition == model.partition and back.link == model.link


# --- gradients ---------------------------------------------------------------

@pytest.mark.parametrize("task", ["regression", "binary_classification"])
def test_model_gradient_check(kernel_backend, rng, task):
    model = _random_model(rng, make_partition(5, [1, 4], [[2], [3, 5]]), task=task)
    X = rng.normal(size=(10, 5))
    y = (rng.random(10) < 0.5).astype(float) if task != "regression" else rng.normal(size=10)
    assert model_gradient_check(model, X, y) < 1e-4


# --- fitting ----------------------------------------------------------------

def _regression_data(f, n=600, p=2, seed=0, noise=0.01):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = f(X) + rng.normal(scale=noise, size=n)
    names = [f"x{i}" for i in range(1, p + 1)]
    cut = int(0.8 * n)
    return (TabularDataset(X[:cut], y[:cut], names, "regression"),
            TabularDataset(X[cut:], y[cut:], names, "regression"))


def test_lalr_recovers_ols_coefficients():
    train, val = _regression_data(lambda X: 2 * X[:, 0] - X[:, 1])
    hp = Hyperparams(learning_rate=1e-2, max_epochs=300, patience=25)
    # identity scaler so beta is in raw units
    model, _ = fit(preset_partition("lalr", 2), train, val, hyperparams=hp, seed=0, scaler=Scaler.identity(2))
    assert np.allclose(model.beta, [2.0, -1.0], atol=0.05)


def test_fcnn_structure_after_fit():
    train, val = _regression_data(lambda X: X[:, 0] * X[:, 1])
    model, hist = fit(preset_partition("fcnn", 2), train, val, hyperparams=FAST, seed=1)
    assert len(model.subnets) == 1 and model.beta.size == 0
    assert hist.best_val_loss <= hist.val_loss[0]


def test_fit_deterministic_per_seed():
    train, val = _regression_data(lambda X: np.sin(X[:, 0]) + X[:, 1])
    part = make_partition(2, [2], [[1]])
    a, ha = fit(part, train, val, hyperparams=FAST, seed=3)
    b, hb = fit(part, train, val, hyperparams=FAST, seed=3)
    assert ha.val_loss == hb.val_loss
    assert a.to_json() == b.to_json()


def test_fit_rejects_width_mismatch():
    train, val = _regression_data(lambda X: X[:, 0])
    with pytest.raises(ShapeError):
        fit(preset_partition("nam", 3), train, val, hyperparams=FAST)


def test_task_determines_link_and_intercept():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 2))
    y = (rng.random(200) < 0.2).astype(float)
    ds = TabularDataset(X, y, ["a", "b"], "binary_classification")
    hp = Hyperparams(max_epochs=0)
    model, _ = fit(preset_partition("lalr", 2), ds, ds, hyperparams=hp)
    assert model.link == "logistic"
    assert model.predict([0.0, 0.0])[1] == pytest.approx(y.mean())


def test_default_hyperparams_by_task():
    assert Hyperparams.for_task("binary_classification").hidden_widths == (5,)
    reg = Hyperparams.for_task("regression")
    assert reg.hidden_widths == (16, 8) and reg.activation == "relu" and reg.l2_lambda == 2e-4


# --- shape functions --------------------------------------------------------

def test_shape_zeroed_subnet():
    model = _zero_subnets(init_model(preset_partition("nam", 2), "regression", Hyperparams(), 0))
    assert np.array_equal(shape_function(model, 1, np.linspace(-1, 1, 5)), np.zeros(5))


def test_shape_linear_feature():
    model = init_model(make_partition(2, [1], [[2]]), "regression", Hyperparams(), 0)
    model.beta = np.array([0.5])
    model.reference = np.array([0.0, 0.0])
    assert np.allclose(shape_function(model, 1, [0.0, 1.0, 2.0]), [0.0, 0.5, 1.0])


def test_shape_reference_is_nearest_grid_point_to_median(rng):
    model = _random_model(rng, preset_partition("nam", 2))
    model.reference = np.array([0.26, 0.0])
    values = shape_function(model, 1, [0.0, 0.25, 0.5, 0.75])
    assert values[1] == 0.0


def test_shape_of_group_is_a_grid(rng):
    model = _random_model(rng, make_partition(3, [1], [[2, 3]]))
    out = shape_function(model, (2, 3), [np.linspace(-1, 1, 4), np.linspace(-1, 1, 6)])
    assert out.shape == (4, 6)


def test_shape_lookup_errors(rng):
    model = _random_model(rng, make_partition(3, [1], [[2, 3]]))
    with pytest.raises(TermLookupError):
        shape_function(model, 2, [0.0])
    with pytest.raises(TermLookupError):
        shape_function(model, (1, 2), [[0.0], [0.0]])
    with pytest.raises(TermLookupError):
        shape_function(model, 7, [0.0])


def test_export_shapes_csv(rng, tmp_path):
    model = _random_model(rng, make_partition(3, [1], [[2], [3]]))
    model.lower, model.upper = np.full(3, -1.5), np.full(3, 1.5)
    path = tmp_path / "shapes.csv"
    export_shapes_csv(model, path, n_grid=7)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["feature", "grid_value", "contribution"]
    assert len(rows) == 1 + 2 * 7
    assert {r[0] for r in rows[1:]} == {"x2", "x3"}
