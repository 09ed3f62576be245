import numpy as np
import pytest
from pytest import raises

from hgc import gcn, partition, trainer
from hgc.graph import SuperpixelGraph
from hgc.hsi_io import RunConfig
from hgc.partition import PartitionAssignment
from hgc.superpixel import NodeLabels
from hgc.trainer import TrainHistory

from .test_constants import *
from .test_partition import graph_from_edges


@pytest.fixture
def triangles():
    sp_graph = graph_from_edges(6, triangle_edges)
    X = np.array(
        [[1.0, 0.0], [0.9, 0.1], [1.1, 0.0], [0.0, 1.0], [0.1, 0.9], [0.0, 1.1]]
    )
    return SuperpixelGraph(X=X, A=sp_graph.A, o=1, k=1, node_weights=np.ones(6))


@pytest.fixture
def node_labels():
    return NodeLabels(
        train=np.array([1, 0, 0, 2, 0, 0]),
        val=np.array([0, 1, 0, 0, 2, 0]),
        test=np.array([0, 0, 1, 0, 0, 2]),
        impure=np.zeros(6, dtype=bool),
    )


def small_config(**overrides):
    values = dict(epochs=30, hidden_units=8, conv_dim=8, learning_rate=0.05)
    values.update(overrides)
    return RunConfig(**values)


def subgraphs_for(sp_graph, node_labels, part):
    part = np.asarray(part)
    assign = PartitionAssignment(part=part, c=int(part.max()) + 1)
    return partition.induce_subgraphs(sp_graph, assign, node_labels)


def test_training_seeds():
    init_seed, sample_seed = trainer.training_seeds(0)
    assert init_seed != sample_seed
    assert trainer.training_seeds(0) == (init_seed, sample_seed)
    assert trainer.training_seeds(1) != (init_seed, sample_seed)


def test_infer_num_classes(triangles, node_labels):
    subgraphs = subgraphs_for(triangles, node_labels, [0, 0, 0, 1, 1, 1])
    assert trainer.infer_num_classes(subgraphs) == 2
    bare = subgraphs_for(triangles, None, [0, 0, 0, 1, 1, 1])
    assert trainer.infer_num_classes(bare) == 0


def test_evaluate_epoch(triangles, node_labels):
    subgraphs = subgraphs_for(triangles, node_labels, [0] * 6)
    model = gcn.init_model((2, 3, 3, 2), seed=0)
    accuracy = trainer.evaluate_epoch(model, subgraphs, "val")
    assert accuracy in (0.0, 0.5, 1.0)
    with raises(ValueError):
        trainer.evaluate_epoch(model, subgraphs, "test")

    no_val = NodeLabels(
        train=node_labels.train,
        val=np.zeros(6, dtype=np.int64),
        test=node_labels.test,
        impure=node_labels.impure,
    )
    assert (
        trainer.evaluate_epoch(model, subgraphs_for(triangles, no_val, [0] * 6), "val")
        is None
    )


def test_train_history_and_determinism(triangles, node_labels):
    subgraphs = subgraphs_for(triangles, node_labels, [0, 0, 0, 1, 1, 1])
    config = small_config()
    model, _, history = trainer.train(subgraphs, config, seed=4)
    assert history.epochs == 30
    assert len(history.train_accuracy) == len(history.val_accuracy) == 30
    assert 0 <= history.best_epoch < 30
    assert history.loss[-1] < history.loss[0]
    assert model.dims == (2, 8, 8, 2)
    best = history.val_accuracy[history.best_epoch]
    assert best == max(history.val_accuracy)
    # The earliest epoch wins ties.
    assert history.val_accuracy.index(best) == history.best_epoch

    again, _, again_history = trainer.train(subgraphs, config, seed=4)
    assert again_history.loss == history.loss
    for name in gcn.PARAM_NAMES:
        assert np.array_equal(getattr(again, name), getattr(model, name))

    _, _, other_history = trainer.train(subgraphs, config, seed=5)
    assert other_history.loss != history.loss


def test_train_returns_best_epoch_adam_state(triangles, node_labels):
    subgraphs = subgraphs_for(triangles, node_labels, [0, 0, 0, 1, 1, 1])
    model, state, history = trainer.train(subgraphs, small_config(), seed=4)
    assert state.t == (history.best_epoch + 1) * 5 * len(subgraphs)
    for name in gcn.PARAM_NAMES:
        assert state.m[name].shape == getattr(model, name).shape
        assert np.any(state.v[name] != 0)


def test_single_cluster_is_full_graph_training(triangles, node_labels):
    subgraphs = subgraphs_for(triangles, node_labels, [0] * 6)
    config = small_config(epochs=3)
    _, _, history = trainer.train(subgraphs, config, seed=2, num_classes=2)

    # The same updates applied by hand to the whole graph.
    init_seed, _ = trainer.training_seeds(2)
    model = gcn.init_model((2, 8, 8, 2), init_seed)
    state = gcn.AdamState.for_model(model)
    whole = subgraphs[0]
    expected = []
    for _ in range(3):
        losses = []
        for _ in range(5):
            cache = gcn.forward(model, whole.A_norm, whole.X)
            losses.append(gcn.loss(cache.probs, whole.labels.train))
            grads = gcn.backward(
                cache, model, whole.A_norm, whole.X, whole.labels.train
            )
            gcn.adam_step(model, grads, state, config.learning_rate)
        expected.append(float(np.mean(losses)))
    assert history.loss == expected


def test_train_skips_unlabeled_subgraphs(triangles, node_labels):
    # Cluster 1 holds no train-labeled node.
    subgraphs = subgraphs_for(triangles, node_labels, [0, 1, 1, 0, 1, 1])
    assert not subgraphs[1].has_role("train")
    _, _, history = trainer.train(subgraphs, small_config(epochs=5), seed=0)
    assert history.epochs == 5
    assert all(np.isfinite(history.loss))


def test_train_without_validation_uses_train_accuracy(triangles, node_labels):
    no_val = NodeLabels(
        train=node_labels.train,
        val=np.zeros(6, dtype=np.int64),
        test=node_labels.test,
        impure=node_labels.impure,
    )
    subgraphs = subgraphs_for(triangles, no_val, [0] * 6)
    _, _, history = trainer.train(subgraphs, small_config(epochs=5), seed=0)
    assert history.val_accuracy == [None] * 5
    best = history.train_accuracy[history.best_epoch]
    assert best == max(history.train_accuracy)


def test_train_needs_train_labels(triangles, node_labels):
    empty = NodeLabels(
        train=np.zeros(6, dtype=np.int64),
        val=node_labels.val,
        test=node_labels.test,
        impure=node_labels.impure,
    )
    with raises(ValueError):
        trainer.train(subgraphs_for(triangles, empty, [0] * 6), small_config(), 0)


def test_history_csv(fs):
    history = TrainHistory(
        loss=[2.5, 1.25],
        train_accuracy=[0.5, 1.0],
        val_accuracy=[None, 0.75],
        best_epoch=1,
    )
    trainer.write_history_csv(history, "/home/history.csv")
    with open("/home/history.csv", "r") as reader:
        assert reader.read() == (
            "epoch,loss,train_acc,val_oa,best\n0,2.5,0.5,,0\n1,1.25,1.0,0.75,1\n"
        )
    loaded = trainer.read_history_csv("/home/history.csv")
    assert loaded.loss == [2.5, 1.25]
    assert loaded.val_accuracy == [None, 0.75]
    assert loaded.best_epoch == 1


def test_uniform_model_predicts_class_one(triangles, node_labels):
    subgraphs = subgraphs_for(triangles, node_labels, [0] * 6)
    flat = gcn.GcnModel(
        theta=np.zeros((2, 3)), w0=np.zeros((3, 3)), w1=np.zeros((3, 2))
    )
    assert gcn.predict(flat, subgraphs[0].A_norm, subgraphs[0].X).tolist() == [1] * 6
    # Val nodes are one of class 1 and one of class 2.
    assert trainer.evaluate_epoch(flat, subgraphs, "val") == 0.5


def test_step_count_ignores_redraws(triangles, node_labels, mocker):
    subgraphs = subgraphs_for(triangles, node_labels, [0, 1, 1, 0, 1, 1])
    spy = mocker.spy(gcn, "adam_step")
    trainer.train(subgraphs, small_config(epochs=3), seed=1)
    assert spy.call_count == 3 * 5 * 2


def test_parameters_are_shared_between_subgraphs(triangles, node_labels):
    first, second = subgraphs_for(triangles, node_labels, [0, 0, 0, 1, 1, 1])
    model = gcn.init_model((2, 8, 8, 2), seed=3)
    state = gcn.AdamState.for_model(model)

    def second_loss():
        probs = gcn.forward(model, second.A_norm, second.X).probs
        return gcn.loss(probs, second.labels.train)

    before = second_loss()
    cache = gcn.forward(model, first.A_norm, first.X)
    grads = gcn.backward(cache, model, first.A_norm, first.X, first.labels.train)
    gcn.adam_step(model, grads, state, 0.01)
    assert second_loss() != before


def test_separable_communities_are_learned():
    rng = np.random.default_rng(8)
    edges = [(i, j) for i in range(10) for j in range(i + 1, 10) if rng.random() < 0.4]
    edges += [(i + 10, j + 10) for i, j in edges]
    edges += [(i, i + 1) for i in range(9)] + [(i + 10, i + 11) for i in range(9)]
    base = graph_from_edges(20, sorted(set(edges)))
    X = rng.normal(size=(20, 3))
    X[10:] += 5.0
    sp_graph = SuperpixelGraph(X=X, A=base.A, o=1, k=1, node_weights=np.ones(20))

    train_labels = np.zeros(20, dtype=np.int64)
    val_labels = np.zeros(20, dtype=np.int64)
    train_labels[[0, 1]], train_labels[[10, 11]] = 1, 2
    val_labels[[2, 3]], val_labels[[12, 13]] = 1, 2
    labels = NodeLabels(
        train=train_labels,
        val=val_labels,
        test=np.zeros(20, dtype=np.int64),
        impure=np.zeros(20, dtype=bool),
    )
    subgraphs = subgraphs_for(sp_graph, labels, [0] * 20)
    config = RunConfig(epochs=200, hidden_units=16, conv_dim=16)
    model, _, history = trainer.train(subgraphs, config, seed=0)

    assert history.val_accuracy[history.best_epoch] == 1.0
    assert max(history.train_accuracy) == 1.0
    # The kept model is at least as good as the last epoch.
    assert history.val_accuracy[history.best_epoch] >= history.val_accuracy[-1]
    assert trainer.evaluate_epoch(model, subgraphs, "val") == 1.0
