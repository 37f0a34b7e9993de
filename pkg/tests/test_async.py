import numpy as np
import pytest

from parsgd import async_engine, glm
from parsgd.async_engine import (
    AccessPath,
    ExecutionPlan,
    PlanError,
    Replication,
    SharedModel,
    merge_changed,
    merge_models,
    offset_positions,
    replica_scope,
    update_with_offset,
)
from parsgd.dataset import Layout, convert_layout
from parsgd.fixtures import dense_fixture
from parsgd.glm import Hyperparams

from .conftest import algorithm3, random_sparse

TABLE_PLANS = [
    "col-rr + block + no-rep",
    "row-rr + kernel + rep-10",
    "row-ch + thread + no-rep",
    "col-ch + kernel + rep-2",
    "row-rr + example + no-rep",
]


@pytest.mark.parametrize("text", TABLE_PLANS)
def test_plan_strings_parse_and_relabel(text):
    plan = ExecutionPlan.parse(text)
    assert plan.label == text
    assert ExecutionPlan.parse(plan.label) == plan


def test_colon_syntax():
    plan = ExecutionPlan.parse("row-rr:kernel:10", workers=4)
    assert plan == ExecutionPlan(AccessPath.ROW_RR, Replication.KERNEL, 10, 4)
    assert ExecutionPlan.parse("col-ch:thread").k == 0


@pytest.mark.parametrize("text", ["row-rr", "row:kernel:0", "row-rr:global:0",
                                  "row-rr:kernel:x", "a:b:c:d"])
def test_bad_plan_strings(text):
    with pytest.raises(PlanError):
        ExecutionPlan.parse(text)


def test_plan_validation():
    with pytest.raises(PlanError):
        ExecutionPlan(workers=0)
    with pytest.raises(PlanError):
        ExecutionPlan(k=-1)
    with pytest.raises(PlanError):
        ExecutionPlan(merge_period_epochs=0)
    dense = dense_fixture(n=10, d=3)
    with pytest.raises(PlanError):
        ExecutionPlan.parse("col-rr:kernel").validate_for(dense)
    with pytest.raises(PlanError):
        ExecutionPlan.parse("row-rr:example").validate_for(dense)
    assert ExecutionPlan.parse("col-rr:kernel").prepare(dense).layout is Layout.DENSE_COL


def test_layout_for_paths(rng):
    _, sp = random_sparse(rng, 5, 4)
    assert ExecutionPlan.parse("col-ch:kernel").layout_for(sp) is Layout.PADDED
    assert ExecutionPlan.parse("row-ch:kernel").layout_for(sp) is Layout.CSR


def test_replica_scopes():
    plan = ExecutionPlan(replication="block", workers=70, group_size=32)
    scope = replica_scope(plan)
    assert scope.n_replicas == 3 and scope.model_of_worker[:33] == (0,) * 32 + (1,)
    assert replica_scope(ExecutionPlan(replication="thread", workers=3)).n_replicas == 3
    assert replica_scope(ExecutionPlan(workers=3)).model_of_worker == (0, 0, 0)
    assert replica_scope(ExecutionPlan(replication="example")).n_replicas is None


def test_offset_positions_rotate():
    assert offset_positions(4, 0) == [0, 1, 2, 3]
    assert offset_positions(4, 6) == [2, 3, 0, 1]
    assert offset_positions(0, 3) == []


@pytest.mark.parametrize("s", [32, 33, 100])
def test_offsets_give_distinct_coordinates_per_step(s):
    # enumeration oracle: worker t touches (t + step) mod s at each step
    W = 32
    for step in range(s):
        cols = [offset_positions(s, t)[step] for t in range(W)]
        assert cols == [(t + step) % s for t in range(W)]
        assert len(set(cols)) == W


def test_update_with_offset_applies_every_coordinate():
    w = SharedModel(np.zeros(5))
    order = update_with_offset(w, (np.array([0, 2, 4]), np.array([1.0, 2.0, 3.0])), 0.5, 1)
    assert order == [2, 4, 0]
    assert w.snapshot().tolist() == [-0.5, 0.0, -1.0, 0.0, -1.5]


def test_merge_models_writes_back():
    a, b = np.array([1.0, 3.0]), np.array([3.0, 5.0])
    out = merge_models([a, b])
    assert out.tolist() == [2.0, 4.0] and a.tolist() == [2.0, 4.0] and b.tolist() == [2.0, 4.0]
    c, d = np.array([0.0]), np.array([4.0])
    assert merge_models([c, d], weights=[3, 1]).tolist() == [1.0]
    with pytest.raises(ValueError):
        merge_models([c, d], weights=[0, 0])


def test_merge_changed_keeps_untouched_coordinates():
    base = np.array([1.0, 1.0, 1.0])
    out = merge_changed(base, [np.array([3.0, 1.0, 1.0]), np.array([5.0, 2.0, 1.0])])
    assert out.tolist() == [4.0, 2.0, 1.0]


DENSE = dense_fixture(n=96, d=7, seed=5)
SPARSE_X, SPARSE = random_sparse(np.random.default_rng(1), 96, 12, 0.4)


def _plans_for(ds):
    paths = list(AccessPath)
    reps = [Replication.KERNEL, Replication.BLOCK, Replication.THREAD]
    if not ds.layout.is_dense:
        reps.append(Replication.EXAMPLE)
    return [ExecutionPlan(p, r, 0, 1, circular_offsets=o) for p in paths for r in reps
            for o in (False, True)]


@pytest.mark.parametrize("ds", [DENSE, SPARSE], ids=["dense", "sparse"])
@pytest.mark.parametrize("task", ["lr", "svm"])
def test_single_worker_is_algorithm3(backend, ds, task):
    hyper = Hyperparams(0.3, 2, task)
    ref = algorithm3(task, ds, np.zeros(ds.n_features), 0.3)
    ref = algorithm3(task, ds, ref, 0.3)
    for plan in _plans_for(ds):
        w, trace = async_engine.hogwild_train(task, plan.prepare(ds), hyper, plan)
        assert np.array_equal(w, ref), plan.label
        assert trace.work == [ds.n_examples] * 2


def test_thread_replicas_equal_two_sequential_halves_merged(backend):
    plan = ExecutionPlan("row-ch", "thread", 0, 2)
    w, _ = async_engine.hogwild_train("lr", SPARSE, Hyperparams(0.2, 1), plan)
    half = SPARSE.n_examples // 2
    a = algorithm3("lr", SPARSE, np.zeros(12), 0.2, range(half))
    b = algorithm3("lr", SPARSE, np.zeros(12), 0.2, range(half, SPARSE.n_examples))
    assert np.array_equal(w, merge_changed(np.zeros(12), [a, b]))


@pytest.mark.parametrize("k", [0, 2, 5])
@pytest.mark.parametrize("path", ["row-rr", "row-ch"])
def test_work_accounting(k, path):
    plan = ExecutionPlan(path, "kernel", k, 4)
    _, trace = async_engine.hogwild_train("lr", DENSE, Hyperparams(0.05, 3), plan)
    assert trace.work == [DENSE.n_examples + 4 * k] * 3


def test_multi_worker_hogwild_reduces_loss():
    plan = ExecutionPlan("row-rr", "kernel", 0, 8)
    ds = dense_fixture(n=2000, d=20, seed=2)
    _, trace = async_engine.hogwild_train("lr", ds, Hyperparams(0.05, 5), plan)
    assert trace.losses[-1] < 0.8 * trace.initial_loss


def test_shuffle_uses_seeded_permutation():
    plan = ExecutionPlan("row-ch", "kernel", 0, 1)
    a, _ = async_engine.hogwild_train("lr", DENSE, Hyperparams(0.1, 2), plan, seed=4,
                                      shuffle=True)
    b, _ = async_engine.hogwild_train("lr", DENSE, Hyperparams(0.1, 2), plan, seed=4,
                                      shuffle=True)
    assert np.array_equal(a, b)


def test_numa_dual_never_merging_runs_two_independent_instances():
    plan = ExecutionPlan("row-ch", "kernel", 0, 1, merge_period_epochs=None)
    hyper = Hyperparams(0.1, 2)
    w, _ = async_engine.numa_dual_train("lr", DENSE, hyper, plan, seed=0)
    a, _ = async_engine.hogwild_train("lr", DENSE, hyper, plan, seed=0, shuffle=True)
    b, _ = async_engine.hogwild_train("lr", DENSE, hyper, plan, seed=1, shuffle=True)
    np.testing.assert_array_equal(w, (a + b) / 2)


def test_numa_dual_merges_each_period():
    plan = ExecutionPlan("row-ch", "kernel", 0, 1, merge_period_epochs=1)
    hyper1 = Hyperparams(0.1, 1)
    w, _ = async_engine.numa_dual_train("lr", DENSE, hyper1, plan, seed=0)
    a, _ = async_engine.hogwild_train("lr", DENSE, hyper1, plan, seed=0, shuffle=True)
    b, _ = async_engine.hogwild_train("lr", DENSE, hyper1, plan, seed=1, shuffle=True)
    np.testing.assert_array_equal(w, merge_models([a, b]))
    _, trace = async_engine.numa_dual_train("lr", DENSE, Hyperparams(0.1, 4), plan)
    assert trace.losses[-1] < trace.initial_loss
    assert trace.work == [2 * DENSE.n_examples] * 4


def test_numa_dual_on_column_layout(rng):
    ds = convert_layout(SPARSE, Layout.PADDED)
    plan = ExecutionPlan("col-rr", "block", 0, 4, group_size=2)
    _, trace = async_engine.numa_dual_train("svm", ds, Hyperparams(0.05, 2), plan)
    assert len(trace) == 2


def test_word_atomicity(backend):
    sweeps = 200 if backend.BACKEND == "cython" else 3
    assert async_engine.check_word_atomicity(d=2048, writers=3, sweeps=sweeps,
                                             backend=backend) == 0


def test_divergence_is_reported():
    plan = ExecutionPlan(workers=1)
    with pytest.raises(glm.DivergenceError):
        async_engine.hogwild_train("svm", DENSE, Hyperparams(1e308, 3), plan)
