import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snowflake import metrics as M
from snowflake.assignment import ConvergenceError, solve_auction, solve_exact, euclidean_cost
from snowflake.tensor import Parameter, grad_check

from . import oracles

O = [0.0, 0.0, 0.0]


def test_chamfer_l2_examples():
    x = np.random.default_rng(0).uniform(-1, 1, (7, 3))
    assert M.chamfer_l2(x, x) == 0.0
    assert M.chamfer_l2([O], [[3, 4, 0]]) == pytest.approx(10.0)
    assert M.chamfer_l2([O, [1, 0, 0]], [O]) == pytest.approx(1.0)
    assert M.chamfer_l2([O], [[3, 4, 0]], squared=True) == pytest.approx(50.0)
    assert M.chamfer_l2([O, [1, 0, 0]], [O], reduction="mean") == pytest.approx(0.5)
    with pytest.raises(ValueError):
        M.chamfer_l2(np.zeros((0, 3)), [O])


def test_chamfer_l1_examples():
    rng = np.random.default_rng(1)
    x, y = rng.uniform(-1, 1, (5, 3)), rng.uniform(-1, 1, (8, 3))
    assert M.chamfer_l1(x, x) == 0.0
    assert M.chamfer_l1([O], [[3, 4, 0]]) == pytest.approx(5.0)
    assert M.chamfer_l1(x, y) == pytest.approx(M.chamfer_l1(y, x), abs=1e-15)


def test_emd_examples():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (6, 3))
    assert M.emd(x, x)[0] == 0.0
    assert M.emd(x, x[rng.permutation(6)])[0] == 0.0
    value, match = M.emd([O, [1, 0, 0]], [O, [2, 0, 0]])
    assert value == pytest.approx(0.5)
    assert match.cost == pytest.approx(1.0)
    assert M.emd([O, [1, 0, 0]], [O, [2, 0, 0]], reduction="sum")[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        M.emd(x, x[:5])


def test_partial_matching_examples():
    y = np.random.default_rng(3).uniform(-1, 1, (6, 3))
    assert M.partial_matching(y[:3], y) == 0.0
    assert M.partial_matching([[1, 0, 0]], [O]) == pytest.approx(1.0)
    assert M.partial_matching([O], [O, [5, 0, 0]]) == 0.0
    assert M.partial_matching([O, [5, 0, 0]], [O]) == pytest.approx(5.0)


def test_completion_loss_examples():
    rng = np.random.default_rng(4)
    gt = rng.uniform(-1, 1, (64, 3))
    sizes = (8, 16, 32, 64)
    preds = [M.downsample(gt, n) for n in sizes]
    assert M.completion_loss(preds, gt) == 0.0
    noisy = [p + rng.normal(0, 0.05, p.shape) for p in preds]
    terms = [M.chamfer_l1(p, M.downsample(gt, len(p))) for p in noisy]
    assert M.completion_loss(noisy, gt) == pytest.approx(sum(terms), rel=1e-14)
    with pytest.raises(ValueError):
        M.completion_loss([gt], gt[:10])


def test_completion_loss_known_terms_sum_to_ten():
    # single-point predictions against a single-point ground truth at distances 1..4
    gt = np.array([O])
    preds = [np.array([[d, 0.0, 0.0]]) for d in (1.0, 2.0, 3.0, 4.0)]
    assert M.completion_loss(preds, gt, base="cd_l1") == pytest.approx(10.0)


def test_total_loss():
    assert M.total_loss(2.0, 3.0, 0.0) == 2.0
    assert M.total_loss(2.0, 3.0) == 5.0
    assert M.total_loss(2.0, 3.0, 0.5) == 3.5


def test_f_score():
    x = np.random.default_rng(5).uniform(-1, 1, (10, 3))
    assert M.f_score(x, x, 0.01) == 1.0
    assert M.f_score(x, x + 10, 1.0) == 0.0
    assert M.precision_recall([O, [10, 0, 0]], [O], 1.0) == (0.5, 1.0)
    assert M.f_score([O, [10, 0, 0]], [O], 1.0) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        M.f_score(x, x, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_f_score_swaps_precision_and_recall(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-1, 1, (9, 3)), rng.uniform(-1, 1, (6, 3))
    p, r = M.precision_recall(a, b, 0.4)
    assert M.precision_recall(b, a, 0.4) == (r, p)
    assert M.f_score(a, b, 0.4) == pytest.approx(M.f_score(b, a, 0.4), abs=1e-15)


def test_hausdorff():
    x = np.random.default_rng(6).uniform(-1, 1, (5, 3))
    assert M.hausdorff(x, x) == 0.0
    assert M.hausdorff([O], [[3, 4, 0]]) == pytest.approx(5.0)
    y = x[:2] + 0.3
    assert M.hausdorff(x, y) == M.hausdorff(y, x)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    x, y = rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (n, 3))
    assert M.chamfer_l2(x, y) == pytest.approx(oracles.chamfer_sum(x, y), abs=1e-9)
    assert M.chamfer_l1(x, y) == pytest.approx(oracles.chamfer_sum(x, y) / 2, abs=1e-9)
    assert M.partial_matching(x, y) == pytest.approx(oracles.partial_sum(x, y), abs=1e-9)
    assert M.hausdorff(x, y) == pytest.approx(oracles.hausdorff(x, y), abs=1e-9)
    assert M.emd(x, y, reduction="sum")[0] == pytest.approx(oracles.emd_sum(x, y), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_emd_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, (8, 3)), rng.uniform(-1, 1, (8, 3))
    base = M.emd(x, y)[0]
    assert abs(M.emd(x[rng.permutation(8)], y[rng.permutation(8)])[0] - base) <= 1e-9


def test_chamfer_rotation_invariant():
    rng = np.random.default_rng(7)
    x, y = rng.uniform(-1, 1, (12, 3)), rng.uniform(-1, 1, (9, 3))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    assert abs(M.chamfer_l2(x @ q.T, y @ q.T) - M.chamfer_l2(x, y)) <= 1e-9
    assert abs(M.chamfer_l1(x @ q.T, y @ q.T) - M.chamfer_l1(x, y)) <= 1e-9


def test_auction_is_near_optimal():
    rng = np.random.default_rng(8)
    for n in (2, 10, 60):
        cost = euclidean_cost(rng.uniform(-1, 1, (n, 3)), rng.uniform(-1, 1, (n, 3)))
        exact = cost[np.arange(n), solve_exact(cost)].sum()
        approx = cost[np.arange(n), solve_auction(cost, eps=0.005)].sum()
        assert exact - 1e-12 <= approx <= 1.005 * exact


def test_auction_iteration_limit():
    cost = euclidean_cost(np.random.default_rng(9).uniform(size=(30, 3)), np.random.default_rng(10).uniform(size=(30, 3)))
    with pytest.raises(ConvergenceError):
        solve_auction(cost, max_bids=5)


def test_emd_auction_mode():
    rng = np.random.default_rng(11)
    x, y = rng.uniform(-1, 1, (40, 3)), rng.uniform(-1, 1, (40, 3))
    exact = M.emd(x, y, mode="exact")[0]
    assert exact <= M.emd(x, y, mode="auction", eps=0.005)[0] <= exact * 1.005


@pytest.mark.parametrize("loss", [
    lambda x, y: M.chamfer_l2(x, y),
    lambda x, y: M.chamfer_l2(x, y, "mean", squared=True),
    lambda x, y: M.chamfer_l1(x, y),
    lambda x, y: M.emd(x, y)[0],
    lambda x, y: M.partial_matching(y, x),
])
def test_losses_are_differentiable(loss):
    rng = np.random.default_rng(12)
    x = Parameter(rng.uniform(-1, 1, (6, 3)))
    y = rng.uniform(-1, 1, (6, 3))
    assert grad_check(lambda: loss(x, y), [x]) <= 1e-4


def test_fidelity_mmd():
    rng = np.random.default_rng(13)
    inputs = [rng.uniform(-1, 1, (5, 3)) for _ in range(2)]
    outputs = [np.concatenate([i, rng.uniform(-1, 1, (3, 3))]) for i in inputs]
    rep = M.fidelity_mmd(inputs, outputs, outputs)
    assert rep["fidelity"] == 0.0 and rep["mmd"] == 0.0
    # hand-evaluated toy case: one pair, two references
    rep = M.fidelity_mmd([[[1, 0, 0]]], [[O]], [[[0, 0, 2]], [[0, 3, 0]]])
    assert rep["fidelity"] == pytest.approx(1.0)
    assert rep["mmd"] == pytest.approx(min(oracles.chamfer_sum([O], [[0, 0, 2]]), oracles.chamfer_sum([O], [[0, 3, 0]])))
    with pytest.raises(ValueError):
        M.fidelity_mmd([], [], [])


def test_generation_metrics_identical_sets():
    rng = np.random.default_rng(14)
    shapes = [rng.uniform(-1, 1, (16, 3)) for _ in range(4)]
    rep = M.generation_metrics(shapes, shapes)
    assert rep["cov"] == 1.0 and rep["mmd"] == 0.0 and rep["jsd"] <= 1e-12
    assert rep["1nna"] <= 0.5


def test_one_nna_tie_cases():
    s = np.random.default_rng(15).uniform(-1, 1, (8, 3))
    # one identical shape per set: each sample's only neighbour is in the other set
    assert M.generation_metrics([s], [s])["1nna"] == 0.0
    a = [s * 0.1 + np.array([0.5, 0, 0]) + 0.01 * i for i in range(3)]
    b = [s * 0.1 - np.array([0.5, 0, 0]) - 0.01 * i for i in range(3)]
    assert M.generation_metrics(a, b)["1nna"] == 1.0


def test_jsd_domain_and_range():
    rng = np.random.default_rng(16)
    with pytest.raises(M.DomainError):
        M.generation_metrics([rng.uniform(-2, 2, (5, 3))], [rng.uniform(-1, 1, (5, 3))])
    disjoint = M.jensen_shannon(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert disjoint == pytest.approx(1.0)


def test_metric_report_serialization():
    rep = M.MetricReport({"cd_l1": 0.0123456789, "fscore": 0.5}, {"threshold": 0.01})
    assert rep.to_text() == "cd_l1=0.0123457\nfscore=0.5\nthreshold=0.01\n"
    assert rep.csv_header() == "cd_l1,fscore"
    assert rep.to_csv_row() == "0.0123457,0.5"
    with pytest.raises(ValueError):
        M.MetricReport({"fscore": 1.5})
    with pytest.raises(ValueError):
        M.MetricReport({"cd": float("nan")})


def test_evaluate_pair_identical():
    x = np.random.default_rng(17).uniform(-1, 1, (20, 3))
    rep = M.evaluate_pair(x, x)
    assert rep["fscore"] == 1.0
    assert all(rep[k] == 0.0 for k in ("cd_l1", "cd_l2", "emd", "hd"))
