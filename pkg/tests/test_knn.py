import math

import numpy as np
import pytest

from ballann import build_registry, generate_instance, normalize
from ballann.geometry import InputError, dist_point_ball
from ballann.knn import KnnAnswer, constant_factor_detail, constant_factor_kth, query, refine
from ballann.oracle import exact_kth_distance

from conftest import make_registry


def _truth(reg, q, k):
    return exact_kth_distance(reg.instance.balls, q, k).value


# -- constant-factor stage -------------------------------------------------------


@pytest.mark.parametrize("dim,profile", [(1, "uniform"), (2, "clustered"), (2, "nested-huge")])
def test_constant_factor_sandwich(dim, profile):
    reg = make_registry(60 + dim, dim, 48, profile=profile)
    rng = np.random.default_rng(dim)
    seen = set()
    for _ in range(250):
        q = tuple(rng.random(dim))
        k = int(rng.integers(1, reg.n + 1))
        x, step, witness = constant_factor_detail(reg, q, k)
        seen.add(step)
        truth = _truth(reg, q, k)
        if x == 0.0:
            assert truth == 0.0
            assert witness >= 0
        else:
            assert x / 4.0 - 1e-12 <= truth <= 4.0 * x + 1e-12
    assert "A" in seen or "B" in seen


def test_nested_huge_forces_descent_branch():
    # Huge shells around a tight core make the k-th distance ride on big
    # balls, which is exactly the halving branch's regime.
    reg = make_registry(66, 1, 48, profile="nested-huge")
    rng = np.random.default_rng(3)
    steps = set()
    for _ in range(400):
        # Sample inside the nest: uniform cube points mostly miss the tiny
        # normalized bounding box, and the descent case needs nearby shells.
        b = reg.instance.balls[int(rng.integers(reg.n))]
        q = tuple(
            min(max(c + rng.normal() * (b.radius + 1e-6), 0.0), math.nextafter(1.0, 0.0))
            for c in b.center
        )
        k = int(rng.integers(1, reg.n + 1))
        _, step, _ = constant_factor_detail(reg, q, k)
        steps.add(step)
    assert "C" in steps


def test_constant_factor_zero_inside_k_balls():
    reg = make_registry(1, 2, 30)
    b = reg.instance.balls[7]
    x, step, witness = constant_factor_detail(reg, b.center, 1)
    assert x == 0.0 and step == "zero" and witness == 7


def test_constant_factor_rejects_bad_k():
    reg = make_registry(0, 1, 10)
    with pytest.raises(InputError):
        constant_factor_kth(reg, (0.5,), 0)
    with pytest.raises(InputError):
        constant_factor_kth(reg, (0.5,), 11)


# -- refinement --------------------------------------------------------------------


@pytest.mark.parametrize("dim", [1, 2])
def test_refine_accepts_any_valid_bracket(dim):
    reg = make_registry(70 + dim, dim, 40)
    rng = np.random.default_rng(19)
    for _ in range(60):
        q = tuple(rng.random(dim))
        k = int(rng.integers(1, reg.n + 1))
        eps = float(rng.choice([0.5, 0.2]))
        truth = _truth(reg, q, k)
        if truth == 0.0:
            continue
        # Anywhere inside the contract window [truth/4, 4*truth] must work,
        # including both edges.
        for x in (truth, truth / 4.0 * 1.001, 4.0 * truth * 0.999):
            ans = refine(reg, q, k, x, eps)
            assert (1.0 - eps) * truth - 1e-12 <= ans.distance <= (1.0 + eps) * truth + 1e-12
            lo, hi = ans.certified_interval
            assert lo - 1e-12 <= truth <= hi + 1e-12


def test_refine_zero_x_answers_inside_queries():
    reg = make_registry(2, 1, 30)
    b = reg.instance.balls[3]
    ans = refine(reg, b.center, 1, 0.0, 0.5)
    assert ans.distance == 0.0
    assert dist_point_ball(b.center, reg.instance.balls[ans.ball_id]) == 0.0


# -- full query ----------------------------------------------------------------------


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_query_two_sided_and_interval(dim):
    reg = make_registry(80 + dim, dim, 50)
    rng = np.random.default_rng(29)
    for _ in range(150):
        q = tuple(rng.random(dim))
        k = int(rng.integers(1, reg.n + 1))
        eps = float(rng.choice([0.5, 0.2, 0.1]))
        ans = query(reg, q, k, eps)
        truth = _truth(reg, q, k)
        tol = 1e-12 * max(1.0, truth)
        assert (1.0 - eps) * truth - tol <= ans.distance <= (1.0 + eps) * truth + tol
        lo, hi = ans.certified_interval
        assert lo - tol <= truth <= hi + tol
        assert lo - tol <= ans.distance <= hi + tol
        if lo > 0.0:
            assert hi / lo <= (1.0 + eps) / (1.0 - eps) + 1e-9
        # The reported distance is the true distance of the reported ball.
        real = dist_point_ball(q, reg.instance.balls[ans.ball_id])
        assert ans.distance == pytest.approx(real, rel=1e-12, abs=1e-12)
        assert not ans.out_of_domain


def test_query_k_edges():
    reg = make_registry(4, 2, 25)
    rng = np.random.default_rng(31)
    for k in (1, reg.n):
        for _ in range(40):
            q = tuple(rng.random(2))
            ans = query(reg, q, k, 0.3)
            truth = _truth(reg, q, k)
            assert (0.7) * truth - 1e-12 <= ans.distance <= 1.3 * truth + 1e-12


def test_query_large_eps():
    reg = make_registry(5, 1, 30)
    rng = np.random.default_rng(37)
    for _ in range(60):
        q = tuple(rng.random(1))
        k = int(rng.integers(1, 31))
        ans = query(reg, q, k, 0.9)
        truth = _truth(reg, q, k)
        assert 0.1 * truth - 1e-12 <= ans.distance <= 1.9 * truth + 1e-12


def test_query_validation():
    reg = make_registry(0, 1, 10)
    with pytest.raises(InputError):
        query(reg, (0.5,), 0, 0.5)
    with pytest.raises(InputError):
        query(reg, (0.5,), 3, 0.0)
    with pytest.raises(InputError):
        query(reg, (0.5,), 3, 1.0)


def test_answer_type_is_frozen():
    ans = KnnAnswer(0, 1.0, (0.5, 2.0))
    with pytest.raises(Exception):
        ans.distance = 2.0
