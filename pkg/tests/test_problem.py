import json

import numpy as np
import pytest

from bilevel_soc.problem import (ProblemError, bundled_problem, hessian_yy_lagrangian, lagrangian, load_problem,
                                 problem_from_dict)


@pytest.mark.parametrize("eid, dims", [("3.1", (1, 1, 0, 0)), ("4.6", (2, 1, 2, 4)), ("4.8", (1, 1, 2, 2))])
def test_bundled_dimensions(eid, dims):
    prob = load_problem(eid)
    assert (prob.n, prob.m, prob.p, prob.q) == dims
    assert prob.candidates


def test_simple_example_boxes():
    prob = bundled_problem("3.1")
    assert prob.x_box.tolist() == [[-1.0, 1.0]]
    assert prob.y_box.tolist() == [[-1.0, 1.0]]


def test_load_from_file(tmp_path):
    src = dict(bundled_problem("4.6").source)
    path = tmp_path / "mine.json"
    path.write_text(json.dumps(src))
    prob = load_problem(path)
    assert prob.p == 2 and prob.eval_F([0.5, 0.5], [1.0]) == pytest.approx(0.0)


def test_wrong_constraint_count_rejected():
    data = dict(bundled_problem("4.6").source)
    data["g"] = ["-y1"]
    with pytest.raises(ProblemError, match="length"):
        problem_from_dict(data)


@pytest.mark.parametrize("patch", [{"n": 0}, {"m": -1}, {"F": 3}, {"f": "y1 +"}, {"G": ["x1"]}, {"p": True}])
def test_malformed_files(patch):
    data = dict(bundled_problem("4.6").source)
    data.update(patch)
    with pytest.raises(ProblemError):
        problem_from_dict(data)


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ProblemError):
        load_problem(path)


def test_lagrangian_values():
    prob = bundled_problem("4.6")
    assert lagrangian(prob, [0, 0], [0], [0, 0]) == 0.0
    assert lagrangian(prob, [1, 0], [1], [0, 0]) == pytest.approx(-0.25)
    u = np.array([0.3, 0.7])
    x, y = [0.2, -0.1], [0.6]
    assert lagrangian(prob, x, y, u) == pytest.approx(prob.eval_f(x, y) + u @ prob.eval_g(x, y))
    with pytest.raises(ValueError):
        lagrangian(prob, x, y, [1.0])


def test_lagrangian_reduces_to_f():
    prob = bundled_problem("4.8")
    for x, y in [(0.3, 0.2), (-0.5, 0.9)]:
        assert lagrangian(prob, [x], [y], [0, 0]) == pytest.approx(prob.eval_f([x], [y]))


def test_lower_hessian_values():
    p31 = bundled_problem("3.1")
    assert hessian_yy_lagrangian(p31, [0], [0], 1.0, []).tolist() == [[0.0]]
    assert hessian_yy_lagrangian(p31, [1], [0], 1.0, []).tolist() == [[-1.0]]
    p46 = bundled_problem("4.6")
    assert hessian_yy_lagrangian(p46, [0, 0], [0], 1.0, [0, 0]).tolist() == [[0.0]]


def test_local_data_shapes():
    prob = bundled_problem("4.6")
    d = prob.local([0.5, 0.5], [1.0])
    assert d.grad_f.shape == (1,) and d.jac_g.shape == (2, 1) and d.hess_g.shape == (2, 1, 1)
    assert d.jac_g[:, 0].tolist() == [-1.0, 1.0]
    assert d.grad_f[0] == pytest.approx(0.0)
