import json

import numpy as np
import pytest

from bilevel_soc import calmness, reform
from bilevel_soc.calmness import CalmStatus

SMALL = dict(mu_list=[0.0, 10.0], radii=[1e-1, 1e-2], budget=400)


def _cp(prob):
    gcp = reform.build(prob, "CP")
    return gcp, reform.default_candidate(gcp)


def test_simple_example_violated_with_replayable_witnesses(ex31):
    gcp, cand = _cp(ex31)
    v = calmness.test_partial_calmness(gcp, cand, **SMALL)
    assert v.violated and len(v.witnesses) == 4
    for w in v.witnesses:
        rep = calmness.replay_witness(gcp, cand, w)
        assert rep["ok"] and rep["drop"] == pytest.approx(w.drop, abs=1e-12)
        assert np.linalg.norm(w.point - cand) < w.radius


def test_verdict_serializes(ex46):
    gcp, cand = _cp(ex46)
    v = calmness.test_partial_calmness(gcp, cand, mu_list=[1.0], radii=[0.1], budget=300)
    data = json.loads(json.dumps(v.to_dict()))
    assert data["status"] == "VIOLATED" and data["witnesses"][0]["mu"] == 1.0
    assert "note" in data["search_meta"]


def test_tampered_witness_fails_replay(ex46):
    gcp, cand = _cp(ex46)
    w = calmness.test_partial_calmness(gcp, cand, mu_list=[2.0], radii=[0.1], budget=300).witnesses[0]
    w.point = w.point.copy()
    w.point[2] = 0.05            # off the stationarity manifold
    assert not calmness.replay_witness(gcp, cand, w)["ok"]
    far = calmness.Witness(w.mu, 1e-6, np.array([0.2, 0.2, 0, 0, 0.0]), 0, 0, 0)
    assert not calmness.replay_witness(gcp, cand, far)["in_ball"]


def test_infeasible_candidate_rejected(ex46):
    gcp, _ = _cp(ex46)
    with pytest.raises(ValueError):
        calmness.test_partial_calmness(gcp, [0.0, 0.0, 0.5, 0.0, 0.0], **SMALL)


def test_second_order_programs_not_refuted_at_origin(ex31):
    for kind in ("SOCP_S", "SOCP_B", "CPSOC"):
        gcp = reform.program(ex31, kind)
        v = calmness.test_partial_calmness(gcp, reform.default_candidate(gcp), mu_list=[0.0],
                                           radii=[1e-1], budget=400)
        assert v.status is CalmStatus.NOT_REFUTED and not v.witnesses


def test_kkt_membership_program_violated(ex31):
    gcp = reform.program(ex31, "KKTCP")
    v = calmness.test_partial_calmness(gcp, reform.default_candidate(gcp), mu_list=[0.0], radii=[1e-1], budget=400)
    assert v.violated


@pytest.mark.parametrize("eid, mu, k, drop", [("4.6", 10.0, 6, 2 / 6 - 10 / 36), ("3.1", 0.0, 3, 1 / 3 - 1 / 9),
                                            ("3.1", 40.0, None, None)])
def test_analytic_sequence(eid, mu, k, drop):
    r = calmness.analytic_witness_check(eid, mu, k)
    assert r["matches"] and r["strict"] and r["feasible"]
    if drop is not None:
        assert r["drop"] == pytest.approx(drop, abs=1e-12)
        assert r["evaluated"] == pytest.approx(r["closed_form"], abs=1e-12)


def test_analytic_threshold_tie():
    # at k = 1 + mu/4 the drop vanishes exactly
    r = calmness.analytic_witness_check("3.1", 4.0, 2)
    assert r["matches"] and not r["strict"]
    with pytest.raises(ValueError):
        calmness.analytic_witness_check("4.8", 1.0)


def test_clarke_violation_and_replay(ex46):
    gcp, cand = _cp(ex46)
    v = calmness.test_clarke_calmness(gcp, cand, eps_list=[1e-1, 1e-2], budget=1500)
    assert v.violated and v.kind == "CLARKE"
    for w in v.witnesses:
        assert calmness.replay_witness(gcp, cand, w, "CLARKE")["ok"]


def test_implication_diagram_slack_pair(ex48):
    rep = calmness.check_implication_diagram(ex48, {"WSOCP": {}, "WSOCPZ": {}}, mu_list=[0.0], radii=[1e-1],
                                             budget=300)
    assert rep["inconsistencies"] == 0 and len(rep["arrows"]) == 2


def test_implication_diagram_empty(ex31):
    assert calmness.check_implication_diagram(ex31, {}) == {"verdicts": {}, "arrows": [], "inconsistencies": 0}


def test_one_sided_vocabulary():
    assert {s.value for s in CalmStatus} == {"VIOLATED", "NOT_REFUTED"}
