import json
import math
from fractions import Fraction as Fr

import pytest

from grassnorm import verify as vf


def test_every_checked_statement_has_a_suite():
    assert vf.missing_suites() == []
    assert set(vf.PROPERTIES) == set(vf.SUITES)


def test_suite_ids_are_unique_and_described():
    for sid, s in vf.SUITES.items():
        assert s.id == sid and s.description and s.default_trials >= 1


def test_unknown_suite_raises():
    with pytest.raises(vf.UnknownSuite):
        vf.run_suite("no-such-suite")


def test_zero_trials_is_an_empty_passing_report():
    rep = vf.run_suite("product", trials=0)
    assert rep.trials == 0 and rep.violations == 0 and rep.passed and rep.worst_slack is None


def test_instance_spec_validation():
    with pytest.raises(ValueError):
        vf.InstanceSpec(coefficients="integer")
    with pytest.raises(ValueError):
        vf.InstanceSpec(n_sites=0)
    with pytest.raises(ValueError):
        vf.InstanceSpec(max_degree=-1)


def test_trial_rng_is_reproducible_and_suite_specific():
    a = vf.trial_rng(0, "product", 3).random()
    assert a == vf.trial_rng(0, "product", 3).random()
    assert a != vf.trial_rng(0, "exponential", 3).random()
    assert a != vf.trial_rng(1, "product", 3).random()


def test_random_spd_is_positive_definite():
    from grassnorm.gaussian import is_positive_definite

    rng = vf.trial_rng(0, "spd", 0)
    for n in (1, 2, 3):
        M = vf.random_spd(rng, n)
        assert all(isinstance(x, Fr) for row in M for x in row)
        assert is_positive_definite(M)


def test_seed_determinism():
    a = vf.run_suite("convolution", trials=4, seed=11).comparable()
    b = vf.run_suite("convolution", trials=4, seed=11).comparable()
    assert a == b


def test_worker_count_does_not_change_reports():
    a = vf.run_suite("exponential", trials=8, seed=2).comparable()
    b = vf.run_suite("exponential", trials=8, seed=2, workers=2).comparable()
    assert a == b


def test_crashing_trials_are_counted_not_raised():
    @vf.suite("always-crashes", "a suite whose trial raises", 3)
    def _boom(rng, k, spec):
        raise RuntimeError("boom")

    try:
        rep = vf.run_suite("always-crashes")
        assert rep.violations == 3 and not rep.passed
        assert rep.worst_slack == -math.inf
        assert "RuntimeError" in rep.failures[0][1]
    finally:
        del vf.SUITES["always-crashes"]


def test_reports_are_line_delimited_json(tmp_path):
    reps = [vf.run_suite("moments", trials=2), vf.run_suite("gram", trials=2)]
    path = tmp_path / "r.jsonl"
    vf.write_reports(reps, path)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert [r["suite"] for r in recs] == ["moments", "gram"]
    assert {"trials", "violations", "worst_slack", "runtime", "environment", "passed"} <= set(recs[0])


def test_quartic_supremum():
    q1 = vf.quartic_q1(4.0)
    P = lambda t: (t + 1) ** 2 + 1  # noqa: E731
    grid = [i / 1000 for i in range(0, 20001)]  # t = |phi| / h >= 0
    best = max(-2 * t ** 4 + 1.5 * P(t) ** 2 + 4 * t * t for t in grid)
    assert best - 1e-9 <= q1 <= best + 1e-3


def test_small_set_brute_force_agrees():
    from grassnorm.lattice import Torus

    T = Torus(2, 2, 3)
    assert vf.brute_force_small_sets(T) == set(T.small_sets)


SMOKE = {"regulator-expectation": 1, "mc-determinism": 1, "sampler-moments": 1, "seed-determinism": 1,
         "kkk-chain": 2, "regulator-product": 2, "small-set-census": 2, "block-paving": 3}


@pytest.mark.parametrize("sid", sorted(vf.SUITES))
def test_suite_smoke(sid):
    rep = vf.run_suite(sid, trials=SMOKE.get(sid, 5), seed=101)
    assert rep.passed, rep.failures
