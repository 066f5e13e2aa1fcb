import numpy as np
import pytest

from xtnet.metrics.allocation import ComboSpace
from xtnet.metrics.theorems import (
    InfeasibleConfigError,
    TheoremConfig,
    concentrated_vs_distributed,
    density_by_group,
    evaluate_instance,
    gen_theorem_instances,
    interaction_count,
    lemma_roi_ordering,
    max_density,
    theorem_harness,
    validate_instance,
)


def test_generated_instances_pass_validator():
    cfg = TheoremConfig(instances=30, units=2, seed=5)
    for inst in gen_theorem_instances(cfg):
        assert validate_instance(inst, cfg) == []
        assert lemma_roi_ordering(inst)


def test_validator_flags_broken_instances():
    cfg = TheoremConfig(instances=1, seed=1)
    inst = gen_theorem_instances(cfg)[0]
    inst.f[..., 2] = inst.f[..., 1] * 2.5  # convex second step
    assert "f_j not strictly concave" in validate_instance(inst, cfg)
    inst = gen_theorem_instances(cfg)[0]
    inst.g[..., 0, 1] = 0.1
    assert "interaction non-zero at a zero level" in validate_instance(inst, cfg)
    inst = gen_theorem_instances(cfg)[0]
    inst.g[..., 1, 1] = cfg.G * 3
    assert "interaction outside [0, G]" in validate_instance(inst, cfg)


def test_no_interactions_makes_mv_and_mcmv_agree():
    cfg = TheoremConfig(G=0.0, rho=0.0, instances=40, seed=2)
    for inst in gen_theorem_instances(cfg):
        assert not inst.g.any()
        r = evaluate_instance(inst, cfg)
        assert abs(r["errors"]["mv_aucc"] - r["errors"]["mcmv_aucc"]) < 1e-9


def test_full_density_gives_strict_majority():
    report = theorem_harness(TheoremConfig(rho=1.0, instances=60, seed=3))
    assert report["rates"]["mcmv_lt_mv"] > 0.5
    assert report["rates"]["roi_ordering"] == 1.0


def test_report_echoes_seed_and_config():
    report = theorem_harness(TheoremConfig(instances=3, seed=11))
    assert report["seed"] == 11 and report["config"]["seed"] == 11
    assert len(report["instances"]) + len(report["skipped"]) == 3


def test_interaction_density_counts():
    active = np.zeros((3, 3), dtype=bool)
    active[0, 1] = active[1, 2] = True
    assert interaction_count(np.array([1, 1, 0]), active) == 1
    assert interaction_count(np.array([2, 1, 1]), active) == 2
    assert interaction_count(np.array([2, 0, 0]), active) == 0
    d = density_by_group(ComboSpace((2, 2, 2)), active)
    assert min(d) == 3
    # every q >= 3 combo either spreads over all three categories or hits an active pair
    assert all(0 < v <= 1 for v in d.values())


def test_max_density_limits_rho():
    with pytest.raises(InfeasibleConfigError):
        TheoremConfig(k=3, levels=2, rho=max_density(3, 2) + 0.01)


@pytest.mark.parametrize("bad", [dict(G=-1.0), dict(rho=1.5), dict(G=0.0, rho=0.5), dict(decay=(0.5, 1.0)),
                                 dict(strength=(0.0, 1.0)), dict(anchor_weight=0.0), dict(mcmv_realize="x")])
def test_infeasible_configs(bad):
    with pytest.raises(InfeasibleConfigError):
        TheoremConfig(**bad)


def test_concentrated_vs_distributed_closed_form():
    steps = [[3.0, 2.5, 2.0, 1.8], [0.3, 0.2, 0.1, 0.05], [0.3, 0.2, 0.1, 0.05]]
    # q=4: (4,0,0) vs (1,1,2), three active pairs in the distributed combo
    conc, dist = concentrated_vs_distributed(steps, 0.0, 4)
    assert conc == pytest.approx(9.3)
    assert dist == pytest.approx(3.0 + 0.3 + 0.3 + 0.2)
    g_star = (9.3 - 3.8) / 3
    below = concentrated_vs_distributed(steps, g_star - 0.01, 4)
    above = concentrated_vs_distributed(steps, g_star + 0.01, 4)
    assert below[1] < below[0] and above[1] > above[0]
