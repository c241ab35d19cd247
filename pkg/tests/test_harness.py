import dataclasses
import json

import numpy as np
import pytest

from drdos_guard.detection import Base, Combiner, DetectorConfig, FrameSeries
from drdos_guard.harness import (
    DEFAULT_TARGET,
    SeriesPair,
    SweepGrid,
    SweepResult,
    TargetWorkload,
    check_equivalence,
    confusion,
    emit_csv,
    emit_plot_data,
    evaluate,
    mean_accuracy,
    metrics,
    monotonicity_violations,
    parse_grid,
    plot_series,
    read_csv,
    run_scenario,
    synthetic_pairs,
)
from drdos_guard.mitigation import Variant
from drdos_guard.traffic import DESK_PROFILE, AttackSpec

TOY = [
    # (tp, fp, tn, fn) -> (precision, recall, accuracy)
    ((8, 2, 88, 2), (0.8, 0.8, 0.96)),
    ((0, 0, 50, 50), (0.0, 0.0, 0.5)),
    ((30, 10, 40, 20), (0.75, 0.6, 0.7)),
]


@pytest.mark.parametrize("counts,expected", TOY)
def test_metrics_toy(counts, expected):
    assert metrics(*counts) == pytest.approx(expected, abs=0)


def test_metrics_all_zero():
    assert metrics(0, 0, 0, 0) == (0.0, 0.0, 0.0)


def test_confusion():
    assert confusion([True, False, False], [True, True, False]) == (2, 1, 2, 1)
    with pytest.raises(ValueError):
        confusion([True], [])


def result(**kw):
    base = dict(classifier="src_port", base=Base.FLOWS, combiner=Combiner.MEAN, l=10.0, g=5, e=1,
                T_h=-1.0, T_r=None, a=1.0, s=1, tp=3, fp=1, tn=5, fn=2)
    base.update(kw)
    return SweepResult(**base)


def test_result_properties():
    r = result()
    assert (r.precision, r.recall, r.accuracy) == (0.75, 0.6, 8 / 11)
    assert r.latency == 60.0 and r.threshold == -1.0 and r.precision_defined
    assert not result(tp=0, fp=0).precision_defined
    assert result(classifier="ratio", T_h=None, T_r=0.2).threshold == 0.2


def test_empty_csv_is_header_only(tmp_path):
    path = tmp_path / "r.csv"
    assert emit_csv([], path) == 0
    assert path.read_text().strip() == (
        "classifier,base,combiner,l,g,e,T_h,T_r,a,s,tp,fp,tn,fn,precision,recall,accuracy,latency_s"
    )


def test_csv_round_trip(tmp_path):
    rows = [result(), result(classifier="ratio", base=Base.PACKETS, T_h=None, T_r=0.05, a=2.5)]
    path = tmp_path / "r.csv"
    emit_csv(rows, path)
    assert read_csv(path) == rows


def test_plot_points_per_series(tmp_path):
    grid = SweepGrid()
    rows = [result(T_h=t) for t in grid.T_h] + [result(T_h=t, a=2.0) for t in grid.T_h]
    series = plot_series(rows)
    assert len(series) == 2 and all(len(s["points"]) == 7 for s in series)
    assert [p[0] for p in series[0]["points"]] == sorted(grid.T_h, reverse=True)
    path = tmp_path / "plot.json"
    assert emit_plot_data(rows, path) == 2
    assert json.loads(path.read_text())[1]["a"] == 2.0


def test_grid_parse():
    grid = parse_grid("l = 10, 60\n# comment\nT_h=-1,-2\nbase = flows\n")
    assert grid.l == (10, 60) and grid.T_h == (-1.0, -2.0) and grid.base == (Base.FLOWS,)
    assert grid.g == SweepGrid().g
    with pytest.raises(ValueError):
        parse_grid("colour = 1")
    with pytest.raises(ValueError):
        parse_grid("classifiers = entropy")


def toy_pair(n=40, a=1.0, drop=2.0, seed=0):
    r = np.random.default_rng(seed)

    def series(h):
        return FrameSeries(
            frame_length=10.0, start=np.arange(n) * 10.0,
            udp_flows=np.full(n, 100), tcp_flows=np.full(n, -1), udp_pkts=np.full(n, 300), tcp_pkts=np.full(n, 3700),
            h_srcport_flow=h, h_srcport_pkt=h, h_dstip_flow=h, h_dstip_pkt=h,
        )

    benign = 10.0 + 0.1 * r.standard_normal(n)
    return SeriesPair(10.0, a, 1, series(benign), series(benign - drop))


def test_evaluate_on_toy_pair():
    grid = SweepGrid(T_h=(-1.0, -3.0), g=(5,), e=(1,), base=("flows",), combiner=("mean",),
                     classifiers=("src_port",), s=(1,))
    res = evaluate([toy_pair()], grid)
    by_t = {r.T_h: r for r in res}
    # the attacked series sits 2 bits below the benign one in every frame
    assert (by_t[-1.0].tp, by_t[-1.0].fn, by_t[-1.0].fp) == (35, 0, 0)
    assert (by_t[-3.0].tp, by_t[-3.0].tn) == (0, 35)
    assert all(r.tp + r.fn == r.fp + r.tn for r in res)


def test_zero_magnitude_has_no_positives():
    grid = SweepGrid(g=(5,), e=(1, 2), l=(10,), a=(0.0,), s=(1,))
    p = dataclasses.replace(DESK_PROFILE, duration=600.0, chunk_seconds=600)
    res = evaluate(synthetic_pairs(p, grid.l, grid.a, grid.s), grid)
    for r in res:
        assert r.tp == r.fp and r.fn == r.tn


def test_short_runs_are_skipped():
    grid = SweepGrid(g=(5, 60), e=(1,), base=("flows",), combiner=("mean",), classifiers=("src_port",))
    skipped = []
    res = evaluate([toy_pair(n=20)], grid, on_skip=skipped.append)
    assert {r.g for r in res} == {5}
    assert [(s.g, s.frames) for s in skipped] == [(60, 20)]


def test_results_do_not_depend_on_pair_order():
    grid = SweepGrid(g=(5,), e=(1, 3), base=("flows",), classifiers=("src_port", "ratio"), s=(1,))
    pairs = [toy_pair(a=a, drop=d, seed=i) for i, (a, d) in enumerate([(0.5, 0.7), (1.0, 1.4), (2.0, 3.1)])]
    forward = evaluate(pairs, grid)
    backward = evaluate(list(reversed(pairs)), grid)
    key = lambda r: (r.classifier, r.combiner.value, r.e, r.a, r.threshold)  # noqa: E731
    assert sorted(forward, key=key) == sorted(backward, key=key)


def test_monotonicity_on_toy_pairs():
    grid = SweepGrid(g=(5, 10), e=(1, 2, 3))
    assert monotonicity_violations([toy_pair(drop=d, seed=i) for i, d in enumerate((0.3, 1.2, 2.6))], grid) == 0


def test_mean_accuracy_filter():
    rows = [result(), result(base=Base.PACKETS, tp=0, fn=5)]
    assert mean_accuracy(rows, base=Base.FLOWS) == rows[0].accuracy
    with pytest.raises(ValueError):
        mean_accuracy(rows, l=1.0)


def test_small_equivalence_run():
    rep = check_equivalence(5000, seed=3)
    assert rep.packets == 5000 and rep.mismatches == 0 and rep.first_mismatch is None
    regions = {k.split(":", 1)[1] for k in rep.regions}
    assert {"request-nat", "outgoing-response", "incoming-request", "drop-response", "miss"} <= regions


@pytest.fixture(scope="module")
def quiet_profile():
    return dataclasses.replace(DESK_PROFILE, duration=90.0, seed=1)


def test_no_attack_no_activation(quiet_profile):
    attack = AttackSpec(0.0, 53, (DEFAULT_TARGET.ip,), start=0.0, stop=90.0)
    rep = run_scenario(quiet_profile, attack, DetectorConfig())
    assert not rep.detected and rep.activated_at is None
    assert rep.variant_mismatches == 0 and rep.alias_leaks == 0 and rep.arp_replies == 0


@pytest.mark.parametrize("variant", list(Variant))
def test_attack_is_mitigated(quiet_profile, variant):
    attack = AttackSpec(4.0, 53, (DEFAULT_TARGET.ip,), start=40.0, stop=90.0)
    rep = run_scenario(quiet_profile, attack, DetectorConfig(), variant=variant, seed=2)
    # g + e = 6 frames of history: the first evaluated window ends at 60 s
    assert rep.detected and rep.activated_at == 60.0 and rep.detected_port == 53
    assert rep.illegitimate_delivered == 0 and rep.illegitimate_dropped > 0
    assert rep.legitimate_dropped == 0 and rep.legitimate_delivered > 0
    assert rep.incoming_requests == rep.incoming_requests_unmodified > 0
    assert rep.outgoing_responses == rep.outgoing_responses_unmodified > 0
    assert rep.variant_mismatches == 0 and rep.alias_leaks == 0 and rep.arp_replies > 0


def test_attack_on_other_host_does_not_activate(quiet_profile):
    other = quiet_profile.target_ips(1)[0]
    attack = AttackSpec(4.0, 53, (other,), start=40.0, stop=90.0)
    rep = run_scenario(quiet_profile, attack, DetectorConfig())
    assert rep.detected and rep.detected_target == other and rep.activated_at is None


def test_rotating_scenario_is_deterministic(quiet_profile):
    attack = AttackSpec(2.0, 53, (DEFAULT_TARGET.ip,), start=40.0, stop=90.0)
    w = TargetWorkload(late_fraction=0.3, late_delay=(1.0, 5.0))
    runs = [
        run_scenario(quiet_profile, attack, DetectorConfig(), workload=w, rotate_every=10.0, grace=3.0, seed=7)
        for _ in range(2)
    ]
    assert runs[0] == runs[1]
    rep = runs[0]
    assert len(rep.rotations) >= 2 and rep.stale_alias_delivered == 0 and rep.variant_mismatches == 0
