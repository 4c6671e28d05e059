import csv
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pirates.errors import NoFeasible
from pirates.testbed import cli as tcli
from pirates.testbed.bench import bench_dialing, linear_fit, loglog_slope
from pirates.testbed.csvout import breakdown_csv, dialing_csv, scalability_csv, shapes_csv
from pirates.testbed.latency import COLUMNS, PIPELINE, LatencyBreakdown, additional_ms, mouth_to_ear, reference_breakdown
from pirates.testbed.runner import check_deliveries, find_snippet_length, run_scenario
from pirates.testbed.scalability import (
    ADDRA_ANCHORS,
    ScalabilityParams,
    analytic_scalability,
    cost_terms,
    parse_sweep,
    sweep,
)
from pirates.testbed.scenario import format_scenario, load_scenario, parse_scenario
from pirates.transcript import Transcript, shape_diff

SCENARIO = """
[config]
epochs = 2
rounds = 3
round_ms = 300
snippet_ms = 200
he_n = 64
seed = 4

[groups]
g1 = a b c
g2 = c d gmk=%s

[clients]
a b c d e

[epochs]
1 dial a g1
1 hangup b 2
2 dial d g2
2 offline e
""" % ("ab" * 32)


# -- scenario files ----------------------------------------------------------


def test_parse_and_format_round_trip():
    s = parse_scenario(SCENARIO, "t")
    assert s.n_clients == 5 and s.G == 3 and s.epochs == 2
    assert s.intent(1, "a") == "g1" and s.intent(1, "b") is None
    assert s.gmk("g2") == bytes.fromhex("ab" * 32)
    assert s.hangups == {1: {"b": 2}} and s.offline == {2: {"e"}}
    again = parse_scenario(format_scenario(s), "t")
    assert again == s


@pytest.mark.parametrize(
    "bad",
    [
        "[groups]\ng = a\n[clients]\na",
        "[groups]\ng = a z\n[clients]\na b",
        "[groups]\ng = a b\n[clients]\na b c\n[epochs]\n1 dial c g",
        "[groups]\ng = a b\n[clients]\na b\n[epochs]\n1 dial a h",
        "[groups]\ng = a b\nh = a b\n[clients]\na b\n[epochs]\n1 dial a g\n1 dial a h",
        "[config]\nbogus = 1",
        "[weird]",
        "a b",
    ],
)
def test_parse_rejects_invalid(bad):
    with pytest.raises(ValueError):
        parse_scenario(bad)


# -- latency -----------------------------------------------------------------


def test_mouth_to_ear_additive():
    b = LatencyBreakdown.from_parts(dict.fromkeys(PIPELINE, 0.0), snippet_ms=100)
    assert mouth_to_ear(b) == 125 == b.total
    assert additional_ms(80) == 105


@given(st.lists(st.floats(0, 1000), min_size=10, max_size=10), st.integers(40, 300))
def test_breakdown_total_is_sum(parts, snippet):
    b = LatencyBreakdown.from_parts(dict(zip(PIPELINE, parts)), snippet)
    assert math.isclose(b.total, sum(parts) + snippet + 25)
    assert len(b.row()) == len(COLUMNS) == 12


def test_reference_rows_additional_terms():
    assert reference_breakdown("LS").additional == additional_ms(200) == 225
    assert reference_breakdown("MC").additional == additional_ms(80) == 105


# -- scalability ---------------------------------------------------------------


def test_parse_sweep():
    assert parse_sweep("workers=20..220:40") == ("workers", [20, 60, 100, 140, 180, 220])


params = st.builds(
    ScalabilityParams,
    n_clients=st.integers(1, 2**20),
    n_workers=st.integers(1, 500),
    snippet_bits=st.integers(1, 10_000),
    reply_ms=st.floats(0.1, 100),
)


@given(params)
def test_single_relay_structural_identity(p):
    addra = sweep([p.n_workers], None, p)[0][2]
    pirates = sweep([p.n_workers], p.n_workers + 1, p)[0][2]  # fewer than one relay per group -> 1
    assert addra == pirates == analytic_scalability(p)
    assert all(v > 0 for v in cost_terms(p).values())


def test_scalability_rejects_nonpositive():
    with pytest.raises(ValueError):
        ScalabilityParams(n_workers=0)


def test_pirates_curve_non_increasing():
    pts = sweep(list(range(20, 2001, 20)), 20)
    ts = [t for _, _, t in pts]
    assert all(b <= a for a, b in zip(ts, ts[1:]))


# -- dialing bench -------------------------------------------------------------


def test_bench_small():
    r = bench_dialing(256, 4, "pirates", reps=5, seed=1)
    g = bench_dialing(256, 4, "gaddra", reps=5, seed=1)
    assert r.reps == g.reps == 5 and r.mean_s > 0 and g.mean_s > 0
    with pytest.raises(ValueError):
        bench_dialing(10, 4, "bogus")


def test_fits():
    slope, icpt, r2 = linear_fit([1, 2, 3, 4], [3, 5, 7, 9])
    assert math.isclose(slope, 2) and math.isclose(icpt, 1) and math.isclose(r2, 1)
    assert math.isclose(loglog_slope([1, 2, 4, 8], [3, 6, 12, 24]), 1)


# -- runs ------------------------------------------------------------------------


def test_local_run_deliveries_and_transcript(tmp_path):
    s = parse_scenario(SCENARIO, "t")
    res = run_scenario(s, "local", tmp_path)
    rep = check_deliveries(res)
    assert rep.ok and rep.expected > 0, rep.missing
    assert res.decisions[1]["e"].group is None
    loaded = Transcript.load(tmp_path / "transcript.jsonl")
    assert shape_diff(loaded, res.transcript) == []
    assert res.breakdown.additional == 225


def test_csv_outputs_deterministic(tmp_path):
    s = parse_scenario(SCENARIO, "t")
    a, b = run_scenario(s, "local"), run_scenario(s, "local")
    shapes_csv(tmp_path / "a.csv", a.transcript)
    shapes_csv(tmp_path / "b.csv", b.transcript)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    breakdown_csv(tmp_path / "bd.csv", [a.breakdown])
    header = next(csv.reader(open(tmp_path / "bd.csv")))
    assert header == list(COLUMNS) and len(header) == 12


def test_scalability_csv_deltas(tmp_path):
    w = sorted(ADDRA_ANCHORS)
    path = scalability_csv(tmp_path / "s.csv", sweep(w, None), sweep(w, 20))
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 12
    assert all(abs(float(r["delta_pct"])) < 1e-9 for r in rows)


def test_dialing_csv(tmp_path):
    res = [bench_dialing(64, 3, m, reps=3, seed=0) for m in ("gaddra", "pirates")]
    rows = list(csv.DictReader(open(dialing_csv(tmp_path / "d.csv", res))))
    assert [r["mode"] for r in rows] == ["gaddra", "pirates"]


def test_snippet_search_throttled():
    s = parse_scenario(SCENARIO, "t").with_(epochs=1, rounds=2, throttle_ms=50.0)
    search = find_snippet_length(s, [40, 60])
    assert search.chosen == 60
    assert search.ratios[40] > 1.1 >= search.ratios[60]


def test_snippet_search_unthrottled_picks_smallest():
    s = parse_scenario(SCENARIO, "t").with_(epochs=1, rounds=2)
    assert find_snippet_length(s, [200, 300]).chosen == 200


def test_snippet_search_no_feasible():
    s = parse_scenario(SCENARIO, "t").with_(epochs=1, rounds=2, throttle_ms=100.0)
    with pytest.raises(NoFeasible) as exc:
        find_snippet_length(s, [40, 60])
    assert set(exc.value.search.ratios) == {40, 60}


# -- CLI ---------------------------------------------------------------------------


def test_cli_run_local(tmp_path, capsys):
    path = tmp_path / "s.txt"
    path.write_text(SCENARIO)
    assert tcli.main(["run", str(path), "--out", str(tmp_path / "out"), "--mode", "local"]) == 0
    assert {p.name for p in (tmp_path / "out").iterdir()} >= {"breakdown.csv", "shapes.csv", "summary.json", "transcript.jsonl"}
    assert "delivered" in capsys.readouterr().out
    assert load_scenario(path).name == "s"


def test_cli_scalability_and_bench(tmp_path, capsys):
    assert tcli.main(["scalability", "--sweep", "workers=20..220:40", "--relays-per", "20", "--out", str(tmp_path / "sc.csv")]) == 0
    assert tcli.main(["bench-dialing", "--n", "128", "--group", "3", "--mode", "both", "--reps", "3"]) == 0
    out = capsys.readouterr().out
    assert "0.530749" in out and "gaddra" in out
