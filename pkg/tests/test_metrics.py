import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmmreg.metrics import (SUMMARY_COLUMNS, ReplicationRecord, aggregate, discovery_rates,
                            relative_error, summary_row, write_summary_csv)
from pmmreg.simgen import GroundTruth


def truth_of(beta):
    beta = np.asarray(beta, dtype=float)
    return GroundTruth(beta, np.flatnonzero(beta))


def test_relative_error():
    t = truth_of([0, 2.0, -1.0, 0])
    assert relative_error(ReplicationRecord(t.beta_star.copy(), t)) == 0.0
    assert relative_error(ReplicationRecord(np.zeros(4), t)) == 1.0
    assert relative_error(ReplicationRecord(2 * t.beta_star, t)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        relative_error(ReplicationRecord(np.ones(4), truth_of(np.zeros(4))))


def test_aggregate():
    t = truth_of([1.0, 0, 3.0, 0])
    good = ReplicationRecord(np.array([1.1, 0, 2.9, 0]), t, 0.5)
    out = aggregate([good, good])
    assert out["cm_pct"] == 100.0 and out["ms_mean"] == 2.0 and out["time_mean"] == 0.5
    bad = ReplicationRecord(np.array([1.0, 1.0, 3.0, 0]), t, 1.5)
    out = aggregate([good, bad])
    assert out["cm_pct"] == 50.0 and out["ms_mean"] == 2.5 and out["time_mean"] == 1.0
    with pytest.raises(ValueError):
        aggregate([])


def test_discovery_rate_examples():
    t = truth_of([1.0, 1.0, 0, 0])
    r = discovery_rates([ReplicationRecord(np.array([2.0, 3.0, 0, 0]), t)])
    assert (r["apdr"], r["afdr"], r["acdr"]) == (1.0, 0.0, 2.0)
    r = discovery_rates([ReplicationRecord(np.array([0, 0, 1.0, 1.0]), t)])
    assert (r["apdr"], r["afdr"], r["acdr"]) == (0.0, 1.0, 0.0)
    beta = np.zeros(20)
    beta[:10] = 1.0
    hat = np.zeros(20)
    hat[5:15] = 1.0
    r = discovery_rates([ReplicationRecord(hat, truth_of(beta))])
    assert (r["apdr"], r["afdr"], r["acdr"]) == (0.5, 0.5, 1.0)
    r = discovery_rates([ReplicationRecord(np.zeros(4), t)])
    assert r["afdr"] == 0.0


supports = st.lists(st.booleans(), min_size=6, max_size=6)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(supports, supports), min_size=1, max_size=6), st.randoms())
def test_rate_bounds_and_permutation_invariance(pairs, rnd):
    records = []
    for star, hat in pairs:
        star = np.array(star, dtype=float)
        star[0] = 1.0
        records.append(ReplicationRecord(np.array(hat, dtype=float), truth_of(star)))
    r = discovery_rates(records)
    assert 0 <= r["apdr"] <= 1 and 0 <= r["afdr"] <= 1 and 0 <= r["acdr"] <= 2
    a = aggregate(records)
    shuffled = records[:]
    rnd.shuffle(shuffled)
    b = aggregate(shuffled)
    for key in a:
        assert a[key] == pytest.approx(b[key], rel=1e-12)
    if a["cm_pct"] == 100.0:
        assert r["apdr"] == 1.0 and r["afdr"] == 0.0
        assert a["ms_mean"] == np.mean([rec.truth.active_star.size for rec in records])


def test_summary_row_and_csv():
    t = truth_of([1.0, 0, 2.0])
    rec = ReplicationRecord(np.array([1.0, 0, 2.0]), t, 0.25)
    row = summary_row([rec], failures=1, method="pmm", penalty="mcp", n=3, p=3, K=2,
                      kappa=0.3, sigma1=0.1, tau=2.7)
    assert row["reps"] == 2 and row["failures"] == 1 and row["cm_pct"] == 100.0
    single = aggregate([rec])
    assert all(row[k] == v for k, v in single.items())
    empty = summary_row([], failures=2, timing=False)
    assert math.isnan(empty["re_mean"]) and empty["time_mean"] is None
    buf = io.StringIO()
    write_summary_csv([row], buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == SUMMARY_COLUMNS
    assert lines[1].startswith("pmm,mcp,3,3,2,0.3,0.1,2.7,2,")
