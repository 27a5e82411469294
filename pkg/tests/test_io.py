import numpy as np
import pytest

from sthawkes.errors import ConfigError, DataError
from sthawkes.io import load_config, read_events_csv, read_window_ring, write_events_csv


def _write(tmp_path, text, name="events.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_rows(tmp_path):
    p = _write(tmp_path, "group,date,lon,lat\nA,2005-01-01,44.0,33.3\nB,2005-01-02,44.1,33.4\n"
                         "A,2005-01-03T12:00,44.2,33.2\n")
    cat, rep = read_events_csv(p)
    assert len(cat) == 3 and cat.mark_names == ("A", "B")
    assert cat.t.tolist() == [0.0, 1.0, 2.5]
    assert cat.T == 3.0 and rep.n_kept == 3 and not rep.dropped
    assert cat.counts().tolist() == [2, 1]


def test_groups_fix_mark_order(tmp_path):
    p = _write(tmp_path, "A,2005-01-01,44.0,33.3\nB,2005-01-02,44.1,33.4\n")
    cat, _ = read_events_csv(p, groups=["B", "A"])
    assert cat.marks.tolist() == [1, 0]


def test_specificity_filter(tmp_path):
    p = _write(tmp_path, "A,2005-01-01,44.0,33.3,1\nA,2005-01-02,44.1,33.4,4\n"
                         "A,2005-01-03,44.2,33.2,2\n")
    cat, rep = read_events_csv(p, specificity_max=2)
    assert len(cat) == 2
    assert rep.reasons() == {"specificity above threshold": 1}


def test_malformed_rows_abort_or_skip(tmp_path):
    p = _write(tmp_path, "A,2005-01-01,44.0,33.3\nA,not-a-date,44.1,33.4\nA,2005-01-03,44.2\n")
    with pytest.raises(DataError, match="line"):
        read_events_csv(p)
    cat, rep = read_events_csv(p, skip_bad_rows=True)
    assert len(cat) == 1 and len(rep.dropped) == 2


def test_empty_after_filter(tmp_path):
    p = _write(tmp_path, "A,2005-01-01,44.0,33.3,5\n")
    with pytest.raises(DataError):
        read_events_csv(p, specificity_max=1)


def test_duplicates_jittered_deterministically(tmp_path):
    p = _write(tmp_path, "A,2005-01-01,44.0,33.3\nA,2005-01-01,44.0,33.3\nA,2005-01-02,44.5,33.0\n")
    a, rep = read_events_csv(p, seed=3)
    b, _ = read_events_csv(p, seed=3)
    assert rep.n_jittered >= 1
    assert np.array_equal(a.lon, b.lon) and np.array_equal(a.lat, b.lat)
    assert len({(lo, la) for lo, la in zip(a.lon, a.lat)}) == 3


def test_window_ring_formats(tmp_path):
    ring = [[44, 33], [45, 33], [45, 34], [44, 34]]
    js = _write(tmp_path, '{"type": "Polygon", "coordinates": [%s]}' % ring, "w.json")
    txt = _write(tmp_path, "# ring\n44 33\n45,33\n45 34\n44 34\n", "w.txt")
    assert read_window_ring(js).tolist() == read_window_ring(txt).tolist() == ring
    with pytest.raises(DataError):
        read_window_ring(_write(tmp_path, "44 33\n45 33\n", "bad.txt"))


def test_events_outside_window_dropped(tmp_path):
    p = _write(tmp_path, "A,2005-01-01,44.5,33.5\nA,2005-01-02,50.0,33.5\n")
    cat, rep = read_events_csv(p, window_ring=np.array([[44, 33], [45, 33], [45, 34], [44, 34]]))
    assert len(cat) == 1 and rep.reasons() == {"outside the spatial window": 1}


def test_csv_round_trip(tmp_path):
    p = _write(tmp_path, "A,2005-01-01T06:00,44.0,33.3,2\nB,2005-01-02,44.1,33.4,1\n")
    cat, rep = read_events_csv(p)
    out = tmp_path / "out.csv"
    write_events_csv(out, cat, rep.epoch, ["header"])
    again, _ = read_events_csv(out, epoch=rep.epoch, end="2005-01-03")
    assert np.allclose(again.t, cat.t) and np.allclose(again.lon, cat.lon)
    assert again.specificity.tolist() == [2, 1]


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "[data\nx=1", "bad.toml"))
    assert load_config(_write(tmp_path, "[data]\nevents = 'e.csv'\n", "ok.toml")) == \
        {"data": {"events": "e.csv"}}
