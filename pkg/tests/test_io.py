import json
import math

import numpy as np
import pytest

from threshold_breakdown import DataError, DomainError, ingest_csv
from threshold_breakdown.io import fmt, mad_scale, to_csv, to_json


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_header_and_missing_cells(tmp_path):
    p = write(tmp_path, "a.csv", "id,value\n1,0.5\n2,\n3,NaN\n4,-1.25\n")
    d = ingest_csv(p, column="value")
    assert list(d.samples[0]) == [0.5, -1.25]
    assert d.dropped == 2 and not d.two_sample


def test_headerless_single_column(tmp_path):
    p = write(tmp_path, "b.csv", "1\n2\n3\n")
    assert list(ingest_csv(p).samples[0]) == [1.0, 2.0, 3.0]


def test_semicolon_dialect(tmp_path):
    p = write(tmp_path, "c.csv", "x;y\n1;10\n2;20\n3;30\n")
    assert list(ingest_csv(p, column="y").samples[0]) == [10.0, 20.0, 30.0]


def test_bad_cell_reports_line(tmp_path):
    p = write(tmp_path, "d.csv", "value\n1\nabc\n")
    with pytest.raises(DataError, match=r"d\.csv:3"):
        ingest_csv(p)


def test_missing_file_and_column(tmp_path):
    with pytest.raises(DataError):
        ingest_csv(tmp_path / "nope.csv")
    p = write(tmp_path, "e.csv", "value\n1\n")
    with pytest.raises(DataError):
        ingest_csv(p, column="other")


def test_group_column_splits_two_samples(tmp_path):
    p = write(tmp_path, "g.csv", "grp,v\nA,1\nB,2\nA,3\nB,4\nA,5\n")
    d = ingest_csv(p, column="v", group_col="grp")
    assert d.two_sample and d.labels == ("A", "B")
    assert list(d.samples[0]) == [1.0, 3.0, 5.0] and list(d.samples[1]) == [2.0, 4.0]


def test_group_column_needs_two_groups(tmp_path):
    p = write(tmp_path, "h.csv", "grp,v\nA,1\nB,2\nC,3\n")
    with pytest.raises(DataError):
        ingest_csv(p, column="v", group_col="grp")


def test_two_files(tmp_path):
    a = write(tmp_path, "x.csv", "v\n1\n2\n")
    b = write(tmp_path, "y.csv", "v\n3\n")
    d = ingest_csv(a, input2=b)
    assert d.two_sample and d.samples[1].tolist() == [3.0]
    with pytest.raises(DomainError):
        ingest_csv(a, input2=b, group_col="v")


def test_mad_normalization_does_not_center(tmp_path):
    vals = np.array([10.0, 11.0, 12.0, 13.0, 20.0])
    p = write(tmp_path, "m.csv", "v\n" + "\n".join(map(str, vals)) + "\n")
    d = ingest_csv(p, mad_normalize=True)
    assert d.scales[0] == pytest.approx(1.4826)
    assert np.allclose(d.samples[0], vals / 1.4826)
    assert mad_scale(vals) == pytest.approx(1.4826)


def test_zero_mad_rejected(tmp_path):
    p = write(tmp_path, "z.csv", "v\n1\n1\n1\n")
    with pytest.raises(DomainError):
        ingest_csv(p, mad_normalize=True)


@pytest.mark.parametrize("v,expected", [(math.inf, "inf"), (-math.inf, "-inf"),
                                        (math.nan, "nan"), (0.0, "0"), (True, "true"),
                                        (None, ""), (3, "3"), (1 / 3, "0.333333333333")])
def test_fmt(v, expected):
    assert fmt(v) == expected


def test_csv_and_json_round_trip():
    text = to_csv(("a", "b"), [(1, 0.5), (2, math.inf)])
    assert text == "a,b\n1,0.5\n2,inf\n"
    doc = json.loads(to_json({"x": [math.inf, 1 / 3], "y": np.int64(4)}))
    assert doc == {"x": ["inf", 0.333333333333], "y": 4}
