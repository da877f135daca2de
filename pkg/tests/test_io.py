import json
import struct

import numpy as np
import pytest

from quadric_detect.errors import ParseError, UnsupportedFormat
from quadric_detect.io import (DetectionReport, QuadricEntry, detect_format, read_cloud,
                               read_report, report_text, write_ply, write_report, write_xyz)

PLY3 = """ply
format ascii 1.0
comment tiny
element vertex 3
property float x
property float y
property float z
property float nx
property float ny
property float nz
end_header
0 0 0 0 0 1
1 0 0 0 0 1
0 1 0 0 0 1
"""


def _write(tmp_path, name, data):
    p = tmp_path / name
    p.write_bytes(data if isinstance(data, bytes) else data.encode())
    return p


def test_ascii_ply_three_vertices(tmp_path):
    d = read_cloud(_write(tmp_path, "a.ply", PLY3))
    assert d.points.shape == (3, 3) and np.allclose(d.normals, [[0, 0, 1]] * 3)
    assert d.comments == ["tiny"]


@pytest.mark.parametrize("binary", [False, True])
def test_ply_roundtrip(tmp_path, binary):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    N = rng.normal(size=(50, 3))
    N /= np.linalg.norm(N, axis=1, keepdims=True)
    p = tmp_path / "r.ply"
    write_ply(p, X, N, binary=binary)
    d = read_cloud(p)
    assert detect_format(p) == ("ply-binary-little-endian" if binary else "ply-ascii")
    assert np.array_equal(d.points, X)
    assert np.allclose(d.normals, N, atol=1e-15)


def test_unknown_properties_and_elements_skipped(tmp_path):
    text = PLY3.replace("property float nz\n", "property float nz\nproperty uchar red\n")
    text = text.replace("end_header\n", "element face 1\nproperty list uchar int vertex_indices\n"
                        "end_header\n")
    body = text.split("end_header\n")
    rows = [r + " 200" for r in body[1].strip().splitlines()]
    d = read_cloud(_write(tmp_path, "u.ply", body[0] + "end_header\n" + "\n".join(rows)
                          + "\n3 0 1 2\n"))
    assert len(d) == 3 and d.normals is not None


def test_binary_with_unknown_property(tmp_path):
    head = ("ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\n"
            "property float y\nproperty uchar tag\nproperty float z\nend_header\n").encode()
    body = struct.pack("<ffBf", 1, 2, 9, 3) + struct.pack("<ffBf", 4, 5, 9, 6)
    d = read_cloud(_write(tmp_path, "b.ply", head + body))
    assert np.allclose(d.points, [[1, 2, 3], [4, 5, 6]]) and d.normals is None


def test_missing_vertex_element(tmp_path):
    text = "ply\nformat ascii 1.0\nelement face 0\nproperty list uchar int v\nend_header\n"
    with pytest.raises(ParseError):
        read_cloud(_write(tmp_path, "f.ply", text))


def test_truncated_binary_names_byte_offset(tmp_path):
    p = tmp_path / "t.ply"
    write_ply(p, np.zeros((10, 3)), binary=True)
    data = p.read_bytes()
    p.write_bytes(data[:-20])
    with pytest.raises(ParseError) as info:
        read_cloud(p)
    assert "byte offset" in str(info.value.location)
    assert str(len(data) - 20) in info.value.location


def test_big_endian_unsupported(tmp_path):
    text = "ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n"
    with pytest.raises(UnsupportedFormat):
        read_cloud(_write(tmp_path, "be.ply", text))


def test_malformed_header(tmp_path):
    with pytest.raises(ParseError) as info:
        read_cloud(_write(tmp_path, "m.ply", "ply\nformat ascii 1.0\nelement vertex x\n"))
    assert info.value.location == "line 3"
    with pytest.raises(ParseError):
        read_cloud(_write(tmp_path, "n.ply", "not a ply\n"))


def test_xyz_and_xyzn(tmp_path):
    p = tmp_path / "p.xyz"
    write_xyz(p, [[1, 2, 3], [4, 5, 6], [7, 8, 9]])
    d = read_cloud(p)
    assert d.normals is None and np.array_equal(d.points[1], [4, 5, 6])
    q = tmp_path / "p.xyzn"
    write_xyz(q, [[1, 2, 3]], [[0, 0, 2]])
    d = read_cloud(q)
    assert np.allclose(d.normals, [[0, 0, 1]])


def test_text_errors(tmp_path):
    with pytest.raises(ParseError) as info:
        read_cloud(_write(tmp_path, "bad.xyz", "1 2 3\n1 2\n"))
    assert info.value.location == "line 2"
    with pytest.raises(ParseError):
        read_cloud(_write(tmp_path, "nan.xyz", "1 2 nan\n"))
    with pytest.raises(ParseError):
        read_cloud(_write(tmp_path, "inf.ply", PLY3.replace("1 0 0 0 0 1", "inf 0 0 0 0 1")))
    with pytest.raises(ParseError):
        read_cloud(_write(tmp_path, "z.xyzn", "0 0 0 0 0 0\n"))
    with pytest.raises(UnsupportedFormat):
        read_cloud(_write(tmp_path, "x.obj", "v 0 0 0\n"))


def _report(n=2):
    entries = [QuadricEntry([0.1 * (i + 1)] * 9 + [1 / 3], "sphere", 0.5 / (i + 1), 10 * i)
               for i in range(n)]
    return DetectionReport(entries, [[0, 0, 1, -0.5]], {"mode": "generic", "tau": 0.01}, 7)


def test_report_roundtrip(tmp_path):
    r = _report()
    p = tmp_path / "r.json"
    write_report(r, p)
    assert read_report(p) == r
    assert read_report(p).to_dict() == r.to_dict()


def test_report_empty_detection(tmp_path):
    r = DetectionReport([], [], {"mode": "sphere"}, 0)
    p = tmp_path / "e.json"
    write_report(r, p)
    d = json.loads(p.read_text())
    assert d["quadrics"] == [] and d["config_echo"]


def test_report_validation(tmp_path):
    bad = _report()
    bad.quadrics[0].score = 1.5
    with pytest.raises(ValueError):
        write_report(bad, tmp_path / "x.json")
    with pytest.raises(ValueError):
        write_report(DetectionReport([], [], {}, 0), tmp_path / "y.json")


def test_report_digits_and_key_order():
    text = report_text(_report(1))
    assert "0.33333333333333331" in text
    keys = list(json.loads(text))
    assert keys == ["seed", "frame", "quadrics", "planes_removed", "config_echo"]
    assert list(json.loads(text)["quadrics"][0]) == ["coefficients", "class", "score",
                                                      "inlier_count"]
