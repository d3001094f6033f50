"""Binary graph container: round trips and format rejection."""

import numpy as np
import pytest

from darnwalk.graphio import MAGIC, GraphFormatError, load_graph, save_graph


def assert_graphs_equal(a, b):
    assert a.dim == b.dim
    assert a.level == b.level
    assert a.window_radius == b.window_radius
    assert a.star_id == b.star_id
    assert np.array_equal(a.coords, b.coords)
    assert np.array_equal(a.indptr, b.indptr)
    assert np.array_equal(a.indices, b.indices)
    if a.region is None:
        assert b.region is None
    else:
        assert a.region.to_config() == b.region.to_config()


def test_roundtrip_darned(g3, tmp_path):
    p = tmp_path / "g3.dwg"
    save_graph(g3, p)
    assert_graphs_equal(g3, load_graph(p))


def test_roundtrip_three_dimensional(g3d, tmp_path):
    p = tmp_path / "g3d.dwg"
    save_graph(g3d, p)
    assert_graphs_equal(g3d, load_graph(p))


def test_roundtrip_plain(plain5, tmp_path):
    p = tmp_path / "plain.dwg"
    save_graph(plain5, p)
    g = load_graph(p)
    assert g.region is None and not g.has_star
    assert_graphs_equal(plain5, g)


def test_save_is_deterministic(g3, tmp_path):
    p1, p2 = tmp_path / "a.dwg", tmp_path / "b.dwg"
    save_graph(g3, p1)
    save_graph(g3, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.dwg"
    p.write_bytes(b"NOTAGRPH" + b"\x00" * 100)
    with pytest.raises(GraphFormatError):
        load_graph(p)


def test_load_rejects_truncation(g3, tmp_path):
    p = tmp_path / "g3.dwg"
    save_graph(g3, p)
    raw = p.read_bytes()
    for cut in (len(MAGIC) + 3, len(raw) // 2, len(raw) - 1):
        q = tmp_path / f"cut{cut}.dwg"
        q.write_bytes(raw[:cut])
        with pytest.raises(GraphFormatError):
            load_graph(q)


def test_load_rejects_trailing_garbage(g3, tmp_path):
    p = tmp_path / "g3.dwg"
    save_graph(g3, p)
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(GraphFormatError):
        load_graph(p)


def test_loaded_graph_is_usable(g3, tmp_path):
    p = tmp_path / "g3.dwg"
    save_graph(g3, p)
    g = load_graph(p)
    assert g.total_measure == g3.total_measure
    assert g.vertex_at([0.5, 0.0]) == g3.vertex_at([0.5, 0.0])
    v = g.vertex_at([0.5, 0.0])
    assert np.array_equal(g.neighbors(v), g3.neighbors(v))
