import numpy as np
import pytest

from tetadapt import reconnect as rc
from tetadapt.mesh import build_mesh, validate
from tetadapt.metric import delaunay_measure, minmax_edge_weight

from conftest import IDENTITY, perturbed_cube, surface_on_cube_faces, total_volume, uniform_metric


def two_tets(height=0.1):
    """Two flat tetrahedra on a common face; the far apex lies inside each circumsphere."""
    x = np.array([[0, 0, 0], [1, 0, 0], [0.5, 0.9, 0], [0.5, 0.3, height], [0.5, 0.3, -height]])
    return build_mesh(x, [[0, 1, 2, 3], [0, 2, 1, 4]])


def interior_violations(mesh):
    """Interior faces whose opposite apex lies inside the neighbour's circumsphere (identity)."""
    a = mesh.a
    n = 0
    for t in mesh.alive_tets():
        for j in range(4):
            u = a.adj[t, j]
            if u < 0 or u < t:
                continue
            apex = a.xyz[a.tets[u][~np.isin(a.tets[u], a.tets[t])][0]]
            if delaunay_measure(apex, a.xyz[a.tets[t]], IDENTITY) < 1 - 1e-9:
                n += 1
    return n


def test_flip23_on_delaunay_violation():
    m = two_tets()
    assert interior_violations(m) == 1
    j = int(np.flatnonzero(m.a.adj[0] >= 0)[0])
    assert rc.flip23(m, 0, j)
    assert m.n_tets == 3
    assert validate(m) == []
    assert total_volume(m) == pytest.approx(0.9 * 0.2 / 6)
    assert interior_violations(m) == 0


def test_flip32_reverses_flip23():
    m = two_tets(height=2.0)  # tall tets: the pair is already Delaunay
    assert interior_violations(m) == 0
    j = int(np.flatnonzero(m.a.adj[0] >= 0)[0])
    assert not rc.flip23(m, 0, j)
    assert m.n_tets == 2
    # three tets around the apex edge; removing it improves the configuration
    x = m.a.xyz[:5]
    m3 = build_mesh(x, [[3, 4, 0, 1], [3, 4, 1, 2], [3, 4, 2, 0]])
    assert validate(m3) == []
    assert rc.flip32(m3, 3, 4)
    assert m3.n_tets == 2
    assert validate(m3) == []


def test_pass_removes_delaunay_violations_with_identity_metric():
    m = perturbed_cube(4, 0.35, seed=3)
    before = interior_violations(m)
    vol = total_volume(m)
    assert before > 0
    st = rc.reconnection_pass(m, criterion="delaunay")
    assert st.applied > 0
    assert validate(m) == []
    assert total_volume(m) == pytest.approx(vol, rel=1e-12)
    assert interior_violations(m) < before
    assert surface_on_cube_faces(m)


def max_edge_weight(mesh):
    a = mesh.a
    return max(minmax_edge_weight(a.xyz[a.tets[t]], IDENTITY) for t in mesh.alive_tets())


def test_edge_weight_flips_never_raise_the_global_maximum():
    m = perturbed_cube(4, 0.35, seed=4)
    w0 = max_edge_weight(m)
    st = rc.reconnection_pass(m, criterion="edge-weight")
    assert st.applied > 0
    assert validate(m) == []
    assert max_edge_weight(m) <= w0 + 1e-12


def test_anisotropic_metric_changes_connectivity():
    m = perturbed_cube(4, 0.1, seed=5)
    m.set_metric(uniform_metric(m.n_vertices, 1.0, 0.05, 1.0))
    st = rc.reconnection_pass(m)
    assert st.applied > 0
    assert validate(m) == []
    assert surface_on_cube_faces(m)


def test_surface_flips_keep_markers_and_planes():
    m = perturbed_cube(4, 0.3, seed=6)
    m.set_metric(uniform_metric(m.n_vertices, 0.05, 1.0, 1.0))
    _, marks0 = m.surface_triangles()
    rc.reconnection_pass(m, surface=True)
    _, marks1 = m.surface_triangles()
    assert validate(m) == []
    assert surface_on_cube_faces(m)
    assert np.bincount(marks1).tolist() == np.bincount(marks0).tolist()


def test_multiple_workers_give_valid_meshes():
    for W in (1, 2, 4):
        m = perturbed_cube(5, 0.35, seed=7)
        rc.reconnection_pass(m, workers=W)
        assert validate(m) == [], W


def test_unknown_criterion():
    m = two_tets()
    with pytest.raises(KeyError):
        rc.reconnection_pass(m, criterion="nope")
