import numpy as np
import pytest

from tetadapt.mesh import build_mesh, cube_mesh

IDENTITY = np.array([1.0, 0.0, 1.0, 0.0, 0.0, 1.0])


def uniform_metric(n, hx, hy=None, hz=None):
    hy = hx if hy is None else hy
    hz = hx if hz is None else hz
    return np.tile([hx ** -2, 0.0, hy ** -2, 0.0, 0.0, hz ** -2], (n, 1))


def perturbed_cube(n=4, amount=0.25, seed=0):
    """Structured cube with interior vertices jittered by up to ``amount`` cells.

    Displacements that would invert an element are halved until none does.
    """
    m = cube_mesh(n)
    rng = np.random.default_rng(seed)
    a = m.a
    nv, nt = m.n_vertices, m.n_tets
    base = a.xyz[:nv].copy()
    interior = a.vcls[:nv] == 0
    disp = np.zeros_like(base)
    disp[interior] = rng.uniform(-amount, amount, (int(interior.sum()), 3)) / n
    T = a.tets[:nt]
    for _ in range(60):
        x = base + disp
        p = x[T]
        vol = np.einsum("ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]))
        bad = vol <= 0.05 / n ** 3
        if not bad.any():
            break
        disp[np.unique(T[bad])] *= 0.5
    tri, marks = m.surface_triangles()
    return build_mesh(base + disp, T, tri, marks)


@pytest.fixture
def cube3():
    return cube_mesh(3)


@pytest.fixture
def jittered():
    return perturbed_cube(4, 0.3, seed=1)


def total_volume(mesh):
    a = mesh.a
    T = a.tets[mesh.alive_tets()]
    p = a.xyz[T]
    return float(np.einsum("ij,ij->i", p[:, 1] - p[:, 0],
                           np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0])).sum() / 6.0)


def surface_on_cube_faces(mesh, lo=0.0, hi=1.0, tol=1e-12):
    """Every boundary triangle lies in the cube face named by its marker."""
    tri, marks = mesh.surface_triangles()
    p = mesh.a.xyz[tri]
    axis = (marks - 1) // 2
    want = np.where(marks % 2 == 1, lo, hi)
    coord = p[np.arange(len(tri)), :, axis]
    return bool(np.all(np.abs(coord - want[:, None]) <= tol))


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(criterion, ok, detail):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.setdefault(criterion, []).append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=str):
            for line in ACCEPTANCE[key]:
                terminalreporter.write_line(line)
