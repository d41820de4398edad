import numpy as np
import pytest

from clogsim import Circle, ClogsimError, MeshingError, ValidationError, eval_initial_curve
from clogsim import coefftab
from clogsim.cellmesh import triangulate_perforated_cell
from clogsim.cellsolve import effective_tensor, solve_cell
from clogsim.coefftab import CSV_HEADER, CoefficientTable, build_table, lookup, read_table, write_table
from clogsim.microgeometry import max_admissible_offset


def small_table(M=2):
    return build_table(Circle(0.2), M=M, h=0.05)


def test_circle_table_range_and_first_entry(tables):
    t = tables("circle")
    assert len(t) == 61
    assert t.sigmas[0] == 0.0
    assert 0.299 - 1e-6 <= t.sigma_max <= 0.299
    mesh = triangulate_perforated_cell([eval_initial_curve(Circle(0.2))], 0.02)
    D = effective_tensor(mesh, solve_cell(mesh)).D
    assert np.array_equal(t.D[0], D)
    assert t.phi[0] == pytest.approx(0.8743, abs=1e-3)


def test_bean_table_capped_by_curvature(tables):
    t = tables("bean")
    sigma_clog, sigma_smooth = max_admissible_offset(eval_initial_curve(t.shape), 1e-3)
    assert t.sigma_max == sigma_smooth < sigma_clog


@pytest.mark.parametrize("name", ["circle", "ellipse30", "ellipse45"])
def test_table_invariants(tables, name):
    t = tables(name)
    assert np.all(np.diff(t.phi) < 0)
    assert np.all(t.A > 0)
    for D in t.D:
        assert abs(D[0, 1] - D[1, 0]) <= 1e-8 * np.linalg.norm(D)
        assert np.linalg.eigvalsh(D).min() > 0
    assert np.all(np.diff(t.D[:, 0, 0]) <= 0) and np.all(np.diff(t.D[:, 1, 1]) <= 0)


def test_minimal_table_is_linear():
    t = small_table(2)
    assert len(t) == 3
    s = np.linspace(t.sigmas[0], t.sigmas[1], 7)
    D, A, phi, _ = lookup(t, s)
    w = (s - t.sigmas[0]) / (t.sigmas[1] - t.sigmas[0])
    assert np.allclose(A, (1 - w) * t.A[0] + w * t.A[1], rtol=1e-14)


def test_lookup_contract():
    t = small_table(4)
    for i, s in enumerate(t.sigmas):
        D, A, phi, clogged = lookup(t, s)
        assert np.array_equal(D, t.D[i]) and A == t.A[i] and phi == t.phi[i] and not clogged
    mid = 0.5 * (t.sigmas[1] + t.sigmas[2])
    D, A, _, _ = lookup(t, mid)
    assert np.allclose(D, 0.5 * (t.D[1] + t.D[2]), rtol=1e-14)
    assert A == pytest.approx(0.5 * (t.A[1] + t.A[2]), rel=1e-14)
    D, A, phi, clogged = lookup(t, t.sigma_max + 0.1)
    assert clogged and np.array_equal(D, t.D[-1]) and A == t.A[-1]
    D, A, _, clogged = lookup(t, -0.05)
    assert not clogged and np.array_equal(D, t.D[0])
    D2, _, _, _ = lookup(t, 0.1, d_i=0.5)
    assert np.allclose(D2, 0.5 * lookup(t, 0.1)[0], rtol=1e-15)


def test_lookup_is_continuous():
    t = small_table(6)
    s = np.linspace(0, t.sigma_max, 4001)
    _, A, phi, _ = lookup(t, s)
    bound = np.max(np.abs(np.diff(t.A) / np.diff(t.sigmas)))
    assert np.max(np.abs(np.diff(A))) <= bound * (s[1] - s[0]) * (1 + 1e-9)


def test_specific_surface_slope_stable_under_refinement():
    def max_slope(M):
        t = build_table(Circle(0.2), M=M, h=0.05)
        return np.max(np.abs(np.diff(t.A) / np.diff(t.sigmas)))
    s1, s2 = max_slope(10), max_slope(20)
    assert np.isfinite(s1) and abs(s2 - s1) / s1 < 0.5


def test_csv_roundtrip(tmp_path):
    t = small_table(3)
    path = tmp_path / "t.csv"
    write_table(t, path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    r = read_table(path)
    for f in ("sigmas", "D", "A", "phi", "gamma_len"):
        assert np.array_equal(getattr(r, f), getattr(t, f))
    write_table(r, tmp_path / "u.csv")
    assert (tmp_path / "u.csv").read_bytes() == path.read_bytes()


def test_empty_and_unsorted_tables_rejected(tmp_path):
    with pytest.raises(ValidationError):
        CoefficientTable(np.array([]), np.zeros((0, 2, 2)), np.array([]), np.array([]), np.array([]))
    with pytest.raises(ValidationError):
        CoefficientTable(np.array([0.0, 0.0]), np.zeros((2, 2, 2)), np.ones(2), np.ones(2), np.ones(2))
    (tmp_path / "e.csv").write_text(",".join(CSV_HEADER) + "\n")
    with pytest.raises(ValidationError):
        read_table(tmp_path / "e.csv")
    with pytest.raises(ValidationError):
        build_table(Circle(0.2), M=1)


def test_parallel_build_matches_serial():
    a = build_table(Circle(0.2), M=4, h=0.05)
    b = build_table(Circle(0.2), M=4, h=0.05, workers=2)
    assert np.array_equal(a.D, b.D) and np.array_equal(a.A, b.A)


def test_failure_truncates_table(monkeypatch):
    real = coefftab._entry

    def flaky(args):
        if args[1] > 0.15:
            raise MeshingError("synthetic failure")
        return real(args)

    monkeypatch.setattr(coefftab, "_entry", flaky)
    t = build_table(Circle(0.2), M=4, h=0.05)
    assert len(t) == 3 and t.truncated_at == pytest.approx(t.sigmas[-1] + 0.299 / 4, abs=1e-6)
