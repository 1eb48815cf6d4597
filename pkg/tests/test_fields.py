"""Grid, field, transfer, and norm tests.

Derived expectations are checked against independent oracles written
before the implementation: hand-evaluated bilinear weights, direct
per-node sampling, and naive two-pass summation for norms.
"""

import numpy as np
import pytest

from latentpde.errors import DimensionError, DomainMismatchError, FormatError, InvalidSpecError
from latentpde.fields import (
    FieldStats,
    Grid,
    ScalarField,
    constant_field,
    denormalize,
    l2_distance,
    normalize,
    prolongate,
    read_field,
    relative_l2,
    restrict,
    sample_bilinear,
    write_field,
)


def naive_l2(a, b):
    """Independent norm oracle: explicit loop, two-pass summation."""
    diffs = [(float(x) - float(y)) ** 2 for x, y in zip(np.ravel(a), np.ravel(b))]
    total = 0.0
    for d in diffs:
        total += d
    return total**0.5


def grid_field(grid, fn):
    X, Y = grid.coords()
    return ScalarField(grid, fn(X, Y))


class TestGrid:
    def test_spacing_is_node_centered(self):
        g = Grid(nx=5, ny=9, lx=1.0, ly=2.0)
        assert g.hx == pytest.approx(0.25)
        assert g.hy == pytest.approx(0.25)

    def test_node_coordinates_span_the_domain(self):
        g = Grid(nx=4, ny=3, lx=3.0, ly=1.0, origin=(1.0, -0.5))
        assert g.xs()[0] == 1.0 and g.xs()[-1] == pytest.approx(4.0)
        assert g.ys()[0] == -0.5 and g.ys()[-1] == pytest.approx(0.5)

    @pytest.mark.parametrize("nx,ny,lx,ly", [(1, 4, 1, 1), (4, 1, 1, 1), (4, 4, 0, 1), (4, 4, 1, -2)])
    def test_rejects_degenerate_grids(self, nx, ny, lx, ly):
        with pytest.raises(InvalidSpecError):
            Grid(nx=nx, ny=ny, lx=lx, ly=ly)


class TestScalarField:
    def test_accepts_flat_row_major_values(self):
        g = Grid(nx=3, ny=2, lx=1.0, ly=1.0)
        f = ScalarField(g, np.arange(6.0))
        assert f.values.shape == (2, 3)
        assert f.values[1, 0] == 3.0  # index = j*nx + i
        assert np.array_equal(f.flat, np.arange(6.0))

    def test_rejects_wrong_length(self):
        g = Grid(nx=3, ny=2, lx=1.0, ly=1.0)
        with pytest.raises(DimensionError):
            ScalarField(g, np.zeros(7))

    def test_rejects_non_finite_values(self):
        g = Grid(nx=2, ny=2, lx=1.0, ly=1.0)
        with pytest.raises(InvalidSpecError):
            ScalarField(g, np.array([0.0, 1.0, np.nan, 2.0]))

    def test_values_are_read_only(self):
        f = constant_field(Grid(nx=2, ny=2, lx=1.0, ly=1.0), 1.0)
        with pytest.raises(ValueError):
            f.values[0, 0] = 2.0


class TestProlongate:
    def test_reproduces_constants(self):
        coarse = constant_field(Grid(nx=4, ny=4, lx=1.0, ly=1.0), 3.25)
        fine = prolongate(coarse, Grid(nx=16, ny=16, lx=1.0, ly=1.0))
        assert np.all(fine.values == 3.25)

    def test_reproduces_linears_to_1e12(self):
        cg = Grid(nx=5, ny=5, lx=1.0, ly=1.0)
        fg = Grid(nx=33, ny=33, lx=1.0, ly=1.0)
        fine = prolongate(grid_field(cg, lambda X, Y: X), fg)
        Xf, _ = fg.coords()
        assert np.max(np.abs(fine.values - Xf)) < 1e-12

    def test_2x2_center_value_is_mean_of_corners(self):
        # Hand evaluation at (0.5, 0.5): all four bilinear weights are 1/4,
        # so the center of {0,1,2,3} is 1.5.
        cg = Grid(nx=2, ny=2, lx=1.0, ly=1.0)
        coarse = ScalarField(cg, np.array([[0.0, 1.0], [2.0, 3.0]]))
        fine = prolongate(coarse, Grid(nx=3, ny=3, lx=1.0, ly=1.0))
        assert fine.values[1, 1] == pytest.approx(1.5, abs=1e-15)

    def test_reproduces_bilinear_functions(self):
        cg = Grid(nx=7, ny=6, lx=2.0, ly=3.0, origin=(-1.0, 0.5))
        fg = Grid(nx=31, ny=23, lx=2.0, ly=3.0, origin=(-1.0, 0.5))
        fn = lambda X, Y: 2.0 - 0.5 * X + 3.0 * Y + 0.25 * X * Y
        fine = prolongate(grid_field(cg, fn), fg)
        Xf, Yf = fg.coords()
        assert np.max(np.abs(fine.values - fn(Xf, Yf))) < 1e-12

    def test_non_nested_resolutions_are_allowed(self):
        # 16 -> 64 nodes is not nested (63 intervals over 15), but bilinear
        # sampling still reproduces linears.
        cg = Grid(nx=16, ny=16, lx=1.0, ly=1.0)
        fg = Grid(nx=64, ny=64, lx=1.0, ly=1.0)
        fine = prolongate(grid_field(cg, lambda X, Y: X + 2 * Y), fg)
        Xf, Yf = fg.coords()
        assert np.max(np.abs(fine.values - (Xf + 2 * Yf))) < 1e-12

    def test_extent_mismatch_raises(self):
        coarse = constant_field(Grid(nx=4, ny=4, lx=1.0, ly=1.0), 0.0)
        with pytest.raises(DomainMismatchError):
            prolongate(coarse, Grid(nx=8, ny=8, lx=2.0, ly=1.0))

    def test_coarser_target_raises(self):
        coarse = constant_field(Grid(nx=8, ny=8, lx=1.0, ly=1.0), 0.0)
        with pytest.raises(DomainMismatchError):
            prolongate(coarse, Grid(nx=4, ny=4, lx=1.0, ly=1.0))


class TestRestrict:
    def test_injection_matches_direct_sampling_oracle(self):
        fg = Grid(nx=9, ny=9, lx=1.0, ly=1.0)
        cg = Grid(nx=5, ny=5, lx=1.0, ly=1.0)
        fine = grid_field(fg, lambda X, Y: X * Y)
        coarse = restrict(fine, cg)
        # Oracle: evaluate f(x, y) = x*y directly at every coarse node.
        for j, y in enumerate(cg.ys()):
            for i, x in enumerate(cg.xs()):
                assert coarse.values[j, i] == x * y

    def test_restrict_after_prolongate_is_identity(self):
        cg = Grid(nx=5, ny=4, lx=1.0, ly=1.0)
        rng = np.random.default_rng(42)
        coarse = ScalarField(cg, rng.standard_normal(cg.shape))
        fine = prolongate(coarse, Grid(nx=13, ny=10, lx=1.0, ly=1.0))
        back = restrict(fine, cg)
        assert np.array_equal(back.values, coarse.values)

    def test_constant_survives(self):
        fine = constant_field(Grid(nx=9, ny=9, lx=1.0, ly=1.0), -7.5)
        coarse = restrict(fine, Grid(nx=3, ny=3, lx=1.0, ly=1.0))
        assert np.all(coarse.values == -7.5)

    def test_non_nested_raises(self):
        fine = constant_field(Grid(nx=64, ny=64, lx=1.0, ly=1.0), 0.0)
        with pytest.raises(DomainMismatchError):
            restrict(fine, Grid(nx=16, ny=16, lx=1.0, ly=1.0))


class TestNormalization:
    def test_all_fives_normalize_to_zero(self):
        f = constant_field(Grid(nx=3, ny=3, lx=1.0, ly=1.0), 5.0)
        assert np.all(normalize(f, FieldStats(mean=5.0, std=1.0)).values == 0.0)

    def test_direct_formula(self):
        g = Grid(nx=3, ny=2, lx=1.0, ly=1.0)
        f = ScalarField(g, np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0]))
        n = normalize(f, FieldStats(mean=2.0, std=1.0))
        assert np.array_equal(n.flat, np.array([-1.0, 0.0, 1.0, -1.0, 0.0, 1.0]))

    def test_round_trip_within_1e12(self):
        g = Grid(nx=17, ny=11, lx=1.0, ly=1.0)
        rng = np.random.default_rng(7)
        for _ in range(20):
            f = ScalarField(g, 100.0 * rng.standard_normal(g.shape))
            stats = FieldStats.from_values(f.values)
            back = denormalize(normalize(f, stats), stats)
            scale = max(1.0, float(np.max(np.abs(f.values))))
            assert np.max(np.abs(back.values - f.values)) < 1e-12 * scale

    def test_std_floor_keeps_constant_fields_finite(self):
        f = constant_field(Grid(nx=4, ny=4, lx=1.0, ly=1.0), 2.0)
        stats = FieldStats.from_values(f.values)
        assert stats.std == 1e-12
        assert np.all(np.isfinite(normalize(f, stats).values))


class TestNorms:
    def test_identical_vectors_have_zero_distance(self):
        v = np.array([1.0, -2.0, 3.0])
        assert l2_distance(v, v) == 0.0

    def test_3_4_5_triangle(self):
        assert l2_distance(np.array([3.0, 0.0]), np.array([0.0, 4.0])) == 5.0

    def test_matches_naive_summation_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(25):
            n = int(rng.integers(2, 400))
            a = rng.standard_normal(n)
            b = rng.standard_normal(n)
            assert l2_distance(a, b) == pytest.approx(naive_l2(a, b), abs=1e-13, rel=1e-13)

    def test_length_mismatch_raises(self):
        with pytest.raises(DimensionError):
            l2_distance(np.zeros(3), np.zeros(4))

    def test_relative_l2_divides_by_reference_norm(self):
        g = Grid(nx=4, ny=4, lx=1.0, ly=1.0)
        a = constant_field(g, 1.1)
        b = constant_field(g, 1.0)
        expected = naive_l2(a.values, b.values) / naive_l2(b.values, np.zeros(16))
        assert relative_l2(a, b) == pytest.approx(expected, rel=1e-13)

    def test_relative_l2_falls_back_to_absolute_near_zero(self):
        g = Grid(nx=4, ny=4, lx=1.0, ly=1.0)
        a = constant_field(g, 2.0)
        b = constant_field(g, 0.0)
        assert relative_l2(a, b) == pytest.approx(naive_l2(a.values, b.values), rel=1e-13)

    def test_grid_mismatch_raises(self):
        a = constant_field(Grid(nx=4, ny=4, lx=1.0, ly=1.0), 0.0)
        b = constant_field(Grid(nx=5, ny=4, lx=1.0, ly=1.0), 0.0)
        with pytest.raises(DimensionError):
            relative_l2(a, b)


class TestSampleBilinear:
    def test_node_values_are_reproduced_exactly(self):
        g = Grid(nx=6, ny=5, lx=2.0, ly=1.0, origin=(0.5, 0.5))
        rng = np.random.default_rng(3)
        f = ScalarField(g, rng.standard_normal(g.shape))
        X, Y = g.coords()
        assert np.array_equal(sample_bilinear(f, X, Y), f.values)

    def test_points_clamp_to_domain(self):
        g = Grid(nx=3, ny=3, lx=1.0, ly=1.0)
        f = grid_field(g, lambda X, Y: X)
        assert sample_bilinear(f, 1.0 + 1e-13, 0.5) == pytest.approx(1.0)
        assert sample_bilinear(f, -5.0, 0.5) == pytest.approx(0.0)


class TestBinaryFormat:
    def test_round_trip_is_bit_exact(self, tmp_path):
        g = Grid(nx=7, ny=5, lx=2.0, ly=3.0, origin=(0.25, -1.0))
        rng = np.random.default_rng(99)
        f = ScalarField(g, rng.standard_normal(g.shape))
        p = tmp_path / "field.lpdf"
        write_field(f, p)
        back = read_field(p, lx=2.0, ly=3.0, origin=(0.25, -1.0))
        assert back.grid == g
        assert np.array_equal(back.values, f.values)

    def test_header_layout(self, tmp_path):
        f = constant_field(Grid(nx=3, ny=2, lx=1.0, ly=1.0), 1.0)
        p = tmp_path / "field.lpdf"
        write_field(f, p)
        raw = p.read_bytes()
        assert raw[:4] == b"LPDF"
        assert int.from_bytes(raw[4:8], "little") == 3
        assert int.from_bytes(raw[8:12], "little") == 2
        assert len(raw) == 16 + 6 * 8

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.lpdf"
        p.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(FormatError) as exc:
            read_field(p)
        assert exc.value.offset == 0

    def test_truncated_payload_rejected(self, tmp_path):
        f = constant_field(Grid(nx=4, ny=4, lx=1.0, ly=1.0), 1.0)
        p = tmp_path / "field.lpdf"
        write_field(f, p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(FormatError):
            read_field(p)

    def test_non_finite_payload_rejected(self, tmp_path):
        g = Grid(nx=2, ny=2, lx=1.0, ly=1.0)
        p = tmp_path / "field.lpdf"
        write_field(constant_field(g, 0.0), p)
        raw = bytearray(p.read_bytes())
        raw[16 + 8 : 16 + 16] = np.array([np.inf]).tobytes()
        p.write_bytes(bytes(raw))
        with pytest.raises(FormatError) as exc:
            read_field(p)
        assert exc.value.offset == 16 + 8
