import unittest

import numpy as np
import numpy.testing as npt

from epiforge.errors import DimensionMismatch, InvalidDimension
from epiforge.grid import build_grid, laplacian_varcoef, laplacian_varcoef_vjp, total_abs_flux

try:
    from tests.utils import SEED
except ImportError:
    from utils import SEED


class TestBuildGrid(unittest.TestCase):

    def test_smallest_grid(self):
        grid = build_grid(3, 3, 1.0)
        self.assertEqual(grid.n_cells, 9)
        self.assertEqual(grid.index(2, 1), 5)

    def test_desk_grid(self):
        grid = build_grid(32, 32, 1.0)
        self.assertEqual(grid.n_cells, 1024)
        self.assertEqual(grid.cell_area, 1.0)

    def test_too_few_cells(self):
        with self.assertRaises(InvalidDimension):
            build_grid(2, 3, 1.0)

    def test_bad_spacing(self):
        for dx in (0.0, -1.0, float('nan'), float('inf')):
            with self.assertRaises(InvalidDimension):
                build_grid(4, 4, dx)

    def test_cell_centers_row_major(self):
        grid = build_grid(4, 3, 2.0)
        xc, yc = grid.cell_centers()
        k = grid.index(3, 1)
        self.assertEqual(xc[k], 7.0)
        self.assertEqual(yc[k], 3.0)


class TestLaplacian(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(SEED)
        self.grid = build_grid(8, 8, 1.0)

    def test_constant_field(self):
        coeff = self.rng.uniform(0.1, 2.0, self.grid.n_cells)
        out = laplacian_varcoef(np.full(self.grid.n_cells, 3.5), coeff, self.grid)
        npt.assert_array_equal(out, np.zeros(self.grid.n_cells))

    def test_quadratic_interior(self):
        xc, _ = self.grid.cell_centers()
        x = xc - 0.5
        out = self.grid.to_image(laplacian_varcoef(x * x, np.ones(self.grid.n_cells), self.grid))
        npt.assert_allclose(out[:, 1:-1], 2.0, rtol=0, atol=1e-12)

    def test_conserves_mass(self):
        for _ in range(1000):
            u = self.rng.uniform(0.0, 1.0, self.grid.n_cells)
            coeff = self.rng.uniform(0.0, 1.0, self.grid.n_cells)
            out = laplacian_varcoef(u, coeff, self.grid)
            self.assertLessEqual(abs(np.sum(out)), 1e-12 * total_abs_flux(u, coeff, self.grid))

    def test_reflection_symmetry(self):
        u = self.rng.uniform(size=self.grid.n_cells)
        coeff = self.rng.uniform(0.1, 1.0, self.grid.n_cells)
        flip = lambda v: self.grid.to_image(v)[:, ::-1].ravel()
        out = laplacian_varcoef(u, coeff, self.grid)
        mirrored = laplacian_varcoef(flip(u), flip(coeff), self.grid)
        npt.assert_allclose(flip(out), mirrored, rtol=1e-12, atol=1e-14)

    def test_batch(self):
        u = self.rng.uniform(size=(3, self.grid.n_cells))
        coeff = self.rng.uniform(0.1, 1.0, self.grid.n_cells)
        out = laplacian_varcoef(u, coeff, self.grid)
        for k in range(3):
            npt.assert_allclose(out[k], laplacian_varcoef(u[k], coeff, self.grid), rtol=1e-14)

    def test_wrong_length(self):
        with self.assertRaises(DimensionMismatch):
            laplacian_varcoef(np.zeros(10), np.ones(self.grid.n_cells), self.grid)

    def test_vjp(self):
        n = self.grid.n_cells
        u = self.rng.uniform(size=n)
        coeff = self.rng.uniform(0.1, 1.0, n)
        w = self.rng.normal(size=n)
        du, dc = laplacian_varcoef_vjp(u, coeff, w, self.grid)
        npt.assert_allclose(du, laplacian_varcoef(w, coeff, self.grid), rtol=1e-14)
        # the operator is linear in the coefficient
        expected = np.array([w.dot(laplacian_varcoef(u, np.eye(n)[k], self.grid)) for k in range(n)])
        npt.assert_allclose(dc, expected, rtol=1e-10, atol=1e-12)


if __name__ == '__main__':
    unittest.main()
