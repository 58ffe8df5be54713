'''
Uniform structured 2D grid and the conservative variable-coefficient
Laplacian used for the diffusion terms of the SEIRD model.

Cells are flattened row-major: cell (x, y) has index k = y * nx + x. All
field operations accept leading batch dimensions, so a field is any array
whose last axis has length n_cells.
'''

from epiforge.errors import DimensionMismatch, InvalidDimension
import numpy as np

MIN_CELLS_PER_AXIS = 3


class Grid(object):

    def __init__(self, nx, ny, dx):
        self.nx = nx
        self.ny = ny
        self.dx = dx

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def cell_area(self):
        return self.dx * self.dx

    def index(self, x, y):
        return y * self.nx + x

    def cell_centers(self):
        '''Returns flattened (xc, yc) arrays of cell-center coordinates in km.'''
        xs = (np.arange(self.nx) + 0.5) * self.dx
        ys = (np.arange(self.ny) + 0.5) * self.dx
        xc, yc = np.meshgrid(xs, ys)  # rows are y, so ravel() is row-major
        return xc.ravel(), yc.ravel()

    def to_image(self, field):
        return np.asarray(field).reshape(np.shape(field)[:-1] + (self.ny, self.nx))

    def check_field(self, field, name='field'):
        field = np.asarray(field, dtype=float)
        if field.ndim == 0 or field.shape[-1] != self.n_cells:
            raise DimensionMismatch('%s has trailing length %s, grid has %d cells' % (
                name, field.shape[-1] if field.ndim else 'scalar', self.n_cells))
        return field

    def __eq__(self, other):
        return isinstance(other, Grid) and (self.nx, self.ny, self.dx) == (other.nx, other.ny, other.dx)

    def __repr__(self):
        return 'Grid(nx=%d, ny=%d, dx=%r)' % (self.nx, self.ny, self.dx)


def build_grid(nx, ny, dx):
    if int(nx) != nx or int(ny) != ny:
        raise InvalidDimension('cell counts must be integers, got %r x %r' % (nx, ny))
    if nx < MIN_CELLS_PER_AXIS or ny < MIN_CELLS_PER_AXIS:
        raise InvalidDimension('grid needs at least %d cells per axis, got %d x %d' % (
            MIN_CELLS_PER_AXIS, nx, ny))
    if not np.isfinite(dx) or dx <= 0:
        raise InvalidDimension('cell spacing must be positive, got %r' % dx)
    return Grid(int(nx), int(ny), float(dx))


def _face_fluxes(u, coeff, grid):
    # flux through each interior face, positive when it flows into the
    # lower-index neighbour (from the higher-index one)
    inv_dx2 = 1.0 / (grid.dx * grid.dx)
    cx = 0.5 * (coeff[..., :, 1:] + coeff[..., :, :-1])
    cy = 0.5 * (coeff[..., 1:, :] + coeff[..., :-1, :])
    fx = cx * (u[..., :, 1:] - u[..., :, :-1]) * inv_dx2
    fy = cy * (u[..., 1:, :] - u[..., :-1, :]) * inv_dx2
    return fx, fy


def laplacian_varcoef(u, coeff, grid):
    '''
    Flux-form discretization of div(coeff * grad u) with homogeneous Neumann
    (no-flux) boundaries.

    Every interior face carries c_face * (u_nbr - u_cell) / dx^2 with c_face
    the arithmetic mean of the two adjacent cell coefficients; each face
    flux is added to one cell and subtracted from the other, so the output
    sums to zero over the grid.
    '''
    u = grid.check_field(u, 'u')
    coeff = grid.check_field(coeff, 'coeff')
    u, coeff = np.broadcast_arrays(u, coeff)
    U = grid.to_image(u)
    C = grid.to_image(coeff)
    fx, fy = _face_fluxes(U, C, grid)

    out = np.zeros(U.shape)
    out[..., :, :-1] += fx
    out[..., :, 1:] -= fx
    out[..., :-1, :] += fy
    out[..., 1:, :] -= fy
    return out.reshape(u.shape)


def laplacian_varcoef_vjp(u, coeff, w, grid):
    '''
    Vector-Jacobian product of laplacian_varcoef.

    Returns (du, dcoeff), the adjoints of u and coeff for an output adjoint
    w. The operator is symmetric in u, so du = laplacian_varcoef(w, coeff).
    '''
    u = grid.check_field(u, 'u')
    coeff = grid.check_field(coeff, 'coeff')
    w = grid.check_field(w, 'w')
    u, coeff, w = np.broadcast_arrays(u, coeff, w)
    du = laplacian_varcoef(w, coeff, grid)

    inv_dx2 = 1.0 / (grid.dx * grid.dx)
    U = grid.to_image(u)
    W = grid.to_image(w)
    # each face contributes 0.5 * (u_hi - u_lo) * (w_lo - w_hi) / dx^2 to
    # both adjacent coefficients
    gx = 0.5 * (U[..., :, 1:] - U[..., :, :-1]) * (W[..., :, :-1] - W[..., :, 1:]) * inv_dx2
    gy = 0.5 * (U[..., 1:, :] - U[..., :-1, :]) * (W[..., :-1, :] - W[..., 1:, :]) * inv_dx2
    dc = np.zeros(U.shape)
    dc[..., :, :-1] += gx
    dc[..., :, 1:] += gx
    dc[..., :-1, :] += gy
    dc[..., 1:, :] += gy
    return du, dc.reshape(u.shape)


def total_abs_flux(u, coeff, grid):
    '''Sum of |face flux| over all interior faces, the scale for conservation checks.'''
    U = grid.to_image(grid.check_field(u, 'u'))
    C = grid.to_image(grid.check_field(coeff, 'coeff'))
    fx, fy = _face_fluxes(U, C, grid)
    return float(np.sum(np.abs(fx)) + np.sum(np.abs(fy)))
