//! Uniform node grids and per-site scalar fields.

use crate::error::{Error, Result};
use crate::lattice::Offset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Walls {
    /// Periodic in every direction.
    None,
    /// No-slip walls halfway between nodes below row 0 and above row ny-1; periodic in x.
    HalfwayY,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    /// Coordinates of node (0, 0).
    pub origin: [f64; 2],
    pub walls: Walls,
}

impl Grid {
    pub fn periodic_1d(n: usize, dx: f64, x0: f64) -> Result<Self> {
        Self::new(n, 1, dx, [x0, 0.0], Walls::None)
    }

    pub fn periodic_2d(nx: usize, ny: usize, dx: f64, origin: [f64; 2]) -> Result<Self> {
        Self::new(nx, ny, dx, origin, Walls::None)
    }

    pub fn new(nx: usize, ny: usize, dx: f64, origin: [f64; 2], walls: Walls) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Parameter("grid needs at least one node per direction".into()));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::Parameter(format!("grid spacing must be positive, got {dx}")));
        }
        Ok(Grid { nx, ny, dx, origin, walls })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.nx + x
    }

    #[inline]
    pub fn coords(&self, site: usize) -> (usize, usize) {
        (site % self.nx, site / self.nx)
    }

    pub fn position(&self, site: usize) -> [f64; 2] {
        let (x, y) = self.coords(site);
        [self.origin[0] + x as f64 * self.dx, self.origin[1] + y as f64 * self.dx]
    }

    /// Neighbour of `site` at offset `z`, or `None` when it lies beyond a wall.
    #[inline]
    pub fn neighbor(&self, site: usize, z: Offset) -> Option<usize> {
        let (x, y) = self.coords(site);
        let xn = (x as i64 + z[0] as i64).rem_euclid(self.nx as i64) as usize;
        let yr = y as i64 + z[1] as i64;
        let yn = match self.walls {
            Walls::None => yr.rem_euclid(self.ny as i64) as usize,
            Walls::HalfwayY => {
                if yr < 0 || yr >= self.ny as i64 {
                    return None;
                }
                yr as usize
            }
        };
        Some(self.index(xn, yn))
    }

    /// Periodic neighbour ignoring walls (used by stencil application in periodic directions).
    #[inline]
    pub fn wrap(&self, site: usize, z: Offset) -> usize {
        let (x, y) = self.coords(site);
        let xn = (x as i64 + z[0] as i64).rem_euclid(self.nx as i64) as usize;
        let yn = (y as i64 + z[1] as i64).rem_euclid(self.ny as i64) as usize;
        self.index(xn, yn)
    }
}

/// Central-difference gradient of a scalar field; one-sided next to walls.
pub fn gradient(grid: &Grid, f: &[f64], dim: usize, out: &mut [[f64; 2]]) {
    let (nx, ny) = (grid.nx, grid.ny);
    let inv2h = 0.5 / grid.dx;
    let invh = 1.0 / grid.dx;
    for y in 0..ny {
        let (ym, yp) = match grid.walls {
            Walls::None => (Some((y + ny - 1) % ny), Some((y + 1) % ny)),
            Walls::HalfwayY => ((y > 0).then(|| y - 1), (y + 1 < ny).then_some(y + 1)),
        };
        let row = &f[y * nx..(y + 1) * nx];
        for x in 0..nx {
            let s = y * nx + x;
            let xm = if x == 0 { nx - 1 } else { x - 1 };
            let xp = if x + 1 == nx { 0 } else { x + 1 };
            let gx = (row[xp] - row[xm]) * inv2h;
            let gy = if dim < 2 {
                0.0
            } else {
                match (ym, yp) {
                    (Some(m), Some(p)) => (f[p * nx + x] - f[m * nx + x]) * inv2h,
                    (None, Some(p)) => (f[p * nx + x] - f[s]) * invh,
                    (Some(m), None) => (f[s] - f[m * nx + x]) * invh,
                    (None, None) => 0.0,
                }
            };
            out[s] = [gx, gy];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_and_wall_neighbours() {
        let g = Grid::new(4, 3, 0.1, [0.0, 0.05], Walls::HalfwayY).unwrap();
        assert_eq!(g.neighbor(g.index(0, 0), [-1, 0]), Some(g.index(3, 0)));
        assert_eq!(g.neighbor(g.index(0, 0), [0, -1]), None);
        assert_eq!(g.neighbor(g.index(2, 2), [1, 1]), None);
        assert_eq!(g.wrap(g.index(2, 2), [1, 1]), g.index(3, 0));
        let p = g.position(g.index(1, 2));
        assert!((p[0] - 0.1).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }
}
