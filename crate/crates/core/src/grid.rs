//! Cell-centered radial grids and nonnegative radial densities on them.
//!
//! Cell `i` covers `[i dr, (i + 1) dr]`, its center is `r_i = (i + 1/2) dr` and its
//! volume is the `d`-dimensional shell volume `omega_d (r_{i+1/2}^d - r_{i-1/2}^d)`.
//! All integrals use the volume-weighted midpoint rule, the same quadrature the
//! solver uses, so discrete identities such as mass conservation hold exactly.

use alloc::format;
use alloc::sync::Arc;

use crate::error::{domain, Result};
use crate::prelude::*;
use crate::quadrature::{sphere_area, unit_ball_volume};

#[derive(Debug, PartialEq)]
struct Geometry {
    centers: Vec<f64>,
    faces: Vec<f64>,
    volumes: Vec<f64>,
    areas: Vec<f64>,
}

/// A uniform radial grid on `[0, R]` in dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    d: usize,
    radius: f64,
    cells: usize,
    geom: Arc<Geometry>,
}

impl RadialGrid {
    pub fn new(d: usize, radius: f64, cells: usize) -> Result<Self> {
        if d < 1 {
            return Err(domain("grid dimension must be positive"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(domain(format!("grid radius R = {radius} must be positive")));
        }
        if cells < 2 {
            return Err(domain(format!("grid needs at least 2 cells, got {cells}")));
        }
        let dr = radius / cells as f64;
        let ball = unit_ball_volume(d);
        let sphere = sphere_area(d);
        let faces: Vec<f64> = (0..=cells).map(|i| i as f64 * dr).collect();
        let centers = (0..cells).map(|i| (i as f64 + 0.5) * dr).collect();
        let volumes = faces
            .windows(2)
            .map(|w| ball * (w[1].powi(d as i32) - w[0].powi(d as i32)))
            .collect();
        let areas = faces.iter().map(|r| sphere * r.powi(d as i32 - 1)).collect();
        Ok(RadialGrid {
            d,
            radius,
            cells,
            geom: Arc::new(Geometry { centers, faces, volumes, areas }),
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }

    pub fn dr(&self) -> f64 {
        self.radius / self.cells as f64
    }

    /// Cell centers `r_i`.
    pub fn centers(&self) -> &[f64] {
        &self.geom.centers
    }

    /// Cell faces `r_{i-1/2}`, `N + 1` values starting at 0.
    pub fn faces(&self) -> &[f64] {
        &self.geom.faces
    }

    pub fn volumes(&self) -> &[f64] {
        &self.geom.volumes
    }

    /// Area of each face, `|S^{d-1}| r^{d-1}`.
    pub fn face_areas(&self) -> &[f64] {
        &self.geom.areas
    }

    /// Same cell count, radius multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> RadialGrid {
        RadialGrid::new(self.d, self.radius * factor, self.cells)
            .expect("scaling a valid grid by a positive factor")
    }

    /// Cell index containing `r`, if `0 <= r < R`.
    pub fn cell_of(&self, r: f64) -> Option<usize> {
        if !(r >= 0.0) || r >= self.radius {
            return None;
        }
        Some(((r / self.dr()) as usize).min(self.cells - 1))
    }
}

/// Cell averages of a nonnegative radial density.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGridFunction {
    grid: RadialGrid,
    values: Vec<f64>,
}

impl RadialGridFunction {
    /// # Panics
    /// If `values.len()` differs from the cell count.
    pub fn new(grid: RadialGrid, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "one value per cell");
        RadialGridFunction { grid, values }
    }

    pub fn zeros(grid: RadialGrid) -> Self {
        let n = grid.len();
        RadialGridFunction::new(grid, vec![0.0; n])
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(grid: RadialGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.centers().iter().map(|&r| f(r)).collect();
        RadialGridFunction::new(grid, values)
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Volume-weighted sum of `f(r_i, theta_i)`.
    pub fn integrate(&self, mut f: impl FnMut(f64, f64) -> f64) -> f64 {
        self.grid
            .centers()
            .iter()
            .zip(self.grid.volumes())
            .zip(&self.values)
            .map(|((&r, &v), &th)| f(r, th) * v)
            .sum()
    }

    pub fn mass(&self) -> f64 {
        self.integrate(|_, th| th)
    }

    /// `int |eta|^2 theta`.
    pub fn second_moment(&self) -> f64 {
        self.integrate(|r, th| r * r * th)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }

    /// `L^p` norm, `p = f64::INFINITY` allowed.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.sup();
        }
        if p == 1.0 {
            return self.integrate(|_, th| th.abs());
        }
        self.integrate(|_, th| th.abs().powf(p)).powf(1.0 / p)
    }

    /// `||theta - other||_1` on the shared grid.
    pub fn l1_distance(&self, other: &RadialGridFunction) -> f64 {
        debug_assert_eq!(self.grid.len(), other.grid.len());
        self.grid
            .volumes()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(v, (a, b))| (a - b).abs() * v)
            .sum()
    }

    /// Piecewise linear interpolant through the cell centers, flat on `[0, r_0]`
    /// and on `[r_{N-1}, R]`, zero beyond `R`.
    pub fn sample_at(&self, r: f64) -> f64 {
        let r = r.abs();
        let dr = self.grid.dr();
        let n = self.values.len();
        if r > self.grid.radius() {
            return 0.0;
        }
        let s = r / dr - 0.5;
        if s <= 0.0 {
            return self.values[0];
        }
        let i = s as usize;
        if i + 1 >= n {
            return self.values[n - 1];
        }
        let w = s - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Linear interpolation onto `target`, rescaled to keep the mass unchanged.
    pub fn resample(&self, target: &RadialGrid) -> RadialGridFunction {
        let mut out = RadialGridFunction::from_fn(target.clone(), |r| self.sample_at(r));
        let (have, want) = (out.mass(), self.mass());
        if have > 0.0 {
            out.scale(want / have);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Rescales to total mass `mass`; fails for an all-zero density.
    pub fn normalize_to(&mut self, mass: f64) -> Result<()> {
        let have = self.mass();
        if !(have > 0.0 && have.is_finite()) {
            return Err(domain(format!("density with mass {have} cannot be normalized")));
        }
        self.scale(mass / have);
        Ok(())
    }

    /// Largest cell center with a value above `floor`, or 0 if none.
    pub fn support_radius(&self, floor: f64) -> f64 {
        self.values
            .iter()
            .rposition(|&v| v > floor)
            .map(|i| self.grid.faces()[i + 1])
            .unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use core::f64::consts::PI;

    #[test]
    fn volumes_tile_the_ball() {
        for d in 2..=4 {
            let g = RadialGrid::new(d, 3.0, 37).unwrap();
            let total: f64 = g.volumes().iter().sum();
            assert_relative_eq!(total, unit_ball_volume(d) * 3f64.powi(d as i32), max_relative = 1e-13);
        }
        let g = RadialGrid::new(3, 1.0, 10).unwrap();
        assert_relative_eq!(g.face_areas()[10], 4.0 * PI, max_relative = 1e-14);
        assert_eq!(g.face_areas()[0], 0.0);
    }

    #[test]
    fn gaussian_moments() {
        let g = RadialGrid::new(3, 10.0, 2000).unwrap();
        let f = RadialGridFunction::from_fn(g, |r| (2.0 * PI).powf(-1.5) * (-r * r / 2.0).exp());
        assert_relative_eq!(f.mass(), 1.0, max_relative = 1e-5);
        assert_relative_eq!(f.second_moment(), 3.0, max_relative = 1e-5);
        assert_relative_eq!(f.lp_norm(f64::INFINITY), f.values()[0]);
    }

    #[test]
    fn resample_conserves_mass_and_interpolates() {
        let g = RadialGrid::new(2, 4.0, 80).unwrap();
        let f = RadialGridFunction::from_fn(g.clone(), |r| (-r * r).exp());
        let h = RadialGrid::new(2, 4.0, 200).unwrap();
        let r = f.resample(&h);
        assert_relative_eq!(r.mass(), f.mass(), max_relative = 1e-13);
        assert!((r.sample_at(1.0) - (-1.0f64).exp()).abs() < 5e-3);
        assert_eq!(f.sample_at(5.0), 0.0);
    }

    #[test]
    fn normalize_rejects_zero() {
        let g = RadialGrid::new(2, 1.0, 4).unwrap();
        assert!(RadialGridFunction::zeros(g).normalize_to(1.0).is_err());
    }
}
