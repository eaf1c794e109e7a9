//! Heightfield terrain with bilinear height queries.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Terrain {
    heights: Vec<f64>,
    nx: usize,
    ny: usize,
    cell_size: f64,
    origin: [f64; 2],
    flat: bool,
}

impl Terrain {
    pub fn flat() -> Self {
        Self { heights: vec![0.0], nx: 1, ny: 1, cell_size: 1.0, origin: [0.0, 0.0], flat: true }
    }

    /// Grid of `nx * ny` samples, row-major in x. Sample `(i, j)` sits at
    /// `origin + (i, j) * cell_size`.
    pub fn from_grid(heights: Vec<f64>, nx: usize, ny: usize, cell_size: f64, origin: [f64; 2]) -> Result<Self> {
        if nx < 2 || ny < 2 || heights.len() != nx * ny {
            return Err(Error::Construction(format!(
                "heightfield needs at least 2x2 samples and nx*ny heights (nx={nx}, ny={ny}, len={})",
                heights.len()
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::Construction(format!("cell size must be positive, got {cell_size}")));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::Construction("heightfield contains non-finite heights".into()));
        }
        Ok(Self { heights, nx, ny, cell_size, origin, flat: false })
    }

    /// Filtered Gaussian noise centred on the origin, rescaled so the sample
    /// standard deviation equals `roughness`. Zero roughness yields flat terrain.
    pub fn generate<R: Rng + ?Sized>(
        rng: &mut R,
        roughness: f64,
        correlation_length: f64,
        half_extent: f64,
        cell_size: f64,
    ) -> Result<Self> {
        if !(roughness.is_finite() && roughness >= 0.0) {
            return Err(Error::Construction(format!("roughness must be non-negative, got {roughness}")));
        }
        if roughness == 0.0 {
            return Ok(Self::flat());
        }
        if !(correlation_length > 0.0 && half_extent > 0.0 && cell_size > 0.0) {
            return Err(Error::Construction("terrain lengths must be positive".into()));
        }
        let n = (2.0 * half_extent / cell_size).ceil() as usize + 1;
        let noise: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();

        let sigma = (correlation_length / cell_size).max(1e-3);
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect();
        let ksum: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|k| k / ksum).collect();

        let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
        let mut pass = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                pass[j * n + i] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * noise[j * n + clamp(i as isize + k as isize - radius)])
                    .sum();
            }
        }
        let mut heights = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                heights[j * n + i] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * pass[clamp(j as isize + k as isize - radius) * n + i])
                    .sum();
            }
        }

        let mean = heights.iter().sum::<f64>() / heights.len() as f64;
        let var = heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / heights.len() as f64;
        let scale = if var > 0.0 { roughness / var.sqrt() } else { 0.0 };
        for h in &mut heights {
            *h = (*h - mean) * scale;
        }
        Self::from_grid(heights, n, n, cell_size, [-half_extent, -half_extent])
    }

    pub fn is_flat(&self) -> bool {
        self.flat
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    fn cell(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let gx = ((x - self.origin[0]) / self.cell_size).clamp(0.0, (self.nx - 1) as f64);
        let gy = ((y - self.origin[1]) / self.cell_size).clamp(0.0, (self.ny - 1) as f64);
        let i = (gx.floor() as usize).min(self.nx - 2);
        let j = (gy.floor() as usize).min(self.ny - 2);
        (i, j, gx - i as f64, gy - j as f64)
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.heights[j * self.nx + i]
    }

    /// Bilinear height; queries outside the grid clamp to the border.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        if self.flat {
            return 0.0;
        }
        let (i, j, fx, fy) = self.cell(x, y);
        let h00 = self.at(i, j);
        let h10 = self.at(i + 1, j);
        let h01 = self.at(i, j + 1);
        let h11 = self.at(i + 1, j + 1);
        h00 * (1.0 - fx) * (1.0 - fy) + h10 * fx * (1.0 - fy) + h01 * (1.0 - fx) * fy + h11 * fx * fy
    }

    /// Upward unit normal of the bilinear patch under `(x, y)`.
    pub fn normal(&self, x: f64, y: f64) -> Vector3<f64> {
        if self.flat {
            return Vector3::z();
        }
        let (i, j, fx, fy) = self.cell(x, y);
        let h00 = self.at(i, j);
        let h10 = self.at(i + 1, j);
        let h01 = self.at(i, j + 1);
        let h11 = self.at(i + 1, j + 1);
        let dx = ((h10 - h00) * (1.0 - fy) + (h11 - h01) * fy) / self.cell_size;
        let dy = ((h01 - h00) * (1.0 - fx) + (h11 - h10) * fx) / self.cell_size;
        Vector3::new(-dx, -dy, 1.0).normalize()
    }
}
