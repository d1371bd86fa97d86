//! Terrain height fields and tangent-plane fitting.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Height field `z(x, y)` with an analytic gradient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Terrain {
    Flat,
    /// Sinusoidal profile along x: `z = A sin(2 pi x / wavelength)` inside
    /// `x in [0, extent]`, clamped (continuously) outside.
    WaveField { amplitude: f64, wavelength: f64, extent: f64 },
    /// Bilinear interpolation of a regular height grid; flat beyond the
    /// sampled patch.
    Samples {
        x0: f64,
        y0: f64,
        dx: f64,
        dy: f64,
        /// Row-major grid, `heights[iy][ix]`.
        heights: Vec<Vec<f64>>,
    },
}

impl Terrain {
    /// Wave field whose maximum slope equals `max_slope_deg`.
    pub fn wave_with_max_slope(wavelength: f64, max_slope_deg: f64, extent: f64) -> Terrain {
        let amplitude = max_slope_deg.to_radians().tan() * wavelength / (2.0 * std::f64::consts::PI);
        Terrain::WaveField { amplitude, wavelength, extent }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        match self {
            Terrain::Flat => 0.0,
            Terrain::WaveField { amplitude, wavelength, extent } => {
                let xc = x.clamp(0.0, *extent);
                amplitude * (2.0 * std::f64::consts::PI * xc / wavelength).sin()
            }
            Terrain::Samples { x0, y0, dx, dy, heights } => {
                let _ = y;
                let ny = heights.len();
                if ny == 0 {
                    return 0.0;
                }
                let nx = heights[0].len();
                let fx = ((x - x0) / dx).clamp(0.0, (nx - 1) as f64 - 1e-9);
                let fy = ((y - y0) / dy).clamp(0.0, (ny - 1) as f64 - 1e-9);
                let ix = fx.floor() as usize;
                let iy = fy.floor() as usize;
                let tx = fx - ix as f64;
                let ty = fy - iy as f64;
                let h00 = heights[iy][ix];
                let h10 = heights[iy][ix + 1];
                let h01 = heights[iy + 1][ix];
                let h11 = heights[iy + 1][ix + 1];
                h00 * (1.0 - tx) * (1.0 - ty) + h10 * tx * (1.0 - ty) + h01 * (1.0 - tx) * ty + h11 * tx * ty
            }
        }
    }

    pub fn gradient(&self, x: f64, y: f64) -> Vector2<f64> {
        match self {
            Terrain::Flat => Vector2::zeros(),
            Terrain::WaveField { amplitude, wavelength, extent } => {
                if x < 0.0 || x > *extent {
                    return Vector2::zeros();
                }
                let k = 2.0 * std::f64::consts::PI / wavelength;
                Vector2::new(amplitude * k * (k * x).cos(), 0.0)
            }
            Terrain::Samples { x0, y0, dx, dy, heights } => {
                let ny = heights.len();
                if ny == 0 {
                    return Vector2::zeros();
                }
                let nx = heights[0].len();
                let fx = (x - x0) / dx;
                let fy = (y - y0) / dy;
                if fx < 0.0 || fy < 0.0 || fx > (nx - 1) as f64 || fy > (ny - 1) as f64 {
                    return Vector2::zeros();
                }
                let fxc = fx.clamp(0.0, (nx - 1) as f64 - 1e-9);
                let fyc = fy.clamp(0.0, (ny - 1) as f64 - 1e-9);
                let ix = fxc.floor() as usize;
                let iy = fyc.floor() as usize;
                let tx = fxc - ix as f64;
                let ty = fyc - iy as f64;
                let h00 = heights[iy][ix];
                let h10 = heights[iy][ix + 1];
                let h01 = heights[iy + 1][ix];
                let h11 = heights[iy + 1][ix + 1];
                Vector2::new(
                    ((h10 - h00) * (1.0 - ty) + (h11 - h01) * ty) / dx,
                    ((h01 - h00) * (1.0 - tx) + (h11 - h10) * tx) / dy,
                )
            }
        }
    }

    /// Whether the horizontal point lies inside the described patch.
    pub fn in_extent(&self, x: f64, y: f64) -> bool {
        match self {
            Terrain::Flat => true,
            Terrain::WaveField { extent, .. } => (0.0..=*extent).contains(&x),
            Terrain::Samples { x0, y0, dx, dy, heights } => {
                let ny = heights.len();
                if ny == 0 {
                    return false;
                }
                let nx = heights[0].len();
                x >= *x0
                    && y >= *y0
                    && x <= x0 + dx * (nx - 1) as f64
                    && y <= y0 + dy * (ny - 1) as f64
            }
        }
    }
}

/// Tangent plane of the height field at a contact point, as the unit row
/// `A_P` and offset `b_P` of `A_P . c = b_P`. Outside the terrain extent
/// the plane extrapolates flat and `warned` is set.
pub struct TangentPlane {
    pub row: Vector3<f64>,
    pub rhs: f64,
    pub warned: bool,
}

pub fn fit_tangent_plane(terrain: &Terrain, point: &Vector2<f64>) -> TangentPlane {
    let warned = !terrain.in_extent(point.x, point.y);
    let z0 = terrain.height(point.x, point.y);
    let grad = terrain.gradient(point.x, point.y);
    let normal = Vector3::new(-grad.x, -grad.y, 1.0).normalize();
    let rhs = normal.dot(&Vector3::new(point.x, point.y, z0));
    TangentPlane { row: normal, rhs, warned }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn flat_plane() {
        let p = fit_tangent_plane(&Terrain::Flat, &Vector2::new(1.0, -2.0));
        assert_relative_eq!(p.row, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-14);
        assert_relative_eq!(p.rhs, 0.0, epsilon = 1e-14);
        assert!(!p.warned);
    }

    #[test]
    fn wave_crest_is_horizontal() {
        let t = Terrain::wave_with_max_slope(0.8, 22.0, 6.0);
        // Crest at x = wavelength / 4.
        let p = fit_tangent_plane(&t, &Vector2::new(0.2, 0.0));
        assert_relative_eq!(p.row, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        let crest = t.height(0.2, 0.0);
        assert_relative_eq!(p.rhs, crest, epsilon = 1e-12);
        assert!(crest > 0.0);
    }

    #[test]
    fn wave_slope_hits_configured_maximum() {
        let t = Terrain::wave_with_max_slope(0.8, 22.0, 6.0);
        // Max slope at the zero crossings.
        let g = t.gradient(0.0, 0.0);
        assert_relative_eq!(g.x.atan().to_degrees(), 22.0, epsilon = 1e-9);
    }

    #[test]
    fn uniform_slope_plane_normal() {
        // A 22 degree planar ramp sampled on a grid.
        let slope = 22.0f64.to_radians().tan();
        let n = 21;
        let heights: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|ix| slope * 0.1 * ix as f64).collect())
            .collect();
        let t = Terrain::Samples { x0: -1.0, y0: -1.0, dx: 0.1, dy: 0.1, heights };
        let p = fit_tangent_plane(&t, &Vector2::new(0.0, 0.0));
        let tilt = p.row.z.acos().to_degrees();
        assert_relative_eq!(tilt, 22.0, epsilon = 1e-9);
        assert!(!p.warned);

        // Outside the patch: flat extrapolation with a warning.
        let q = fit_tangent_plane(&t, &Vector2::new(50.0, 0.0));
        assert!(q.warned);
        assert_relative_eq!(q.row.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn wave_height_continuous_at_extent() {
        let t = Terrain::wave_with_max_slope(0.8, 22.0, 6.0);
        let inside = t.height(6.0 - 1e-12, 0.0);
        let outside = t.height(6.0 + 1e-12, 0.0);
        assert_relative_eq!(inside, outside, epsilon = 1e-9);
    }
}
