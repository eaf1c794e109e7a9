//! Uneven two-hemisphere shell.
//!
//! The surface is a star-shaped radial function around the shell centroid:
//!
//! ```text
//! rho(n) = R * (1 + eps * sigma(n . axis) * cos(phi))
//! ```
//!
//! where `phi` is the azimuth of `n` about the motor axis, measured from the
//! shell's azimuth reference, and `sigma` is an odd taper that vanishes at the
//! poles and peaks at magnitude one. Because `sigma` is odd, the bulged side of
//! one hemisphere sits opposite the dented side of the other, so the shell is
//! invariant under a half turn about the axis followed by a mirror across the
//! equator plane.

use std::io::Write;

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-9;

/// Shell and pendulum parameters as they appear in the scenario config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShellParams {
    pub base_radius: f64,
    pub bulge_amplitude: f64,
    pub taper_exponent: f64,
    /// Motor axis in the body frame.
    pub axis: [f64; 3],
    pub mesh_resolution: usize,
    pub shell_mass: f64,
    pub pendulum_mass: f64,
    pub pendulum_arm: f64,
}

impl Default for ShellParams {
    fn default() -> Self {
        Self {
            base_radius: 0.10,
            bulge_amplitude: 0.08,
            taper_exponent: 1.0,
            axis: [0.0, 0.0, 1.0],
            mesh_resolution: 64,
            shell_mass: 0.5,
            pendulum_mass: 0.3,
            pendulum_arm: 0.05,
        }
    }
}

/// Immutable shell model.
#[derive(Debug, Clone)]
pub struct ShellModel {
    params: ShellParams,
    axis: Vector3<f64>,
    azimuth_ref: Vector3<f64>,
    taper_norm: f64,
}

impl ShellModel {
    pub fn new(params: ShellParams) -> Result<Self> {
        let axis = Vector3::from(params.axis);
        if !axis.iter().all(|c| c.is_finite()) || axis.norm() < 1e-12 {
            return Err(Error::Construction("shell axis must be a non-zero finite vector".into()));
        }
        let axis = axis.normalize();
        let azimuth_ref = UnitQuaternion::rotation_between(&Vector3::z(), &axis)
            .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI))
            * Vector3::x();
        Self::with_frame(params, axis, azimuth_ref)
    }

    fn with_frame(mut params: ShellParams, axis: Vector3<f64>, azimuth_ref: Vector3<f64>) -> Result<Self> {
        let p = &params;
        if !(p.base_radius.is_finite() && p.base_radius > 0.0) {
            return Err(Error::Construction(format!("base_radius must be positive, got {}", p.base_radius)));
        }
        if !(p.bulge_amplitude.is_finite() && p.bulge_amplitude.abs() < 1.0) {
            return Err(Error::Construction(format!(
                "bulge_amplitude must satisfy |eps| < 1, got {}",
                p.bulge_amplitude
            )));
        }
        if !(p.taper_exponent.is_finite() && p.taper_exponent > 0.0) {
            return Err(Error::Construction(format!(
                "taper_exponent must be positive, got {}",
                p.taper_exponent
            )));
        }
        if p.mesh_resolution < 8 {
            return Err(Error::Construction(format!(
                "mesh_resolution must be at least 8, got {}",
                p.mesh_resolution
            )));
        }
        for (name, v) in [
            ("shell_mass", p.shell_mass),
            ("pendulum_mass", p.pendulum_mass),
            ("pendulum_arm", p.pendulum_arm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Construction(format!("{name} must be positive, got {v}")));
            }
        }
        if p.pendulum_arm >= p.base_radius {
            return Err(Error::Construction("pendulum_arm must be shorter than base_radius".into()));
        }
        params.axis = axis.into();
        let k = params.taper_exponent;
        let taper_norm = (1.0 / (1.0 + k)).sqrt() * (k / (1.0 + k)).powf(k / 2.0);
        Ok(Self { params, axis, azimuth_ref, taper_norm })
    }

    pub fn params(&self) -> &ShellParams {
        &self.params
    }

    pub fn base_radius(&self) -> f64 {
        self.params.base_radius
    }

    pub fn axis(&self) -> Vector3<f64> {
        self.axis
    }

    /// Direction of zero azimuth, perpendicular to the axis.
    pub fn azimuth_ref(&self) -> Vector3<f64> {
        self.azimuth_ref
    }

    pub fn pendulum_mass(&self) -> f64 {
        self.params.pendulum_mass
    }

    pub fn pendulum_arm(&self) -> f64 {
        self.params.pendulum_arm
    }

    pub fn total_mass(&self) -> f64 {
        self.params.shell_mass + self.params.pendulum_mass
    }

    /// Same shell with its axis and azimuth reference rotated.
    pub fn rotated(&self, rotation: &UnitQuaternion<f64>) -> Self {
        let mut params = self.params.clone();
        let axis = rotation * self.axis;
        params.axis = axis.into();
        Self { params, axis, azimuth_ref: rotation * self.azimuth_ref, taper_norm: self.taper_norm }
    }

    /// Same shell with a different mesh resolution.
    pub fn with_resolution(&self, resolution: usize) -> Result<Self> {
        let mut params = self.params.clone();
        params.mesh_resolution = resolution;
        Self::with_frame(params, self.axis, self.azimuth_ref)
    }

    /// Odd taper, normalized so its peak magnitude is one.
    pub fn taper(&self, c: f64) -> f64 {
        let s2 = (1.0 - c * c).max(0.0);
        c * s2.powf(self.params.taper_exponent / 2.0) / self.taper_norm
    }

    /// Bulge pattern `B(n)` in `[-1, 1]`. `n` must be unit length.
    pub fn bulge(&self, n: &Vector3<f64>) -> f64 {
        let c = n.dot(&self.axis);
        let x = n.dot(&self.azimuth_ref);
        let y = n.dot(&self.axis.cross(&self.azimuth_ref));
        let perp = x.hypot(y);
        if perp < 1e-300 {
            return 0.0;
        }
        // perp^2 equals 1 - c^2 for unit n but keeps precision near the poles.
        let s2 = perp * perp;
        c * s2.powf(self.params.taper_exponent / 2.0) * (x / perp) / self.taper_norm
    }

    /// Surface radius along the body-frame unit direction `n`.
    pub fn radial(&self, n: &Vector3<f64>) -> Result<f64> {
        let norm = n.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InputDomain(format!("radial direction must be unit length, |n| = {norm}")));
        }
        Ok(self.radial_unchecked(n))
    }

    pub(crate) fn radial_unchecked(&self, n: &Vector3<f64>) -> f64 {
        self.params.base_radius * (1.0 + self.params.bulge_amplitude * self.bulge(n))
    }

    /// Body-frame surface point along `n` (any non-zero vector).
    pub fn surface_point(&self, n: &Vector3<f64>) -> Vector3<f64> {
        let n = n.normalize();
        n * self.radial_unchecked(&n)
    }

    /// Unit direction for polar angle `theta` (from the axis) and azimuth `phi`.
    pub fn direction(&self, theta: f64, phi: f64) -> Vector3<f64> {
        let other = self.axis.cross(&self.azimuth_ref);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        (self.axis * ct + (self.azimuth_ref * cp + other * sp) * st).normalize()
    }

    pub fn build_mesh(&self) -> ShellMesh {
        let n_lat = self.params.mesh_resolution;
        let n_lon = self.params.mesh_resolution;
        let mut vertices = Vec::with_capacity(2 + (n_lat - 1) * n_lon);

        let vertex = |dir: Vector3<f64>| dir * self.radial_unchecked(&dir);
        vertices.push(vertex(self.axis));
        for i in 1..n_lat {
            let theta = std::f64::consts::PI * i as f64 / n_lat as f64;
            for j in 0..n_lon {
                let phi = std::f64::consts::TAU * j as f64 / n_lon as f64;
                vertices.push(vertex(self.direction(theta, phi)));
            }
        }
        vertices.push(vertex(-self.axis));
        let south = vertices.len() - 1;

        let ring = |i: usize, j: usize| 1 + (i - 1) * n_lon + (j % n_lon);
        let mut triangles = Vec::with_capacity(2 * n_lon * (n_lat - 1));
        for j in 0..n_lon {
            triangles.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..n_lat - 1 {
            for j in 0..n_lon {
                let (a, b) = (ring(i, j), ring(i, j + 1));
                let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
                triangles.push([a, c, d]);
                triangles.push([a, d, b]);
            }
        }
        for j in 0..n_lon {
            triangles.push([ring(n_lat - 1, j), south, ring(n_lat - 1, j + 1)]);
        }

        let mut normals = vec![Vector3::zeros(); vertices.len()];
        for tri in &triangles {
            let [a, b, c] = tri.map(|k| vertices[k]);
            // Area-weighted: the cross product has magnitude 2 * area.
            let face = (b - a).cross(&(c - a));
            for &k in tri {
                normals[k] += face;
            }
        }
        for n in &mut normals {
            *n = n.normalize();
        }

        ShellMesh { vertices, normals, triangles }
    }

    pub fn mass_properties(&self) -> Result<MassProperties> {
        let mesh = self.build_mesh();
        let min_area = 1e-9 * (self.params.base_radius / self.params.mesh_resolution as f64).powi(2);

        let mut area = 0.0;
        let mut first = Vector3::zeros();
        let mut second = Matrix3::zeros();
        for (index, tri) in mesh.triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|k| mesh.vertices[k]);
            let tri_area = 0.5 * (b - a).cross(&(c - a)).norm();
            if !(tri_area > min_area) {
                return Err(Error::Construction(format!(
                    "degenerate mesh: triangle {index} has area {tri_area:e}"
                )));
            }
            let sum = a + b + c;
            area += tri_area;
            first += sum * (tri_area / 3.0);
            second += (a * a.transpose() + b * b.transpose() + c * c.transpose() + sum * sum.transpose())
                * (tri_area / 12.0);
        }

        let density = self.params.shell_mass / area;
        let com = first / area;
        let second = second * density;
        let about_origin = Matrix3::identity() * second.trace() - second;
        let inertia = 0.5 * (about_origin + about_origin.transpose());

        Ok(MassProperties {
            total_mass: self.total_mass(),
            shell_mass: self.params.shell_mass,
            shell_com_offset: com,
            shell_inertia: inertia,
            surface_area: area,
            pendulum_mass: self.params.pendulum_mass,
            pendulum_arm: self.params.pendulum_arm,
        })
    }
}

/// Mass properties of the shell with the pendulum kept separate.
#[derive(Debug, Clone, PartialEq)]
pub struct MassProperties {
    pub total_mass: f64,
    pub shell_mass: f64,
    /// Shell center of mass relative to the centroid (zero for this shell family).
    pub shell_com_offset: Vector3<f64>,
    /// Shell inertia about the centroid, body frame.
    pub shell_inertia: Matrix3<f64>,
    pub surface_area: f64,
    pub pendulum_mass: f64,
    pub pendulum_arm: f64,
}

/// Closed latitude/longitude triangulation of the shell surface in the body frame.
#[derive(Debug, Clone)]
pub struct ShellMesh {
    pub vertices: Vec<Vector3<f64>>,
    /// Outward, area-weighted vertex normals.
    pub normals: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl ShellMesh {
    pub fn surface_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|k| self.vertices[k]);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Binary STL: 80-byte header, little-endian triangle count and records.
    pub fn write_stl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = [0u8; 80];
        let tag = b"rock shell mesh";
        header[..tag.len()].copy_from_slice(tag);
        out.write_all(&header)?;
        out.write_all(&(self.triangles.len() as u32).to_le_bytes())?;
        for tri in &self.triangles {
            let [a, b, c] = tri.map(|k| self.vertices[k]);
            let normal = (b - a).cross(&(c - a)).normalize();
            for v in [normal, a, b, c] {
                for component in v.iter() {
                    out.write_all(&(*component as f32).to_le_bytes())?;
                }
            }
            out.write_all(&0u16.to_le_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn shell(eps: f64, resolution: usize) -> ShellModel {
        ShellModel::new(ShellParams { bulge_amplitude: eps, mesh_resolution: resolution, ..Default::default() })
            .unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    /// Half turn about the axis composed with a mirror across the equator plane.
    fn offset_symmetry(shell: &ShellModel, n: &Vector3<f64>) -> Vector3<f64> {
        let axis = shell.axis();
        let half_turn = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(axis), PI);
        let turned = half_turn * n;
        turned - axis * (2.0 * turned.dot(&axis))
    }

    #[test]
    fn sphere_is_degenerate_case() {
        let s = shell(0.0, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(s.radial(&random_unit(&mut rng)).unwrap(), 0.10);
        }
    }

    #[test]
    fn poles_have_base_radius() {
        let s = shell(0.08, 16);
        assert_eq!(s.radial(&Vector3::z()).unwrap(), 0.10);
        assert_eq!(s.radial(&-Vector3::z()).unwrap(), 0.10);
    }

    #[test]
    fn non_unit_direction_rejected() {
        let s = shell(0.08, 16);
        assert!(matches!(s.radial(&Vector3::new(1.0, 1.0, 0.0)), Err(Error::InputDomain(_))));
    }

    #[test]
    fn invalid_amplitude_rejected() {
        let r = ShellModel::new(ShellParams { bulge_amplitude: 1.0, ..Default::default() });
        assert!(matches!(r, Err(Error::Construction(_))));
        let r = ShellModel::new(ShellParams { mesh_resolution: 7, ..Default::default() });
        assert!(matches!(r, Err(Error::Construction(_))));
    }

    #[test]
    fn taper_peaks_at_one() {
        for k in [0.5, 1.0, 2.0, 3.0] {
            let s = ShellModel::new(ShellParams { taper_exponent: k, ..Default::default() }).unwrap();
            let peak = (0..=20_000)
                .map(|i| s.taper(-1.0 + 2.0 * i as f64 / 20_000.0).abs())
                .fold(0.0, f64::max);
            assert!((peak - 1.0).abs() < 1e-6, "k={k} peak={peak}");
            assert_eq!(s.taper(1.0), 0.0);
        }
    }

    #[test]
    fn offset_symmetry_holds_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for s in [shell(0.08, 16), shell(0.3, 16).rotated(&UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0))] {
            for _ in 0..1000 {
                let n = random_unit(&mut rng);
                let t = offset_symmetry(&s, &n);
                assert!((s.radial(&n).unwrap() - s.radial(&t).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equator_crossing_is_c1() {
        let s = shell(0.08, 16);
        let h = 1e-6;
        for j in 0..36 {
            let phi = j as f64 * PI / 18.0;
            let at = |theta: f64| s.radial_unchecked(&s.direction(theta, phi));
            let eq = PI / 2.0;
            // One-sided derivatives along the meridian from each hemisphere.
            let above = (at(eq) - at(eq - h)) / h;
            let below = (at(eq + h) - at(eq)) / h;
            assert!((above - below).abs() < 1e-6 * s.base_radius(), "phi={phi}: {above} vs {below}");
            assert!((at(eq - 1e-12) - at(eq + 1e-12)).abs() < 1e-12);
        }
    }

    #[test]
    fn mesh_vertices_lie_on_surface() {
        let s = shell(0.08, 24);
        let mesh = s.build_mesh();
        for v in &mesh.vertices {
            let n = v.normalize();
            assert!((v.norm() - s.radial_unchecked(&n)).abs() < 1e-12);
        }
    }

    #[test]
    fn mesh_is_closed_genus_zero() {
        for res in [8, 13, 32] {
            assert_eq!(shell(0.08, res).build_mesh().euler_characteristic(), 2);
        }
    }

    #[test]
    fn mesh_normals_point_outward() {
        let mesh = shell(0.08, 32).build_mesh();
        let outward = mesh.vertices.iter().zip(&mesh.normals).filter(|(v, n)| v.dot(n) > 0.0).count();
        assert_eq!(outward, mesh.vertices.len());
        for tri in &mesh.triangles {
            let [a, b, c] = tri.map(|k| mesh.vertices[k]);
            assert!((b - a).cross(&(c - a)).dot(&(a + b + c)) > 0.0);
        }
    }

    #[test]
    fn sphere_mesh_area() {
        let area = shell(0.0, 32).build_mesh().surface_area();
        let exact = 4.0 * PI * 0.01;
        assert!((area - exact).abs() / exact < 0.01, "area {area} vs {exact}");
    }

    #[test]
    fn vertex_radius_ratio_bounded() {
        let eps = 0.08;
        let mesh = shell(eps, 48).build_mesh();
        let radii: Vec<f64> = mesh.vertices.iter().map(|v| v.norm()).collect();
        let max = radii.iter().cloned().fold(f64::MIN, f64::max);
        let min = radii.iter().cloned().fold(f64::MAX, f64::min);
        let ratio = max / min;
        assert!(ratio > 1.0 && ratio <= (1.0 + eps) / (1.0 - eps), "ratio {ratio}");
    }

    #[test]
    fn sphere_inertia_matches_thin_shell() {
        let props = shell(0.0, 64).mass_properties().unwrap();
        let expected = 2.0 / 3.0 * 0.5 * 0.01;
        for i in 0..3 {
            let rel = (props.shell_inertia[(i, i)] - expected).abs() / expected;
            assert!(rel < 0.005, "axis {i}: rel {rel}");
        }
        assert!(props.shell_com_offset.norm() < 1e-12);
    }

    #[test]
    fn inertia_linear_in_mass() {
        let a = shell(0.08, 32);
        let b = ShellModel::new(ShellParams { shell_mass: 1.0, mesh_resolution: 32, ..Default::default() }).unwrap();
        let ia = a.mass_properties().unwrap().shell_inertia;
        let ib = b.mass_properties().unwrap().shell_inertia;
        assert!((ib - ia * 2.0).norm() <= 1e-15 * ia.norm());
    }

    #[test]
    fn inertia_converges_under_refinement() {
        let coarse = shell(0.08, 64).mass_properties().unwrap().shell_inertia;
        let fine = shell(0.08, 128).mass_properties().unwrap().shell_inertia;
        for i in 0..3 {
            for j in 0..3 {
                let diff = (coarse[(i, j)] - fine[(i, j)]).abs();
                assert!(diff < 0.01 * fine[(i, i)].max(fine[(j, j)]), "({i},{j})");
            }
        }
        // symmetric positive definite
        assert!((fine - fine.transpose()).norm() < 1e-18);
        assert!(fine.symmetric_eigenvalues().iter().all(|&l| l > 0.0));
    }

    #[test]
    fn inertia_is_rotation_equivariant() {
        let base = shell(0.08, 64);
        let rot = UnitQuaternion::from_euler_angles(0.4, -0.9, 1.7);
        let rotated = base.rotated(&rot);
        let i0 = base.mass_properties().unwrap().shell_inertia;
        let i1 = rotated.mass_properties().unwrap().shell_inertia;
        let r = rot.to_rotation_matrix();
        let expected = r.matrix() * i0 * r.matrix().transpose();
        assert!((i1 - expected).norm() < 0.005 * i0.norm(), "{}", (i1 - expected).norm() / i0.norm());
    }

    #[test]
    fn stl_has_expected_size() {
        let mesh = shell(0.08, 8).build_mesh();
        let mut buf = Vec::new();
        mesh.write_stl(&mut buf).unwrap();
        assert_eq!(buf.len(), 84 + 50 * mesh.triangles.len());
        assert_eq!(u32::from_le_bytes(buf[80..84].try_into().unwrap()) as usize, mesh.triangles.len());
    }
}
