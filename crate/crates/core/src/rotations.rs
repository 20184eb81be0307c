//! Continuous 6D rotation representations, planar angles and the torus chart.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Norm threshold below which a 6D representation is treated as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Tolerance used when checking that a matrix lies on SO(3).
pub const ROTATION_TOL: f64 = 1e-9;

/// Two stacked 3-vectors `[x', y']` encoding a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn first(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn second(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    /// Gram-Schmidt orthonormalization into a rotation matrix `[x | y | z]`.
    pub fn to_matrix(&self) -> Result<RotMatrix> {
        rot6d_to_matrix(self)
    }
}

/// A 3x3 rotation matrix; constructed only through checked paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMatrix(Matrix3<f64>);

impl RotMatrix {
    pub fn identity() -> Self {
        RotMatrix(Matrix3::identity())
    }

    /// Validates `R^T R = I` and `det R = 1` to [`ROTATION_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!(
                "R^T R deviates from identity by {ortho:e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!("determinant is {det}")));
        }
        Ok(RotMatrix(m))
    }

    /// Rotation by `angle` radians about coordinate axis `axis` (0 = x, 1 = y, 2 = z).
    pub fn about_axis(axis: usize, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let m = match axis {
            0 => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            1 => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            2 => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            _ => panic!("axis index {axis} out of range"),
        };
        RotMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn compose(&self, other: &RotMatrix) -> RotMatrix {
        RotMatrix(self.0 * other.0)
    }

    pub fn transpose(&self) -> RotMatrix {
        RotMatrix(self.0.transpose())
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

pub fn rot6d_to_matrix(r: &Rot6D) -> Result<RotMatrix> {
    if r.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateRepresentation {
            frame: None,
            joint: None,
        });
    }
    let xp = r.first();
    let yp = r.second();
    let xn = xp.norm();
    if xn < DEGENERACY_EPS {
        return Err(Error::DegenerateRepresentation {
            frame: None,
            joint: None,
        });
    }
    let x = xp / xn;
    let zp = x.cross(&yp);
    let zn = zp.norm();
    if zn < DEGENERACY_EPS {
        return Err(Error::DegenerateRepresentation {
            frame: None,
            joint: None,
        });
    }
    let z = zp / zn;
    let y = z.cross(&x);
    Ok(RotMatrix(Matrix3::from_columns(&[x, y, z])))
}

/// First two columns of `R`, after checking that `R` is a proper rotation.
pub fn matrix_to_rot6d(m: &Matrix3<f64>) -> Result<Rot6D> {
    let r = RotMatrix::new(*m)?;
    let c0 = r.0.column(0);
    let c1 = r.0.column(1);
    Ok(Rot6D([c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]]))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Planar angle in radians, stored wrapped into `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Angle(f64);

impl Angle {
    pub fn new(theta: f64) -> Self {
        Angle(wrap_angle(theta))
    }

    pub fn radians(&self) -> f64 {
        self.0
    }
}

/// `radius * (cos theta, sin theta)`.
pub fn angle_to_point(theta: f64, radius: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [radius * c, radius * s]
}

/// Poloidal (`theta`, around the tube) and toroidal (`phi`, around the main axis)
/// angles on the torus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusAngles {
    pub theta: f64,
    pub phi: f64,
}

impl TorusAngles {
    pub fn new(theta: f64, phi: f64) -> Self {
        TorusAngles {
            theta: wrap_angle(theta),
            phi: wrap_angle(phi),
        }
    }
}

/// Positions of the two non-root joints of the torus task.
///
/// Chart convention: the main axis is `z`. The first joint sits on the circle
/// of radius `s0` in the `xy` plane at toroidal angle `phi`; the second joint
/// is offset by `s1` from it, tilted by the poloidal angle `theta` towards `+z`:
///
/// ```text
/// J1 = s0 (cos phi, sin phi, 0)
/// J2 = ((s0 + s1 cos theta) cos phi, (s0 + s1 cos theta) sin phi, s1 sin theta)
/// ```
pub fn torus_to_points(theta: f64, phi: f64, s0: f64, s1: f64) -> [[f64; 3]; 2] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let r = s0 + s1 * ct;
    [[s0 * cp, s0 * sp, 0.0], [r * cp, r * sp, s1 * st]]
}

/// Partial derivatives of [`torus_to_points`] as `[d/dtheta, d/dphi]`, each
/// holding the six coordinates `(J1, J2)`.
pub fn torus_jacobian(theta: f64, phi: f64, s0: f64, s1: f64) -> [[f64; 6]; 2] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let r = s0 + s1 * ct;
    [
        [0.0, 0.0, 0.0, -s1 * st * cp, -s1 * st * sp, s1 * ct],
        [-s0 * sp, s0 * cp, 0.0, -r * sp, r * cp, 0.0],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn canonical_basis_is_identity() {
        let r = rot6d_to_matrix(&Rot6D::IDENTITY).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        // x' = e2 -> x = e2; z = e2 x (-e1) = e3; y = e3 x e2 = -e1.
        let r = rot6d_to_matrix(&Rot6D([0.0, 1.0, 0.0, -1.0, 0.0, 0.0])).unwrap();
        let m = r.matrix();
        assert_eq!(m.column(0), Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(m.column(1), Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(m.column(2), Vector3::new(0.0, 0.0, 1.0));
        let e1 = r.apply(&Vector3::x());
        assert_eq!(e1, Vector3::y());
        let e2 = r.apply(&Vector3::y());
        assert_eq!(e2, -Vector3::x());
    }

    #[test]
    fn degenerate_inputs() {
        let zero_first = Rot6D([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            rot6d_to_matrix(&zero_first),
            Err(Error::DegenerateRepresentation { .. })
        ));
        let collinear = Rot6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(
            rot6d_to_matrix(&collinear),
            Err(Error::DegenerateRepresentation { .. })
        ));
    }

    #[test]
    fn identity_to_6d_and_reflection_rejected() {
        let r = matrix_to_rot6d(&Matrix3::identity()).unwrap();
        assert_eq!(r, Rot6D::IDENTITY);
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            matrix_to_rot6d(&reflect),
            Err(Error::InvalidRotation(_))
        ));
        assert!(matrix_to_rot6d(&(Matrix3::identity() * 1.01)).is_err());
    }

    #[test]
    fn circle_points() {
        assert_eq!(angle_to_point(0.0, 1.0), [1.0, 0.0]);
        let p = angle_to_point(PI / 3.0, 1.0);
        assert!(close(p[0], 0.5, 1e-15));
        assert!(close(p[1], 0.866_025_403_784_438_6, 1e-15));
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_angle(PI), PI);
        assert!(close(wrap_angle(-PI), PI, 1e-15));
        assert!(close(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, 1e-15));
        assert!(close(Angle::new(7.0).radians(), 7.0 - 2.0 * PI, 1e-15));
    }

    #[test]
    fn torus_origin_distances() {
        let [j1, j2] = torus_to_points(0.0, 0.0, 2.0, 1.0);
        let n1 = j1.iter().map(|c| c * c).sum::<f64>().sqrt();
        let d12 = j1
            .iter()
            .zip(&j2)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert_eq!(n1, 2.0);
        assert_eq!(d12, 1.0);
    }

    #[test]
    fn torus_jacobian_matches_central_differences() {
        let (s0, s1) = (2.0, 1.0);
        let h = 1e-6;
        for &(t, p) in &[(0.3, -1.2), (2.5, 0.7), (-3.0, 3.0)] {
            let jac = torus_jacobian(t, p, s0, s1);
            for (k, (dt, dp)) in [(h, 0.0), (0.0, h)].into_iter().enumerate() {
                let plus = torus_to_points(t + dt, p + dp, s0, s1);
                let minus = torus_to_points(t - dt, p - dp, s0, s1);
                for c in 0..6 {
                    let fd = (plus[c / 3][c % 3] - minus[c / 3][c % 3]) / (2.0 * h);
                    assert!(close(fd, jac[k][c], 1e-8), "{k} {c}: {fd} vs {}", jac[k][c]);
                }
            }
        }
    }
}
