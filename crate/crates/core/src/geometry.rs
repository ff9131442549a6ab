//! Rigid-body algebra: 6D rotation parametrization, SE(3) transforms,
//! relative motions between timesteps, and 1-DOF screw motions.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::float::{atan2, cos, sin, sqrt};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

// --- small vector/matrix helpers used throughout the crate ---

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm_sq(a: Vec3) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    sqrt(norm_sq(a))
}

#[inline]
pub fn dist_sq(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// None when the vector is numerically zero.
pub fn normalize(a: Vec3) -> Option<Vec3> {
    let n = norm(a);
    if n < 1e-12 {
        None
    } else {
        Some(scale(a, 1.0 / n))
    }
}

#[inline]
pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// m^T v without materializing the transpose.
#[inline]
pub fn mat_tvec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    r
}

pub fn transpose(m: &Mat3) -> Mat3 {
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
        [m[0][2], m[1][2], m[2][2]],
    ]
}

/// Squared Frobenius norm of a - b.
pub fn frobenius_diff_sq(a: &Mat3, b: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = a[i][j] - b[i][j];
            s += d * d;
        }
    }
    s
}

/// Solves the 3x3 SPD system m x = b by Cholesky factorization.
pub fn solve_spd3(m: &Mat3, b: Vec3) -> Option<Vec3> {
    // m = L L^T with L lower triangular.
    let l00 = sqrt(m[0][0]);
    if !(l00 > 0.0) || !l00.is_finite() {
        return None;
    }
    let l10 = m[1][0] / l00;
    let l20 = m[2][0] / l00;
    let d11 = m[1][1] - l10 * l10;
    if !(d11 > 0.0) {
        return None;
    }
    let l11 = sqrt(d11);
    let l21 = (m[2][1] - l20 * l10) / l11;
    let d22 = m[2][2] - l20 * l20 - l21 * l21;
    if !(d22 > 0.0) {
        return None;
    }
    let l22 = sqrt(d22);
    // forward substitution L y = b
    let y0 = b[0] / l00;
    let y1 = (b[1] - l10 * y0) / l11;
    let y2 = (b[2] - l20 * y0 - l21 * y1) / l22;
    // back substitution L^T x = y
    let x2 = y2 / l22;
    let x1 = (y1 - l21 * x2) / l11;
    let x0 = (y0 - l10 * x1 - l20 * x2) / l00;
    Some([x0, x1, x2])
}

/// First two columns of a rotation matrix, before orthonormalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot6D {
    pub a: Vec3,
    pub b: Vec3,
}

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D {
        a: [1.0, 0.0, 0.0],
        b: [0.0, 1.0, 0.0],
    };

    pub fn new(a: Vec3, b: Vec3) -> Self {
        Rot6D { a, b }
    }
}

pub const ROT6D_DEGENERACY_EPS: f64 = 1e-9;

/// Gram-Schmidt orthonormalization of the two 6D-representation vectors.
///
/// Columns of the result are c1 = a/|a|, c2 = normalize(b - (b.c1)c1),
/// c3 = c1 x c2, so the output is orthonormal with det +1.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<Mat3> {
    let na = norm(r.a);
    if na < ROT6D_DEGENERACY_EPS {
        return Err(Error::DegenerateRotation);
    }
    let c1 = scale(r.a, 1.0 / na);
    let u = sub(r.b, scale(c1, dot(r.b, c1)));
    let nu = norm(u);
    if nu < ROT6D_DEGENERACY_EPS {
        return Err(Error::DegenerateRotation);
    }
    let c2 = scale(u, 1.0 / nu);
    let c3 = cross(c1, c2);
    Ok([
        [c1[0], c2[0], c3[0]],
        [c1[1], c2[1], c3[1]],
        [c1[2], c2[2], c3[2]],
    ])
}

/// Inverse map: the first two columns of an orthonormal matrix.
pub fn matrix_to_rot6d(r: &Mat3) -> Rot6D {
    Rot6D {
        a: [r[0][0], r[1][0], r[2][0]],
        b: [r[0][1], r[1][1], r[2][1]],
    }
}

/// A rotation plus translation; maps points x to R x + t.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: IDENTITY3,
        translation: [0.0, 0.0, 0.0],
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform {
            rotation: IDENTITY3,
            translation: t,
        }
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        add(mat_vec(&self.rotation, p), self.translation)
    }

    /// (self o other)(x) = self(other(x)).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: mat_mul(&self.rotation, &other.rotation),
            translation: add(mat_vec(&self.rotation, other.translation), self.translation),
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = transpose(&self.rotation);
        let t = mat_vec(&rt, self.translation);
        RigidTransform {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }

    /// Squared Frobenius distance of the homogeneous 4x4 matrix to identity:
    /// |R - I|_F^2 + |t|^2.
    pub fn deviation_from_identity_sq(&self) -> f64 {
        frobenius_diff_sq(&self.rotation, &IDENTITY3) + norm_sq(self.translation)
    }

    /// Orthonormality residual max(|R^T R - I|_F, |det R - 1|); small for
    /// valid transforms.
    pub fn orthonormality_residual(&self) -> f64 {
        let rt_r = mat_mul(&transpose(&self.rotation), &self.rotation);
        let ortho = sqrt(frobenius_diff_sq(&rt_r, &IDENTITY3));
        let r = &self.rotation;
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        ortho.max((det - 1.0).abs())
    }
}

/// Motion that carries world-frame points at step k to step k+1 for a part
/// observed at poses t_curr and t_next: t_next o t_curr^-1.
pub fn relative_motion(t_next: &RigidTransform, t_curr: &RigidTransform) -> RigidTransform {
    t_next.compose(&t_curr.inverse())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScrewKind {
    Revolute,
    Prismatic,
}

/// 1-DOF motion about a static axis with one state per transition.
///
/// Revolute: rotation by states[k] about the line (axis, origin).
/// Prismatic: translation by states[k] along axis (origin unused).
#[derive(Clone, Debug, PartialEq)]
pub struct ScrewMotion {
    pub kind: ScrewKind,
    pub axis: Vec3,
    pub origin: Vec3,
    pub states: Vec<f64>,
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let mut t = theta % two_pi;
    if t <= -core::f64::consts::PI {
        t += two_pi;
    } else if t > core::f64::consts::PI {
        t -= two_pi;
    }
    t
}

impl ScrewMotion {
    /// Normalizes the axis and, for revolute joints, wraps states to
    /// (-pi, pi]. Errors if the axis is numerically zero.
    pub fn new(kind: ScrewKind, axis: Vec3, origin: Vec3, states: Vec<f64>) -> Result<Self> {
        let axis = normalize(axis).ok_or(Error::DegenerateRotation)?;
        let states = match kind {
            ScrewKind::Revolute => states.into_iter().map(wrap_angle).collect(),
            ScrewKind::Prismatic => states,
        };
        Ok(ScrewMotion {
            kind,
            axis,
            origin,
            states,
        })
    }

    pub fn transform_at(&self, step: usize) -> Result<RigidTransform> {
        let state = *self.states.get(step).ok_or(Error::IndexOutOfRange {
            index: step,
            len: self.states.len(),
        })?;
        Ok(self.transform_for_state(state))
    }

    pub fn transform_for_state(&self, state: f64) -> RigidTransform {
        match self.kind {
            ScrewKind::Revolute => rotation_about_line(self.axis, self.origin, state),
            ScrewKind::Prismatic => RigidTransform::from_translation(scale(self.axis, state)),
        }
    }
}

/// See [`ScrewMotion::transform_at`].
pub fn screw_to_transform(s: &ScrewMotion, step: usize) -> Result<RigidTransform> {
    s.transform_at(step)
}

/// Rodrigues rotation matrix for a unit axis.
pub fn rotation_matrix(axis: Vec3, angle: f64) -> Mat3 {
    let (s, c) = (sin(angle), cos(angle));
    let one_c = 1.0 - c;
    let [x, y, z] = axis;
    [
        [
            c + x * x * one_c,
            x * y * one_c - z * s,
            x * z * one_c + y * s,
        ],
        [
            y * x * one_c + z * s,
            c + y * y * one_c,
            y * z * one_c - x * s,
        ],
        [
            z * x * one_c - y * s,
            z * y * one_c + x * s,
            c + z * z * one_c,
        ],
    ]
}

/// Rotation about the line through `origin` with direction `axis`:
/// x -> origin + R (x - origin).
pub fn rotation_about_line(axis: Vec3, origin: Vec3, angle: f64) -> RigidTransform {
    let r = rotation_matrix(axis, angle);
    let t = sub(origin, mat_vec(&r, origin));
    RigidTransform {
        rotation: r,
        translation: t,
    }
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &Mat3) -> Option<Mat3> {
    let det = det3(m);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut adj = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
            let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
            // Cofactor transposed (adjugate).
            adj[j][i] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) * inv_det;
        }
    }
    Some(adj)
}

/// Orthogonal polar factor by Newton iteration X <- (X + X^-T) / 2.
/// Returns None when the matrix is singular or its polar factor is a
/// reflection.
fn polar_rotation(m: &Mat3) -> Option<Mat3> {
    if det3(m) <= 1e-12 {
        return None;
    }
    let mut x = *m;
    for _ in 0..40 {
        let inv_t = transpose(&inverse3(&x)?);
        let mut next = [[0.0; 3]; 3];
        let mut delta = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                next[i][j] = 0.5 * (x[i][j] + inv_t[i][j]);
                delta = delta.max((next[i][j] - x[i][j]).abs());
            }
        }
        x = next;
        if delta < 1e-14 {
            break;
        }
    }
    Some(x)
}

/// Least-squares rigid transform mapping each x onto its corresponding y.
/// Needs at least 3 non-degenerate pairs; returns None otherwise.
pub fn rigid_from_correspondences(xs: &[Vec3], ys: &[Vec3]) -> Option<RigidTransform> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return None;
    }
    let n = xs.len() as f64;
    let mut cx = [0.0; 3];
    let mut cy = [0.0; 3];
    for (x, y) in xs.iter().zip(ys) {
        cx = add(cx, *x);
        cy = add(cy, *y);
    }
    cx = scale(cx, 1.0 / n);
    cy = scale(cy, 1.0 / n);
    // Cross-covariance sum y_c x_c^T; its polar factor is the optimal
    // rotation.
    let mut m = [[0.0; 3]; 3];
    for (x, y) in xs.iter().zip(ys) {
        let xc = sub(*x, cx);
        let yc = sub(*y, cy);
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += yc[r] * xc[c];
            }
        }
    }
    let rotation = polar_rotation(&m)?;
    let t = sub(cy, mat_vec(&rotation, cx));
    let candidate = RigidTransform::new(rotation, t);
    if candidate.orthonormality_residual() > 1e-6 {
        return None;
    }
    Some(candidate)
}

/// Rotation angle and (angle-scaled) axis direction of a rotation matrix.
///
/// Returns (angle in [0, pi], unit axis); the axis is arbitrary when the
/// angle is numerically zero.
pub fn rotation_axis_angle(r: &Mat3) -> (f64, Vec3) {
    let w = [
        r[2][1] - r[1][2],
        r[0][2] - r[2][0],
        r[1][0] - r[0][1],
    ];
    let trace = r[0][0] + r[1][1] + r[2][2];
    let sin_theta = 0.5 * norm(w);
    let cos_theta = 0.5 * (trace - 1.0);
    let angle = atan2(sin_theta, cos_theta);
    if sin_theta > 1e-9 {
        (angle, scale(w, 0.5 / sin_theta))
    } else if cos_theta > 0.0 {
        (angle, [0.0, 0.0, 1.0])
    } else {
        // Angle near pi: recover the axis from the symmetric part.
        let xx = (r[0][0] + 1.0) * 0.5;
        let yy = (r[1][1] + 1.0) * 0.5;
        let zz = (r[2][2] + 1.0) * 0.5;
        let mut axis = [sqrt(xx.max(0.0)), sqrt(yy.max(0.0)), sqrt(zz.max(0.0))];
        // Fix relative signs using off-diagonal sums.
        if axis[0] >= axis[1] && axis[0] >= axis[2] {
            axis[1] = (r[0][1] + r[1][0]) / (4.0 * axis[0].max(1e-12)) * 2.0;
            axis[2] = (r[0][2] + r[2][0]) / (4.0 * axis[0].max(1e-12)) * 2.0;
        } else if axis[1] >= axis[2] {
            axis[0] = (r[0][1] + r[1][0]) / (4.0 * axis[1].max(1e-12)) * 2.0;
            axis[2] = (r[1][2] + r[2][1]) / (4.0 * axis[1].max(1e-12)) * 2.0;
        } else {
            axis[0] = (r[0][2] + r[2][0]) / (4.0 * axis[2].max(1e-12)) * 2.0;
            axis[1] = (r[1][2] + r[2][1]) / (4.0 * axis[2].max(1e-12)) * 2.0;
        }
        let axis = normalize(axis).unwrap_or([0.0, 0.0, 1.0]);
        (angle, axis)
    }
}
