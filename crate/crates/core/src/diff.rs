//! Reverse-mode building blocks for the hand-specified computation graphs in
//! `losses` and `kinematics`: adjoints of the 6D-rotation orthonormalization
//! and of the axis-angle rotation.

use crate::error::Result;
use crate::float::{cos, sin};
use crate::geometry::{cross, dot, norm, rot6d_to_matrix, scale, sub, Mat3, Rot6D, Vec3};

/// Forward artifacts of Gram-Schmidt needed to run the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct Rot6dCache {
    pub r: Mat3,
    c1: Vec3,
    c2: Vec3,
    b: Vec3,
    proj: f64,
    inv_na: f64,
    inv_nu: f64,
}

pub(crate) fn rot6d_forward(r6: &Rot6D) -> Result<Rot6dCache> {
    let r = rot6d_to_matrix(r6)?;
    let na = norm(r6.a);
    let c1 = [r[0][0], r[1][0], r[2][0]];
    let c2 = [r[0][1], r[1][1], r[2][1]];
    let proj = dot(r6.b, c1);
    let u = sub(r6.b, scale(c1, proj));
    let nu = norm(u);
    Ok(Rot6dCache {
        r,
        c1,
        c2,
        b: r6.b,
        proj,
        inv_na: 1.0 / na,
        inv_nu: 1.0 / nu,
    })
}

/// Maps an adjoint of the rotation matrix back to adjoints of the raw 6D
/// parameters.
pub(crate) fn rot6d_backward(cache: &Rot6dCache, r_bar: &Mat3) -> (Vec3, Vec3) {
    let g1 = [r_bar[0][0], r_bar[1][0], r_bar[2][0]];
    let g2 = [r_bar[0][1], r_bar[1][1], r_bar[2][1]];
    let g3 = [r_bar[0][2], r_bar[1][2], r_bar[2][2]];
    let (c1, c2) = (cache.c1, cache.c2);

    // c3 = c1 x c2
    let mut c1_bar = add3(g1, cross(c2, g3));
    let c2_bar = add3(g2, cross(g3, c1));

    // c2 = u / |u|
    let u_bar = scale(
        sub(c2_bar, scale(c2, dot(c2_bar, c2))),
        cache.inv_nu,
    );

    // u = b - (b . c1) c1
    let ub_c1 = dot(u_bar, c1);
    let b_bar = sub(u_bar, scale(c1, ub_c1));
    c1_bar = sub(c1_bar, add3(scale(cache.b, ub_c1), scale(u_bar, cache.proj)));

    // c1 = a / |a|
    let a_bar = scale(
        sub(c1_bar, scale(c1, dot(c1_bar, c1))),
        cache.inv_na,
    );
    (a_bar, b_bar)
}

#[inline]
fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Adjoints (axis_bar, angle_bar) of R(axis, angle) given R_bar; `axis` must
/// be unit length.
pub(crate) fn axis_angle_backward(axis: Vec3, angle: f64, r_bar: &Mat3) -> (Vec3, f64) {
    let (s, c) = (sin(angle), cos(angle));
    let [x, y, z] = axis;
    // dR/dq = -sin q I + cos q [axis]_x + sin q axis axis^T
    let dq = [
        [-s + s * x * x, c * (-z) + s * x * y, c * y + s * x * z],
        [c * z + s * y * x, -s + s * y * y, c * (-x) + s * y * z],
        [c * (-y) + s * z * x, c * x + s * z * y, -s + s * z * z],
    ];
    let mut angle_bar = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            angle_bar += r_bar[i][j] * dq[i][j];
        }
    }

    // dR/daxis_m = sin q E_m + (1 - cos q)(e_m axis^T + axis e_m^T)
    let one_c = 1.0 - c;
    let mut axis_bar = [0.0; 3];
    for m in 0..3 {
        let e_m = skew_basis(m);
        let mut g = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut d = s * e_m[i][j];
                if i == m {
                    d += one_c * axis[j];
                }
                if j == m {
                    d += one_c * axis[i];
                }
                g += r_bar[i][j] * d;
            }
        }
        axis_bar[m] = g;
    }
    (axis_bar, angle_bar)
}

fn skew_basis(m: usize) -> Mat3 {
    match m {
        0 => [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        1 => [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        _ => [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    }
}

/// Adjoint of v = raw/|raw| normalization.
pub(crate) fn normalize_backward(raw: Vec3, unit: Vec3, unit_bar: Vec3) -> Vec3 {
    let n = norm(raw);
    scale(sub(unit_bar, scale(unit, dot(unit_bar, unit))), 1.0 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn rot6d_backward_matches_finite_differences() {
        let mut rng = Rng::new(55);
        let h = 1e-6;
        for _ in 0..50 {
            let r6 = Rot6D::new(
                [rng.normal(), rng.normal(), rng.normal()],
                [rng.normal(), rng.normal(), rng.normal()],
            );
            let cache = match rot6d_forward(&r6) {
                Ok(c) => c,
                Err(_) => continue,
            };
            // Random linear functional of R.
            let mut w = [[0.0; 3]; 3];
            for row in &mut w {
                for x in row.iter_mut() {
                    *x = rng.normal();
                }
            }
            let f = |r6: &Rot6D| -> f64 {
                let r = rot6d_to_matrix(r6).unwrap();
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += w[i][j] * r[i][j];
                    }
                }
                s
            };
            let (a_bar, b_bar) = rot6d_backward(&cache, &w);
            for m in 0..3 {
                let mut plus = r6;
                plus.a[m] += h;
                let mut minus = r6;
                minus.a[m] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!(
                    (fd - a_bar[m]).abs() < 1e-5 * (1.0 + fd.abs()),
                    "a[{m}]: fd {fd} vs {g}",
                    g = a_bar[m]
                );

                let mut plus = r6;
                plus.b[m] += h;
                let mut minus = r6;
                minus.b[m] -= h;
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!(
                    (fd - b_bar[m]).abs() < 1e-5 * (1.0 + fd.abs()),
                    "b[{m}]: fd {fd} vs {g}",
                    g = b_bar[m]
                );
            }
        }
    }

    #[test]
    fn axis_angle_backward_matches_finite_differences() {
        let mut rng = Rng::new(56);
        let h = 1e-6;
        for _ in 0..50 {
            let axis = rng.unit_vector();
            let angle = rng.normal();
            let mut w = [[0.0; 3]; 3];
            for row in &mut w {
                for x in row.iter_mut() {
                    *x = rng.normal();
                }
            }
            let f = |axis: Vec3, angle: f64| -> f64 {
                let r = crate::geometry::rotation_matrix(axis, angle);
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += w[i][j] * r[i][j];
                    }
                }
                s
            };
            let (axis_bar, angle_bar) = axis_angle_backward(axis, angle, &w);
            let fd_angle = (f(axis, angle + h) - f(axis, angle - h)) / (2.0 * h);
            assert!((fd_angle - angle_bar).abs() < 1e-5 * (1.0 + fd_angle.abs()));
            for m in 0..3 {
                // Perturb the raw axis without renormalizing; the backward
                // above is for the unit axis as a free 3-vector.
                let mut plus = axis;
                plus[m] += h;
                let mut minus = axis;
                minus[m] -= h;
                let fd = (f(plus, angle) - f(minus, angle)) / (2.0 * h);
                assert!(
                    (fd - axis_bar[m]).abs() < 1e-4 * (1.0 + fd.abs()),
                    "axis[{m}]: fd {fd} vs {g}",
                    g = axis_bar[m]
                );
            }
        }
    }
}
