//! EPnP: points as barycentric combinations of control points, camera-frame
//! control points from the null space of the projection constraints.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector2, Vector3};

use super::{Correspondence, PnpError};
use crate::geometry::{CameraIntrinsics, Pose};

/// Below this ratio of smallest to largest spread the points are treated as
/// (near-)planar and the three-control-point model is also tried.
const PLANAR_RATIO: f64 = 1e-2;
/// Below this ratio the four-control-point model is skipped entirely.
const FLAT_RATIO: f64 = 1e-12;
const COLLINEAR_RATIO: f64 = 1e-10;
const GAUSS_NEWTON_STEPS: usize = 10;

struct ControlFrame {
    points: Vec<Vector3<f64>>,
    /// `alphas[i][j]`: weight of control point `j` for input point `i`.
    alphas: Vec<Vec<f64>>,
}

fn control_frames(world: &[Vector3<f64>]) -> Result<Vec<ControlFrame>, PnpError> {
    let n = world.len() as f64;
    let c0 = world.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in world {
        let d = p - c0;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let lambda: Vec<f64> = order.iter().map(|i| eig.eigenvalues[*i].max(0.0)).collect();
    let axes: Vec<Vector3<f64>> = order.iter().map(|i| eig.eigenvectors.column(*i).into_owned()).collect();

    let scale = 1.0 + c0.norm_squared();
    if lambda[0] <= 1e-24 * scale {
        return Err(PnpError::DegenerateConfiguration("all points coincide".into()));
    }
    if lambda[1] <= COLLINEAR_RATIO * lambda[0] {
        return Err(PnpError::DegenerateConfiguration("points are collinear".into()));
    }

    let mut frames = Vec::new();
    let ratio = lambda[2] / lambda[0];
    if ratio > FLAT_RATIO {
        let ctrl: Vec<Vector3<f64>> = std::iter::once(c0)
            .chain((0..3).map(|k| c0 + lambda[k].sqrt() * axes[k]))
            .collect();
        let basis = Matrix3::from_columns(&[ctrl[1] - c0, ctrl[2] - c0, ctrl[3] - c0]);
        if let Some(inv) = basis.try_inverse() {
            let alphas = world
                .iter()
                .map(|p| {
                    let a = inv * (p - c0);
                    vec![1.0 - a.sum(), a.x, a.y, a.z]
                })
                .collect();
            frames.push(ControlFrame { points: ctrl, alphas });
        }
    }
    if ratio < PLANAR_RATIO {
        let ctrl = vec![
            c0,
            c0 + lambda[0].sqrt() * axes[0],
            c0 + lambda[1].sqrt() * axes[1],
        ];
        let alphas = world
            .iter()
            .map(|p| {
                let d = p - c0;
                let a1 = d.dot(&axes[0]) / lambda[0].sqrt();
                let a2 = d.dot(&axes[1]) / lambda[1].sqrt();
                vec![1.0 - a1 - a2, a1, a2]
            })
            .collect();
        frames.push(ControlFrame { points: ctrl, alphas });
    }
    Ok(frames)
}

/// Candidate camera-frame control points from `betas` over the kernel vectors.
fn combine(kernel: &[DVector<f64>], betas: &[f64], nc: usize) -> Vec<Vector3<f64>> {
    (0..nc)
        .map(|j| {
            let mut v = Vector3::zeros();
            for (b, k) in betas.iter().zip(kernel) {
                v += *b * Vector3::new(k[3 * j], k[3 * j + 1], k[3 * j + 2]);
            }
            v
        })
        .collect()
}

fn pairs(nc: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..nc {
        for j in i + 1..nc {
            out.push((i, j));
        }
    }
    out
}

fn kernel_diff(k: &DVector<f64>, i: usize, j: usize) -> Vector3<f64> {
    Vector3::new(k[3 * i] - k[3 * j], k[3 * i + 1] - k[3 * j + 1], k[3 * i + 2] - k[3 * j + 2])
}

/// Refines `betas` so that camera-frame control-point distances match the
/// world-frame ones.
fn gauss_newton(kernel: &[DVector<f64>], betas: &mut [f64], world_ctrl: &[Vector3<f64>]) {
    let nc = world_ctrl.len();
    let pr = pairs(nc);
    let nb = betas.len();
    for _ in 0..GAUSS_NEWTON_STEPS {
        let ctrl = combine(kernel, betas, nc);
        let mut jac = DMatrix::zeros(pr.len(), nb);
        let mut res = DVector::zeros(pr.len());
        for (r, (i, j)) in pr.iter().enumerate() {
            let d = ctrl[*i] - ctrl[*j];
            res[r] = d.norm_squared() - (world_ctrl[*i] - world_ctrl[*j]).norm_squared();
            for (a, k) in kernel.iter().enumerate() {
                jac[(r, a)] = 2.0 * d.dot(&kernel_diff(k, *i, *j));
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let Some(step) = jtj.lu().solve(&jtr) else {
            break;
        };
        for a in 0..nb {
            betas[a] -= step[a];
        }
        if step.norm() < 1e-15 {
            break;
        }
    }
}

/// Least-squares solution of `L x = rhs` for the linearised beta products.
fn solve_linearised(l: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = l.clone().svd(true, true);
    svd.solve(rhs, 1e-12).ok()
}

fn beta_candidates(kernel: &[DVector<f64>], world_ctrl: &[Vector3<f64>]) -> Vec<Vec<f64>> {
    let nc = world_ctrl.len();
    let pr = pairs(nc);
    let rhs = DVector::from_iterator(
        pr.len(),
        pr.iter().map(|(i, j)| (world_ctrl[*i] - world_ctrl[*j]).norm_squared()),
    );
    let mut out = Vec::new();

    // N = 1: a single scale
    {
        let v = &kernel[0];
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, j) in &pr {
            let dv = kernel_diff(v, *i, *j).norm();
            num += dv * (world_ctrl[*i] - world_ctrl[*j]).norm();
            den += dv * dv;
        }
        if den > 0.0 {
            out.push(vec![num / den]);
        }
    }

    // N = 2: unknowns (b11, b12, b22)
    if kernel.len() >= 2 {
        let (v1, v2) = (&kernel[0], &kernel[1]);
        let l = DMatrix::from_fn(pr.len(), 3, |r, c| {
            let (i, j) = pr[r];
            let a = kernel_diff(v1, i, j);
            let b = kernel_diff(v2, i, j);
            match c {
                0 => a.dot(&a),
                1 => 2.0 * a.dot(&b),
                _ => b.dot(&b),
            }
        });
        if let Some(x) = solve_linearised(&l, &rhs) {
            let b1 = x[0].abs().sqrt();
            let b2 = x[2].abs().sqrt() * if x[1] * x[0] >= 0.0 { 1.0 } else { -1.0 };
            out.push(vec![b1, b2]);
        }
    }

    // N = 3: six products, square only with four control points
    if kernel.len() >= 3 && nc == 4 {
        let idx = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        let l = DMatrix::from_fn(pr.len(), 6, |r, c| {
            let (i, j) = pr[r];
            let (a, b) = idx[c];
            let da = kernel_diff(&kernel[a], i, j);
            let db = kernel_diff(&kernel[b], i, j);
            if a == b {
                da.dot(&da)
            } else {
                2.0 * da.dot(&db)
            }
        });
        if let Some(x) = solve_linearised(&l, &rhs) {
            let b1 = x[0].abs().sqrt();
            let s = |v: f64| if v * x[0] >= 0.0 { 1.0 } else { -1.0 };
            out.push(vec![b1, x[3].abs().sqrt() * s(x[1]), x[5].abs().sqrt() * s(x[2])]);
        }
    }

    // N = 4: keep only the products involving the first vector
    if kernel.len() >= 4 && nc == 4 {
        let l = DMatrix::from_fn(pr.len(), 4, |r, c| {
            let (i, j) = pr[r];
            let d0 = kernel_diff(&kernel[0], i, j);
            let dc = kernel_diff(&kernel[c], i, j);
            if c == 0 {
                d0.dot(&d0)
            } else {
                2.0 * d0.dot(&dc)
            }
        });
        if let Some(x) = solve_linearised(&l, &rhs) {
            let b1 = x[0].abs().sqrt();
            if b1 > 0.0 {
                out.push(vec![b1, x[1] / b1, x[2] / b1, x[3] / b1]);
            }
        }
    }
    out
}

/// Rigid transform `(R, t)` minimising `Σ w ‖R a + t − b‖²`.
fn procrustes(a: &[Vector3<f64>], b: &[Vector3<f64>], w: &[f64]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let ca = a.iter().zip(w).fold(Vector3::zeros(), |s, (p, wi)| s + *wi * p) / total;
    let cb = b.iter().zip(w).fold(Vector3::zeros(), |s, (p, wi)| s + *wi * p) / total;
    let mut h = Matrix3::zeros();
    for ((pa, pb), wi) in a.iter().zip(b).zip(w) {
        h += *wi * (pb - cb) * (pa - ca).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    Some((r, cb - r * ca))
}

pub(crate) fn reprojection_rms(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    data: &[Correspondence],
    k: &CameraIntrinsics,
    w: &[f64],
) -> f64 {
    let mut sum = 0.0;
    let mut total = 0.0;
    for (c, wi) in data.iter().zip(w) {
        let p = r * c.point + t;
        let e = if p.z > 0.0 {
            let u = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
            (u - c.pixel).norm_squared()
        } else {
            1e12
        };
        sum += wi * e;
        total += wi;
    }
    (sum / total).sqrt()
}

/// EPnP with optional per-correspondence weights on the projection rows.
pub fn epnp_weighted(
    data: &[Correspondence],
    k: &CameraIntrinsics,
    weights: Option<&[f64]>,
) -> Result<Pose, PnpError> {
    if data.len() < 4 {
        return Err(PnpError::TooFewPoints { got: data.len(), needed: 4 });
    }
    let ones = vec![1.0; data.len()];
    let w = weights.unwrap_or(&ones);
    let world: Vec<Vector3<f64>> = data.iter().map(|c| c.point).collect();
    let frames = control_frames(&world)?;

    let mut best: Option<(f64, Matrix3<f64>, Vector3<f64>)> = None;
    for frame in &frames {
        let nc = frame.points.len();
        let mut m = DMatrix::zeros(2 * data.len(), 3 * nc);
        for (i, c) in data.iter().enumerate() {
            let sw = w[i].max(0.0).sqrt();
            let x = (c.pixel.x - k.cx) / k.fx;
            let y = (c.pixel.y - k.cy) / k.fy;
            for j in 0..nc {
                let a = frame.alphas[i][j] * sw;
                m[(2 * i, 3 * j)] = a;
                m[(2 * i, 3 * j + 2)] = -a * x;
                m[(2 * i + 1, 3 * j + 1)] = a;
                m[(2 * i + 1, 3 * j + 2)] = -a * y;
            }
        }
        let mtm = m.transpose() * &m;
        let eig = SymmetricEigen::new(mtm);
        let mut order: Vec<usize> = (0..3 * nc).collect();
        order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
        let kernel: Vec<DVector<f64>> = order
            .iter()
            .take(4.min(3 * nc))
            .map(|i| eig.eigenvectors.column(*i).into_owned())
            .collect();

        for betas0 in beta_candidates(&kernel, &frame.points) {
            let used = &kernel[..betas0.len()];
            let mut betas = betas0;
            gauss_newton(used, &mut betas, &frame.points);
            let ctrl = combine(used, &betas, nc);
            let mut cam: Vec<Vector3<f64>> = frame
                .alphas
                .iter()
                .map(|al| al.iter().zip(&ctrl).fold(Vector3::zeros(), |s, (a, c)| s + *a * c))
                .collect();
            let behind = cam.iter().filter(|p| p.z < 0.0).count();
            if 2 * behind > cam.len() {
                cam.iter_mut().for_each(|p| *p = -*p);
            }
            let Some((r, t)) = procrustes(&world, &cam, w) else {
                continue;
            };
            let err = reprojection_rms(&r, &t, data, k, w);
            if err.is_finite() && best.as_ref().is_none_or(|b| err < b.0) {
                best = Some((err, r, t));
            }
        }
    }
    let (_, r, t) = best.ok_or_else(|| PnpError::DegenerateConfiguration("no valid candidate".into()))?;
    // world-to-camera (R, t) → camera-to-world pose
    Ok(Pose::from_matrix(&r.transpose(), -(r.transpose() * t)))
}
