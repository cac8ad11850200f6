//! Real spherical harmonics up to degree 3, in the band order used by the
//! Gaussian-splatting PLY interchange layout, with analytic direction
//! gradients for the rasterizer backward pass.

use nalgebra::Vector3;

pub const MAX_DEGREE: usize = 3;
pub const MAX_BANDS: usize = 16;

pub const SH_C0: f64 = 0.28209479177387814;
const SH_C1: f64 = 0.4886025119029199;
const SH_C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const SH_C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

pub fn basis_size(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values at unit direction `dir`, truncated to `degree`. Entries past
/// `basis_size(degree)` are zero.
pub fn eval_basis(dir: Vector3<f64>, degree: usize) -> [f64; MAX_BANDS] {
    let (x, y, z) = (dir[0], dir[1], dir[2]);
    let mut b = [0.0; MAX_BANDS];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = SH_C3[0] * y * (3.0 * xx - yy);
        b[10] = SH_C3[1] * x * y * z;
        b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = SH_C3[5] * z * (xx - yy);
        b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
    b
}

/// Basis values and their gradients with respect to the (unnormalized-input)
/// unit direction components.
pub fn eval_basis_grad(
    dir: Vector3<f64>,
    degree: usize,
) -> ([f64; MAX_BANDS], [Vector3<f64>; MAX_BANDS]) {
    let (x, y, z) = (dir[0], dir[1], dir[2]);
    let b = eval_basis(dir, degree);
    let mut g = [Vector3::zeros(); MAX_BANDS];
    if degree >= 1 {
        g[1] = Vector3::new(0.0, -SH_C1, 0.0);
        g[2] = Vector3::new(0.0, 0.0, SH_C1);
        g[3] = Vector3::new(-SH_C1, 0.0, 0.0);
    }
    if degree >= 2 {
        g[4] = SH_C2[0] * Vector3::new(y, x, 0.0);
        g[5] = SH_C2[1] * Vector3::new(0.0, z, y);
        g[6] = SH_C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        g[7] = SH_C2[3] * Vector3::new(z, 0.0, x);
        g[8] = SH_C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[9] = SH_C3[0] * Vector3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
        g[10] = SH_C3[1] * Vector3::new(y * z, x * z, x * y);
        g[11] = SH_C3[2] * Vector3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
        g[12] = SH_C3[3]
            * Vector3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
        g[13] = SH_C3[4] * Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
        g[14] = SH_C3[5] * Vector3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
        g[15] = SH_C3[6] * Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
    }
    (b, g)
}
