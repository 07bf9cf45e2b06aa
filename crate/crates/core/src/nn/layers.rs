use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::Rng as _;

use super::Scalar;
use crate::seed;

/// Square-kernel convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_len(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

fn im2col<T: Scalar>(x: ArrayView3<T>, g: ConvGeom, ho: usize, wo: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let k = g.kernel;
    let mut cols = Array2::<T>::zeros((c * k * k, ho * wo));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let mut row = cols.row_mut((ci * k + ky) * k + kx);
                let row = row.as_slice_mut().unwrap();
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            row[oy * wo + ox] = x[[ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: ArrayView2<T>, g: ConvGeom, dx: &mut ndarray::ArrayViewMut3<T>, ho: usize, wo: usize) {
    let (c, h, w) = dx.dim();
    let k = g.kernel;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = cols.row((ci * k + ky) * k + kx);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dx[[ci, iy as usize, ix as usize]] = dx[[ci, iy as usize, ix as usize]] + row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cached im2col matrices of one convolution call.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    pub cols: Vec<Array2<T>>,
    pub in_shape: (usize, usize, usize, usize),
}

/// `x`: (N, C, H, W); `w`: (O, C*k*k); `b`: (O).
pub fn conv2d_forward<T: Scalar>(x: &Array4<T>, w: ArrayView2<T>, b: &Array1<T>, g: ConvGeom) -> (Array4<T>, ConvCache<T>) {
    let (n, _, h, wd) = x.dim();
    let (ho, wo) = (g.out_len(h), g.out_len(wd));
    let o = w.nrows();
    let mut y = Array4::<T>::zeros((n, o, ho, wo));
    let mut cols_all = Vec::with_capacity(n);
    for i in 0..n {
        let cols = im2col(x.index_axis(Axis(0), i), g, ho, wo);
        let mut yi = y.index_axis_mut(Axis(0), i);
        let mut yi = yi.view_mut().into_shape_with_order((o, ho * wo)).unwrap();
        for (mut row, &bias) in yi.rows_mut().into_iter().zip(b.iter()) {
            row.fill(bias);
        }
        general_mat_mul(T::one(), &w, &cols, T::one(), &mut yi);
        cols_all.push(cols);
    }
    (y, ConvCache { cols: cols_all, in_shape: x.dim() })
}

/// Returns (dx if requested, dw, db).
pub fn conv2d_backward<T: Scalar>(
    dy: &Array4<T>,
    cache: &ConvCache<T>,
    w: ArrayView2<T>,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Array4<T>>, Array2<T>, Array1<T>) {
    let (n, o, ho, wo) = dy.dim();
    let mut dw = Array2::<T>::zeros(w.raw_dim());
    let mut db = Array1::<T>::zeros(o);
    let mut dx = need_dx.then(|| Array4::<T>::zeros(cache.in_shape));
    let mut dcols = Array2::<T>::zeros((w.ncols(), ho * wo));
    for i in 0..n {
        let dyi = dy.index_axis(Axis(0), i);
        let dyi = dyi.into_shape_with_order((o, ho * wo)).unwrap();
        general_mat_mul(T::one(), &dyi, &cache.cols[i].t(), T::one(), &mut dw);
        db += &dyi.sum_axis(Axis(1));
        if let Some(dx) = dx.as_mut() {
            general_mat_mul(T::one(), &w.t(), &dyi, T::zero(), &mut dcols);
            col2im_add(dcols.view(), g, &mut dx.index_axis_mut(Axis(0), i), ho, wo);
        }
    }
    (dx, dw, db)
}

/// NaN passes through so that diverged weights are not masked.
pub fn relu_inplace<T: Scalar, D: ndarray::Dimension>(x: &mut ndarray::Array<T, D>) {
    x.mapv_inplace(|v| if v < T::zero() { T::zero() } else { v });
}

/// Zero `dy` wherever the ReLU output `y` is not positive.
pub fn relu_backward<T: Scalar, D: ndarray::Dimension>(dy: &mut ndarray::Array<T, D>, y: &ndarray::Array<T, D>) {
    ndarray::Zip::from(dy).and(y).for_each(|d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
}

/// Mean over the time axis (H), then flatten (C, W) channel-major: (N, C*W).
pub fn time_mean_flatten<T: Scalar>(x: &Array4<T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let m = x.mean_axis(Axis(2)).unwrap_or_else(|| Array3::zeros((n, c, w)));
    debug_assert!(h > 0);
    m.into_shape_with_order((n, c * w)).unwrap()
}

pub fn time_mean_flatten_backward<T: Scalar>(dy: &Array2<T>, shape: (usize, usize, usize, usize)) -> Array4<T> {
    let (n, c, h, w) = shape;
    let scale = T::one() / T::of(h as f64);
    let d = dy.view().into_shape_with_order((n, c, 1, w)).unwrap();
    let mut dx = Array4::<T>::zeros(shape);
    dx.zip_mut_with(&d.broadcast(shape).unwrap(), |a, &b| *a = b * scale);
    dx
}

/// Mean over time and frequency: (N, C, H, W) -> (N, C).
pub fn global_mean<T: Scalar>(x: &Array4<T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    debug_assert!(h * w > 0);
    let scale = T::one() / T::of((h * w) as f64);
    Array2::from_shape_fn((n, c), |(i, j)| x.slice(s![i, j, .., ..]).sum() * scale)
}

pub fn global_mean_backward<T: Scalar>(dy: &Array2<T>, shape: (usize, usize, usize, usize)) -> Array4<T> {
    let (_, _, h, w) = shape;
    let scale = T::one() / T::of((h * w) as f64);
    Array4::from_shape_fn(shape, |(i, j, _, _)| dy[[i, j]] * scale)
}

/// `x`: (N, in); `w`: (in, out).
pub fn dense_forward<T: Scalar>(x: &Array2<T>, w: ArrayView2<T>, b: &Array1<T>) -> Array2<T> {
    let mut y = x.dot(&w);
    y += b;
    y
}

/// Returns (dx if requested, dw, db).
pub fn dense_backward<T: Scalar>(dy: &Array2<T>, x: &Array2<T>, w: ArrayView2<T>, need_dx: bool) -> (Option<Array2<T>>, Array2<T>, Array1<T>) {
    let dw = x.t().dot(dy);
    let db = dy.sum_axis(Axis(0));
    let dx = need_dx.then(|| dy.dot(&w.t()));
    (dx, dw, db)
}

/// Row-wise L2 normalization; returns (z, norms).
pub fn l2_normalize<T: Scalar>(u: &Array2<T>) -> (Array2<T>, Array1<T>) {
    let tiny = T::of(1e-12);
    let norms = u.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(tiny));
    let z = u / &norms.view().insert_axis(Axis(1));
    (z, norms)
}

/// du = (dz - z (z . dz)) / |u|
pub fn l2_normalize_backward<T: Scalar>(dz: &Array2<T>, z: &Array2<T>, norms: &Array1<T>) -> Array2<T> {
    let mut du = dz.clone();
    for ((mut row, zr), &n) in du.rows_mut().into_iter().zip(z.rows()).zip(norms.iter()) {
        let proj = zr.dot(&row);
        row.zip_mut_with(&zr, |d, &zv| *d = (*d - zv * proj) / n);
    }
    du
}

/// Inverted dropout mask with keep-scale folded in; all ones when `rate` is 0.
pub fn dropout_mask<T: Scalar>(shape: (usize, usize), rate: f64, rng: &mut seed::Rng) -> Array2<T> {
    if rate <= 0.0 {
        return Array2::ones(shape);
    }
    let keep = T::of(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { T::zero() } else { keep })
}

/// Fixed input layer: average `pool` consecutive frames, then `(x - offset) * scale`.
/// `x`: (N, frames, bins) -> (N, 1, frames / pool, bins).
pub fn input_layer<T: Scalar>(x: &Array3<f32>, pool: usize, offset: f64, scale: f64) -> Array4<T> {
    let (n, f, b) = x.dim();
    let fo = f / pool;
    let mut y = Array4::<T>::zeros((n, 1, fo, b));
    let k = scale / pool as f64;
    for i in 0..n {
        for t in 0..fo {
            let block = x.slice(s![i, t * pool..(t + 1) * pool, ..]);
            for j in 0..b {
                let sum: f64 = block.column(j).iter().map(|&v| v as f64).sum();
                y[[i, 0, t, j]] = T::of(sum * k - offset * scale);
            }
        }
    }
    y
}
