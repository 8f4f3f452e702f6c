use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::Real;

const LN_EPS: f64 = 1e-5;

/// Saved state of a row-wise layer normalization.
#[derive(Debug, Clone)]
pub struct LnCache<R> {
    pub xhat: Array2<R>,
    pub rstd: Array1<R>,
}

pub fn layer_norm<R: Real>(x: ArrayView2<R>, gain: &Array1<R>, bias: &Array1<R>) -> (Array2<R>, LnCache<R>) {
    let (rows, d) = x.dim();
    let inv_d = R::of(1.0 / d as f64);
    let mut xhat = Array2::zeros((rows, d));
    let mut rstd = Array1::zeros(rows);
    for (i, row) in x.outer_iter().enumerate() {
        let mean = row.iter().copied().sum::<R>() * inv_d;
        let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<R>() * inv_d;
        let r = R::one() / (var + R::of(LN_EPS)).sqrt();
        rstd[i] = r;
        for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
            *o = (*v - mean) * r;
        }
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

/// Returns the input gradient and accumulates gain and bias gradients.
pub fn layer_norm_backward<R: Real>(
    dy: ArrayView2<R>,
    cache: &LnCache<R>,
    gain: &Array1<R>,
    dgain: &mut Array1<R>,
    dbias: &mut Array1<R>,
) -> Array2<R> {
    let d = dy.ncols();
    *dgain += &(&dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let dxhat = &dy * gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    let inv_d = R::of(1.0 / d as f64);
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let sum_g = g.sum();
        let sum_gx = g.iter().zip(xh).map(|(a, b)| *a * *b).sum::<R>();
        let r = cache.rstd[i];
        for ((o, gj), xj) in dx.row_mut(i).iter_mut().zip(g).zip(xh) {
            *o = r * (*gj - inv_d * (sum_g + *xj * sum_gx));
        }
    }
    dx
}

pub fn linear<R: Real>(x: ArrayView2<R>, w: &Array2<R>, b: &Array1<R>) -> Array2<R> {
    x.dot(w) + b
}

/// Accumulates weight and bias gradients of `x W + b` and returns the input gradient.
pub fn linear_backward<R: Real>(
    x: ArrayView2<R>,
    dy: ArrayView2<R>,
    w: &Array2<R>,
    dw: &mut Array2<R>,
    db: &mut Array1<R>,
) -> Array2<R> {
    ndarray::linalg::general_mat_mul(R::one(), &x.t(), &dy, R::one(), dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

/// Row-wise softmax in place.
pub fn softmax_rows<R: Real>(s: &mut Array2<R>) {
    for mut row in s.outer_iter_mut() {
        let max = row.iter().copied().fold(R::neg_infinity(), R::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}
