//! Communication-avoiding orthogonalization: iterated shifted CholeskyQR and
//! its incremental column update.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Iteration cap for the outer orthogonalization loop.
const MAX_ITERS: usize = 100;
/// Shift-retry cap per Cholesky factorization.
const MAX_SHIFTS: usize = 5;
/// Multiple of eps·√k accepted as converged once the deviation stops
/// decreasing. fl(QᵀQ) carries rounding noise of roughly k·eps in Frobenius
/// norm, so the 1·eps·√k target is not always reachable; this matches the
/// documented orthogonality guarantee of the factor pair.
const FLOOR_FACTOR: f64 = 100.0;

/// An orthonormal basis with its triangular factor, Q·R equal to the
/// factored input. R has a strictly positive diagonal, making the pair
/// unique.
#[derive(Debug, Clone)]
pub struct QRPair {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl QRPair {
    /// Basis width.
    pub fn width(&self) -> usize {
        self.q.ncols()
    }
}

/// Upper Cholesky factor R with RᵀR = X, or None on breakdown (non-positive
/// pivot or non-finite value).
fn try_upper_cholesky(x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = x.nrows();
    let mut r = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut d = x[(j, j)];
        for l in 0..j {
            d -= r[(l, j)] * r[(l, j)];
        }
        if !d.is_finite() || d <= 0.0 {
            return None;
        }
        let rjj = d.sqrt();
        r[(j, j)] = rjj;
        for c in (j + 1)..k {
            let mut v = x[(j, c)];
            for l in 0..j {
                v -= r[(l, j)] * r[(l, c)];
            }
            r[(j, c)] = v / rjj;
        }
    }
    Some(r)
}

/// Cholesky with diagonal-shift retries: on breakdown the shift
/// σ = 11(rows·k + k(k+1))·eps·max(‖X‖_F, noise_scale) is recomputed from
/// the current (already shifted) X and applied again, at most `MAX_SHIFTS`
/// times. `noise_scale` carries the squared magnitude of the block the Gram
/// matrix came from; when X is a small complement of large Grams its own
/// norm underestimates the rounding noise it contains. Mutates `x` in place
/// with the applied shifts.
fn cholesky_with_shifts(
    x: &mut DMatrix<f64>,
    rows: usize,
    eps: f64,
    noise_scale: f64,
) -> Result<DMatrix<f64>> {
    let k = x.nrows();
    for attempt in 0..=MAX_SHIFTS {
        if let Some(r) = try_upper_cholesky(x) {
            return Ok(r);
        }
        if attempt == MAX_SHIFTS {
            break;
        }
        let sigma = 11.0 * ((rows * k + k * (k + 1)) as f64) * eps * x.norm().max(noise_scale);
        if sigma <= 0.0 || !sigma.is_finite() {
            break;
        }
        for i in 0..k {
            x[(i, i)] += sigma;
        }
    }
    Err(Error::RankDeficient(format!(
        "Cholesky breakdown persisted after {MAX_SHIFTS} shifts on a {k}x{k} Gram matrix"
    )))
}

/// In-place right triangular solve Q ← Q·R̃^{-1} by forward column sweep
/// over the column-major storage.
fn right_tri_solve_inplace(q: &mut DMatrix<f64>, rt: &DMatrix<f64>) {
    let rows = q.nrows();
    let k = q.ncols();
    let data = q.as_mut_slice();
    for c in 0..k {
        let (head, tail) = data.split_at_mut(c * rows);
        let col_c = &mut tail[..rows];
        for l in 0..c {
            let f = rt[(l, c)];
            if f != 0.0 {
                let col_l = &head[l * rows..(l + 1) * rows];
                for (vc, vl) in col_c.iter_mut().zip(col_l) {
                    *vc -= f * vl;
                }
            }
        }
        let inv = 1.0 / rt[(c, c)];
        for v in col_c.iter_mut() {
            *v *= inv;
        }
    }
}

fn gram_deviation(gram: &DMatrix<f64>) -> f64 {
    let k = gram.nrows();
    let mut acc = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram[(i, j)] - target;
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Iterated shifted CholeskyQR of a tall block Y (rows ≥ k ≥ 1).
///
/// Loops Cholesky factorization of the running Gram matrix X = QᵀQ
/// (initially YᵀY) with shift retries on breakdown, accumulating R ← R̃R and
/// Q ← QR̃^{-1}, until ‖X − I‖_F < eps·√k or the deviation has reached its
/// rounding floor (below `FLOOR_FACTOR`·eps·√k and no longer halving).
/// A zero or persistently breakdown-prone input is a rank-deficiency error.
pub fn shifted_cholqr(y: &DMatrix<f64>, eps: f64) -> Result<QRPair> {
    let rows = y.nrows();
    let k = y.ncols();
    if k < 1 || rows < k {
        return Err(Error::ShapeMismatch(format!(
            "need rows >= k >= 1, got {rows}x{k}"
        )));
    }
    let tol = eps * (k as f64).sqrt();
    let mut q = y.clone();
    let mut r = DMatrix::identity(k, k);
    let mut prev_dev = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        let mut x = q.tr_mul(&q);
        let dev = gram_deviation(&x);
        if dev < tol || (dev < FLOOR_FACTOR * tol && dev >= 0.5 * prev_dev) {
            return Ok(QRPair { q, r });
        }
        prev_dev = dev;
        let rt = cholesky_with_shifts(&mut x, rows, eps, q.norm_squared())?;
        right_tri_solve_inplace(&mut q, &rt);
        r = &rt * &r;
    }
    Err(Error::RankDeficient(format!(
        "orthogonalization of a {rows}x{k} block did not converge in {MAX_ITERS} iterations"
    )))
}

/// Extends a factorization by b new columns: returns (Q̃, R̃) of width k+b
/// with Q̃R̃ = [Q·R, Y_b].
///
/// Each pass re-orthogonalizes the new block against the existing basis,
/// Q_b ← (Q_b − Q·B)R̃_b^{-1}, with the Gram complement
/// X = Q_bᵀQ_b − BᵀB factored by shifted Cholesky. The loop always runs at
/// least once and exits on the same orthogonality test as
/// [`shifted_cholqr`], applied to the new block. The off-diagonal coupling
/// is accumulated across passes so that the assembled triangle reconstructs
/// the input exactly in exact arithmetic.
pub fn cholqr_update(qr: &QRPair, y_b: &DMatrix<f64>, eps: f64) -> Result<QRPair> {
    let rows = qr.q.nrows();
    let k = qr.q.ncols();
    let b = y_b.ncols();
    if b < 1 || y_b.nrows() != rows || rows < k + b {
        return Err(Error::ShapeMismatch(format!(
            "update block must be {rows}x(b>=1) with rows >= k+b, got {}x{b}",
            y_b.nrows()
        )));
    }
    let tol = eps * (b as f64).sqrt();

    let mut q_b = y_b.clone();
    let mut b_cur = qr.q.tr_mul(y_b);
    let mut x = y_b.tr_mul(y_b) - b_cur.tr_mul(&b_cur);
    // Y_b lying entirely in range(Q) leaves no Gram mass to orthogonalize:
    // the complement is then pure cancellation noise of order eps·||Y_b||².
    let input_scale = y_b.norm_squared();
    if x.norm() <= 4.0 * eps * input_scale.max(f64::MIN_POSITIVE) {
        return Err(Error::RankDeficient(
            "update block lies numerically in the span of the existing basis".into(),
        ));
    }
    let mut b_acc = DMatrix::zeros(k, b);
    let mut r_b = DMatrix::identity(b, b);
    let mut prev_dev = f64::INFINITY;
    let mut converged = false;
    for pass in 0..MAX_ITERS {
        if pass > 0 {
            let gram = q_b.tr_mul(&q_b);
            let dev = gram_deviation(&gram);
            if dev < tol || (dev < FLOOR_FACTOR * tol && dev >= 0.5 * prev_dev) {
                converged = true;
                break;
            }
            prev_dev = dev;
        }
        let rt_b = cholesky_with_shifts(&mut x, rows, eps, q_b.norm_squared())?;
        q_b -= &qr.q * &b_cur;
        right_tri_solve_inplace(&mut q_b, &rt_b);
        b_acc += &b_cur * &r_b;
        r_b = &rt_b * &r_b;
        b_cur = qr.q.tr_mul(&q_b);
        x = q_b.tr_mul(&q_b) - b_cur.tr_mul(&b_cur);
    }
    if !converged {
        return Err(Error::RankDeficient(format!(
            "column update of width {b} did not converge in {MAX_ITERS} passes"
        )));
    }

    let mut q = DMatrix::zeros(rows, k + b);
    q.view_mut((0, 0), (rows, k)).copy_from(&qr.q);
    q.view_mut((0, k), (rows, b)).copy_from(&q_b);
    let mut r = DMatrix::zeros(k + b, k + b);
    r.view_mut((0, 0), (k, k)).copy_from(&qr.r);
    r.view_mut((0, k), (k, b)).copy_from(&b_acc);
    r.view_mut((k, k), (b, b)).copy_from(&r_b);
    Ok(QRPair { q, r })
}
