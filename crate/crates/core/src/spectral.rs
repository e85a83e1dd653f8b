//! One-dimensional periodic differentiation on `[0, 1)`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Scheme;

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

thread_local! {
    static PLANS: RefCell<HashMap<usize, Plans>> = RefCell::new(HashMap::new());
}

fn plans(n: usize) -> Plans {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
            })
            .clone()
    })
}

/// Signed wavenumber of FFT bin `k` on an `n`-point grid; the Nyquist bin maps to `n/2`.
pub fn wavenumber(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Fourier multiplier of `d^order/dx^order` for bin `k`.
fn spectral_symbol(k: usize, n: usize, order: u32, dealias: bool) -> Complex64 {
    let kk = wavenumber(k, n);
    if order == 0 {
        return Complex64::new(1.0, 0.0);
    }
    if 2 * k == n && order % 2 == 1 {
        return Complex64::new(0.0, 0.0);
    }
    if dealias && 3 * kk.unsigned_abs() as usize > n {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, 2.0 * PI * kk as f64).powu(order)
}

/// Reusable buffers for line differentiation.
#[derive(Default)]
pub struct LineScratch {
    buf: Vec<Complex64>,
    fft: Vec<Complex64>,
    tmp: Vec<f64>,
}

/// Writes `d^order input / dx^order` into `out`.
///
/// Constant lines yield exact zeros. Odd-order spectral derivatives drop the Nyquist mode.
pub fn differentiate_line(
    input: &[f64],
    out: &mut [f64],
    order: u32,
    scheme: Scheme,
    dealias: bool,
    scratch: &mut LineScratch,
) {
    let n = input.len();
    debug_assert_eq!(out.len(), n);
    if order == 0 {
        out.copy_from_slice(input);
        return;
    }
    if input.iter().all(|&v| v == input[0]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    match scheme {
        Scheme::Spectral => spectral_line(input, out, order, dealias, scratch),
        Scheme::Fd4 => fd4_line(input, out, order, scratch),
    }
}

fn spectral_line(input: &[f64], out: &mut [f64], order: u32, dealias: bool, s: &mut LineScratch) {
    let n = input.len();
    let (fwd, inv) = plans(n);
    s.buf.clear();
    s.buf.extend(input.iter().map(|&v| Complex64::new(v, 0.0)));
    let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
    if s.fft.len() < scratch_len {
        s.fft.resize(scratch_len, Complex64::new(0.0, 0.0));
    }
    fwd.process_with_scratch(&mut s.buf, &mut s.fft[..fwd.get_inplace_scratch_len()]);
    for (k, c) in s.buf.iter_mut().enumerate() {
        *c *= spectral_symbol(k, n, order, dealias);
    }
    inv.process_with_scratch(&mut s.buf, &mut s.fft[..inv.get_inplace_scratch_len()]);
    let norm = 1.0 / n as f64;
    for (o, c) in out.iter_mut().zip(&s.buf) {
        *o = c.re * norm;
    }
}

fn fd4_first(input: &[f64], out: &mut [f64]) {
    let n = input.len();
    let h = 1.0 / n as f64;
    for i in 0..n {
        let m2 = input[(i + n - 2) % n];
        let m1 = input[(i + n - 1) % n];
        let p1 = input[(i + 1) % n];
        let p2 = input[(i + 2) % n];
        out[i] = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    }
}

fn fd4_second(input: &[f64], out: &mut [f64]) {
    let n = input.len();
    let h = 1.0 / n as f64;
    for i in 0..n {
        let m2 = input[(i + n - 2) % n];
        let m1 = input[(i + n - 1) % n];
        let c = input[i];
        let p1 = input[(i + 1) % n];
        let p2 = input[(i + 2) % n];
        out[i] = (-m2 + 16.0 * m1 - 30.0 * c + 16.0 * p1 - p2) / (12.0 * h * h);
    }
}

/// Orders above two compose the second-derivative stencil, then one first-derivative pass.
fn fd4_line(input: &[f64], out: &mut [f64], order: u32, s: &mut LineScratch) {
    let n = input.len();
    s.tmp.clear();
    s.tmp.extend_from_slice(input);
    let mut remaining = order;
    while remaining >= 2 {
        fd4_second(&s.tmp, out);
        s.tmp.copy_from_slice(out);
        remaining -= 2;
    }
    if remaining == 1 {
        fd4_first(&s.tmp, out);
    } else {
        out.copy_from_slice(&s.tmp[..n]);
    }
}

/// Dense `n x n` (row-major) matrix of the line derivative operator.
pub fn differentiation_matrix(n: usize, order: u32, scheme: Scheme, dealias: bool) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    let mut scratch = LineScratch::default();
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        match scheme {
            Scheme::Spectral => spectral_line(&e, &mut col, order, dealias, &mut scratch),
            Scheme::Fd4 => fd4_line(&e, &mut col, order, &mut scratch),
        }
        for i in 0..n {
            m[i * n + j] = col[i];
        }
    }
    m
}

/// Eigenvalue of the discrete operator on Fourier mode `k` (used by the preconditioner).
pub fn symbol(k: usize, n: usize, order: u32, scheme: Scheme, dealias: bool) -> Complex64 {
    match scheme {
        Scheme::Spectral => spectral_symbol(k, n, order, dealias),
        Scheme::Fd4 => {
            let h = 1.0 / n as f64;
            let theta = 2.0 * PI * k as f64 / n as f64;
            let d1 = Complex64::new(0.0, (8.0 * theta.sin() - (2.0 * theta).sin()) / (6.0 * h));
            let d2 = Complex64::new(
                (-30.0 + 32.0 * theta.cos() - 2.0 * (2.0 * theta).cos()) / (12.0 * h * h),
                0.0,
            );
            let mut s = Complex64::new(1.0, 0.0);
            let mut r = order;
            while r >= 2 {
                s *= d2;
                r -= 2;
            }
            if r == 1 {
                s *= d1;
            }
            s
        }
    }
}

/// Forward and inverse FFT of a complex line, unnormalized forward.
pub fn fft_line(data: &mut [Complex64], inverse: bool) {
    let (fwd, inv) = plans(data.len());
    if inverse {
        inv.process(data);
        let norm = 1.0 / data.len() as f64;
        data.iter_mut().for_each(|c| *c *= norm);
    } else {
        fwd.process(data);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / n as f64).collect()
    }

    #[test]
    fn spectral_pure_mode_exact() {
        let n = 32;
        let x = grid(n);
        let f: Vec<f64> = x.iter().map(|&x| (2.0 * PI * 3.0 * x).sin()).collect();
        let mut out = vec![0.0; n];
        let mut s = LineScratch::default();
        differentiate_line(&f, &mut out, 1, Scheme::Spectral, false, &mut s);
        for (i, &xi) in x.iter().enumerate() {
            let exact = 6.0 * PI * (6.0 * PI * xi).cos();
            assert!((out[i] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn nyquist_dropped_for_odd_orders() {
        let n = 16;
        let f: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut out = vec![0.0; n];
        let mut s = LineScratch::default();
        differentiate_line(&f, &mut out, 1, Scheme::Spectral, false, &mut s);
        assert!(out.iter().all(|v| v.abs() < 1e-12));
        differentiate_line(&f, &mut out, 2, Scheme::Spectral, false, &mut s);
        let expect = -(PI * n as f64).powi(2);
        assert!((out[0] - expect).abs() < 1e-9 * expect.abs());
    }

    #[test]
    fn matrix_agrees_with_line_operator() {
        for scheme in [Scheme::Spectral, Scheme::Fd4] {
            let n = 12;
            let m = differentiation_matrix(n, 2, scheme, false);
            let f: Vec<f64> = grid(n).iter().map(|&x| (2.0 * PI * x).cos() + x * 0.0).collect();
            let mut out = vec![0.0; n];
            differentiate_line(&f, &mut out, 2, scheme, false, &mut LineScratch::default());
            for i in 0..n {
                let mv: f64 = (0..n).map(|j| m[i * n + j] * f[j]).sum();
                assert!((mv - out[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fd4_symbol_matches_stencil() {
        let n = 16;
        let k = 3;
        let f: Vec<f64> = grid(n).iter().map(|&x| (2.0 * PI * k as f64 * x).cos()).collect();
        let mut out = vec![0.0; n];
        differentiate_line(&f, &mut out, 2, Scheme::Fd4, false, &mut LineScratch::default());
        let s = symbol(k, n, 2, Scheme::Fd4, false);
        for i in 0..n {
            assert!((out[i] - s.re * f[i]).abs() < 1e-9);
        }
    }
}
