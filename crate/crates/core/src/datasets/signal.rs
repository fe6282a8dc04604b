//! Resampling, zero-phase IIR filtering and band energy of 1-D signals.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Linear interpolation of `(t, x)` onto `t[0] + j / rate` for every grid
/// point not past `t.last()`.
pub fn resample_linear(t: &[f64], x: &[f64], rate: f64) -> Vec<f64> {
    assert_eq!(t.len(), x.len());
    let (Some(&t0), Some(&t_end)) = (t.first(), t.last()) else {
        return Vec::new();
    };
    let n_out = ((t_end - t0) * rate + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n_out);
    let mut i = 0;
    for j in 0..n_out {
        let tj = t0 + j as f64 / rate;
        while i + 2 < t.len() && t[i + 1] < tj {
            i += 1;
        }
        if t.len() == 1 {
            out.push(x[0]);
            continue;
        }
        let (ta, tb) = (t[i], t[i + 1]);
        let w = ((tj - ta) / (tb - ta)).clamp(0.0, 1.0);
        out.push(x[i] + w * (x[i + 1] - x[i]));
    }
    out
}

/// Coefficients of `prod (z - r)` in descending powers of `z`.
fn poly(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = c.clone();
        next.push(Complex64::new(0.0, 0.0));
        for i in 1..next.len() {
            next[i] -= r * c[i - 1];
        }
        c = next;
    }
    c
}

/// Digital Butterworth high-pass `(b, a)` via the bilinear transform with
/// frequency prewarping, normalized to unit gain at Nyquist.
pub fn butter_highpass(order: usize, cutoff_hz: f64, fs: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1 && cutoff_hz > 0.0 && cutoff_hz < fs / 2.0);
    let fs2 = 2.0 * fs;
    let warped = fs2 * (PI * cutoff_hz / fs).tan();
    let n = order as f64;
    let poles: Vec<Complex64> = (0..order)
        .map(|k| {
            let lp = Complex64::from_polar(1.0, PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n));
            let s = Complex64::new(warped, 0.0) / lp;
            (fs2 + s) / (fs2 - s)
        })
        .collect();
    let zeros = vec![Complex64::new(1.0, 0.0); order];
    let mut b: Vec<f64> = poly(&zeros).iter().map(|c| c.re).collect();
    let a: Vec<f64> = poly(&poles).iter().map(|c| c.re).collect();
    let alt = |v: &[f64]| -> f64 {
        v.iter()
            .enumerate()
            .map(|(i, &c)| if i % 2 == 0 { c } else { -c })
            .sum()
    };
    let gain = alt(&a) / alt(&b);
    b.iter_mut().for_each(|c| *c *= gain);
    (b, a)
}

/// `|H(e^{j 2 pi f / fs})|`.
pub fn gain_at(b: &[f64], a: &[f64], f: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * f / fs;
    let eval = |c: &[f64]| -> Complex64 {
        c.iter()
            .enumerate()
            .map(|(k, &v)| Complex64::from_polar(v, -w * k as f64))
            .sum()
    };
    (eval(b) / eval(a)).norm()
}

/// Direct form II transposed IIR filter with initial state `zi`.
pub fn lfilter(b: &[f64], a: &[f64], x: &[f64], zi: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let coef = |c: &[f64], i: usize| c.get(i).copied().unwrap_or(0.0) / a[0];
    let mut z = zi.to_vec();
    z.resize(n - 1, 0.0);
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = coef(b, 0) * xi + z.first().copied().unwrap_or(0.0);
        for i in 0..n - 1 {
            let next = if i + 1 < n - 1 { z[i + 1] } else { 0.0 };
            z[i] = coef(b, i + 1) * xi + next - coef(a, i + 1) * yi;
        }
        y.push(yi);
    }
    y
}

/// Steady-state filter state for a unit step input.
pub fn lfilter_zi(b: &[f64], a: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let m = n - 1;
    let norm = |c: &[f64], i: usize| c.get(i).copied().unwrap_or(0.0) / a[0];
    // (I - companion(a)^T) zi = b[1:] - a[1:] b[0]
    let mut mat = vec![vec![0.0; m + 1]; m];
    for (i, row) in mat.iter_mut().enumerate() {
        row[i] += 1.0;
        row[0] += norm(a, i + 1);
        if i + 1 < m {
            row[i + 1] -= 1.0;
        }
        row[m] = norm(b, i + 1) - norm(a, i + 1) * norm(b, 0);
    }
    // Gaussian elimination with partial pivoting
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&i, &j| mat[i][col].abs().total_cmp(&mat[j][col].abs()))
            .expect("non-empty");
        mat.swap(col, pivot);
        for r in 0..m {
            if r != col {
                let f = mat[r][col] / mat[col][col];
                for c in col..=m {
                    mat[r][c] -= f * mat[col][c];
                }
            }
        }
    }
    (0..m).map(|i| mat[i][m] / mat[i][i]).collect()
}

/// Forward-backward filtering with odd extension of `3 * max(len(a), len(b))`
/// samples at each end and steady-state initial conditions.
pub fn filtfilt(b: &[f64], a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let pad = (3 * a.len().max(b.len())).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = lfilter_zi(b, a);
    let scaled = |x0: f64| zi.iter().map(|z| z * x0).collect::<Vec<_>>();
    let mut y = lfilter(b, a, &ext, &scaled(ext[0]));
    y.reverse();
    let mut y = lfilter(b, a, &y, &scaled(y[0]));
    y.reverse();
    y[pad..pad + n].to_vec()
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided power spectral density of the mean-removed, Hann-windowed
/// signal; bin `k` is at `k * fs / len` Hz.
pub fn periodogram(x: &[f64], fs: f64) -> Vec<f64> {
    let n = x.len();
    let w = hann(n);
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = x
        .iter()
        .zip(&w)
        .map(|(&v, &wi)| Complex64::new((v - mean) * wi, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    one_sided(&buf, &w, fs)
}

/// Shared scaling of a full spectrum to a one-sided density.
pub(crate) fn one_sided(spectrum: &[Complex64], window: &[f64], fs: f64) -> Vec<f64> {
    let n = spectrum.len();
    let scale = 1.0 / (fs * window.iter().map(|v| v * v).sum::<f64>());
    (0..=n / 2)
        .map(|k| {
            let p = spectrum[k].norm_sqr() * scale;
            let edge = k == 0 || (n % 2 == 0 && k == n / 2);
            if edge {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

/// Sum of periodogram bins with `lo <= f <= hi`.
pub fn band_energy(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len() as f64;
    periodogram(x, fs)
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * fs / n;
            f >= lo - 1e-9 && f <= hi + 1e-9
        })
        .map(|(_, p)| p)
        .sum()
}
