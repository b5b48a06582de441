//! In-place iterative radix-2 FFT over separate real and imaginary slices.

use std::f64::consts::PI;

/// Forward (`inverse == false`) or unnormalized inverse transform.
/// Length must be a power of two.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = sign * 2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let (s, c) = (step * k as f64).sin_cos();
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * c - im[b] * s;
                let ti = re[b] * s + im[b] * c;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive_dft(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = re.len();
        let mut or = vec![0.0; n];
        let mut oi = vec![0.0; n];
        for k in 0..n {
            for t in 0..n {
                let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                or[k] += re[t] * ang.cos() - im[t] * ang.sin();
                oi[k] += re[t] * ang.sin() + im[t] * ang.cos();
            }
        }
        (or, oi)
    }

    #[test]
    fn matches_naive_dft() {
        let mut rng = Rng::new(4);
        for n in [1, 2, 4, 8, 64, 256] {
            let re: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
            let im: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
            let (er, ei) = naive_dft(&re, &im);
            let (mut r, mut i) = (re.clone(), im.clone());
            fft_in_place(&mut r, &mut i, false);
            for k in 0..n {
                assert!((r[k] - er[k]).abs() < 1e-9 && (i[k] - ei[k]).abs() < 1e-9, "n={n} k={k}");
            }
            fft_in_place(&mut r, &mut i, true);
            for k in 0..n {
                assert!((r[k] / n as f64 - re[k]).abs() < 1e-12);
                assert!((i[k] / n as f64 - im[k]).abs() < 1e-12);
            }
        }
    }
}
