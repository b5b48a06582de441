use ldct_core::unet::{UNetConfig, UNetParams};
use ldct_core::{Rng, Tensor};

fn desk_net() -> UNetParams<f32> {
    UNetParams::build(UNetConfig::default(), &mut Rng::new(17)).unwrap()
}

fn at(t: &Tensor<f32>, size: usize, i: usize, j: usize) -> f32 {
    t.data()[i * size + j]
}

#[test]
fn receptive_radius_bounds() {
    let cfg = UNetConfig::default();
    assert_eq!(cfg.receptive_radius(), 58);
    let d1 = UNetConfig { depth: 1, ..cfg };
    assert_eq!(d1.receptive_radius(), 10);
}

// Zero padding only reaches as far as the receptive field. Beyond that the
// output on a constant input repeats with the pooling period 2^depth (the
// 2x2 upconv kernels differ by sub-position, so it need not be flat).
#[test]
fn constant_image_output_is_periodic_in_the_interior() {
    let net = desk_net();
    let s = 128;
    let y = net.predict(&Tensor::full(&[1, 1, s, s], 0.4)).unwrap();
    assert_eq!(y.shape(), &[1, 1, s, s]);
    let m = net.config().receptive_radius();
    let period = 1 << net.config().depth;
    assert!(m >= 8);
    for i in m..s - m - period {
        for j in m..s - m - period {
            let v = at(&y, s, i, j);
            for (di, dj) in [(period, 0), (0, period)] {
                let w = at(&y, s, i + di, j + dj);
                assert!((v - w).abs() <= 1e-5, "({i},{j}) {v} vs {w}");
            }
        }
    }
    // Near the border the padding is visible, so the margin is not vacuous.
    let mid = s / 2 - (s / 2) % period;
    assert!((at(&y, s, 0, 0) - at(&y, s, mid, mid)).abs() > 1e-5);
}

// Translating the input by a multiple of 2^depth translates the output, away
// from the borders.
#[test]
fn shifts_by_the_pooling_stride_commute() {
    let net = desk_net();
    let s = 192;
    let shift = 8;
    let mut rng = Rng::new(4);
    let base: Vec<f32> = (0..s * s).map(|_| rng.uniform() as f32).collect();
    let shifted: Vec<f32> = (0..s * s)
        .map(|k| {
            let (i, j) = (k / s, k % s);
            if i >= shift && j >= shift {
                base[(i - shift) * s + (j - shift)]
            } else {
                0.0
            }
        })
        .collect();
    let y0 = net.predict(&Tensor::from_vec(&[1, 1, s, s], base).unwrap()).unwrap();
    let y1 = net.predict(&Tensor::from_vec(&[1, 1, s, s], shifted).unwrap()).unwrap();
    let m = net.config().receptive_radius() + shift;
    let mut worst = 0.0f32;
    for i in m..s - m {
        for j in m..s - m {
            worst = worst.max((at(&y1, s, i + shift, j + shift) - at(&y0, s, i, j)).abs());
        }
    }
    assert!(worst <= 1e-5, "max deviation {worst}");
}

#[test]
fn output_shape_follows_input() {
    let net = desk_net();
    for s in [8, 24, 64, 72] {
        let y = net.predict(&Tensor::zeros(&[2, 1, s, s])).unwrap();
        assert_eq!(y.shape(), &[2, 1, s, s]);
    }
    assert!(net.predict(&Tensor::zeros(&[1, 1, 60, 60])).is_err());
}
