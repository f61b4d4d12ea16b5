use petrec_core::deform::{deform_backward, deform_forward, DeformGeometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct per-position evaluation of the aggregation sum using the tent form
/// of bilinear interpolation: sum over integer neighbours of
/// max(0, 1-|dy|) * max(0, 1-|dx|) * C(iy, ix).
fn brute_force(g: &DeformGeometry, window: &[f64], offsets: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (t_n, h, w, s) = (g.slices, g.height, g.width, g.kernel);
    let c = (s / 2) as f64;
    let mut out = vec![0.0; g.out_channels * h * w];
    for o in 0..g.out_channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for t in 0..t_n {
                    for ky in 0..s {
                        for kx in 0..s {
                            let tap = ky * s + kx;
                            let ch = t * 2 * s * s + 2 * tap;
                            let dy = offsets[(ch * h + y) * w + x];
                            let dx = offsets[((ch + 1) * h + y) * w + x];
                            let py = y as f64 + ky as f64 - c + dy;
                            let px = x as f64 + kx as f64 - c + dx;
                            let mut v = 0.0;
                            for iy in [py.floor() as i64, py.floor() as i64 + 1] {
                                for ix in [px.floor() as i64, px.floor() as i64 + 1] {
                                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                        continue;
                                    }
                                    let wy = (1.0 - (py - iy as f64).abs()).max(0.0);
                                    let wx = (1.0 - (px - ix as f64).abs()).max(0.0);
                                    v += wy * wx * window[(t * h + iy as usize) * w + ix as usize];
                                }
                            }
                            acc += kernel[((o * t_n + t) * s + ky) * s + kx] * v;
                        }
                    }
                }
                out[(o * h + y) * w + x] = acc;
            }
        }
    }
    out
}

/// Zero-padded cross-correlation over all window slices.
fn plain_conv(g: &DeformGeometry, window: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (h, w, s) = (g.height as i64, g.width as i64, g.kernel as i64);
    let c = s / 2;
    let mut out = vec![0.0; g.out_channels * g.height * g.width];
    for o in 0..g.out_channels as i64 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for t in 0..g.slices as i64 {
                    for ky in 0..s {
                        for kx in 0..s {
                            let (iy, ix) = (y + ky - c, x + kx - c);
                            if iy >= 0 && ix >= 0 && iy < h && ix < w {
                                acc += kernel[(((o * g.slices as i64 + t) * s + ky) * s + kx) as usize]
                                    * window[((t * h + iy) * w + ix) as usize];
                            }
                        }
                    }
                }
                out[((o * h + y) * w + x) as usize] = acc;
            }
        }
    }
    out
}

fn random_geometry(rng: &mut ChaCha8Rng) -> DeformGeometry {
    DeformGeometry {
        slices: [1, 3][rng.random_range(0..2)],
        height: rng.random_range(3..=8),
        width: rng.random_range(3..=8),
        kernel: [1, 3][rng.random_range(0..2)],
        out_channels: rng.random_range(1..=3),
    }
}

/// Offsets in (-2.5, 2.5) whose fractional part stays in [0.1, 0.9].
fn smooth_offsets(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.random_range(-3i32..=2) as f64 + rng.random_range(0.1..0.9))
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

#[test]
fn matches_brute_force_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..50 {
        let g = random_geometry(&mut rng);
        let window = uniform(&mut rng, g.window_len(), 0.0, 2.0);
        let offsets = uniform(&mut rng, g.offsets_len(), -2.5, 2.5);
        let kernel = uniform(&mut rng, g.kernel_len(), -1.0, 1.0);
        let fast = deform_forward(&g, &window, &offsets, &kernel).unwrap();
        let slow = brute_force(&g, &window, &offsets, &kernel);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-10, "{g:?}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_offsets_equal_plain_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let g = random_geometry(&mut rng);
        let window = uniform(&mut rng, g.window_len(), 0.0, 1.0);
        let kernel = uniform(&mut rng, g.kernel_len(), -1.0, 1.0);
        let out = deform_forward(&g, &window, &vec![0.0; g.offsets_len()], &kernel).unwrap();
        let conv = plain_conv(&g, &window, &kernel);
        for (a, b) in out.iter().zip(&conv) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h_step = 1e-3;
    for _ in 0..20 {
        let g = random_geometry(&mut rng);
        let window = uniform(&mut rng, g.window_len(), 0.0, 1.0);
        let offsets = smooth_offsets(&mut rng, g.offsets_len());
        let kernel = uniform(&mut rng, g.kernel_len(), -1.0, 1.0);
        let probe = uniform(&mut rng, g.output_len(), -1.0, 1.0);
        let loss = |w: &[f64], o: &[f64], k: &[f64]| -> f64 {
            deform_forward(&g, w, o, k).unwrap().iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let grads = deform_backward(&g, &window, &offsets, &kernel, &probe).unwrap();

        let check = |which: usize, analytic: &[f64]| {
            for i in 0..analytic.len() {
                let mut args = [window.clone(), offsets.clone(), kernel.clone()];
                args[which][i] += h_step;
                let up = loss(&args[0], &args[1], &args[2]);
                args[which][i] -= 2.0 * h_step;
                let down = loss(&args[0], &args[1], &args[2]);
                let fd = (up - down) / (2.0 * h_step);
                assert!(
                    rel_err(fd, analytic[i]) <= 1e-3 || (fd - analytic[i]).abs() < 1e-9,
                    "arg {which} index {i}: fd {fd} vs analytic {}",
                    analytic[i]
                );
            }
        };
        check(1, &grads.offsets);
        check(2, &grads.kernel);
        // the window enters linearly; perturbations never cross a kink
        check(0, &grads.window);
    }
}
