//! Position-specific deformable aggregation over a slice window.
//!
//! For a window of `T = 2r + 1` slices `C_t`, an offset field `delta` of shape
//! `(T, 2*S*S, H, W)` and a kernel `K` of shape `(O, T, S, S)`:
//!
//! ```text
//! F[o](p) = sum_t sum_s K[o, t, s] * C_t(p + p_s + delta[t, s](p))
//! ```
//!
//! `p_s` walks the `S x S` grid centred on `p` in row-major order. Tap `s` of
//! slice `t` reads its `(dy, dx)` from offset channels `2s` and `2s + 1`.
//! Fractional positions are bilinearly interpolated; each interpolation corner
//! outside `[0, H) x [0, W)` contributes zero, so zero offsets reproduce a
//! zero-padded convolution.

use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeformGeometry {
    /// Window slices `T`.
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    /// Kernel side `S` (odd).
    pub kernel: usize,
    /// Output feature channels `O`.
    pub out_channels: usize,
}

impl DeformGeometry {
    pub fn taps(&self) -> usize {
        self.kernel * self.kernel
    }

    pub fn window_len(&self) -> usize {
        self.slices * self.height * self.width
    }

    pub fn offsets_len(&self) -> usize {
        self.slices * 2 * self.taps() * self.height * self.width
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.slices * self.taps()
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::Shape(format!("kernel side {} must be odd", self.kernel)));
        }
        if [self.slices, self.height, self.width, self.out_channels].contains(&0) {
            return Err(Error::Shape(format!("degenerate geometry {self:?}")));
        }
        Ok(())
    }

    fn check<F>(&self, window: &[F], offsets: &[F], kernel: &[F]) -> Result<()> {
        self.validate()?;
        for (name, got, want) in [
            ("window", window.len(), self.window_len()),
            ("offsets", offsets.len(), self.offsets_len()),
            ("kernel", kernel.len(), self.kernel_len()),
        ] {
            if got != want {
                return Err(Error::Shape(format!("{name} has {got} values, expected {want} for {self:?}")));
            }
        }
        Ok(())
    }
}

/// Bilinear sample of one slice plus its partial derivatives in y and x.
struct Sample<F> {
    value: F,
    d_y: F,
    d_x: F,
    /// Corner flat indices and weights; `None` for out-of-bounds corners.
    corners: [(Option<usize>, F); 4],
}

#[inline]
fn bilinear<F: Float>(img: &[F], h: usize, w: usize, py: F, px: F) -> Sample<F> {
    let y0f = py.floor();
    let x0f = px.floor();
    let ly = py - y0f;
    let lx = px - x0f;
    let one = F::one();
    let (y0, x0) = (y0f.to_i64().unwrap_or(i64::MIN / 2), x0f.to_i64().unwrap_or(i64::MIN / 2));
    let at = |y: i64, x: i64| -> Option<usize> {
        (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| y as usize * w + x as usize)
    };
    let idx = [at(y0, x0), at(y0, x0 + 1), at(y0 + 1, x0), at(y0 + 1, x0 + 1)];
    let v = idx.map(|i| i.map_or(F::zero(), |i| img[i]));
    let wts = [(one - ly) * (one - lx), (one - ly) * lx, ly * (one - lx), ly * lx];
    Sample {
        value: wts[0] * v[0] + wts[1] * v[1] + wts[2] * v[2] + wts[3] * v[3],
        d_y: (one - lx) * (v[2] - v[0]) + lx * (v[3] - v[1]),
        d_x: (one - ly) * (v[1] - v[0]) + ly * (v[3] - v[2]),
        corners: [(idx[0], wts[0]), (idx[1], wts[1]), (idx[2], wts[2]), (idx[3], wts[3])],
    }
}

/// Visit every (slice, tap, position) sample of the window.
#[inline]
fn for_each_sample<F: Float>(
    g: &DeformGeometry,
    window: &[F],
    offsets: &[F],
    mut f: impl FnMut(usize, usize, usize, Sample<F>),
) {
    let (h, w, s) = (g.height, g.width, g.kernel);
    let hw = h * w;
    let half = (s / 2) as i64;
    for t in 0..g.slices {
        let img = &window[t * hw..(t + 1) * hw];
        for tap in 0..g.taps() {
            let ky = (tap / s) as i64 - half;
            let kx = (tap % s) as i64 - half;
            let off_y = &offsets[((t * g.taps() + tap) * 2) * hw..][..hw];
            let off_x = &offsets[((t * g.taps() + tap) * 2 + 1) * hw..][..hw];
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let py = F::from(y as i64 + ky).unwrap() + off_y[p];
                    let px = F::from(x as i64 + kx).unwrap() + off_x[p];
                    f(t, tap, p, bilinear(img, h, w, py, px));
                }
            }
        }
    }
}

/// Deformable aggregation of one window into `O x H x W` features.
pub fn deform_forward<F: Float>(
    g: &DeformGeometry,
    window: &[F],
    offsets: &[F],
    kernel: &[F],
) -> Result<Vec<F>> {
    g.check(window, offsets, kernel)?;
    let hw = g.height * g.width;
    let per_out = g.slices * g.taps();
    let mut out = vec![F::zero(); g.output_len()];
    for_each_sample(g, window, offsets, |t, tap, p, smp| {
        if smp.value == F::zero() {
            return;
        }
        for o in 0..g.out_channels {
            let k = kernel[o * per_out + t * g.taps() + tap];
            out[o * hw + p] = out[o * hw + p] + k * smp.value;
        }
    });
    Ok(out)
}

/// Gradients of a scalar loss with respect to window, offsets and kernel.
pub struct DeformGrads<F> {
    pub window: Vec<F>,
    pub offsets: Vec<F>,
    pub kernel: Vec<F>,
}

pub fn deform_backward<F: Float>(
    g: &DeformGeometry,
    window: &[F],
    offsets: &[F],
    kernel: &[F],
    grad_out: &[F],
) -> Result<DeformGrads<F>> {
    g.check(window, offsets, kernel)?;
    if grad_out.len() != g.output_len() {
        return Err(Error::Shape(format!(
            "grad_out has {} values, expected {}",
            grad_out.len(),
            g.output_len()
        )));
    }
    let hw = g.height * g.width;
    let per_out = g.slices * g.taps();
    let mut d_window = vec![F::zero(); window.len()];
    let mut d_offsets = vec![F::zero(); offsets.len()];
    let mut d_kernel = vec![F::zero(); kernel.len()];
    for_each_sample(g, window, offsets, |t, tap, p, smp| {
        let mut upstream = F::zero();
        for o in 0..g.out_channels {
            let go = grad_out[o * hw + p];
            let ki = o * per_out + t * g.taps() + tap;
            upstream = upstream + go * kernel[ki];
            d_kernel[ki] = d_kernel[ki] + go * smp.value;
        }
        if upstream == F::zero() {
            return;
        }
        let base = (t * g.taps() + tap) * 2 * hw + p;
        d_offsets[base] = d_offsets[base] + upstream * smp.d_y;
        d_offsets[base + hw] = d_offsets[base + hw] + upstream * smp.d_x;
        for (idx, wt) in smp.corners {
            if let Some(i) = idx {
                d_window[t * hw + i] = d_window[t * hw + i] + upstream * wt;
            }
        }
    });
    Ok(DeformGrads {
        window: d_window,
        offsets: d_offsets,
        kernel: d_kernel,
    })
}

/// Offset field for a single window, laid out as `(T, 2*S*S, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl OffsetField {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if shape[1] % 2 != 0 || shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("offset field {shape:?} with {} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("offsets must be finite".into()));
        }
        Ok(Self { shape, data })
    }

    /// Every tap of every slice displaced by the same `(dy, dx)`.
    pub fn uniform(slices: usize, kernel: usize, hw: [usize; 2], dy: f32, dx: f32) -> Self {
        let n = hw[0] * hw[1];
        let taps = kernel * kernel;
        let mut data = Vec::with_capacity(slices * taps * 2 * n);
        for _ in 0..slices * taps {
            data.extend(std::iter::repeat_n(dy, n));
            data.extend(std::iter::repeat_n(dx, n));
        }
        Self {
            shape: [slices, 2 * taps, hw[0], hw[1]],
            data,
        }
    }
}

/// Kernel weights `(O, T, S, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformKernel {
    pub out_channels: usize,
    pub slices: usize,
    pub side: usize,
    pub weights: Vec<f32>,
}

impl DeformKernel {
    pub fn new(out_channels: usize, slices: usize, side: usize, weights: Vec<f32>) -> Result<Self> {
        if side % 2 == 0 {
            return Err(Error::Shape(format!("kernel side {side} must be odd")));
        }
        if weights.len() != out_channels * slices * side * side {
            return Err(Error::Shape(format!("{} kernel weights for ({out_channels}, {slices}, {side}, {side})", weights.len())));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("kernel weights must be finite".into()));
        }
        Ok(Self { out_channels, slices, side, weights })
    }

    /// One output channel that copies the centre tap of the centre slice.
    pub fn center_identity(slices: usize, side: usize) -> Self {
        let mut weights = vec![0.0; slices * side * side];
        weights[(slices / 2) * side * side + (side * side) / 2] = 1.0;
        Self { out_channels: 1, slices, side, weights }
    }
}

/// Convenience wrapper over [`deform_forward`] for a [`crate::SliceWindow`].
pub fn deformable_aggregate(
    window: &crate::SliceWindow,
    offsets: &OffsetField,
    kernel: &DeformKernel,
) -> Result<Vec<f32>> {
    let [h, w] = window.hw();
    let g = DeformGeometry {
        slices: window.len(),
        height: h,
        width: w,
        kernel: kernel.side,
        out_channels: kernel.out_channels,
    };
    if offsets.shape != [g.slices, 2 * g.taps(), h, w] || kernel.slices != g.slices {
        return Err(Error::Shape(format!(
            "window {}x{h}x{w}, offsets {:?}, kernel ({}, {}, {s}, {s})",
            g.slices,
            offsets.shape,
            kernel.out_channels,
            kernel.slices,
            s = kernel.side
        )));
    }
    deform_forward(&g, window.data(), &offsets.data, &kernel.weights)
}
