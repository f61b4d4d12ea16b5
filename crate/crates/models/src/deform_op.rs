//! candle custom op around the deformable aggregation kernel in `petrec_core::deform`.

use candle_core::{backend::BackendStorage, CpuStorage, CustomOp3, DType, Layout, Shape, Tensor};
use num_traits::Float;
use petrec_core::deform::{deform_backward, deform_forward, DeformGeometry};

use crate::error::{ModelError, Result};

/// Batched op: window `(B, T, H, W)`, offsets `(B, T*2*S*S, H, W)`,
/// kernel `(O, T, S, S)` to features `(B, O, H, W)`.
#[derive(Debug, Clone, Copy)]
struct DeformAggregate {
    batch: usize,
    geometry: DeformGeometry,
}

fn contiguous<'a, T: candle_core::WithDType>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [T]> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("deform-aggregate expects contiguous inputs".into()))?;
    Ok(&s.as_slice::<T>()?[start..end])
}

fn run_forward<F: Float>(op: &DeformAggregate, w: &[F], o: &[F], k: &[F]) -> candle_core::Result<Vec<F>> {
    let g = &op.geometry;
    let mut out = Vec::with_capacity(op.batch * g.output_len());
    for b in 0..op.batch {
        let feat = deform_forward(
            g,
            &w[b * g.window_len()..][..g.window_len()],
            &o[b * g.offsets_len()..][..g.offsets_len()],
            k,
        )
        .map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        out.extend(feat);
    }
    Ok(out)
}

impl CustomOp3 for DeformAggregate {
    fn name(&self) -> &'static str {
        "deform-aggregate"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.geometry;
        let shape = Shape::from((self.batch, g.out_channels, g.height, g.width));
        let storage = match s1.dtype() {
            DType::F32 => CpuStorage::F32(run_forward(
                self,
                contiguous::<f32>(s1, l1)?,
                contiguous::<f32>(s2, l2)?,
                contiguous::<f32>(s3, l3)?,
            )?),
            DType::F64 => CpuStorage::F64(run_forward(
                self,
                contiguous::<f64>(s1, l1)?,
                contiguous::<f64>(s2, l2)?,
                contiguous::<f64>(s3, l3)?,
            )?),
            dt => candle_core::bail!("deform-aggregate: unsupported dtype {dt:?}"),
        };
        Ok((storage, shape))
    }

    fn bwd(
        &self,
        window: &Tensor,
        offsets: &Tensor,
        kernel: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let g = &self.geometry;
        let flat = |t: &Tensor| t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>();
        let (w, o, k, go) = (flat(window)?, flat(offsets)?, flat(kernel)?, flat(grad_res)?);
        let mut dw = Vec::with_capacity(w.len());
        let mut doff = Vec::with_capacity(o.len());
        let mut dk = vec![0.0f64; k.len()];
        for b in 0..self.batch {
            let grads = deform_backward(
                g,
                &w[b * g.window_len()..][..g.window_len()],
                &o[b * g.offsets_len()..][..g.offsets_len()],
                &k,
                &go[b * g.output_len()..][..g.output_len()],
            )
            .map_err(|e| candle_core::Error::Msg(e.to_string()))?;
            dw.extend(grads.window);
            doff.extend(grads.offsets);
            dk.iter_mut().zip(&grads.kernel).for_each(|(a, b)| *a += b);
        }
        let back = |v: Vec<f64>, like: &Tensor| {
            Tensor::from_vec(v, like.shape(), like.device())?.to_dtype(like.dtype())
        };
        Ok((
            Some(back(dw, window)?),
            Some(back(doff, offsets)?),
            Some(back(dk, kernel)?),
        ))
    }
}

/// Differentiable deformable aggregation of a batch of slice windows.
pub fn deform_aggregate(window: &Tensor, offsets: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (b, t, h, w) = window.dims4()?;
    let (o, kt, s, s2) = kernel.dims4()?;
    if kt != t || s != s2 {
        return Err(ModelError::Shape(format!(
            "kernel {:?} incompatible with a {t}-slice window",
            kernel.dims()
        )));
    }
    if offsets.dims() != [b, t * 2 * s * s, h, w] {
        return Err(ModelError::Shape(format!(
            "offsets {:?}, expected {:?}",
            offsets.dims(),
            [b, t * 2 * s * s, h, w]
        )));
    }
    if window.dtype() != offsets.dtype() || window.dtype() != kernel.dtype() {
        return Err(ModelError::Shape("window, offsets and kernel must share a dtype".into()));
    }
    let geometry = DeformGeometry {
        slices: t,
        height: h,
        width: w,
        kernel: s,
        out_channels: o,
    };
    geometry.validate()?;
    let op = DeformAggregate { batch: b, geometry };
    Ok(window
        .contiguous()?
        .apply_op3(&offsets.contiguous()?, &kernel.contiguous()?, op)?)
}
