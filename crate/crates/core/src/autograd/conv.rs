use super::gemm::gemm;
use super::{dim_err, Backward, Result, Tape, Tensor, TensorError, Var};

/// Output extent of a convolution or pooling window along one axis.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(g: &Geometry, x: &[f64], out: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut out[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(g: &Geometry, cols: &[f64], dx: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

struct Conv2d {
    geom: Geometry,
    has_bias: bool,
}

impl Backward for Conv2d {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let g = self.geom;
        let (x, w) = (inputs[0], inputs[1]);
        let n = x.shape()[0];
        let f = w.shape()[0];
        let (rows, ncols) = (g.rows(), g.cols());
        let in_stride = g.c * g.h * g.w;

        let mut dx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut dw = needs[1].then(|| Tensor::zeros(w.shape()));
        let mut cols = vec![0.0; rows * ncols];
        let mut dcols = vec![0.0; rows * ncols];

        for item in 0..n {
            let gy = &grad.data()[item * f * ncols..(item + 1) * f * ncols];
            let xi = &x.data()[item * in_stride..(item + 1) * in_stride];
            if let Some(dw) = dw.as_mut() {
                let col_src: &[f64] = if g.is_pointwise() {
                    xi
                } else {
                    im2col(&g, xi, &mut cols);
                    &cols
                };
                // dW[f, rows] += gy[f, ncols] · colsᵀ
                gemm(f, ncols, rows, gy, false, col_src, true, 1.0, dw.data_mut());
            }
            if let Some(dx) = dx.as_mut() {
                let dxi = &mut dx.data_mut()[item * in_stride..(item + 1) * in_stride];
                if g.is_pointwise() {
                    gemm(rows, f, ncols, w.data(), true, gy, false, 0.0, dxi);
                } else {
                    gemm(rows, f, ncols, w.data(), true, gy, false, 0.0, &mut dcols);
                    col2im(&g, &dcols, dxi);
                }
            }
        }

        let mut out = vec![dx, dw];
        if self.has_bias {
            out.push(needs[2].then(|| {
                let mut db = vec![0.0; f];
                for item in 0..n {
                    for (ch, acc) in db.iter_mut().enumerate() {
                        let base = (item * f + ch) * ncols;
                        *acc += grad.data()[base..base + ncols].iter().sum::<f64>();
                    }
                }
                Tensor::from_parts(vec![f], db)
            }));
        }
        out
    }
}

impl Tape {
    /// 2-D convolution with zero padding. `input` is `[N, C, H, W]`, `kernel`
    /// is `[F, C, kh, kw]`, `bias` (optional) is `[F]`.
    pub fn conv2d(
        &self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(kernel);
        if xs.len() != 4 {
            return Err(dim_err("conv2d", "input rank", 4, xs.len()));
        }
        if ws.len() != 4 {
            return Err(dim_err("conv2d", "kernel rank", 4, ws.len()));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (f, kc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if kc != c {
            return Err(dim_err("conv2d", "channel (axis 1)", c, kc));
        }
        if stride == 0 {
            return Err(TensorError::Parameter {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        let oh = conv_output_extent(h, kh, stride, padding)
            .ok_or_else(|| dim_err("conv2d", "height (axis 2)", format!(">= {kh}"), h + 2 * padding))?;
        let ow = conv_output_extent(w, kw, stride, padding)
            .ok_or_else(|| dim_err("conv2d", "width (axis 3)", format!(">= {kw}"), w + 2 * padding))?;
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [f] {
                return Err(dim_err("conv2d", "bias", format!("[{f}]"), format!("{bs:?}")));
            }
        }
        let geom = Geometry { c, h, w, kh, kw, stride, pad: padding, oh, ow };

        let x = self.value(input);
        let k = self.value(kernel);
        let (rows, ncols) = (geom.rows(), geom.cols());
        let in_stride = c * h * w;
        let mut out = vec![0.0; n * f * ncols];
        let mut cols = vec![0.0; rows * ncols];
        for item in 0..n {
            let xi = &x.data()[item * in_stride..(item + 1) * in_stride];
            let col_src: &[f64] = if geom.is_pointwise() {
                xi
            } else {
                im2col(&geom, xi, &mut cols);
                &cols
            };
            let yi = &mut out[item * f * ncols..(item + 1) * f * ncols];
            gemm(f, rows, ncols, k.data(), false, col_src, false, 0.0, yi);
        }
        if let Some(b) = bias {
            let bv = self.value(b);
            for item in 0..n {
                for (ch, &bias_val) in bv.data().iter().enumerate() {
                    let base = (item * f + ch) * ncols;
                    out[base..base + ncols].iter_mut().for_each(|v| *v += bias_val);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, f, oh, ow], out);
        let op = Box::new(Conv2d { geom, has_bias: bias.is_some() });
        let mut ins = vec![input, kernel];
        ins.extend(bias);
        Ok(self.record(&ins, value, op))
    }
}
