use super::conv::conv_output_extent;
use super::{dim_err, Backward, Result, Tape, Tensor, TensorError, Var};

/// Gradient routed back through a fixed index map: each output cell lists
/// `(input index, coefficient)` pairs.
struct Routed {
    routes: Vec<Vec<(usize, f64)>>,
}

impl Backward for Routed {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let dx = needs[0].then(|| {
            let mut dx = Tensor::zeros(inputs[0].shape());
            let d = dx.data_mut();
            for (route, &g) in self.routes.iter().zip(grad.data()) {
                for &(i, coef) in route {
                    d[i] += coef * g;
                }
            }
            dx
        });
        vec![dx]
    }
}

/// Backward of max selection: one input index per output cell.
struct ArgRouted {
    argmax: Vec<usize>,
}

impl Backward for ArgRouted {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let dx = needs[0].then(|| {
            let mut dx = Tensor::zeros(inputs[0].shape());
            let d = dx.data_mut();
            for (&i, &g) in self.argmax.iter().zip(grad.data()) {
                d[i] += g;
            }
            dx
        });
        vec![dx]
    }
}

fn nchw(tape: &Tape, op: &'static str, v: Var) -> Result<[usize; 4]> {
    let s = tape.shape(v);
    if s.len() != 4 {
        return Err(dim_err(op, "input rank", 4, s.len()));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

/// Half-open bin `[start, end)` of adaptive pooling cell `i` out of `target`.
fn adaptive_bin(i: usize, target: usize, extent: usize) -> (usize, usize) {
    let start = i * extent / target;
    let end = ((i + 1) * extent).div_ceil(target);
    (start, end)
}

impl Tape {
    /// Max pooling with padding treated as negative infinity.
    pub fn max_pool2d(&self, input: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let [n, c, h, w] = nchw(self, "max_pool2d", input)?;
        if padding * 2 > kernel {
            return Err(TensorError::Parameter {
                op: "max_pool2d",
                msg: format!("padding {padding} exceeds half the window {kernel}"),
            });
        }
        let oh = conv_output_extent(h, kernel, stride, padding)
            .ok_or_else(|| dim_err("max_pool2d", "height (axis 2)", format!(">= {kernel}"), h))?;
        let ow = conv_output_extent(w, kernel, stride, padding)
            .ok_or_else(|| dim_err("max_pool2d", "width (axis 3)", format!(">= {kernel}"), w))?;
        let x = self.value(input);
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if best_i == usize::MAX || xd[idx] > best {
                                best = xd[idx];
                                best_i = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, oh, ow], out);
        Ok(self.record(&[input], value, Box::new(ArgRouted { argmax })))
    }

    /// Average pooling without padding.
    pub fn avg_pool2d(&self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let [n, c, h, w] = nchw(self, "avg_pool2d", input)?;
        let oh = conv_output_extent(h, kernel, stride, 0)
            .ok_or_else(|| dim_err("avg_pool2d", "height (axis 2)", format!(">= {kernel}"), h))?;
        let ow = conv_output_extent(w, kernel, stride, 0)
            .ok_or_else(|| dim_err("avg_pool2d", "width (axis 3)", format!(">= {kernel}"), w))?;
        let x = self.value(input);
        let xd = x.data();
        let coef = 1.0 / (kernel * kernel) as f64;
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut routes = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut route = Vec::with_capacity(kernel * kernel);
                    let mut acc = 0.0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            acc += xd[idx];
                            route.push((idx, coef));
                        }
                    }
                    out.push(acc * coef);
                    routes.push(route);
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, oh, ow], out);
        Ok(self.record(&[input], value, Box::new(Routed { routes })))
    }

    fn adaptive_pool(&self, input: Var, target: usize, max: bool) -> Result<Var> {
        let op = if max { "adaptive_max_pool" } else { "adaptive_avg_pool" };
        let [n, c, h, w] = nchw(self, op, input)?;
        if target == 0 || target > h {
            return Err(dim_err(op, "height (axis 2)", format!(">= {target}"), h));
        }
        if target > w {
            return Err(dim_err(op, "width (axis 3)", format!(">= {target}"), w));
        }
        let x = self.value(input);
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * target * target);
        let mut routes = Vec::with_capacity(n * c * target * target);
        let mut argmax = Vec::with_capacity(n * c * target * target);
        for plane in 0..n * c {
            let base = plane * h * w;
            for ty in 0..target {
                let (y0, y1) = adaptive_bin(ty, target, h);
                for tx in 0..target {
                    let (x0, x1) = adaptive_bin(tx, target, w);
                    let cells = ((y1 - y0) * (x1 - x0)) as f64;
                    let idxs = (y0..y1).flat_map(|y| (x0..x1).map(move |x| base + y * w + x));
                    if max {
                        let best = idxs
                            .reduce(|a, b| if xd[b] > xd[a] { b } else { a })
                            .expect("non-empty bin");
                        out.push(xd[best]);
                        argmax.push(best);
                    } else {
                        let route: Vec<(usize, f64)> = idxs.map(|i| (i, 1.0 / cells)).collect();
                        out.push(route.iter().map(|&(i, _)| xd[i]).sum::<f64>() / cells);
                        routes.push(route);
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, target, target], out);
        let backward: Box<dyn Backward> = if max {
            Box::new(ArgRouted { argmax })
        } else {
            Box::new(Routed { routes })
        };
        Ok(self.record(&[input], value, backward))
    }

    pub fn adaptive_max_pool(&self, input: Var, target: usize) -> Result<Var> {
        self.adaptive_pool(input, target, true)
    }

    pub fn adaptive_avg_pool(&self, input: Var, target: usize) -> Result<Var> {
        self.adaptive_pool(input, target, false)
    }

    /// Channel-wise concatenation of adaptive max and average pooling:
    /// `[N, C, H, W] -> [N, 2C, t, t]`, max first.
    pub fn adaptive_concat_pool(&self, input: Var, target: usize) -> Result<Var> {
        let mx = self.adaptive_max_pool(input, target)?;
        let av = self.adaptive_avg_pool(input, target)?;
        self.concat_channels(&[mx, av])
    }
}
