use super::gemm::gemm;
use super::{dim_err, Backward, Result, Tape, Tensor, Var};

struct Linear;

impl Backward for Linear {
    fn backward(&self, inputs: &[&Tensor], _o: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let k = w.shape()[0];
        let g = grad.data();
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; n * d];
            gemm(n, k, d, g, false, w.data(), false, 0.0, &mut dx);
            Tensor::from_parts(vec![n, d], dx)
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0; k * d];
            gemm(k, n, d, g, true, x.data(), false, 0.0, &mut dw);
            Tensor::from_parts(vec![k, d], dw)
        });
        let db = needs[2].then(|| {
            let mut db = vec![0.0; k];
            for row in g.chunks(k) {
                db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            Tensor::from_parts(vec![k], db)
        });
        vec![dx, dw, db]
    }
}

impl Tape {
    /// Affine map `input · weightᵀ + bias` for `input: [N, D]`,
    /// `weight: [K, D]`, `bias: [K]`.
    pub fn linear(&self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let bs = self.shape(bias);
        if xs.len() != 2 {
            return Err(dim_err("linear", "input rank", 2, xs.len()));
        }
        if ws.len() != 2 || ws[1] != xs[1] {
            return Err(dim_err("linear", "inner (axis 1)", xs[1], format!("{ws:?}")));
        }
        if bs != [ws[0]] {
            return Err(dim_err("linear", "bias", format!("[{}]", ws[0]), format!("{bs:?}")));
        }
        let (n, d, k) = (xs[0], xs[1], ws[0]);
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let mut out = vec![0.0; n * k];
        for row in out.chunks_mut(k) {
            row.copy_from_slice(b.data());
        }
        gemm(n, d, k, x.data(), false, w.data(), true, 1.0, &mut out);
        let value = Tensor::from_parts(vec![n, k], out);
        Ok(self.record(&[input, weight, bias], value, Box::new(Linear)))
    }
}
