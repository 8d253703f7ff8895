use super::{numel, strides, Tensor};
use crate::error::{shape_err, Result};

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed under `out_shape`, zero along broadcast axes.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let r = out_shape.len();
    let own = strides(shape);
    let mut s = vec![0; r];
    for (i, (&d, &st)) in shape.iter().zip(&own).enumerate() {
        let j = i + r - shape.len();
        if d != 1 {
            s[j] = st;
        }
    }
    s
}

/// Calls `f(out_index, a_index, b_index)` for every output position in
/// row-major order.
fn broadcast_for_each(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let r = out_shape.len();
    if numel(out_shape) == 0 {
        return;
    }
    if r == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out_shape[r - 1];
    let (ia, ib) = (sa[r - 1], sb[r - 1]);
    let mut idx = vec![0usize; r];
    let (mut oa, mut ob, mut o) = (0usize, 0usize, 0usize);
    loop {
        for k in 0..inner {
            f(o + k, oa + k * ia, ob + k * ib);
        }
        o += inner;
        let mut d = r - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }

    /// (d out / d a, d out / d b)
    #[inline]
    fn partials(self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinOp::Add => (1.0, 1.0),
            BinOp::Sub => (1.0, -1.0),
            BinOp::Mul => (b, a),
            BinOp::Div => (1.0 / b, -a / (b * b)),
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, op: BinOp) -> Result<Tensor> {
    let out_shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
        shape_err(
            op.name(),
            format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()),
        )
    })?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; numel(&out_shape)];
    if a.shape() == b.shape() {
        for ((o, &x), &y) in out.iter_mut().zip(ad).zip(bd) {
            *o = op.apply(x, y);
        }
    } else {
        broadcast_for_each(&out_shape, &sa, &sb, |o, i, j| out[o] = op.apply(ad[i], bd[j]));
    }
    let (pa, pb) = (a.clone(), b.clone());
    let shape = out_shape.clone();
    Ok(Tensor::from_op(
        op.name(),
        out,
        out_shape,
        vec![a.clone(), b.clone()],
        move |g, _| {
            let (ad, bd) = (pa.data(), pb.data());
            let mut ga = pa.is_tracked().then(|| vec![0.0; ad.len()]);
            let mut gb = pb.is_tracked().then(|| vec![0.0; bd.len()]);
            broadcast_for_each(&shape, &sa, &sb, |o, i, j| {
                let (da, db) = op.partials(ad[i], bd[j]);
                if let Some(ga) = ga.as_mut() {
                    ga[i] += g[o] * da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[j] += g[o] * db;
                }
            });
            vec![ga, gb]
        },
    ))
}

fn unary(
    x: &Tensor,
    name: &'static str,
    f: impl Fn(f64) -> f64,
    // derivative from (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
    let px = x.clone();
    Tensor::from_op(name, out, x.shape().to_vec(), vec![x.clone()], move |g, y| {
        let gx = px
            .data()
            .iter()
            .zip(y)
            .zip(g)
            .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
            .collect();
        vec![Some(gx)]
    })
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, BinOp::Div)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        unary(self, "scale", |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        unary(self, "add_scalar", |v| v + c, |_, _| 1.0)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, "exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        unary(self, "ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        unary(self, "sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Tensor {
        unary(self, "square", |v| v * v, |x, _| 2.0 * x)
    }

    pub fn abs(&self) -> Tensor {
        unary(self, "abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn tanh(&self) -> Tensor {
        unary(self, "tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Tensor {
        unary(self, "relu", |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        unary(
            self,
            "leaky_relu",
            move |v| if v > 0.0 { v } else { slope * v },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    /// Elementwise clamp; gradient is zero where the bound is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        unary(
            self,
            "clamp",
            move |v| v.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    /// Forward value of `hard`, gradient of `soft`: a straight-through
    /// estimator for piecewise-constant maps.
    pub fn straight_through(
        &self,
        hard: impl Fn(f64) -> f64,
        soft_grad: impl Fn(f64) -> f64 + 'static,
    ) -> Tensor {
        unary(self, "straight_through", hard, move |x, _| soft_grad(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{gradient_check, GradCheckOptions};

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[1, 4], &[5, 1]), Some(vec![5, 4]));
        assert_eq!(broadcast_shape(&[], &[2]), Some(vec![2]));
        assert_eq!(broadcast_shape(&[2, 3], &[4, 3]), None);
    }

    #[test]
    fn broadcast_mul_matches_manual() {
        let a = Tensor::new((0..6).map(f64::from).collect(), &[2, 3]).unwrap();
        let b = Tensor::new(vec![10.0, 100.0], &[2, 1]).unwrap();
        let c = a.mul(&b).unwrap();
        assert_eq!(c.data(), &[0.0, 10.0, 20.0, 300.0, 400.0, 500.0]);
        assert!(a.add(&Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn broadcast_gradients_reduce() {
        let opts = GradCheckOptions::default();
        for (sa, sb) in [(vec![2, 3, 4], vec![3, 1]), (vec![3, 1], vec![1, 4]), (vec![2, 2], vec![])] {
            for seed in 0..3 {
                let a = crate::tensor::gradcheck::random_leaf(&sa, seed);
                let b = crate::tensor::gradcheck::random_leaf(&sb, seed + 10).add_scalar(3.0).detach().requires_grad();
                for op in 0..4 {
                    let report = gradient_check(
                        |xs| {
                            let y = match op {
                                0 => xs[0].add(&xs[1])?,
                                1 => xs[0].sub(&xs[1])?,
                                2 => xs[0].mul(&xs[1])?,
                                _ => xs[0].div(&xs[1])?,
                            };
                            Ok(y.square().sum())
                        },
                        &[a.clone(), b.clone()],
                        &opts,
                    )
                    .unwrap();
                    assert!(report.passed, "op {op} {sa:?} {sb:?}: {report:?}");
                }
            }
        }
    }

    #[test]
    fn unary_gradients() {
        let opts = GradCheckOptions::default();
        for shape in [vec![7], vec![2, 3, 2]] {
            for seed in 0..3 {
                let x = crate::tensor::gradcheck::random_leaf(&shape, seed);
                let pos = x.square().add_scalar(0.5).detach().requires_grad();
                let fs: Vec<(&str, Box<dyn Fn(&Tensor) -> Tensor>)> = vec![
                    ("exp", Box::new(|t| t.exp())),
                    ("tanh", Box::new(|t| t.tanh())),
                    ("leaky", Box::new(|t| t.leaky_relu(0.1))),
                    ("relu", Box::new(|t| t.relu())),
                    ("abs", Box::new(|t| t.abs())),
                    ("scale", Box::new(|t| t.scale(-2.5).add_scalar(1.0))),
                    ("clamp", Box::new(|t| t.clamp(-0.5, 0.5))),
                ];
                for (name, f) in &fs {
                    let r = gradient_check(|xs| Ok(f(&xs[0]).square().sum()), &[x.clone()], &opts).unwrap();
                    assert!(r.passed, "{name}: {r:?}");
                }
                let r = gradient_check(|xs| Ok(xs[0].sqrt().add(&xs[0].ln())?.sum()), &[pos], &opts).unwrap();
                assert!(r.passed, "sqrt/ln: {r:?}");
            }
        }
    }

    #[test]
    fn straight_through_uses_hard_forward() {
        let x = Tensor::leaf(vec![-0.3, 0.0, 2.0], &[3]).unwrap();
        let y = x.straight_through(f64::signum, |v| 1.0 - v.tanh().powi(2));
        assert_eq!(y.data(), &[-1.0, 1.0, 1.0]);
        y.sum().backward().unwrap();
        let g = x.grad().unwrap();
        assert!((g[1] - 1.0).abs() < 1e-15);
    }
}
