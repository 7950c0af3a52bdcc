use crate::error::{shape_err, Result};
use crate::graph::{slot, Graph, Node, Op, Var};

impl<'p> Graph<'p> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push_op(shape, out, op, &[a, b]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push_op(shape, out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div { a, b })
    }

    /// Elementwise max; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, |x, y| if x >= y { x } else { y }, Op::Maximum { a, b })
    }

    /// Elementwise min; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, |x, y| if x <= y { x } else { y }, Op::Minimum { a, b })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale { a, c })
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset { a })
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.offset(neg, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid { a })
    }

    /// `ln(max(a, eps))`; the clamped region has zero gradient.
    pub fn ln_clamped(&mut self, a: Var, eps: f64) -> Var {
        self.unary(a, |x| x.max(eps).ln(), Op::Ln { a, eps })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square { a })
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push_op(vec![1], vec![s], Op::Sum { a }, &[a])
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn backward(nodes: &[Node<'_>], i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
    let out = &nodes[i].value;
    match nodes[i].op {
        Op::Add { a, b } => {
            for j in [a, b] {
                if let Some(s) = slot(nodes, grads, j) {
                    s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
                }
            }
        }
        Op::Sub { a, b } => {
            if let Some(s) = slot(nodes, grads, a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
            if let Some(s) = slot(nodes, grads, b) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s -= g);
            }
        }
        Op::Mul { a, b } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(s) = slot(nodes, grads, a) {
                for k in 0..s.len() {
                    s[k] += g[k] * bv[k];
                }
            }
            if let Some(s) = slot(nodes, grads, b) {
                for k in 0..s.len() {
                    s[k] += g[k] * av[k];
                }
            }
        }
        Op::Div { a, b } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            if let Some(s) = slot(nodes, grads, a) {
                for k in 0..s.len() {
                    s[k] += g[k] / bv[k];
                }
            }
            if let Some(s) = slot(nodes, grads, b) {
                for k in 0..s.len() {
                    s[k] -= g[k] * av[k] / (bv[k] * bv[k]);
                }
            }
        }
        Op::Maximum { a, b } | Op::Minimum { a, b } => {
            let is_max = matches!(nodes[i].op, Op::Maximum { .. });
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let pick_a: Vec<bool> =
                av.iter().zip(bv.iter()).map(|(x, y)| if is_max { x >= y } else { x <= y }).collect();
            if let Some(s) = slot(nodes, grads, a) {
                for k in 0..s.len() {
                    if pick_a[k] {
                        s[k] += g[k];
                    }
                }
            }
            if let Some(s) = slot(nodes, grads, b) {
                for k in 0..s.len() {
                    if !pick_a[k] {
                        s[k] += g[k];
                    }
                }
            }
        }
        Op::Scale { a, c } => {
            if let Some(s) = slot(nodes, grads, a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += c * g);
            }
        }
        Op::Offset { a } => {
            if let Some(s) = slot(nodes, grads, a) {
                s.iter_mut().zip(g).for_each(|(s, g)| *s += g);
            }
        }
        Op::Relu { a } => {
            if let Some(s) = slot(nodes, grads, a) {
                for k in 0..s.len() {
                    if out[k] > 0.0 {
                        s[k] += g[k];
                    }
                }
            }
        }
        Op::Sigmoid { a } => {
            if let Some(s) = slot(nodes, grads, a) {
                for k in 0..s.len() {
                    s[k] += g[k] * out[k] * (1.0 - out[k]);
                }
            }
        }
        Op::Ln { a, eps } => {
            let av = &nodes[a.0].value;
            if let Some(s) = slot(nodes, grads, a) {
                for k in 0..s.len() {
                    if av[k] > eps {
                        s[k] += g[k] / av[k];
                    }
                }
            }
        }
        Op::Square { a } => {
            let av = &nodes[a.0].value;
            if let Some(s) = slot(nodes, grads, a) {
                for k in 0..s.len() {
                    s[k] += 2.0 * g[k] * av[k];
                }
            }
        }
        Op::Sum { a } => {
            if let Some(s) = slot(nodes, grads, a) {
                s.iter_mut().for_each(|s| *s += g[0]);
            }
        }
        _ => unreachable!("not an elementwise op"),
    }
}
