//! Reverse-mode differentiation on a flat Wengert tape.
//!
//! Every operation evaluates eagerly and records its local partial
//! derivatives as weighted edges to its inputs. A backward sweep from a
//! scalar root then accumulates adjoints in reverse creation order. Nodes
//! are plain indices, so building a graph never allocates per node beyond
//! the two backing vectors, and clearing the tape between steps keeps the
//! capacity.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `Φ(x)`, accurate in the lower tail.
pub fn std_normal_cdf<T: Scalar>(x: T) -> T {
    T::of(0.5) * (-x * T::FRAC_1_SQRT_2()).erfc()
}

/// `φ(x)`.
pub fn std_normal_pdf<T: Scalar>(x: T) -> T {
    (-(x * x) * T::of(0.5)).exp() / T::TAU().sqrt()
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    AddConst,
    Square,
    Sqrt,
    Exp,
    Ln,
    Tanh,
    NormCdf,
    Relu,
    Sum,
    Dot,
    Affine,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale => "scale",
            Op::AddConst => "add_const",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Tanh => "tanh",
            Op::NormCdf => "norm_cdf",
            Op::Relu => "relu",
            Op::Sum => "sum",
            Op::Dot => "dot",
            Op::Affine => "affine",
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: T,
    op: Op,
    edges_end: u32,
}

/// Recording of one forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    // (input node, d self / d input)
    edges: Vec<(u32, T)>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(nodes),
            edges: Vec::with_capacity(edges),
        }
    }

    /// Drops all recorded nodes, keeping allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.edges.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> T {
        self.nodes[v.index()].value
    }

    pub fn values(&self, vs: &[Var]) -> Vec<T> {
        vs.iter().map(|&v| self.value(v)).collect()
    }

    #[inline]
    fn push(&mut self, value: T, op: Op) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            edges_end: self.edges.len() as u32,
        });
        Var(idx as u32)
    }

    #[inline]
    fn edge(&mut self, input: Var, partial: T) {
        self.edges.push((input.0, partial));
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: T) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a block of inputs; the returned handles are contiguous.
    pub fn leaves(&mut self, values: &[T]) -> Vec<Var> {
        values.iter().map(|&v| self.leaf(v)).collect()
    }

    pub fn constant(&mut self, value: T) -> Var {
        self.push(value, Op::Const)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.edge(a, T::one());
        self.edge(b, T::one());
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.edge(a, T::one());
        self.edge(b, -T::one());
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        self.edge(a, y);
        self.edge(b, x);
        self.push(x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        let inv = y.recip();
        self.edge(a, inv);
        self.edge(b, -x * inv * inv);
        self.push(x * inv, Op::Div)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.edge(a, -T::one());
        let v = -self.value(a);
        self.push(v, Op::Neg)
    }

    /// `c * a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.edge(a, c);
        let v = self.value(a) * c;
        self.push(v, Op::Scale)
    }

    /// `a + c` for a constant `c`.
    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        self.edge(a, T::one());
        let v = self.value(a) + c;
        self.push(v, Op::AddConst)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.edge(a, x + x);
        self.push(x * x, Op::Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let y = self.value(a).sqrt();
        self.edge(a, T::of(0.5) / y);
        self.push(y, Op::Sqrt)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.value(a).exp();
        self.edge(a, y);
        self.push(y, Op::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.edge(a, x.recip());
        self.push(x.ln(), Op::Ln)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).tanh();
        self.edge(a, T::one() - y * y);
        self.push(y, Op::Tanh)
    }

    /// Standard normal distribution function `Φ(x)`.
    pub fn norm_cdf(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.edge(a, std_normal_pdf(x));
        self.push(std_normal_cdf(x), Op::NormCdf)
    }

    /// Rectifier; the derivative at exactly zero is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        if x > T::zero() {
            self.edge(a, T::one());
            self.push(x, Op::Relu)
        } else {
            self.edge(a, T::zero());
            self.push(T::zero(), Op::Relu)
        }
    }

    pub fn sum(&mut self, xs: &[Var]) -> Var {
        let mut acc = T::zero();
        for &x in xs {
            acc += self.value(x);
            self.edge(x, T::one());
        }
        self.push(acc, Op::Sum)
    }

    pub fn dot(&mut self, a: &[Var], b: &[Var]) -> Var {
        assert_eq!(a.len(), b.len(), "dot: operand lengths differ");
        let mut acc = T::zero();
        for (&x, &y) in a.iter().zip(b) {
            let (vx, vy) = (self.value(x), self.value(y));
            acc += vx * vy;
            self.edge(x, vy);
            self.edge(y, vx);
        }
        self.push(acc, Op::Dot)
    }

    /// `weights · inputs + bias` as a single node.
    pub fn affine(&mut self, weights: &[Var], inputs: &[Var], bias: Var) -> Var {
        assert_eq!(weights.len(), inputs.len(), "affine: operand lengths differ");
        let mut acc = self.value(bias);
        for (&w, &x) in weights.iter().zip(inputs) {
            let (vw, vx) = (self.value(w), self.value(x));
            acc += vw * vx;
            self.edge(w, vx);
            self.edge(x, vw);
        }
        self.edge(bias, T::one());
        self.push(acc, Op::Affine)
    }

    /// Affine map whose inputs are constants (raw data), avoiding input nodes.
    pub fn affine_const_input(&mut self, weights: &[Var], inputs: &[T], bias: Var) -> Var {
        assert_eq!(weights.len(), inputs.len(), "affine: operand lengths differ");
        let mut acc = self.value(bias);
        for (&w, &x) in weights.iter().zip(inputs) {
            acc += self.value(w) * x;
            self.edge(w, x);
        }
        self.edge(bias, T::one());
        self.push(acc, Op::Affine)
    }

    /// Runs the backward sweep from `root`, returning d root / d node for
    /// every node recorded up to and including `root`.
    ///
    /// Fails on the first non-finite value or local derivative, naming the
    /// operation that produced it.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let n = root.index() + 1;
        let mut start = 0usize;
        for (i, node) in self.nodes[..n].iter().enumerate() {
            let end = node.edges_end as usize;
            let local_ok = self.edges[start..end].iter().all(|(_, d)| d.is_finite());
            if !node.value.is_finite() || !local_ok {
                return Err(Error::NonFinite {
                    op: node.op.name(),
                    node: i,
                });
            }
            start = end;
        }

        let mut adj = vec![T::zero(); n];
        adj[root.index()] = T::one();
        for i in (0..n).rev() {
            let a = adj[i];
            if a == T::zero() {
                continue;
            }
            let begin = if i == 0 {
                0
            } else {
                self.nodes[i - 1].edges_end as usize
            };
            let end = self.nodes[i].edges_end as usize;
            for &(input, d) in &self.edges[begin..end] {
                adj[input as usize] += a * d;
            }
        }
        if let Some(i) = adj.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                op: self.nodes[i].op.name(),
                node: i,
            });
        }
        Ok(Gradients { adj })
    }
}

/// Adjoints from one backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    adj: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zero for nodes created after the root.
    pub fn wrt(&self, v: Var) -> T {
        self.adj.get(v.index()).copied().unwrap_or_else(T::zero)
    }

    pub fn wrt_all(&self, vs: &[Var]) -> Vec<T> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }

    /// Adds the gradients of `vs` into `buf` element-wise.
    pub fn accumulate_into(&self, vs: &[Var], buf: &mut [T]) {
        assert_eq!(vs.len(), buf.len());
        for (g, &v) in buf.iter_mut().zip(vs) {
            *g += self.wrt(v);
        }
    }
}

/// Outcome of [`grad_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck<T> {
    pub max_rel_error: T,
    /// Parameter index attaining the maximum.
    pub worst_index: usize,
}

/// Compares tape gradients against central differences.
///
/// `f` builds a scalar on a fresh tape from the leaf handles it is given.
/// The relative error per parameter is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<T, F>(f: F, params: &[T], h: T) -> Result<GradCheck<T>>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if !(h > T::zero()) {
        return Err(Error::InvalidParameter(format!("step h must be > 0, got {h}")));
    }
    let mut tape = Tape::new();
    let vars = tape.leaves(params);
    let root = f(&mut tape, &vars)?;
    let analytic = tape.backward(root)?.wrt_all(&vars);

    let eval = |p: &[T], index: usize, side: &'static str| -> Result<T> {
        let mut t = Tape::new();
        let vs = t.leaves(p);
        let r = f(&mut t, &vs)?;
        let v = t.value(r);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteProbe { index, side })
        }
    };

    let floor = T::of(1e-12);
    let mut worst = GradCheck {
        max_rel_error: T::zero(),
        worst_index: 0,
    };
    let mut probe = params.to_vec();
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let up = eval(&probe, i, "+h")?;
        probe[i] = params[i] - h;
        let down = eval(&probe, i, "-h")?;
        probe[i] = params[i];
        let numeric = (up - down) / (h + h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        let rel = (a - numeric).abs() / denom;
        if rel > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: rel,
                worst_index: i,
            };
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_root_has_zero_gradients() {
        let mut t = Tape::<f64>::new();
        let w = t.leaf(2.5);
        let c = t.constant(7.0);
        let g = t.backward(c).unwrap();
        assert_eq!(g.wrt(w), 0.0);
        assert_eq!(g.wrt(c), 1.0);
    }

    #[test]
    fn square_of_three_has_gradient_six() {
        let mut t = Tape::<f64>::new();
        let w = t.leaf(3.0);
        let l = t.mul(w, w);
        assert_eq!(t.value(l), 9.0);
        assert_eq!(t.backward(l).unwrap().wrt(w), 6.0);
    }

    #[test]
    fn non_finite_names_the_operation() {
        let mut t = Tape::<f64>::new();
        let w = t.leaf(-1.0);
        let l = t.ln(w);
        let s = t.scale(l, 2.0);
        match t.backward(s) {
            Err(Error::NonFinite { op, .. }) => assert_eq!(op, "ln"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn sum_of_squares_grad_check() {
        let params = [0.3, -1.2, 2.0, 0.05];
        let r = grad_check(
            |t, v| {
                let sq: Vec<_> = v.iter().map(|&x| t.square(x)).collect();
                Ok(t.sum(&sq))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn gradients_are_additive_across_paths() {
        // l = w*w + 3w  => dl/dw = 2w + 3
        let mut t = Tape::<f64>::new();
        let w = t.leaf(1.5);
        let a = t.mul(w, w);
        let b = t.scale(w, 3.0);
        let l = t.add(a, b);
        assert_eq!(t.backward(l).unwrap().wrt(w), 6.0);
    }

    #[test]
    fn accumulate_adds_to_existing_buffer() {
        let mut t = Tape::<f64>::new();
        let w = t.leaves(&[1.0, 2.0]);
        let l = t.dot(&w, &w);
        let g = t.backward(l).unwrap();
        let mut buf = vec![10.0, 10.0];
        g.accumulate_into(&w, &mut buf);
        g.accumulate_into(&w, &mut buf);
        assert_eq!(buf, vec![14.0, 18.0]);
    }

    #[test]
    fn relu_kink_has_zero_derivative() {
        let mut t = Tape::<f64>::new();
        let w = t.leaf(0.0);
        let r = t.relu(w);
        assert_eq!(t.backward(r).unwrap().wrt(w), 0.0);
    }

    #[test]
    fn grad_check_rejects_non_positive_step() {
        let r = grad_check(|_, v| Ok(v[0]), &[1.0f64], 0.0);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn grad_check_reports_non_finite_probe() {
        // ln(x) at x = 1e-6 with h = 1e-5 probes ln of a negative number
        let r = grad_check(|t, v| Ok(t.ln(v[0])), &[1e-6f64], 1e-5);
        assert!(matches!(r, Err(Error::NonFiniteProbe { index: 0, .. })));
    }

    #[test]
    fn f32_tape_evaluates() {
        let mut t = Tape::<f32>::new();
        let w = t.leaf(2.0);
        let e = t.tanh(w);
        let g = t.backward(e).unwrap();
        assert!((g.wrt(w) - (1.0 - 2.0f32.tanh().powi(2))).abs() < 1e-6);
    }

    #[test]
    fn norm_cdf_values_and_gradient() {
        assert!((std_normal_cdf(0.0f64) - 0.5).abs() < 1e-15);
        assert!((std_normal_cdf(1.959963984540054f64) - 0.975).abs() < 1e-12);
        assert!(std_normal_cdf(-30.0f64) > 0.0);
        let check = grad_check(
            |t: &mut Tape<f64>, p: &[Var]| Ok(t.norm_cdf(p[0])),
            &[0.7],
            1e-5,
        )
        .unwrap();
        assert!(check.max_rel_error < 1e-8);
    }
}
