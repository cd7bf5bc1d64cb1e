use crate::error::{Error, Result};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle of a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    FullyConnected {
        x: VarId,
        w: VarId,
        b: VarId,
    },
    Conv2d {
        x: VarId,
        k: VarId,
        b: VarId,
        h: usize,
        w: usize,
        cin: usize,
        cout: usize,
    },
    Upsample2x {
        x: VarId,
        h: usize,
        w: usize,
        c: usize,
    },
    Selu {
        x: VarId,
    },
    Relu {
        x: VarId,
    },
    Reshape {
        x: VarId,
    },
    AbsDiff {
        a: VarId,
        b: VarId,
    },
    L1Mean {
        a: VarId,
        b: VarId,
    },
    Add {
        a: VarId,
        b: VarId,
    },
    Mul {
        a: VarId,
        b: VarId,
    },
    Scale {
        x: VarId,
        c: T,
    },
    StopGradient,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records forward operations in topological order; `backward` replays them
/// in reverse, accumulating gradients. Construction and backward are
/// single-threaded; run independent tapes on independent threads.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> VarId {
        self.nodes.push(Node { value, op });
        VarId(self.nodes.len() - 1)
    }

    /// Inserts an input or parameter node.
    pub fn leaf(&mut self, value: Tensor<T>) -> VarId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// y = W x + b. `x` is a vector [in], `w` a matrix [out, in], `b` [out].
    pub fn fully_connected(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let in_dim = xv.elems();
        let ws = wv.shape();
        if ws.len() != 2 || ws[1] != in_dim || bv.elems() != ws[0] {
            return Err(Error::ShapeMismatch {
                op: "fully_connected",
                expected: vec![bv.elems(), in_dim],
                got: ws.to_vec(),
            });
        }
        let out_dim = ws[0];
        let mut y = vec![T::zero(); out_dim];
        kernels::fc_forward(xv.data(), wv.data(), bv.data(), &mut y);
        Ok(self.push(
            Tensor::new(vec![out_dim], y).expect("fc output shape"),
            Op::FullyConnected { x, w, b },
        ))
    }

    /// 3x3 stride-1 convolution with zero "same" padding.
    /// `x` is [h, w, cin], `k` is [3, 3, cin, cout], `b` is [cout].
    pub fn conv2d(&mut self, x: VarId, k: VarId, b: VarId) -> Result<VarId> {
        let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
        let xs = xv.shape();
        let ks = kv.shape();
        if xs.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: vec![0, 0, 0],
                got: xs.to_vec(),
            });
        }
        let (h, w, cin) = (xs[0], xs[1], xs[2]);
        if ks != [3, 3, cin, ks[3]] || ks.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: vec![3, 3, cin, bv.elems()],
                got: ks.to_vec(),
            });
        }
        let cout = ks[3];
        if bv.elems() != cout {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: vec![cout],
                got: bv.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); h * w * cout];
        kernels::conv3x3(xv.data(), kv.data(), bv.data(), &mut out, h, w, cin, cout);
        Ok(self.push(
            Tensor::new(vec![h, w, cout], out).expect("conv output shape"),
            Op::Conv2d {
                x,
                k,
                b,
                h,
                w,
                cin,
                cout,
            },
        ))
    }

    /// Nearest-neighbour 2x spatial upsampling of an [h, w, c] tensor.
    pub fn upsample2x(&mut self, x: VarId) -> Result<VarId> {
        let xv = self.value(x);
        let xs = xv.shape();
        if xs.len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "upsample2x",
                expected: vec![0, 0, 0],
                got: xs.to_vec(),
            });
        }
        let (h, w, c) = (xs[0], xs[1], xs[2]);
        let mut out = vec![T::zero(); 4 * h * w * c];
        kernels::upsample2x(xv.data(), &mut out, h, w, c);
        Ok(self.push(
            Tensor::new(vec![2 * h, 2 * w, c], out).expect("upsample output shape"),
            Op::Upsample2x { x, h, w, c },
        ))
    }

    pub fn selu(&mut self, x: VarId) -> VarId {
        let xv = self.value(x);
        let mut out = vec![T::zero(); xv.elems()];
        kernels::selu(xv.data(), &mut out);
        let shape = xv.shape().to_vec();
        self.push(Tensor::new(shape, out).expect("selu shape"), Op::Selu { x })
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let xv = self.value(x);
        let mut out = vec![T::zero(); xv.elems()];
        kernels::relu(xv.data(), &mut out);
        let shape = xv.shape().to_vec();
        self.push(Tensor::new(shape, out).expect("relu shape"), Op::Relu { x })
    }

    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> Result<VarId> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// Elementwise |a - b|.
    pub fn abs_diff(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let t = self.binary_elementwise("abs_diff", a, b, |x, y| (x - y).abs())?;
        Ok(self.push(t, Op::AbsDiff { a, b }))
    }

    /// Mean of |a_i - b_i| over all elements: the L1 norm normalized by the
    /// component count. Returns a scalar node.
    pub fn l1_mean(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (av, bv) = (self.value(a), self.value(b));
        Self::check_same_shape("l1_mean", av, bv)?;
        let n = T::of_f64(av.elems() as f64);
        let sum: T = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        Ok(self.push(Tensor::scalar(sum / n), Op::L1Mean { a, b }))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let t = self.binary_elementwise("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let t = self.binary_elementwise("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: VarId, c: T) -> VarId {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale { x, c })
    }

    /// Identity on values; blocks every gradient flowing through it.
    pub fn stop_gradient(&mut self, x: VarId) -> VarId {
        let value = self.value(x).clone();
        self.push(value, Op::StopGradient)
    }

    fn binary_elementwise(
        &self,
        op: &'static str,
        a: VarId,
        b: VarId,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        Self::check_same_shape(op, av, bv)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::new(av.shape().to_vec(), data).expect("elementwise shape"))
    }

    fn check_same_shape(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op,
                expected: a.shape().to_vec(),
                got: b.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Reverse accumulation from a scalar loss node. Returns one gradient
    /// buffer per reachable node; unreached nodes report zero gradients.
    /// The L1 subgradient at zero is taken as 0.
    pub fn backward(&self, loss: VarId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss { elems: lv.elems() });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, idx: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        // Inputs may alias (e.g. mul(p, p)), so each buffer is taken out,
        // written, and merged back rather than held mutably in parallel.
        fn take<T: Real>(grads: &mut [Option<Vec<T>>], id: VarId, len: usize) -> Vec<T> {
            grads[id.0].take().unwrap_or_else(|| vec![T::zero(); len])
        }
        fn put<T: Real>(grads: &mut [Option<Vec<T>>], id: VarId, buf: Vec<T>) {
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, v) in existing.iter_mut().zip(buf) {
                        *e += v;
                    }
                }
                slot @ None => *slot = Some(buf),
            }
        }
        fn l1_sign<T: Real>(d: T) -> T {
            if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        }
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::FullyConnected { x, w, b } => {
                let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                let mut gx = take(grads, *x, xv.elems());
                let mut gw = take(grads, *w, wv.elems());
                let mut gb = take(grads, *b, gout.len());
                kernels::fc_backward(xv.data(), wv.data(), gout, &mut gx, &mut gw, &mut gb);
                put(grads, *x, gx);
                put(grads, *w, gw);
                put(grads, *b, gb);
            }
            Op::Conv2d {
                x,
                k,
                b,
                h,
                w,
                cin,
                cout,
            } => {
                let (xv, kv) = (&self.nodes[x.0].value, &self.nodes[k.0].value);
                let mut gx = take(grads, *x, xv.elems());
                let mut gk = take(grads, *k, kv.elems());
                let mut gb = take(grads, *b, *cout);
                // The stencil writes its output, so dX goes through a scratch
                // buffer and is merged.
                let mut dx = vec![T::zero(); xv.elems()];
                kernels::conv3x3_backward_input(gout, kv.data(), &mut dx, *h, *w, *cin, *cout);
                for (a, d) in gx.iter_mut().zip(&dx) {
                    *a += *d;
                }
                kernels::conv3x3_backward_kernel(xv.data(), gout, &mut gk, *h, *w, *cin, *cout);
                kernels::conv3x3_backward_bias(gout, &mut gb, *cout);
                put(grads, *x, gx);
                put(grads, *k, gk);
                put(grads, *b, gb);
            }
            Op::Upsample2x { x, h, w, c } => {
                let mut gx = take(grads, *x, h * w * c);
                kernels::upsample2x_backward(gout, &mut gx, *h, *w, *c);
                put(grads, *x, gx);
            }
            Op::Selu { x } => {
                let out = &self.nodes[idx].value;
                let mut gx = take(grads, *x, out.elems());
                kernels::selu_backward(out.data(), gout, &mut gx);
                put(grads, *x, gx);
            }
            Op::Relu { x } => {
                let out = &self.nodes[idx].value;
                let mut gx = take(grads, *x, out.elems());
                kernels::relu_backward(out.data(), gout, &mut gx);
                put(grads, *x, gx);
            }
            Op::Reshape { x } => {
                let mut gx = take(grads, *x, gout.len());
                for (a, &g) in gx.iter_mut().zip(gout) {
                    *a += g;
                }
                put(grads, *x, gx);
            }
            Op::AbsDiff { a, b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let mut ga = take(grads, *a, av.elems());
                let mut gb = take(grads, *b, bv.elems());
                for i in 0..gout.len() {
                    let s = l1_sign(av.data()[i] - bv.data()[i]);
                    ga[i] += gout[i] * s;
                    gb[i] -= gout[i] * s;
                }
                put(grads, *a, ga);
                put(grads, *b, gb);
            }
            Op::L1Mean { a, b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let g = gout[0] / T::of_f64(av.elems() as f64);
                let mut ga = take(grads, *a, av.elems());
                let mut gb = take(grads, *b, bv.elems());
                for i in 0..av.elems() {
                    let s = l1_sign(av.data()[i] - bv.data()[i]);
                    ga[i] += g * s;
                    gb[i] -= g * s;
                }
                put(grads, *a, ga);
                put(grads, *b, gb);
            }
            Op::Add { a, b } => {
                let mut ga = take(grads, *a, gout.len());
                let mut gb = take(grads, *b, gout.len());
                for i in 0..gout.len() {
                    ga[i] += gout[i];
                    gb[i] += gout[i];
                }
                put(grads, *a, ga);
                put(grads, *b, gb);
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let mut ga = take(grads, *a, av.elems());
                let mut gb = take(grads, *b, bv.elems());
                for i in 0..gout.len() {
                    ga[i] += gout[i] * bv.data()[i];
                    gb[i] += gout[i] * av.data()[i];
                }
                put(grads, *a, ga);
                put(grads, *b, gb);
            }
            Op::Scale { x, c } => {
                let mut gx = take(grads, *x, gout.len());
                for (a, &g) in gx.iter_mut().zip(gout) {
                    *a += g * *c;
                }
                put(grads, *x, gx);
            }
            Op::StopGradient => {}
        }
    }
}

/// Per-node gradient buffers produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. node `id`, zero-filled if the node was
    /// never reached by backpropagation.
    pub fn grad(&self, id: VarId) -> Tensor<T> {
        let shape = self.shapes[id.0].clone();
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Borrowing accessor used by the training hot loop.
    pub fn grad_data(&self, id: VarId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }
}
