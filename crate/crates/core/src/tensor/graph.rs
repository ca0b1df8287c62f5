use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Shape, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Identifies a tracked tensor inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId {
    graph: u64,
    index: usize,
}

/// Maps upstream gradients of each output to gradients of each input.
///
/// The second argument says which inputs are tracked; untracked inputs may
/// be answered with `None` to skip work.
type BackwardFn = Box<dyn FnOnce(&[Vec<f64>], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    inputs: Vec<Option<usize>>,
    outputs: Vec<usize>,
    backward: BackwardFn,
}

#[derive(Default)]
struct Tape {
    var_lens: Vec<usize>,
    leaves: Vec<bool>,
    nodes: Vec<Node>,
}

/// Eager operation recorder for one forward pass.
///
/// Ops are recorded only when at least one input is tracked. The graph is
/// consumed by [`Graph::backward`]; build a fresh one per pass.
pub struct Graph {
    id: u64,
    tape: RefCell<Tape>,
    macs: Cell<u64>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            tape: RefCell::new(Tape::default()),
            macs: Cell::new(0),
        }
    }

    /// Registers `t` as a gradient-tracked leaf and returns the tracked handle.
    pub fn leaf(&self, t: &Tensor) -> Tensor {
        let mut tape = self.tape.borrow_mut();
        let index = tape.var_lens.len();
        tape.var_lens.push(t.numel());
        tape.leaves.push(true);
        t.detach().with_var(VarId {
            graph: self.id,
            index,
        })
    }

    /// Number of recorded ops.
    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-adds performed by forward ops on this graph so far.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub(crate) fn count_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    fn index_of(&self, t: &Tensor) -> Result<Option<usize>> {
        match t.var() {
            None => Ok(None),
            Some(v) if v.graph == self.id => Ok(Some(v.index)),
            Some(_) => Err(Error::contract(
                "tensor is tracked by a different graph; detach it first",
            )),
        }
    }

    /// Records a single-output op.
    pub(crate) fn emit(
        &self,
        inputs: &[&Tensor],
        shape: Shape,
        data: Vec<f64>,
        backward: impl FnOnce(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Result<Tensor> {
        let mut out = self.emit_multi(inputs, vec![(shape, data)], move |grads, needs| {
            backward(&grads[0], needs)
        })?;
        Ok(out.pop().expect("one output"))
    }

    /// Records an op with several outputs sharing one adjoint rule.
    pub(crate) fn emit_multi(
        &self,
        inputs: &[&Tensor],
        outputs: Vec<(Shape, Vec<f64>)>,
        backward: impl FnOnce(&[Vec<f64>], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Result<Vec<Tensor>> {
        #[cfg(debug_assertions)]
        check_finite(inputs, &outputs);

        let input_ids = inputs
            .iter()
            .map(|t| self.index_of(t))
            .collect::<Result<Vec<_>>>()?;
        let tensors = outputs
            .into_iter()
            .map(|(shape, data)| Tensor::from_parts(shape, data));
        if input_ids.iter().all(Option::is_none) {
            return Ok(tensors.collect());
        }

        let mut tape = self.tape.borrow_mut();
        let mut out = Vec::new();
        let mut output_ids = Vec::new();
        for t in tensors {
            let index = tape.var_lens.len();
            tape.var_lens.push(t.numel());
            tape.leaves.push(false);
            output_ids.push(index);
            out.push(t.with_var(VarId {
                graph: self.id,
                index,
            }));
        }
        tape.nodes.push(Node {
            inputs: input_ids,
            outputs: output_ids,
            backward: Box::new(backward),
        });
        Ok(out)
    }

    /// Reverse-mode pass from a scalar `loss`.
    ///
    /// Nodes are visited in exact reverse recording order; contributions to a
    /// tensor consumed by several ops are summed. Every leaf receives a
    /// gradient (zeros when the loss does not depend on it).
    pub fn backward(self, loss: &Tensor) -> Result<Gradients> {
        if loss.shape() != Shape::SCALAR {
            return Err(Error::contract(format!(
                "backward needs a 1x1x1x1 loss, got {}",
                loss.shape()
            )));
        }
        let root = self.index_of(loss)?.ok_or_else(|| {
            Error::contract("loss does not depend on any tracked tensor")
        })?;

        let tape = self.tape.into_inner();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; tape.var_lens.len()];
        grads[root] = Some(vec![1.0]);

        for node in tape.nodes.into_iter().rev() {
            if node.outputs.iter().all(|&o| grads[o].is_none()) {
                continue;
            }
            let upstream: Vec<Vec<f64>> = node
                .outputs
                .iter()
                .map(|&o| grads[o].take().unwrap_or_else(|| vec![0.0; tape.var_lens[o]]))
                .collect();
            let needs: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = (node.backward)(&upstream, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, grad) in node.inputs.iter().zip(input_grads) {
                let (Some(i), Some(grad)) = (*input, grad) else {
                    continue;
                };
                debug_assert_eq!(grad.len(), tape.var_lens[i]);
                match &mut grads[i] {
                    Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                    slot => *slot = Some(grad),
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                tape.leaves[i]
                    .then(|| g.unwrap_or_else(|| vec![0.0; tape.var_lens[i]]))
            })
            .collect();
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }
}

#[cfg(debug_assertions)]
fn check_finite(inputs: &[&Tensor], outputs: &[(Shape, Vec<f64>)]) {
    let outputs_finite = outputs.iter().all(|(_, d)| d.iter().all(|v| v.is_finite()));
    if !outputs_finite && inputs.iter().all(|t| t.is_finite()) {
        panic!("op produced non-finite values from finite inputs");
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a tracked leaf, shaped like the leaf.
    pub fn get(&self, t: &Tensor) -> Option<Tensor> {
        self.data(t)
            .map(|g| Tensor::from_parts(t.shape(), g.to_vec()))
    }

    pub fn data(&self, t: &Tensor) -> Option<&[f64]> {
        let v = t.var()?;
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index)?.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untracked_inputs_record_nothing() {
        let g = Graph::new();
        let a = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let b = g.add(&a, &a).unwrap();
        assert!(!b.requires_grad());
        assert!(g.is_empty());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let g = Graph::new();
        let x = g.leaf(&Tensor::full(Shape::new(1, 1, 2, 2), 1.0));
        let y = g.scalar_mul(&x, 2.0).unwrap();
        assert!(matches!(g.backward(&y), Err(Error::Contract(_))));
    }

    #[test]
    fn foreign_tensor_is_rejected() {
        let g1 = Graph::new();
        let g2 = Graph::new();
        let x = g1.leaf(&Tensor::scalar(1.0));
        assert!(g2.add(&x, &x).is_err());
        assert!(g2.add(&x.detach(), &x.detach()).is_ok());
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.0));
        let unused = g.leaf(&Tensor::full(Shape::new(1, 1, 1, 2), 1.0));
        let loss = g.mul(&x, &x).unwrap();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.data(&x).unwrap(), &[6.0]);
        assert_eq!(grads.data(&unused).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_visits_nodes_in_reverse_order() {
        // y = ((x * 2) + 1) * 3 only works if each node sees its finished upstream.
        let g = Graph::new();
        let x = g.leaf(&Tensor::scalar(1.5));
        let a = g.scalar_mul(&x, 2.0).unwrap();
        let b = g.add_scalar(&a, 1.0).unwrap();
        let c = g.scalar_mul(&b, 3.0).unwrap();
        let d = g.add(&c, &a).unwrap();
        let grads = g.backward(&d).unwrap();
        assert_eq!(grads.data(&x).unwrap(), &[8.0]);
    }
}
