use std::cell::RefCell;
use std::rc::Rc;

use super::{Result, Tensor, TensorError};

/// Gradient rule of one recorded operation.
///
/// `inputs` are the values the operation consumed, `output` the value it
/// produced and `grad` the upstream gradient (same shape as `output`).
/// Entries of the returned vector line up with `inputs`; an entry may be
/// `None` when `needs[i]` is false.
pub trait Backward {
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Rc<Tensor>,
    inputs: Vec<usize>,
    op: Option<Box<dyn Backward>>,
    requires_grad: bool,
}

/// Ordered record of operations. Nodes are appended as operations run, so
/// every node's inputs precede it.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a leaf value.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            op: None,
            requires_grad,
        })
    }

    /// Record a non-differentiable constant.
    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Record the result of a custom operation together with its gradient rule.
    pub fn record(&self, inputs: &[Var], value: Tensor, op: Box<dyn Backward>) -> Var {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.0].requires_grad)
        };
        self.push(Node {
            value: Rc::new(value),
            inputs: inputs.iter().map(|v| v.0).collect(),
            op: Some(op),
            requires_grad,
        })
    }

    fn push(&self, node: Node) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        self.grads.borrow_mut().push(None);
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads.borrow()[v.0].clone()
    }

    pub fn zero_grad(&self) {
        for g in self.grads.borrow_mut().iter_mut() {
            *g = None;
        }
    }

    /// Propagate d(loss)/d(node) to every node that requires a gradient.
    /// Gradients from repeated calls accumulate until [`Tape::zero_grad`].
    pub fn backward(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut local: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(Tensor::ones(root.value.shape()));

        for id in (0..=loss.0).rev() {
            let Some(grad) = local[id].take() else { continue };
            let node = &nodes[id];
            if let Some(op) = &node.op {
                let needs: Vec<bool> = node
                    .inputs
                    .iter()
                    .map(|&i| nodes[i].requires_grad)
                    .collect();
                if needs.iter().any(|&b| b) {
                    let inputs: Vec<&Tensor> =
                        node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
                    let input_grads = op.backward(&inputs, &node.value, &grad, &needs);
                    debug_assert_eq!(input_grads.len(), node.inputs.len());
                    for ((&input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                        let Some(g) = g else { continue };
                        if !need {
                            continue;
                        }
                        debug_assert_eq!(g.shape(), nodes[input].value.shape());
                        match &mut local[input] {
                            Some(acc) => acc.add_assign(&g),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
            }
            local[id] = Some(grad);
        }

        let mut grads = self.grads.borrow_mut();
        for (id, g) in local.into_iter().enumerate() {
            if let Some(g) = g {
                if !nodes[id].requires_grad {
                    continue;
                }
                match &mut grads[id] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}
