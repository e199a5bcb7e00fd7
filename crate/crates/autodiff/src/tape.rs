use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{AdError, Result};
use crate::ops::Op;
use crate::tensor::Tensor;

/// Backward rule for an operation whose forward pass is computed outside the
/// tape (fused kernels such as alpha blending or bilinear sampling).
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product. Returns one entry per input; entries for
    /// inputs with `needs[i] == false` may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

pub(crate) struct Node {
    pub value: Rc<Tensor>,
    pub op: Op,
    pub inputs: Vec<usize>,
    pub requires_grad: bool,
}

/// Wengert list of recorded operations. Rebuilt for every forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
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

    /// Trainable input; receives a gradient on backward.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, vec![], value, true)
    }

    /// Data input; never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Constant, vec![], value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    /// Records an externally computed result with its own backward rule.
    pub fn custom(&self, op: Box<dyn CustomOp>, inputs: &[Var<'_>], output: Tensor) -> Var<'_> {
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(Op::Custom(op), ids, output, false)
    }

    pub(crate) fn push(&self, op: Op, inputs: Vec<usize>, value: Tensor, leaf_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = leaf_grad || inputs.iter().any(|&i| nodes[i].requires_grad);
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            inputs,
            requires_grad,
        });
        Var { tape: self, id }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar root. Every node is visited once, in
    /// reverse recording order.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(AdError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[root.id] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));
        let mut leaf_grads: Vec<Option<Tensor>> = Vec::with_capacity(nodes.len());
        leaf_grads.resize_with(nodes.len(), || None);

        for id in (0..=root.id).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &nodes[id];
            match node.op {
                Op::Leaf => {
                    leaf_grads[id] = Some(grad);
                    continue;
                }
                Op::Constant => continue,
                _ => {}
            }
            if !node.requires_grad {
                continue;
            }
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &*nodes[i].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let input_grads = node.op.backward(&inputs, &node.value, &grad, &needs);
            for ((&input, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(
                    g.len(),
                    nodes[input].value.len(),
                    "{} produced a gradient of the wrong size",
                    node.op.name()
                );
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

/// Gradients of a scalar root with respect to every leaf on the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` if the leaf did not influence the root.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        match self.get(var) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.shape()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}
