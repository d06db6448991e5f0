//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients for
//! every node that (transitively) depends on a trainable leaf.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::params::ParamId;
use crate::tensor::Tensor;

/// Backward closure: receives the output gradient and a mask telling which
/// parents need a gradient, and returns one optional gradient per parent.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Arc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// An operation with a hand-written backward pass.
pub trait CustomOp: 'static {
    fn forward(&self, inputs: &[&Tensor]) -> Tensor;

    /// Gradients with respect to each input; entries whose `needs` flag is
    /// false may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.constant_arc(Arc::new(value))
    }

    pub fn constant_arc(&self, value: Arc<Tensor>) -> Var<'_> {
        self.push_node(Node {
            value,
            parents: vec![],
            backward: None,
            requires_grad: false,
            param: None,
        })
    }

    /// A free input that receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(Node {
            value: Arc::new(value),
            parents: vec![],
            backward: None,
            requires_grad: true,
            param: None,
        })
    }

    /// A trainable parameter; its gradient is reported under `id`.
    pub fn param(&self, id: ParamId, value: Arc<Tensor>) -> Var<'_> {
        self.push_node(Node {
            value,
            parents: vec![],
            backward: None,
            requires_grad: true,
            param: Some(id),
        })
    }

    pub(crate) fn value(&self, id: usize) -> Arc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Records the result of an operation. The backward closure is dropped
    /// when no parent requires a gradient.
    pub(crate) fn record<F>(&self, value: Tensor, parents: &[Var<'_>], backward: F) -> Var<'_>
    where
        F: Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        let parent_ids: Vec<usize> = parents
            .iter()
            .map(|p| {
                assert!(std::ptr::eq(p.graph, self), "mixing vars of different graphs");
                p.id
            })
            .collect();
        let requires_grad = parent_ids.iter().any(|&p| self.requires_grad(p));
        self.push_node(Node {
            value: Arc::new(value),
            parents: parent_ids,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            requires_grad,
            param: None,
        })
    }

    /// Applies a [`CustomOp`] to `inputs`.
    pub fn custom<'g, O: CustomOp>(&'g self, inputs: &[Var<'g>], op: O) -> Var<'g> {
        let values: Vec<Arc<Tensor>> = inputs.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = op.forward(&refs);
        let out_arc = Arc::new(out.clone());
        let op = Arc::new(op);
        self.record(out, inputs, move |g, needs| {
            let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
            op.backward(&refs, &out_arc, g, needs)
        })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        let seed = {
            let v = loss.value();
            assert_eq!(v.numel(), 1, "backward from non-scalar of shape {:?}", v.shape());
            Tensor::full(v.shape().to_vec(), 1.0)
        };
        self.backward_with(loss, seed)
    }

    /// Reverse pass seeded with an arbitrary output gradient.
    pub fn backward_with(&self, output: Var<'_>, seed: Tensor) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        assert_eq!(seed.shape(), nodes[output.id].value.shape());
        grads[output.id] = Some(seed);

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(&g, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape mismatch");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
            // Keep gradients of leaves so callers can query them.
        }

        let mut params: HashMap<ParamId, Tensor> = HashMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, grads[id].as_ref()) {
                match params.get_mut(&pid) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        params.insert(pid, g.clone());
                    }
                }
            }
        }
        Gradients { grads, params }
    }
}

/// Result of a reverse pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of a leaf (or of the output itself). Interior nodes are
    /// consumed during the pass and report `None`.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &HashMap<ParamId, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> HashMap<ParamId, Tensor> {
        self.params
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> f64 {
        self.value().item()
    }
}
