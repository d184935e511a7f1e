use crate::error::{arg_err, Error, Result};

use super::{Scalar, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Everything a backward rule may read.
pub struct BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Tensor<T>,
    pub output: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    /// Whether each input needs a gradient; rules may skip the others.
    pub needs: Vec<bool>,
}

/// Backward rule of one recorded operation.
///
/// Returns one entry per input, `None` where no gradient flows.
pub trait Function<T: Scalar> {
    fn name(&self) -> &'static str;
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    func: Option<Box<dyn Function<T>>>,
    requires_grad: bool,
}

/// Execution-ordered record of differentiable operations.
///
/// Leaves are created with [`Graph::leaf`]; every operation appends one node.
/// [`Graph::backward`] walks the record once in reverse and leaves a gradient
/// on every tracked leaf the loss depends on. A graph can be differentiated
/// only once.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
    fault: Option<String>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            func: None,
            requires_grad: tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records `output = func(inputs)`. The backward rule is dropped when no
    /// input needs a gradient.
    pub fn apply(
        &mut self,
        func: impl Function<T> + 'static,
        inputs: &[Var],
        output: Tensor<T>,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: output,
            inputs: inputs.to_vec(),
            func: requires_grad.then(|| Box::new(func) as Box<dyn Function<T>>),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradient accumulated on a tracked leaf by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Makes every backward rule named `op` return wrong gradients. Exists so
    /// the gradient checker can be shown to catch a broken rule.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, op: &str) {
        self.fault = Some(op.to_string());
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::State("backward already ran on this graph".into()));
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return arg_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(func) = node.func.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &g,
                output: &node.value,
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                needs: node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].requires_grad)
                    .collect(),
            };
            let mut input_grads = func.backward(&ctx)?;
            if self.fault.as_deref() == Some(func.name()) {
                for ig in input_grads.iter_mut().flatten() {
                    *ig = ig.scale(T::of(1.5));
                }
            }
            for (&input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.shape(), self.nodes[input.0].value.shape(), "{}", func.name());
                grads[input.0] = Some(match grads[input.0].take() {
                    Some(acc) => acc.add(&ig)?,
                    None => ig,
                });
            }
        }
        // release saved activations; only leaf gradients remain
        for node in &mut self.nodes {
            node.func = None;
        }
        self.grads = grads;
        Ok(())
    }
}
