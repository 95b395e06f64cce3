//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. The
//! graph is rebuilt for each forward pass; [`Graph::backward`] walks the
//! recorded nodes in reverse creation order (always a topological order)
//! and returns the gradients of a scalar loss with respect to every
//! parameter and every leaf created with [`Graph::input`].

mod linalg;
mod nn;
mod ops;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Gradient of one node with respect to each parent, flat and in the
/// parent's shape. `mask[i]` tells whether parent `i` needs a gradient.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    op: &'static str,
    scope: Rc<str>,
    param: Option<ParamId>,
}

pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<HashMap<ParamId, usize>>,
    scope: RefCell<Vec<String>>,
    current_scope: RefCell<Rc<str>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'a> {
    g: &'a Graph<'a>,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

pub struct ScopeGuard<'a, 'p> {
    g: &'a Graph<'p>,
}

impl Drop for ScopeGuard<'_, '_> {
    fn drop(&mut self) {
        let mut s = self.g.scope.borrow_mut();
        s.pop();
        *self.g.current_scope.borrow_mut() = Rc::from(s.join("."));
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self::with_params(Some(params))
    }

    /// A graph with no parameter store (pure tensor computations).
    pub fn detached() -> Graph<'static> {
        Graph::with_params(None)
    }

    fn with_params(params: Option<&'p ParamStore>) -> Self {
        Self {
            params,
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(HashMap::new()),
            scope: RefCell::new(Vec::new()),
            current_scope: RefCell::new(Rc::from("")),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Labels nodes created while the guard lives (for diagnostics).
    pub fn scope(&self, name: &str) -> ScopeGuard<'_, 'p> {
        let mut s = self.scope.borrow_mut();
        s.push(name.to_string());
        *self.current_scope.borrow_mut() = Rc::from(s.join("."));
        ScopeGuard { g: self }
    }

    fn leaf(&self, value: Tensor, requires_grad: bool, op: &'static str, param: Option<ParamId>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: Vec::new(),
            backward: None,
            op,
            scope: self.current_scope.borrow().clone(),
            param,
        });
        nodes.len() - 1
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        let id = self.leaf(value, false, "constant", None);
        Var { g: self.reborrow(), id }
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&self, value: Tensor) -> Var<'_> {
        let id = self.leaf(value, true, "input", None);
        Var { g: self.reborrow(), id }
    }

    /// Binds a parameter; repeated calls return the same node.
    pub fn param(&self, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.bound.borrow().get(&id) {
            return Var { g: self.reborrow(), id: node };
        }
        let store = self.params.expect("graph has no parameter store");
        let p = store.get(id);
        let node = self.leaf(p.value.clone(), !p.frozen, "param", Some(id));
        self.bound.borrow_mut().insert(id, node);
        Var { g: self.reborrow(), id: node }
    }

    pub fn param_store(&self) -> Option<&'p ParamStore> {
        self.params
    }

    fn reborrow(&self) -> &Graph<'_> {
        self
    }

    pub(crate) fn push(
        &self,
        value: Tensor,
        parents: &[Var<'_>],
        op: &'static str,
        backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let parent_ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = parent_ids.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: parent_ids,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            op,
            scope: self.current_scope.borrow().clone(),
            param: None,
        });
        let id = nodes.len() - 1;
        drop(nodes);
        Var { g: self.reborrow(), id }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        let mut leaves = Vec::new();
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(bw) = node.backward.as_ref() else {
                if grads[id].is_some() {
                    leaves.push(id);
                }
                continue;
            };
            let Some(g) = grads[id].take() else { continue };
            let mask: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let pg = bw(&g, &mask);
            debug_assert_eq!(pg.len(), node.parents.len(), "op {}", node.op);
            for (&p, gp) in node.parents.iter().zip(pg) {
                let Some(gp) = gp else { continue };
                debug_assert_eq!(gp.len(), nodes[p].value.len(), "grad size for op {}", node.op);
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&gp) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(gp),
                }
            }
        }
        let mut out = Gradients {
            by_node: HashMap::new(),
            by_param: HashMap::new(),
        };
        for id in leaves {
            let node = &nodes[id];
            let g = Tensor::from_parts(node.value.shape().to_vec(), grads[id].take().unwrap());
            if let Some(pid) = node.param {
                out.by_param.insert(pid, g.clone());
            }
            out.by_node.insert(id, g);
        }
        Ok(out)
    }

    /// Describes the earliest node holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        let nodes = self.nodes.borrow();
        let store = self.params;
        nodes.iter().enumerate().find(|(_, n)| !n.value.is_finite()).map(|(i, n)| {
            let name = match (n.param, store) {
                (Some(pid), Some(s)) => format!(" `{}`", s.get(pid).name),
                _ => String::new(),
            };
            let scope = if n.scope.is_empty() { "<root>" } else { &n.scope };
            format!("node {i} ({}{name}) in {scope} with shape {:?}", n.op, n.value.shape())
        })
    }
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: HashMap<usize, Tensor>,
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient with respect to a leaf (`input` or `param`). `None` when the
    /// loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.by_node.get(&v.id)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    /// Adds the parameter gradients into `store`.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (&id, g) in &self.by_param {
            let p = store.get_mut(id);
            for (a, v) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += v;
            }
        }
    }
}

impl<'a> Var<'a> {
    pub fn value(&self) -> Rc<Tensor> {
        self.g.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.g.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn graph(&self) -> &'a Graph<'a> {
        self.g
    }

    pub fn requires_grad(&self) -> bool {
        self.g.nodes.borrow()[self.id].requires_grad
    }

    pub(crate) fn same_graph(&self, other: &Var<'_>) -> bool {
        std::ptr::eq(
            self.g as *const Graph<'_> as *const u8,
            other.g as *const Graph<'_> as *const u8,
        )
    }
}
