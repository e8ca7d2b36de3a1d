use std::cell::RefCell;
use std::collections::BTreeMap;

use super::params::ParamSet;
use super::tensor::Tensor;
use super::{NumericsError, Result};

/// Backward rule for one recorded op: receives the output gradient and
/// accumulates into the gradient slots of its input nodes.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &mut [Option<Vec<f64>>])>;

pub(crate) struct Node {
    pub op: &'static str,
    pub numel: usize,
    pub backward: Option<BackwardFn>,
}

/// Gradients keyed by parameter name after a backward pass.
///
/// Every parameter watched on the tape has an entry; parameters not
/// reachable from the loss get exact zeros.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.map.get(name).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Test hook: scale one gradient entry (used by fault-injection checks).
    pub fn perturb(&mut self, name: &str, index: usize, factor: f64) {
        if let Some(g) = self.map.get_mut(name) {
            g[index] *= factor;
        }
    }
}

/// Wengert tape: records the forward op graph, replays it in reverse.
///
/// `Tape::recording()` watches every parameter it is handed;
/// `Tape::recording_filtered()` watches only names the filter admits
/// (frozen parameters enter the graph as constants, so their gradients
/// cannot exist by construction). `Tape::inference()` records nothing.
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    watched: RefCell<Vec<(String, usize, usize)>>, // name, node id, numel
    watch_cache: RefCell<BTreeMap<String, Tensor>>,
    filter: Option<Box<dyn Fn(&str) -> bool>>,
    recording: bool,
}

impl Tape {
    pub fn recording() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            watched: RefCell::new(Vec::new()),
            watch_cache: RefCell::new(BTreeMap::new()),
            filter: None,
            recording: true,
        }
    }

    pub fn recording_filtered(filter: impl Fn(&str) -> bool + 'static) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            watched: RefCell::new(Vec::new()),
            watch_cache: RefCell::new(BTreeMap::new()),
            filter: Some(Box::new(filter)),
            recording: true,
        }
    }

    pub fn inference() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            watched: RefCell::new(Vec::new()),
            watch_cache: RefCell::new(BTreeMap::new()),
            filter: None,
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub(crate) fn push_node(&self, op: &'static str, numel: usize, backward: Option<BackwardFn>) -> Option<usize> {
        if !self.recording {
            return None;
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, numel, backward });
        Some(nodes.len() - 1)
    }

    /// Fetch a parameter as a tensor on this tape.
    ///
    /// Watched parameters become leaf nodes whose gradients are collected by
    /// name in `backward`; filtered-out (frozen) parameters come back as
    /// constants. Repeated fetches of the same name return the same leaf so
    /// tied weights accumulate into a single gradient.
    pub fn param(&self, set: &ParamSet, name: &str) -> Result<Tensor> {
        if let Some(t) = self.watch_cache.borrow().get(name) {
            return Ok(t.clone());
        }
        let entry = set
            .get(name)
            .ok_or_else(|| NumericsError::Param(format!("unknown parameter '{name}'")))?;
        let data = entry.values();
        let shape = entry.shape.clone();
        let watch = self.recording
            && entry.trainable
            && self.filter.as_ref().map_or(true, |f| f(name));
        let tensor = if watch {
            let node = self.push_node("param", data.len(), None);
            let t = Tensor::from_op(data, shape, node);
            self.watched.borrow_mut().push((name.to_string(), node.unwrap(), t.len()));
            t
        } else {
            Tensor::from_op(data, shape, None)
        };
        self.watch_cache.borrow_mut().insert(name.to_string(), tensor.clone());
        Ok(tensor)
    }

    /// Reverse pass from a scalar loss. Returns one gradient per watched
    /// parameter (zeros for parameters the loss does not reach).
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if !loss.is_scalar() {
            return Err(NumericsError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let loss_node = loss.node.ok_or_else(|| {
            NumericsError::Contract("loss was not produced under a recording tape".into())
        })?;

        let nodes = self.nodes.borrow();
        let mut slots: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        slots[loss_node] = Some(vec![1.0]);

        for id in (0..=loss_node).rev() {
            let Some(grad) = slots[id].take() else { continue };
            let node = &nodes[id];
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite { op: node.op });
            }
            if let Some(backward) = &node.backward {
                backward(&grad, &mut slots);
            } else if node.op == "param" {
                // leaf: keep the accumulated gradient for collection below
                slots[id] = Some(grad);
            }
        }

        let mut map = BTreeMap::new();
        for (name, node_id, numel) in self.watched.borrow().iter() {
            let g = slots[*node_id].take().unwrap_or_else(|| vec![0.0; *numel]);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NumericsError::NonFinite { op: "param" });
            }
            map.insert(name.clone(), g);
        }
        Ok(Gradients { map })
    }
}

pub(crate) fn accumulate(slots: &mut [Option<Vec<f64>>], id: usize, numel: usize, add: impl FnOnce(&mut [f64])) {
    let slot = slots[id].get_or_insert_with(|| vec![0.0; numel]);
    add(slot);
}
