use std::cell::RefCell;

use super::AdError;

/// Node index used by constants.
pub(crate) const NO_NODE: u32 = u32::MAX;
/// Generation tag carried by input handles; inputs survive resets.
const INPUT_GEN: u32 = u32::MAX;

/// Vector-Jacobian product of a fused multi-output node.
///
/// `out_adj` holds the adjoints of the block outputs; the implementation adds
/// the pulled-back contributions into `adj`, which is indexed by tape node.
pub trait BlockVjp: Send {
    fn vjp(&self, out_adj: &[f64], adj: &mut [f64]);
}

struct Block {
    first: u32,
    len: u32,
    op: Box<dyn BlockVjp>,
}

#[derive(Default)]
struct Inner {
    edge_end: Vec<u32>,
    parents: Vec<u32>,
    partials: Vec<f64>,
    blocks: Vec<Block>,
    input_values: Vec<f64>,
    generation: u32,
    poisoned: Option<String>,
}

impl Inner {
    fn len(&self) -> usize {
        self.edge_end.len()
    }

    fn edges_of(&self, i: usize) -> std::ops::Range<usize> {
        let start = if i == 0 { 0 } else { self.edge_end[i - 1] as usize };
        start..self.edge_end[i] as usize
    }
}

/// Append-only reverse-mode tape.
///
/// Nodes are stored in flat arrays (edge offsets, parent indices, local
/// partials). Input nodes always occupy the leading slots, which lets
/// [`Tape::checkpoint_reset`] drop everything recorded after them.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// A recorded scalar: its value plus a handle into a [`Tape`].
///
/// Constants carry no tape and contribute zero gradient.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) val: f64,
    pub(crate) idx: u32,
    gen: u32,
    pub(crate) tape: Option<&'t Tape>,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.idx == NO_NODE {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var({} @{})", self.val, self.idx)
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Var<'t> {
        Var {
            val: value,
            idx: NO_NODE,
            gen: 0,
            tape: None,
        }
    }

    pub fn value(&self) -> f64 {
        self.val
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adj: Vec<f64>,
    n_inputs: usize,
}

impl Gradients {
    /// Gradient with respect to any handle recorded before the backward pass.
    pub fn wrt(&self, v: &Var<'_>) -> f64 {
        if v.idx == NO_NODE {
            0.0
        } else {
            self.adj.get(v.idx as usize).copied().unwrap_or(0.0)
        }
    }

    /// Gradients of the registered inputs, in registration order.
    pub fn inputs(&self) -> &[f64] {
        &self.adj[..self.n_inputs]
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize, edges: usize) -> Self {
        let t = Tape::default();
        {
            let mut inner = t.inner.borrow_mut();
            inner.edge_end.reserve(nodes);
            inner.parents.reserve(edges);
            inner.partials.reserve(edges);
        }
        t
    }

    /// Registers a differentiable input. Inputs must precede all other nodes.
    pub fn input(&self, value: f64) -> Result<Var<'_>, AdError> {
        let mut inner = self.inner.borrow_mut();
        if inner.len() != inner.input_values.len() {
            return Err(AdError::Usage(
                "inputs must be registered before any operation is recorded".into(),
            ));
        }
        let idx = inner.len() as u32;
        let end = inner.parents.len() as u32;
        inner.edge_end.push(end);
        inner.input_values.push(value);
        Ok(Var {
            val: value,
            idx,
            gen: INPUT_GEN,
            tape: Some(self),
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.inner.borrow().input_values.len()
    }

    /// Handle to the `k`-th registered input.
    pub fn input_handle(&self, k: usize) -> Var<'_> {
        let inner = self.inner.borrow();
        Var {
            val: inner.input_values[k],
            idx: k as u32,
            gen: INPUT_GEN,
            tape: Some(self),
        }
    }

    /// Changes the value of an input. Only allowed while nothing else is recorded.
    pub fn set_input(&self, k: usize, value: f64) -> Result<Var<'_>, AdError> {
        {
            let mut inner = self.inner.borrow_mut();
            if inner.len() != inner.input_values.len() {
                return Err(AdError::Usage(
                    "input values can only change right after a reset".into(),
                ));
            }
            inner.input_values[k] = value;
        }
        Ok(self.input_handle(k))
    }

    /// Number of recorded nodes, inputs included.
    pub fn node_count(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn edge_count(&self) -> usize {
        self.inner.borrow().parents.len()
    }

    /// Bytes held by live node storage (not capacity).
    pub fn memory_bytes(&self) -> usize {
        let inner = self.inner.borrow();
        inner.len() * 4 + inner.parents.len() * 12 + inner.input_values.len() * 8
    }

    /// Drops every recorded node except the inputs. Handles created before the
    /// reset (other than inputs) become stale; using one poisons the tape.
    pub fn checkpoint_reset(&self) {
        let mut inner = self.inner.borrow_mut();
        let n = inner.input_values.len();
        inner.edge_end.truncate(n);
        inner.parents.clear();
        inner.partials.clear();
        inner.blocks.clear();
        inner.poisoned = None;
        inner.generation = inner.generation.wrapping_add(1) % INPUT_GEN;
    }

    /// Removes everything, inputs included.
    pub fn clear(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.edge_end.clear();
        inner.parents.clear();
        inner.partials.clear();
        inner.blocks.clear();
        inner.input_values.clear();
        inner.poisoned = None;
        inner.generation = inner.generation.wrapping_add(1) % INPUT_GEN;
    }

    fn owns(&self, v: &Var<'_>) -> bool {
        matches!(v.tape, Some(t) if std::ptr::eq(t, self))
    }

    /// Validates a parent handle. Returns false if the edge must be dropped.
    fn admit(&self, inner: &mut Inner, v: &Var<'_>) -> Result<bool, AdError> {
        match v.tape {
            None => Ok(false),
            Some(t) if !std::ptr::eq(t, self) => {
                Err(AdError::Usage("operands belong to different tapes".into()))
            }
            Some(_) => {
                let live = if v.gen == INPUT_GEN {
                    (v.idx as usize) < inner.input_values.len()
                } else {
                    v.gen == inner.generation && (v.idx as usize) < inner.len()
                };
                if !live && inner.poisoned.is_none() {
                    inner.poisoned = Some(format!(
                        "handle to node {} used after checkpoint_reset",
                        v.idx
                    ));
                }
                Ok(live)
            }
        }
    }

    pub(crate) fn try_push<'a>(
        &'a self,
        value: f64,
        edges: &[(Var<'a>, f64)],
    ) -> Result<Var<'a>, AdError> {
        let mut inner = self.inner.borrow_mut();
        let mut any = false;
        for (v, d) in edges {
            if *d == 0.0 || !self.admit(&mut inner, v)? {
                continue;
            }
            inner.parents.push(v.idx);
            inner.partials.push(*d);
            any = true;
        }
        if !any {
            return Ok(Var::constant(value));
        }
        let idx = inner.len();
        assert!(idx < NO_NODE as usize, "tape node count overflow");
        let end = u32::try_from(inner.parents.len()).expect("tape edge count overflow");
        inner.edge_end.push(end);
        Ok(Var {
            val: value,
            idx: idx as u32,
            gen: inner.generation,
            tape: Some(self),
        })
    }

    /// Records a node with caller-supplied local partials. Panics if a parent
    /// lives on another tape.
    pub fn push<'a>(&'a self, value: f64, edges: &[(Var<'a>, f64)]) -> Var<'a> {
        match self.try_push(value, edges) {
            Ok(v) => v,
            Err(e) => panic!("{e}"),
        }
    }

    /// Node index to use as a block parent: `NO_NODE` for constants and
    /// stale handles (the latter poisons the tape).
    pub(crate) fn link(&self, v: &Var<'_>) -> u32 {
        let mut inner = self.inner.borrow_mut();
        match self.admit(&mut inner, v) {
            Ok(true) => v.idx,
            Ok(false) => NO_NODE,
            Err(e) => panic!("{e}"),
        }
    }

    /// Records a fused multi-output node whose backward pass is `op`. Parent
    /// indices inside `op` must come from [`Tape::link`].
    pub(crate) fn push_block(&self, values: &[f64], op: Box<dyn BlockVjp>) -> Vec<Var<'_>> {
        let mut inner = self.inner.borrow_mut();
        let first = inner.len();
        assert!(first + values.len() < NO_NODE as usize, "tape node count overflow");
        let end = inner.parents.len() as u32;
        for _ in values {
            inner.edge_end.push(end);
        }
        inner.blocks.push(Block {
            first: first as u32,
            len: values.len() as u32,
            op,
        });
        let gen = inner.generation;
        values
            .iter()
            .enumerate()
            .map(|(k, &val)| Var {
                val,
                idx: (first + k) as u32,
                gen,
                tape: Some(self),
            })
            .collect()
    }

    /// True if the handle is a live node of this tape.
    pub(crate) fn is_live(&self, v: &Var<'_>) -> bool {
        let inner = self.inner.borrow();
        self.owns(v)
            && if v.gen == INPUT_GEN {
                (v.idx as usize) < inner.input_values.len()
            } else {
                v.gen == inner.generation && (v.idx as usize) < inner.len()
            }
    }

    /// Records an elementary operation with domain checking.
    pub fn record<'a>(&'a self, op: super::Op, args: &[Var<'a>]) -> Result<Var<'a>, AdError> {
        let (value, partials) = op.eval(args)?;
        let edges: Vec<(Var<'a>, f64)> = args.iter().copied().zip(partials).collect();
        for (v, _) in &edges {
            if v.tape.is_some() && !self.owns(v) {
                return Err(AdError::Usage("operand is not on this tape".into()));
            }
        }
        self.try_push(value, &edges)
    }

    /// Reverse sweep from `output`. Returns adjoints of every node.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, AdError> {
        let mut adj = Vec::new();
        self.backward_into(output, &mut adj)?;
        Ok(Gradients {
            adj,
            n_inputs: self.n_inputs(),
        })
    }

    pub(crate) fn backward_into(&self, output: Var<'_>, adj: &mut Vec<f64>) -> Result<(), AdError> {
        let inner = self.inner.borrow();
        adj.clear();
        adj.resize(inner.len(), 0.0);
        if let Some(msg) = &inner.poisoned {
            return Err(AdError::Usage(msg.clone()));
        }
        if output.tape.is_none() {
            return Ok(());
        }
        if !self.owns(&output) {
            return Err(AdError::Usage("output does not belong to this tape".into()));
        }
        drop(inner);
        if !self.is_live(&output) {
            return Err(AdError::Usage(
                "output handle is stale (recorded before checkpoint_reset)".into(),
            ));
        }
        let inner = self.inner.borrow();
        let out = output.idx as usize;
        adj[out] = 1.0;
        let mut bi = inner.blocks.partition_point(|b| (b.first as usize) <= out);
        let mut scratch = Vec::new();
        for i in (0..=out).rev() {
            if bi > 0 && inner.blocks[bi - 1].first as usize == i {
                let b = &inner.blocks[bi - 1];
                let range = i..i + b.len as usize;
                if adj[range.clone()].iter().any(|&a| a != 0.0) {
                    scratch.clear();
                    scratch.extend_from_slice(&adj[range]);
                    b.op.vjp(&scratch, adj);
                }
                bi -= 1;
                continue;
            }
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            for e in inner.edges_of(i) {
                adj[inner.parents[e] as usize] += a * inner.partials[e];
            }
        }
        Ok(())
    }
}
