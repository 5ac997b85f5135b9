use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Layer, Mode, Param, Scalar, Tensor};

/// Which grid an input tensor lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputGrid {
    Sar,
    Msi,
}

#[derive(Clone, Debug)]
pub enum NodeOp<T> {
    Input { channels: usize, grid: InputGrid },
    Layer(Layer<T>),
}

#[derive(Clone, Debug)]
pub struct Node<T> {
    pub name: String,
    pub op: NodeOp<T>,
    /// Indices of the producing nodes, all earlier in topological order.
    pub inputs: Vec<usize>,
}

/// A network as a topologically ordered list of nodes. The last node is the
/// output.
#[derive(Clone, Debug)]
pub struct ModelGraph<T = f32> {
    config: ModelConfig,
    nodes: Vec<Node<T>>,
    input_nodes: Vec<usize>,
    /// Producer lists per node; `None` marks an input node.
    edges: Vec<Option<Vec<usize>>>,
    consumers: Vec<usize>,
}

impl<T: Scalar> ModelGraph<T> {
    pub(crate) fn new(config: ModelConfig, nodes: Vec<Node<T>>) -> Self {
        let mut consumers = vec![0; nodes.len()];
        for n in &nodes {
            for &i in &n.inputs {
                consumers[i] += 1;
            }
        }
        let input_nodes = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, NodeOp::Input { .. }))
            .map(|(i, _)| i)
            .collect();
        let edges = nodes
            .iter()
            .map(|n| match n.op {
                NodeOp::Input { .. } => None,
                NodeOp::Layer(_) => Some(n.inputs.clone()),
            })
            .collect();
        Self {
            config,
            nodes,
            input_nodes,
            edges,
            consumers,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [Node<T>] {
        &mut self.nodes
    }

    /// `(name, channels, grid)` of each input in call order.
    pub fn inputs(&self) -> Vec<(&str, usize, InputGrid)> {
        self.input_nodes
            .iter()
            .map(|&i| match &self.nodes[i].op {
                NodeOp::Input { channels, grid } => (self.nodes[i].name.as_str(), *channels, *grid),
                NodeOp::Layer(_) => unreachable!(),
            })
            .collect()
    }

    /// Number of trainable values (batchnorm running moments excluded).
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.nodes
            .iter()
            .flat_map(|n| match &n.op {
                NodeOp::Layer(l) => l.params(),
                NodeOp::Input { .. } => Vec::new(),
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.nodes
            .iter_mut()
            .flat_map(|n| match &mut n.op {
                NodeOp::Layer(l) => l.params_mut(),
                NodeOp::Input { .. } => Vec::new(),
            })
            .collect()
    }

    /// Parameter names qualified by node, in [`ModelGraph::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        self.nodes
            .iter()
            .flat_map(|n| match &n.op {
                NodeOp::Layer(l) => l.params().iter().map(|p| format!("{}.{}", n.name, p.name)).collect(),
                NodeOp::Input { .. } => Vec::new(),
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_inputs(&self, xs: &[&Tensor<T>]) -> Result<()> {
        if xs.len() != self.input_nodes.len() {
            return Err(Error::Shape(format!(
                "{} expects {} input tensor(s), got {}",
                self.config.kind,
                self.input_nodes.len(),
                xs.len()
            )));
        }
        for ((name, c, _), x) in self.inputs().into_iter().zip(xs) {
            if x.c() != c {
                return Err(Error::Shape(format!("input {name} expects {c} channels, got {}", x.c())));
            }
            if x.n() != xs[0].n() {
                return Err(Error::Shape("inputs disagree on batch size".into()));
            }
        }
        Ok(())
    }

    /// Pure evaluation (batchnorm uses running moments, nothing is cached).
    pub fn infer(&self, xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.check_inputs(xs)?;
        run(&self.edges, &self.consumers, xs, |i, args| self.nodes[i].eval(args), |_, _| {})
    }

    /// Like [`ModelGraph::infer`] but also returns every node's output.
    pub fn infer_trace(&self, xs: &[&Tensor<T>]) -> Result<Vec<(String, Tensor<T>)>> {
        self.check_inputs(xs)?;
        let mut trace = Vec::with_capacity(self.nodes.len());
        run(
            &self.edges,
            &self.consumers,
            xs,
            |i, args| self.nodes[i].eval(args),
            |i, y| trace.push((self.nodes[i].name.clone(), y.clone())),
        )?;
        Ok(trace)
    }

    /// Forward pass caching activations for [`ModelGraph::backward`].
    pub fn forward(&mut self, xs: &[&Tensor<T>], mode: Mode) -> Result<Tensor<T>> {
        self.check_inputs(xs)?;
        let Self {
            nodes, edges, consumers, ..
        } = self;
        run(edges, consumers, xs, |i, args| nodes[i].forward(args, mode), |_, _| {})
    }

    /// Backpropagate `dy` (gradient of the loss with respect to the output).
    /// Parameter gradients accumulate; returns gradients for each input.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[n - 1] = Some(dy.clone());
        let mut input_grads: Vec<Option<Tensor<T>>> = vec![None; self.input_nodes.len()];
        for i in (0..n).rev() {
            let node = &mut self.nodes[i];
            let g = match grads[i].take() {
                Some(g) => g,
                None => return Err(Error::BackwardBeforeForward(node.name.clone())),
            };
            match &mut node.op {
                NodeOp::Input { .. } => {
                    let k = self.input_nodes.iter().position(|&j| j == i).expect("input node");
                    input_grads[k] = Some(g);
                }
                NodeOp::Layer(l) => {
                    let parts = l.backward(&g).map_err(|e| match e {
                        Error::BackwardBeforeForward(_) => Error::BackwardBeforeForward(node.name.clone()),
                        e => e,
                    })?;
                    for (&j, p) in node.inputs.iter().zip(parts) {
                        grads[j] = Some(match grads[j].take() {
                            None => p,
                            Some(mut acc) => {
                                for (a, b) in acc.data_mut().iter_mut().zip(p.data()) {
                                    *a = *a + *b;
                                }
                                acc
                            }
                        });
                    }
                }
            }
        }
        Ok(input_grads.into_iter().map(|g| g.expect("every input reaches the output")).collect())
    }

    /// Every parameter and batchnorm running moment, in node order.
    pub fn state(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let NodeOp::Layer(l) = &n.op {
                out.extend(l.params().into_iter().map(|p| p.value.clone()));
                if let Layer::BatchNorm(bn) = l {
                    out.push(bn.running_mean.clone());
                    out.push(bn.running_var.clone());
                }
            }
        }
        out
    }

    /// Restore a snapshot taken with [`ModelGraph::state`].
    pub fn set_state(&mut self, state: &[Vec<T>]) -> Result<()> {
        let mut it = state.iter();
        let mut next = |len: usize| -> Result<Vec<T>> {
            match it.next() {
                Some(v) if v.len() == len => Ok(v.clone()),
                _ => Err(Error::Shape("state snapshot does not match the graph".into())),
            }
        };
        for n in &mut self.nodes {
            if let NodeOp::Layer(l) = &mut n.op {
                for p in l.params_mut() {
                    p.value = next(p.value.len())?;
                }
                if let Layer::BatchNorm(bn) = l {
                    bn.running_mean = next(bn.channels)?;
                    bn.running_var = next(bn.channels)?;
                }
            }
        }
        if it.next().is_some() {
            return Err(Error::Shape("state snapshot does not match the graph".into()));
        }
        Ok(())
    }

    /// Copy of the graph with parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        let mut g: ModelGraph<U> = super::build(&self.config).expect("config was valid");
        for (dst, src) in g.nodes.iter_mut().zip(&self.nodes) {
            if let (NodeOp::Layer(d), NodeOp::Layer(s)) = (&mut dst.op, &src.op) {
                for (pd, ps) in d.params_mut().into_iter().zip(s.params()) {
                    pd.value = ps.value.iter().map(|v| U::of(v.as_f64())).collect();
                }
                if let (Layer::BatchNorm(bd), Layer::BatchNorm(bs)) = (d, s) {
                    bd.running_mean = bs.running_mean.iter().map(|v| U::of(v.as_f64())).collect();
                    bd.running_var = bs.running_var.iter().map(|v| U::of(v.as_f64())).collect();
                }
            }
        }
        g
    }
}

impl<T: Scalar> Node<T> {
    fn eval(&self, args: &[&Tensor<T>]) -> Result<Tensor<T>> {
        match &self.op {
            NodeOp::Layer(l) => l.infer(args).map_err(|e| self.context(e)),
            NodeOp::Input { .. } => unreachable!("inputs are fed, not evaluated"),
        }
    }

    fn forward(&mut self, args: &[&Tensor<T>], mode: Mode) -> Result<Tensor<T>> {
        let r = match &mut self.op {
            NodeOp::Layer(l) => l.forward(args, mode),
            NodeOp::Input { .. } => unreachable!("inputs are fed, not evaluated"),
        };
        r.map_err(|e| self.context(e))
    }

    fn context(&self, e: Error) -> Error {
        match e {
            Error::Shape(m) => Error::Shape(format!("{}: {m}", self.name)),
            e => e,
        }
    }
}

/// Evaluate nodes in order, feeding inputs and freeing intermediate values
/// once their last consumer has run.
fn run<T: Scalar>(
    edges: &[Option<Vec<usize>>],
    consumers: &[usize],
    xs: &[&Tensor<T>],
    mut eval: impl FnMut(usize, &[&Tensor<T>]) -> Result<Tensor<T>>,
    mut keep: impl FnMut(usize, &Tensor<T>),
) -> Result<Tensor<T>> {
    let mut values: Vec<Option<Tensor<T>>> = vec![None; edges.len()];
    let mut remaining = consumers.to_vec();
    let mut next_input = 0;
    let last = edges.len() - 1;
    for (i, e) in edges.iter().enumerate() {
        let y = match e {
            None => {
                next_input += 1;
                xs[next_input - 1].clone()
            }
            Some(inputs) => {
                let args: Vec<&Tensor<T>> = inputs
                    .iter()
                    .map(|&j| values[j].as_ref().expect("producer evaluated"))
                    .collect();
                let y = eval(i, &args)?;
                for &j in inputs {
                    remaining[j] -= 1;
                    if remaining[j] == 0 {
                        values[j] = None;
                    }
                }
                y
            }
        };
        keep(i, &y);
        if i == last {
            return Ok(y);
        }
        values[i] = Some(y);
    }
    unreachable!("graph has at least one node")
}
