use serde::Serialize;

use super::{InputGrid, ModelGraph, NodeOp};
use crate::nn::{Layer, Scalar};

/// Operand dimensions `[C, H, W]` of one channel concatenation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcatSite {
    pub name: String,
    pub operands: Vec<[usize; 3]>,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapeReport {
    pub inputs: Vec<(String, [usize; 3])>,
    pub concat_sites: Vec<ConcatSite>,
    /// Problems found on the way, one entry per offending node.
    pub issues: Vec<String>,
    pub output: [usize; 3],
    pub expected_output: [usize; 3],
    pub param_count: usize,
}

impl ShapeReport {
    pub fn ok(&self) -> bool {
        self.issues.is_empty() && self.output == self.expected_output
    }

    /// Input dims implied by the model's configured patch size.
    pub fn default_inputs<T: Scalar>(g: &ModelGraph<T>) -> Vec<[usize; 3]> {
        let s = g.config().patch_s;
        g.inputs()
            .into_iter()
            .map(|(_, c, grid)| match grid {
                InputGrid::Sar => [c, s, s],
                InputGrid::Msi => [c, s / 3, s / 3],
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, d) in &self.inputs {
            out += &format!("input {name}: {}x{}x{}\n", d[0], d[1], d[2]);
        }
        for site in &self.concat_sites {
            let ops: Vec<String> = site
                .operands
                .iter()
                .map(|d| format!("{}x{}x{}", d[0], d[1], d[2]))
                .collect();
            out += &format!(
                "concat {:<16} {}  {}\n",
                site.name,
                ops.join(" + "),
                if site.ok { "ok" } else { "MISMATCH" }
            );
        }
        let o = self.output;
        out += &format!("output: {}x{}x{}", o[0], o[1], o[2]);
        if o != self.expected_output {
            let e = self.expected_output;
            out += &format!(" (expected {}x{}x{})", e[0], e[1], e[2]);
        }
        out += &format!("\nparameters: {}\n", self.param_count);
        for issue in &self.issues {
            out += &format!("issue: {issue}\n");
        }
        out
    }
}

/// Propagate `[C, H, W]` shapes through the graph without computing anything.
/// Problems are collected rather than raised; propagation continues with a
/// best-effort shape so later sites are still reported.
pub fn verify_shapes<T: Scalar>(g: &ModelGraph<T>, inputs: &[[usize; 3]]) -> ShapeReport {
    let mut issues = Vec::new();
    let mut sites = Vec::new();
    let mut dims: Vec<[usize; 3]> = Vec::with_capacity(g.nodes().len());
    let mut fed = Vec::new();
    let mut next = 0;
    if inputs.len() != g.inputs().len() {
        issues.push(format!("expected {} inputs, got {}", g.inputs().len(), inputs.len()));
    }
    for node in g.nodes() {
        let d = match &node.op {
            NodeOp::Input { channels, .. } => {
                let d = inputs.get(next).copied().unwrap_or([*channels, 0, 0]);
                next += 1;
                if d[0] != *channels {
                    issues.push(format!("{}: expects {channels} channels, got {}", node.name, d[0]));
                }
                fed.push((node.name.clone(), d));
                d
            }
            NodeOp::Layer(layer) => {
                let ins: Vec<[usize; 3]> = node.inputs.iter().map(|&j| dims[j]).collect();
                let x = ins[0];
                match layer {
                    Layer::Conv(c) => {
                        if x[0] != c.cin {
                            issues.push(format!("{}: expects {} channels, got {}", node.name, c.cin, x[0]));
                        }
                        if c.stride == 2 && (!x[1].is_multiple_of(2) || !x[2].is_multiple_of(2)) {
                            issues.push(format!("{}: odd size {}x{} into stride-2 conv", node.name, x[1], x[2]));
                        }
                        [c.cout, x[1] / c.stride, x[2] / c.stride]
                    }
                    Layer::BatchNorm(_) | Layer::Relu(_) | Layer::Sigmoid(_) => x,
                    Layer::MaxPool(_) => {
                        if !x[1].is_multiple_of(3) || !x[2].is_multiple_of(3) {
                            issues.push(format!("{}: size {}x{} not divisible by 3", node.name, x[1], x[2]));
                        }
                        [x[0], x[1] / 3, x[2] / 3]
                    }
                    Layer::Upsample(u) => [x[0], x[1] * u.factor, x[2] * u.factor],
                    Layer::Concat(_) => {
                        let ok = ins.iter().all(|d| d[1..] == x[1..]);
                        if !ok {
                            issues.push(format!("{}: operand sizes differ {:?}", node.name, ins));
                        }
                        sites.push(ConcatSite {
                            name: node.name.clone(),
                            operands: ins.clone(),
                            ok,
                        });
                        [ins.iter().map(|d| d[0]).sum(), x[1], x[2]]
                    }
                }
            }
        };
        dims.push(d);
    }
    let cfg = g.config();
    let sar_side = fed
        .iter()
        .zip(g.inputs())
        .find(|(_, (_, _, grid))| *grid == InputGrid::Sar)
        .map(|((_, d), _)| d[1])
        .unwrap_or_else(|| fed.first().map(|(_, d)| d[1] * 3).unwrap_or(0));
    let side = cfg.output_side(sar_side);
    ShapeReport {
        inputs: fed,
        concat_sites: sites,
        issues,
        output: *dims.last().expect("non-empty graph"),
        expected_output: [1, side, side],
        param_count: g.param_count(),
    }
}
