//! Graphviz DOT export of a fitted path diagram.
//!
//! Three ranks, left to right: exogenous variables, latent factors,
//! endogenous variables. Solid edges carry `Theta2` (exogenous to factor)
//! and `X` (factor to endogenous); dashed edges carry `Theta1`, the
//! feedback from endogenous variables into the factors.

use std::fmt::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::model::{EquilibriumSummary, ModelParams};

pub const DEFAULT_RELATIVE_THRESHOLD: f64 = 0.05;

/// Minimum weight for an edge to be drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EdgeThreshold {
    Absolute(f64),
    /// Fraction of the largest entry of each matrix separately.
    RelativeToMax(f64),
}

impl Default for EdgeThreshold {
    fn default() -> Self {
        EdgeThreshold::RelativeToMax(DEFAULT_RELATIVE_THRESHOLD)
    }
}

impl EdgeThreshold {
    fn cutoff(&self, m: &DMatrix<f64>) -> f64 {
        match *self {
            EdgeThreshold::Absolute(t) => t,
            EdgeThreshold::RelativeToMax(f) => f * m.max(),
        }
    }
}

/// Variable names; empty vectors fall back to `Y1`, `Y2`, ... and `Z1`, ...
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagramLabels {
    pub endogenous: Vec<String>,
    pub exogenous: Vec<String>,
}

fn names(given: &[String], n: usize, prefix: &str) -> Result<Vec<String>> {
    if given.is_empty() {
        return Ok((1..=n).map(|i| format!("{prefix}{i}")).collect());
    }
    if given.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} {prefix} variables", given.len())));
    }
    Ok(given.to_vec())
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn export_diagram(result: &FitResult, labels: &DiagramLabels, threshold: EdgeThreshold) -> Result<String> {
    diagram(&result.params, &result.equilibrium, labels, threshold)
}

/// Builds the DOT text. Output depends only on the inputs: nodes follow
/// variable order and edges follow (source, target) index order.
pub fn diagram(
    params: &ModelParams,
    summary: &EquilibriumSummary,
    labels: &DiagramLabels,
    threshold: EdgeThreshold,
) -> Result<String> {
    let endo = names(&labels.endogenous, params.p1(), "Y")?;
    let exo = names(&labels.exogenous, params.p2(), "Z")?;
    let (x, t1, t2) = (params.x().as_matrix(), params.theta1().as_matrix(), params.theta2().as_matrix());
    let q = params.q();

    let mut out = String::new();
    let mut w = |s: String| out.push_str(&s);
    w("digraph nmfsem {\n".into());
    w("  rankdir=LR;\n  node [fontname=\"Helvetica\"];\n".into());

    w("  subgraph cluster_exogenous {\n    rank=same; style=invis;\n".into());
    for (j, name) in exo.iter().enumerate() {
        w(format!("    z{j} [label={}, shape=box];\n", quote(name)));
    }
    w("  }\n  subgraph cluster_factors {\n    rank=same; style=invis;\n".into());
    for k in 0..q {
        w(format!("    f{k} [label=\"F{}\", shape=ellipse];\n", k + 1));
    }
    w("  }\n  subgraph cluster_endogenous {\n    rank=same; style=invis;\n".into());
    for (i, name) in endo.iter().enumerate() {
        w(format!("    y{i} [label={}, shape=box];\n", quote(name)));
    }
    w("  }\n".into());

    let keep = |v: f64, cut: f64| v > 0.0 && v >= cut;

    let cut = threshold.cutoff(t2);
    for j in 0..params.p2() {
        for k in 0..q {
            if keep(t2[(k, j)], cut) {
                w(format!("  z{j} -> f{k} [label=\"{:.3}\"];\n", t2[(k, j)]));
            }
        }
    }
    let cut = threshold.cutoff(x);
    for k in 0..q {
        for i in 0..params.p1() {
            if keep(x[(i, k)], cut) {
                w(format!("  f{k} -> y{i} [label=\"{:.3}\"];\n", x[(i, k)]));
            }
        }
    }
    let cut = threshold.cutoff(t1);
    for i in 0..params.p1() {
        for k in 0..q {
            if keep(t1[(k, i)], cut) {
                w(format!(
                    "  y{i} -> f{k} [label=\"{:.3}\", style=dashed, constraint=false];\n",
                    t1[(k, i)]
                ));
            }
        }
    }

    let mut caption = format!("rho(X Theta1) = {:.3}", summary.rho);
    match summary.ar {
        Some(ar) if summary.stable => {
            let _ = write!(caption, ", AR = {ar:.3}");
        }
        _ => {
            w("  warning [label=\"unstable: rho >= 1, equilibrium undefined\", shape=note, color=red];\n".into());
        }
    }
    w(format!("  caption [label={}, shape=plaintext];\n", quote(&caption)));
    w("}\n".into());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::NonNegMatrix;
    use crate::model::equilibrium;

    // Basis loadings reported for the nine-test ability data with three
    // factors, rows x1..x9.
    const ABILITY_BASIS: [[f64; 3]; 9] = [
        [0.28, 0.01, 0.00],
        [0.25, 0.04, 0.00],
        [0.26, 0.00, 0.00],
        [0.00, 0.31, 0.00],
        [0.00, 0.37, 0.00],
        [0.00, 0.22, 0.00],
        [0.00, 0.00, 0.64],
        [0.05, 0.02, 0.28],
        [0.16, 0.02, 0.08],
    ];

    fn ability_params(theta1_value: f64) -> ModelParams {
        let x: Vec<f64> = ABILITY_BASIS.iter().flatten().copied().collect();
        let x = NonNegMatrix::from_row_slice(9, 3, &x).unwrap();
        let t1 = NonNegMatrix::new(DMatrix::from_element(3, 9, theta1_value)).unwrap();
        let t2 = NonNegMatrix::new(DMatrix::from_fn(3, 2, |k, j| 0.1 * (k + j + 1) as f64)).unwrap();
        ModelParams::normalized(x, t1, t2).unwrap()
    }

    fn labels() -> DiagramLabels {
        DiagramLabels {
            endogenous: (1..=9).map(|i| format!("x{i}")).collect(),
            exogenous: vec!["age".into(), "sex".into()],
        }
    }

    fn render(p: &ModelParams, t: EdgeThreshold) -> String {
        diagram(p, &equilibrium(p).unwrap(), &labels(), t).unwrap()
    }

    #[test]
    fn ability_block_at_point_one() {
        let dot = render(&ability_params(0.0), EdgeThreshold::Absolute(0.1));
        for i in 0..3 {
            assert!(dot.contains(&format!("f0 -> y{i} ")), "{dot}");
            for k in 1..3 {
                assert!(!dot.contains(&format!("f{k} -> y{i} ")));
            }
        }
        assert!(!dot.contains("dashed"));
        assert!(dot.contains("AR = 1.000"));
    }

    #[test]
    fn threshold_above_everything() {
        let dot = render(&ability_params(0.01), EdgeThreshold::Absolute(10.0));
        assert!(!dot.contains("->"));
        assert!(dot.contains("x9"));
        assert!(dot.contains("F3"));
    }

    #[test]
    fn feedback_edges_dashed() {
        let dot = render(&ability_params(0.01), EdgeThreshold::default());
        assert_eq!(dot.matches("style=dashed").count(), 27);
    }

    #[test]
    fn unstable_gets_warning() {
        let p = ability_params(1.0);
        let dot = render(&p, EdgeThreshold::default());
        assert!(dot.contains("warning"));
        assert!(!dot.contains("AR ="));
    }

    #[test]
    fn deterministic_bytes() {
        let p = ability_params(0.02);
        assert_eq!(render(&p, EdgeThreshold::default()), render(&p, EdgeThreshold::default()));
    }

    #[test]
    fn label_count_checked() {
        let p = ability_params(0.0);
        let bad = DiagramLabels {
            endogenous: vec!["a".into()],
            exogenous: vec![],
        };
        assert!(diagram(&p, &equilibrium(&p).unwrap(), &bad, EdgeThreshold::default()).is_err());
        assert!(quote("a\"b").contains("\\\""));
    }
}
