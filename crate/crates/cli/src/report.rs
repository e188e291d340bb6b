//! Report structures shared by the text and JSON renderers.
//!
//! Indices in reports are 1-based.

use serde::Serialize;

use fsdp_core::exactness::{
    AssumptionsReport, CertifiedSolution, CheckStatus, EdgeEvidence, ExactnessCertificate, Method, Verdict,
};
use fsdp_core::gtrs::{GtrsPath, GtrsSolution};
use fsdp_core::model::Lift;
use fsdp_core::simtridiag::TridiagonalizationResult;
use fsdp_core::sparsity::{Classification, ForestAnalysis, SparsityGraph};
use fsdp_core::symlin::SymMatrix;

pub const SCHEMA_VERSION: u32 = 1;

fn one_based(e: (usize, usize)) -> [usize; 2] {
    [e.0 + 1, e.1 + 1]
}

fn rows(m: &fsdp_core::nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn sym_rows(m: &SymMatrix) -> Vec<Vec<f64>> {
    rows(m.as_matrix())
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub n: usize,
    pub m: usize,
    pub edges: Vec<[usize; 2]>,
    pub is_forest: bool,
    pub classification: Classification,
    pub relabeled: bool,
    pub components: Vec<Vec<usize>>,
    pub connecting_edges: Vec<[usize; 2]>,
}

impl AnalyzeReport {
    pub fn new(m: usize, g: &SparsityGraph, fa: &ForestAnalysis, d: &[(usize, usize)]) -> Self {
        AnalyzeReport {
            schema_version: SCHEMA_VERSION,
            command: "analyze",
            n: g.n,
            m,
            edges: g.edges.iter().copied().map(one_based).collect(),
            is_forest: fa.is_forest,
            classification: fa.classification,
            relabeled: fa.relabeled,
            components: fa.components.iter().map(|c| c.iter().map(|v| v + 1).collect()).collect(),
            connecting_edges: d.iter().copied().map(one_based).collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("n = {}, m = {}\n", self.n, self.m);
        s += &format!("edges: {}\n", fmt_edges(&self.edges));
        s += &format!("classification: {:?}\n", self.classification);
        s += &format!("components: {}\n", self.components.len());
        if !self.connecting_edges.is_empty() {
            s += &format!("connecting edges: {}\n", fmt_edges(&self.connecting_edges));
        }
        s
    }
}

fn fmt_edges(edges: &[[usize; 2]]) -> String {
    if edges.is_empty() {
        return "(none)".into();
    }
    edges.iter().map(|e| format!("({},{})", e[0], e[1])).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Serialize)]
pub struct EdgeRow {
    pub edge: [usize; 2],
    pub kind: &'static str,
    pub margin: Option<f64>,
    pub infeasible: bool,
    pub detail: EdgeEvidence,
}

#[derive(Debug, Serialize)]
pub struct CertificateSummary {
    pub verdict: Verdict,
    pub method: Option<Method>,
    pub conditional: bool,
    pub connected: bool,
    /// `direct` keeps the original variables; otherwise index 1 is the
    /// homogenizing coordinate.
    pub lift: Lift,
    pub connecting_edges: Vec<[usize; 2]>,
    pub y_cap: f64,
    pub assumptions: AssumptionStatus,
    pub edges: Vec<EdgeRow>,
}

#[derive(Debug, Serialize)]
pub struct AssumptionStatus {
    pub a: CheckStatus,
    pub b: CheckStatus,
    pub c: CheckStatus,
}

impl From<&AssumptionsReport> for AssumptionStatus {
    fn from(r: &AssumptionsReport) -> Self {
        AssumptionStatus { a: r.a, b: r.b, c: r.c }
    }
}

impl CertificateSummary {
    pub fn new(cert: &ExactnessCertificate, lift: Lift) -> Self {
        CertificateSummary {
            verdict: cert.verdict,
            method: cert.method,
            conditional: cert.conditional,
            connected: cert.connected,
            lift,
            connecting_edges: cert.d_used.iter().copied().map(one_based).collect(),
            y_cap: cert.y_cap,
            assumptions: (&cert.assumptions).into(),
            edges: cert
                .per_edge
                .iter()
                .map(|r| EdgeRow {
                    edge: one_based(r.edge),
                    kind: r.evidence.kind(),
                    margin: r.evidence.margin(),
                    infeasible: r.evidence.is_infeasibility(),
                    detail: r.evidence.clone(),
                })
                .collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("verdict: {:?}\n", self.verdict);
        if let Some(m) = self.method {
            s += &format!("method: {m:?}\n");
        }
        s += &format!("variables: {:?}\n", self.lift);
        if self.conditional {
            s += "conditional: dominance assumption not verified\n";
        }
        s += &format!(
            "assumptions: a={:?} b={:?} c={:?}\n",
            self.assumptions.a, self.assumptions.b, self.assumptions.c
        );
        if !self.connecting_edges.is_empty() {
            s += &format!("connecting edges: {}\n", fmt_edges(&self.connecting_edges));
        }
        if !self.edges.is_empty() {
            s += &format!("{:<10} {:<20} {:>14}\n", "edge", "evidence", "margin");
            for e in &self.edges {
                let margin = e.margin.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into());
                s += &format!("{:<10} {:<20} {:>14}\n", format!("({},{})", e.edge[0], e.edge[1]), e.kind, margin);
            }
        }
        s
    }
}

#[derive(Debug, Serialize)]
pub struct CertifyReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub certificate: CertificateSummary,
}

#[derive(Debug, Serialize)]
pub struct FallbackSummary {
    pub designed: bool,
    pub solves: usize,
    pub accepted_eps: f64,
}

#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub verdict: Verdict,
    pub method: Option<Method>,
    /// Recovered point, present when a rank-one solution was found.
    pub x: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub sdp_value: f64,
    pub lambda_ratio: f64,
    pub rank_x: usize,
    pub violation: Option<f64>,
    pub gap: Option<f64>,
    pub fallback: Option<FallbackSummary>,
}

impl SolveReport {
    pub fn certified(cert: &ExactnessCertificate, sol: &CertifiedSolution) -> Self {
        SolveReport {
            schema_version: SCHEMA_VERSION,
            command: "solve",
            verdict: cert.verdict,
            method: cert.method,
            x: Some(sol.x.iter().copied().collect()),
            objective: Some(sol.value),
            sdp_value: sol.sdp_value,
            lambda_ratio: sol.lambda_ratio,
            rank_x: sol.rank_x,
            violation: Some(sol.violation),
            gap: Some(sol.gap),
            fallback: sol.fallback.as_ref().map(|f| FallbackSummary {
                designed: f.designed,
                solves: f.path.len(),
                accepted_eps: f.accepted_eps,
            }),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("verdict: {:?}\n", self.verdict);
        s += &format!("relaxation value: {:.10}\n", self.sdp_value);
        s += &format!("rank(X) = {}, lambda2/lambda1 = {:.3e}\n", self.rank_x, self.lambda_ratio);
        match (&self.x, self.objective) {
            (Some(x), Some(v)) => {
                s += &format!("objective: {v:.10}\n");
                s += &format!("x: [{}]\n", x.iter().map(|v| format!("{v:.10}")).collect::<Vec<_>>().join(", "));
                if let (Some(viol), Some(gap)) = (self.violation, self.gap) {
                    s += &format!("violation: {viol:.3e}, gap: {gap:.3e}\n");
                }
            }
            _ => s += "no rank-one solution recovered; the relaxation value is a lower bound\n",
        }
        if let Some(f) = &self.fallback {
            s += &format!(
                "perturbation fallback: {} solves, accepted at eps = {:.3e}{}\n",
                f.solves,
                f.accepted_eps,
                if f.designed { "" } else { " (random pattern)" }
            );
        }
        s
    }
}

#[derive(Debug, Serialize)]
pub struct TridiagReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub gamma: f64,
    pub epsilon: f64,
    pub residual: f64,
    pub retries: usize,
    pub first_row_unit: bool,
    pub superdiagonal_sign_definite: bool,
    pub u: Vec<Vec<f64>>,
    pub r_k: Vec<Vec<f64>>,
    pub r_m: Vec<Vec<f64>>,
}

impl TridiagReport {
    pub fn new(t: &TridiagonalizationResult) -> Self {
        TridiagReport {
            schema_version: SCHEMA_VERSION,
            command: "tridiagonalize",
            gamma: t.gamma,
            epsilon: t.epsilon,
            residual: t.residual,
            retries: t.retries,
            first_row_unit: t.first_row_unit,
            superdiagonal_sign_definite: t.superdiagonal_sign_definite(),
            u: rows(&t.u),
            r_k: sym_rows(&t.r_k),
            r_m: sym_rows(&t.r_m),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("gamma = {:.10}, epsilon = {:.3e}\n", self.gamma, self.epsilon);
        s += &format!("residual = {:.3e}, retries = {}\n", self.residual, self.retries);
        s += &format!("superdiagonal sign-definite: {}\n", self.superdiagonal_sign_definite);
        for (name, m) in [("U", &self.u), ("R_K", &self.r_k), ("R_M", &self.r_m)] {
            s += &format!("{name} =\n");
            for row in m {
                s += &format!("  {}\n", row.iter().map(|v| format!("{v:>13.6e}")).collect::<Vec<_>>().join(" "));
            }
        }
        s
    }
}

#[derive(Debug, Serialize)]
pub struct GtrsReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub x: Vec<f64>,
    pub value: f64,
    pub sdp_value: f64,
    pub violation: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub path: GtrsPath,
    pub certificate: CertificateSummary,
}

impl GtrsReport {
    pub fn new(sol: &GtrsSolution) -> Self {
        GtrsReport {
            schema_version: SCHEMA_VERSION,
            command: "gtrs",
            x: sol.x.iter().copied().collect(),
            value: sol.value,
            sdp_value: sol.sdp_value,
            violation: sol.violation,
            gamma: sol.transform.gamma,
            epsilon: sol.transform.epsilon,
            path: sol.path,
            certificate: CertificateSummary::new(&sol.certificate, Lift::Gtrs),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("value: {:.10}\n", self.value);
        s += &format!("x: [{}]\n", self.x.iter().map(|v| format!("{v:.10}")).collect::<Vec<_>>().join(", "));
        s += &format!("relaxation value: {:.10}, violation: {:.3e}\n", self.sdp_value, self.violation);
        s += &format!("gamma = {:.10}, epsilon = {:.3e}, path = {:?}\n", self.gamma, self.epsilon, self.path);
        s += &format!(
            "certificate: {:?} via {}{}\n",
            self.certificate.verdict,
            self.certificate.method.map(|m| format!("{m:?}")).unwrap_or_else(|| "-".into()),
            if self.certificate.conditional { " (conditional)" } else { "" }
        );
        s
    }
}

#[derive(Debug, Serialize)]
pub struct GenReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub written: String,
}
