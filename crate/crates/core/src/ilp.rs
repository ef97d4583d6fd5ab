//! The mixed-integer program over occupancy flows and policy extraction.
//!
//! Variables are continuous flows `x[i, j, k, s, a]` for `j = 0` (plain
//! transitions) and every risk criterion `j >= 1` (risk-conditioned
//! transitions), plus binary selectors `z[i, k, s, a]`. Rows:
//!
//! - flow conservation for steps `1..h` and unit initial flow, per `j`;
//! - one execution-risk row per criterion, bounded by the budget minus the
//!   risk of the initial states;
//! - at most one selected action per node;
//! - every flow bound by its selector;
//! - consistency of the actions of agents shared by several interaction
//!   points.
//!
//! Consistency is enforced per shared agent `v`, step `k` and own state of
//! `v`: all nodes (of any interaction point containing `v`) whose `v`
//! component equals that state are chained, and consecutive nodes must select
//! the same action for `v`. A shared agent's action thus depends on the step
//! and its own state only.
//!
//! Solving goes through the [`MilpBackend`] trait so that concrete solver
//! libraries stay outside this crate.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::layers::{reachable_layers, LayeredSpace};
use crate::model::{MccSspInstance, StateId};
use crate::risk::{edge_risk_coefficient, execution_risk, expected_utility, Policy};

/// Slack allowed when deciding that the initial states exhaust a budget.
const BUDGET_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub lower: f64,
    pub upper: f64,
    pub objective: f64,
    pub integer: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// `(column, coefficient)`, sorted by column.
    pub terms: Vec<(usize, f64)>,
}

/// Backend-neutral sparse representation of a mixed-integer program.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatrixForm {
    pub maximize: bool,
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

impl MatrixForm {
    pub fn num_integer(&self) -> usize {
        self.columns.iter().filter(|c| c.integer).count()
    }

    pub fn num_continuous(&self) -> usize {
        self.columns.len() - self.num_integer()
    }

    /// Objective value at a column assignment.
    pub fn objective_at(&self, values: &[f64]) -> f64 {
        self.columns
            .iter()
            .zip(values)
            .map(|(c, v)| c.objective * v)
            .sum()
    }

    /// Largest bound or row violation at a column assignment.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (c, &v) in self.columns.iter().zip(values) {
            worst = worst.max(c.lower - v).max(v - c.upper);
        }
        for r in &self.rows {
            let lhs: f64 = r.terms.iter().map(|&(c, a)| a * values[c]).sum();
            if let Some(l) = r.lower {
                worst = worst.max(l - lhs);
            }
            if let Some(u) = r.upper {
                worst = worst.max(lhs - u);
            }
        }
        worst
    }

    /// CPLEX LP text, with columns named by `name`.
    pub fn to_lp_string_with(&self, mut name: impl FnMut(usize) -> String) -> String {
        let mut out = String::new();
        out.push_str(if self.maximize {
            "Maximize\n obj:"
        } else {
            "Minimize\n obj:"
        });
        let mut any = false;
        for (c, col) in self.columns.iter().enumerate() {
            if col.objective != 0.0 {
                write_term(&mut out, col.objective, &name(c), !any);
                any = true;
            }
        }
        if !any {
            out.push_str(" 0");
        }
        out.push_str("\nSubject To\n");
        for (r, row) in self.rows.iter().enumerate() {
            let mut expr = String::new();
            for (n, &(c, a)) in row.terms.iter().enumerate() {
                write_term(&mut expr, a, &name(c), n == 0);
            }
            if expr.is_empty() {
                expr.push_str(" 0");
            }
            match (row.lower, row.upper) {
                (Some(l), Some(u)) if l == u => {
                    let _ = writeln!(out, " r{r}:{expr} = {l}");
                }
                (l, u) => {
                    if let Some(l) = l {
                        let _ = writeln!(out, " r{r}_lo:{expr} >= {l}");
                    }
                    if let Some(u) = u {
                        let _ = writeln!(out, " r{r}_up:{expr} <= {u}");
                    }
                }
            }
        }
        out.push_str("Bounds\n");
        for (c, col) in self.columns.iter().enumerate() {
            if !(col.integer && col.lower == 0.0 && col.upper == 1.0) {
                let _ = writeln!(out, " {} <= {} <= {}", col.lower, name(c), col.upper);
            }
        }
        let binaries: Vec<usize> = (0..self.columns.len())
            .filter(|&c| self.columns[c].integer)
            .collect();
        if !binaries.is_empty() {
            out.push_str("Binaries\n");
            for c in binaries {
                let _ = writeln!(out, " {}", name(c));
            }
        }
        out.push_str("End\n");
        out
    }

    pub fn to_lp_string(&self) -> String {
        self.to_lp_string_with(|c| format!("c{c}"))
    }
}

fn write_term(out: &mut String, coef: f64, name: &str, first: bool) {
    if coef < 0.0 {
        let _ = write!(out, " - {} {name}", -coef);
    } else if first {
        let _ = write!(out, " {coef} {name}");
    } else {
        let _ = write!(out, " + {coef} {name}");
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RowKind {
    Flow,
    Initial,
    Risk,
    OneAction,
    Binding,
    Consistency,
}

/// Meaning of a column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ColumnKey {
    /// Flow of criterion `j` (0 = plain transitions) through edge `edge` of
    /// state `s` at step `k` of interaction `i`.
    X {
        i: usize,
        j: usize,
        k: usize,
        s: usize,
        edge: usize,
    },
    Z {
        i: usize,
        k: usize,
        s: usize,
        edge: usize,
    },
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum IlpError {
    #[error(
        "risk budget {criterion} exhausted: initial states carry risk {initial_risk} > budget {budget}"
    )]
    BudgetExhausted {
        criterion: usize,
        initial_risk: f64,
        budget: f64,
    },
    #[error("layered space does not match the instance")]
    Mismatch,
}

/// An assembled program together with the bookkeeping to read it back.
#[derive(Clone, Debug)]
pub struct IlpModel {
    pub matrix: MatrixForm,
    pub row_kinds: Vec<RowKind>,
    /// Row index of the risk row of each criterion.
    pub risk_rows: Vec<usize>,
    /// `budget - initial risk` per criterion.
    pub adjusted_budgets: Vec<f64>,
    pub initial_risk: Vec<f64>,
    pub num_criteria: usize,
    /// `slot[i][k][s]`: offset of the first edge of node `(k, s)` within the
    /// decision block of interaction `i`.
    slots: Vec<Vec<Vec<usize>>>,
    decisions: Vec<usize>,
    x_base: Vec<usize>,
    z_base: Vec<usize>,
}

impl IlpModel {
    pub fn x_col(&self, i: usize, j: usize, k: usize, s: usize, edge: usize) -> usize {
        self.x_base[i] + j * self.decisions[i] + self.slots[i][k][s] + edge
    }

    pub fn z_col(&self, i: usize, k: usize, s: usize, edge: usize) -> usize {
        self.z_base[i] + self.slots[i][k][s] + edge
    }

    pub fn num_x(&self) -> usize {
        self.decisions.iter().sum::<usize>() * (self.num_criteria + 1)
    }

    pub fn num_z(&self) -> usize {
        self.decisions.iter().sum()
    }

    pub fn rows_of(&self, kind: RowKind) -> usize {
        self.row_kinds.iter().filter(|&&k| k == kind).count()
    }

    pub fn column_key(&self, col: usize) -> ColumnKey {
        let find = |base: &[usize], span: &dyn Fn(usize) -> usize| {
            (0..base.len())
                .find(|&i| col >= base[i] && col < base[i] + span(i))
                .map(|i| (i, col - base[i]))
        };
        let locate = |i: usize, slot: usize| {
            for (k, layer) in self.slots[i].iter().enumerate() {
                // Nodes are laid out in (k, s) order, so the node is the last
                // one starting at or before the slot.
                let pos = layer.partition_point(|&start| start <= slot);
                if pos > 0 {
                    let s = pos - 1;
                    let next_start = layer
                        .get(pos)
                        .copied()
                        .or_else(|| self.slots[i].get(k + 1).and_then(|l| l.first().copied()))
                        .unwrap_or(self.decisions[i]);
                    if slot < next_start {
                        return (k, s, slot - layer[s]);
                    }
                }
            }
            unreachable!("slot outside decision block")
        };
        if let Some((i, off)) = find(&self.x_base, &|i| {
            self.decisions[i] * (self.num_criteria + 1)
        }) {
            let j = off / self.decisions[i];
            let (k, s, edge) = locate(i, off % self.decisions[i]);
            ColumnKey::X { i, j, k, s, edge }
        } else if let Some((i, off)) = find(&self.z_base, &|i| self.decisions[i]) {
            let (k, s, edge) = locate(i, off);
            ColumnKey::Z { i, k, s, edge }
        } else {
            panic!("column {col} out of range")
        }
    }

    pub fn column_name(&self, col: usize) -> String {
        match self.column_key(col) {
            ColumnKey::X { i, j, k, s, edge } => format!("x_{i}_{j}_{k}_{s}_{edge}"),
            ColumnKey::Z { i, k, s, edge } => format!("z_{i}_{k}_{s}_{edge}"),
        }
    }

    pub fn to_lp_string(&self) -> String {
        self.matrix.to_lp_string_with(|c| self.column_name(c))
    }

    /// Left-hand side of the risk row of criterion `j` at a column assignment.
    pub fn risk_row_value(&self, j: usize, values: &[f64]) -> f64 {
        self.matrix.rows[self.risk_rows[j]]
            .terms
            .iter()
            .map(|&(c, a)| a * values[c])
            .sum()
    }

    /// Column assignment corresponding to a deterministic policy: flows for
    /// every criterion and selectors on the chosen edges.
    pub fn columns_from_policy(
        &self,
        space: &LayeredSpace,
        policy: &Policy,
    ) -> Result<Vec<f64>, crate::risk::RiskError> {
        let mut values = vec![0.0; self.matrix.columns.len()];
        for j in 0..=self.num_criteria {
            let crit = if j == 0 { None } else { Some(j - 1) };
            let flows = crate::risk::occupancy_flows(space, policy, crit)?;
            for (i, fi) in flows.iter().enumerate() {
                for (k, fk) in fi.iter().enumerate() {
                    for (s, fs) in fk.iter().enumerate() {
                        for (e, &x) in fs.iter().enumerate() {
                            values[self.x_col(i, j, k, s, e)] = x;
                        }
                    }
                }
            }
        }
        for (i, il) in space.interactions.iter().enumerate() {
            for k in 0..space.horizon {
                for s in 0..il.layers[k].len() {
                    if let Some(a) = policy.action(i, k, s) {
                        if let Ok(e) =
                            il.layers[k].edges[s].binary_search_by_key(&a, |e| e.joint_action)
                        {
                            values[self.z_col(i, k, s, e)] = 1.0;
                        }
                    }
                }
            }
        }
        Ok(values)
    }
}

/// Assembles the program for `instance` over its reachable layers.
pub fn build_ilp(instance: &MccSspInstance, space: &LayeredSpace) -> Result<IlpModel, IlpError> {
    let n_crit = space.num_criteria;
    if n_crit != instance.num_criteria()
        || space.interactions.len() != instance.interactions.len()
        || space.horizon != instance.horizon
    {
        return Err(IlpError::Mismatch);
    }
    let h = space.horizon;

    let mut initial_risk = Vec::with_capacity(n_crit);
    let mut adjusted = Vec::with_capacity(n_crit);
    for j in 0..n_crit {
        let r0 = space.initial_risk(j);
        let budget = instance.risk_budgets[j];
        let rest = budget - r0;
        if rest < -BUDGET_SLACK {
            return Err(IlpError::BudgetExhausted {
                criterion: j,
                initial_risk: r0,
                budget,
            });
        }
        initial_risk.push(r0);
        adjusted.push(rest.max(0.0));
    }

    // Column layout: all x blocks, then all z blocks.
    let mut slots = Vec::with_capacity(space.interactions.len());
    let mut decisions = Vec::with_capacity(space.interactions.len());
    for il in &space.interactions {
        let mut next = 0;
        let per_layer: Vec<Vec<usize>> = il.layers[..h]
            .iter()
            .map(|layer| {
                layer
                    .edges
                    .iter()
                    .map(|edges| {
                        let start = next;
                        next += edges.len();
                        start
                    })
                    .collect()
            })
            .collect();
        slots.push(per_layer);
        decisions.push(next);
    }
    let mut x_base = Vec::with_capacity(decisions.len());
    let mut offset = 0;
    for &d in &decisions {
        x_base.push(offset);
        offset += d * (n_crit + 1);
    }
    let mut z_base = Vec::with_capacity(decisions.len());
    for &d in &decisions {
        z_base.push(offset);
        offset += d;
    }

    let mut model = IlpModel {
        matrix: MatrixForm {
            maximize: true,
            columns: Vec::with_capacity(offset),
            rows: Vec::new(),
        },
        row_kinds: Vec::new(),
        risk_rows: Vec::new(),
        adjusted_budgets: adjusted,
        initial_risk,
        num_criteria: n_crit,
        slots,
        decisions,
        x_base,
        z_base,
    };

    for il in &space.interactions {
        for j in 0..=n_crit {
            for layer in &il.layers[..h] {
                for edges in &layer.edges {
                    for e in edges {
                        model.matrix.columns.push(Column {
                            lower: 0.0,
                            upper: 1.0,
                            objective: if j == 0 { e.utility } else { 0.0 },
                            integer: false,
                        });
                    }
                }
            }
        }
    }
    for &d in &model.decisions {
        for _ in 0..d {
            model.matrix.columns.push(Column {
                lower: 0.0,
                upper: 1.0,
                objective: 0.0,
                integer: true,
            });
        }
    }

    let mut rows: Vec<(RowKind, Row)> = Vec::new();

    // Flow conservation and initial flow.
    for (i, il) in space.interactions.iter().enumerate() {
        for j in 0..=n_crit {
            let edges0 = &il.layers[0].edges[0];
            rows.push((
                RowKind::Initial,
                Row {
                    lower: Some(1.0),
                    upper: Some(1.0),
                    terms: (0..edges0.len())
                        .map(|e| (model.x_col(i, j, 0, 0, e), 1.0))
                        .collect(),
                },
            ));
            for k in 1..h {
                let layer = &il.layers[k];
                let mut terms: Vec<Vec<(usize, f64)>> = (0..layer.len())
                    .map(|s| {
                        (0..layer.edges[s].len())
                            .map(|e| (model.x_col(i, j, k, s, e), 1.0))
                            .collect()
                    })
                    .collect();
                let prev = &il.layers[k - 1];
                for (sp, edges) in prev.edges.iter().enumerate() {
                    let survive = if j == 0 {
                        1.0
                    } else {
                        1.0 - prev.risk[j - 1][sp]
                    };
                    for (e, edge) in edges.iter().enumerate() {
                        for &(t, q) in &edge.successors {
                            let coef = q * survive;
                            if coef != 0.0 {
                                terms[t].push((model.x_col(i, j, k - 1, sp, e), -coef));
                            }
                        }
                    }
                }
                for mut t in terms {
                    t.sort_by_key(|&(c, _)| c);
                    rows.push((
                        RowKind::Flow,
                        Row {
                            lower: Some(0.0),
                            upper: Some(0.0),
                            terms: t,
                        },
                    ));
                }
            }
        }
    }

    // Risk rows.
    for j in 0..n_crit {
        let mut terms = Vec::new();
        for (i, il) in space.interactions.iter().enumerate() {
            for k in 0..h {
                for (s, edges) in il.layers[k].edges.iter().enumerate() {
                    for e in 0..edges.len() {
                        let c = edge_risk_coefficient(space, i, k, s, e, j);
                        if c != 0.0 {
                            terms.push((model.x_col(i, j + 1, k, s, e), c));
                        }
                    }
                }
            }
        }
        model.risk_rows.push(rows.len());
        rows.push((
            RowKind::Risk,
            Row {
                lower: None,
                upper: Some(model.adjusted_budgets[j]),
                terms,
            },
        ));
    }

    // One action per node, and selectors binding every flow.
    for (i, il) in space.interactions.iter().enumerate() {
        for k in 0..h {
            for (s, edges) in il.layers[k].edges.iter().enumerate() {
                rows.push((
                    RowKind::OneAction,
                    Row {
                        lower: None,
                        upper: Some(1.0),
                        terms: (0..edges.len())
                            .map(|e| (model.z_col(i, k, s, e), 1.0))
                            .collect(),
                    },
                ));
            }
        }
    }
    for (i, il) in space.interactions.iter().enumerate() {
        for j in 0..=n_crit {
            for k in 0..h {
                for (s, edges) in il.layers[k].edges.iter().enumerate() {
                    for e in 0..edges.len() {
                        rows.push((
                            RowKind::Binding,
                            Row {
                                lower: None,
                                upper: Some(0.0),
                                terms: vec![
                                    (model.x_col(i, j, k, s, e), 1.0),
                                    (model.z_col(i, k, s, e), -1.0),
                                ],
                            },
                        ));
                    }
                }
            }
        }
    }

    // Consistency of shared agents.
    let mut membership: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (i, il) in space.interactions.iter().enumerate() {
        for (pos, &v) in il.members.iter().enumerate() {
            membership.entry(v).or_default().push((i, pos));
        }
    }
    for (&v, places) in &membership {
        if places.len() < 2 {
            continue;
        }
        let n_actions = instance.agents[v].num_actions();
        for k in 0..h {
            let mut groups: BTreeMap<StateId, Vec<(usize, usize, usize)>> = BTreeMap::new();
            for &(i, pos) in places {
                for (s, joint) in space.interactions[i].layers[k].states.iter().enumerate() {
                    groups.entry(joint[pos]).or_default().push((i, pos, s));
                }
            }
            for nodes in groups.values() {
                for pair in nodes.windows(2) {
                    let (i1, p1, s1) = pair[0];
                    let (i2, p2, s2) = pair[1];
                    for a in 0..n_actions {
                        let mut terms = Vec::new();
                        for (e, edge) in space.interactions[i1].layers[k].edges[s1]
                            .iter()
                            .enumerate()
                        {
                            if space.interactions[i1]
                                .codec
                                .component(edge.joint_action, p1)
                                == a
                            {
                                terms.push((model.z_col(i1, k, s1, e), 1.0));
                            }
                        }
                        for (e, edge) in space.interactions[i2].layers[k].edges[s2]
                            .iter()
                            .enumerate()
                        {
                            if space.interactions[i2]
                                .codec
                                .component(edge.joint_action, p2)
                                == a
                            {
                                terms.push((model.z_col(i2, k, s2, e), -1.0));
                            }
                        }
                        if terms.is_empty() {
                            continue;
                        }
                        terms.sort_by_key(|&(c, _)| c);
                        rows.push((
                            RowKind::Consistency,
                            Row {
                                lower: Some(0.0),
                                upper: Some(0.0),
                                terms,
                            },
                        ));
                    }
                }
            }
        }
    }

    for (kind, row) in rows {
        model.row_kinds.push(kind);
        model.matrix.rows.push(row);
    }
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub time_limit_s: Option<f64>,
    pub mip_rel_gap: f64,
    pub feasibility_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            time_limit_s: None,
            mip_rel_gap: 1e-6,
            feasibility_tol: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    /// Stopped at the time limit; `values` holds the incumbent if any.
    TimeLimit,
    Other,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub objective: Option<f64>,
    pub values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("solver backend failed: {0}")]
pub struct BackendError(pub String);

/// A mixed-integer linear programming library.
pub trait MilpBackend {
    fn name(&self) -> &str;

    fn solve(
        &mut self,
        problem: &MatrixForm,
        options: &SolveOptions,
    ) -> Result<MilpSolution, BackendError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    BudgetExhausted,
    /// Time limit hit; the result carries the best known solution.
    TimeLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Objective value reported by the backend.
    pub objective: f64,
    /// Expected utility of the extracted policy.
    pub utility: f64,
    pub policy: Option<Policy>,
    /// Raw column values.
    pub flows: Vec<f64>,
    /// Execution risk of the extracted policy per criterion.
    pub risks: Vec<f64>,
}

impl SolveResult {
    fn without_solution(status: SolveStatus, n_crit: usize) -> Self {
        SolveResult {
            status,
            objective: 0.0,
            utility: 0.0,
            policy: None,
            flows: Vec::new(),
            risks: vec![0.0; n_crit],
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("time limit reached before any feasible solution was found")]
    NoIncumbent,
    #[error("solver returned an unusable status")]
    Unusable,
    #[error(transparent)]
    Ilp(#[from] IlpError),
    #[error(transparent)]
    Risk(#[from] crate::risk::RiskError),
}

/// The policy that takes the lowest-numbered available joint action
/// everywhere (the all-wait plan in domains whose action 0 is waiting).
pub fn default_policy(space: &LayeredSpace) -> Policy {
    Policy::deterministic(space, |i, k, s| {
        space.interactions[i].layers[k].edges[s][0].joint_action
    })
}

/// Reads a deterministic policy off the selectors. Nodes without a selected
/// edge (which carry no flow) get the lowest available joint action.
pub fn extract_policy(space: &LayeredSpace, model: &IlpModel, values: &[f64]) -> Policy {
    Policy::deterministic(space, |i, k, s| {
        let edges = &space.interactions[i].layers[k].edges[s];
        let chosen = (0..edges.len()).find(|&e| values[model.z_col(i, k, s, e)] >= 0.5);
        edges[chosen.unwrap_or(0)].joint_action
    })
}

/// Solves a built program and evaluates the extracted policy.
pub fn solve(
    space: &LayeredSpace,
    model: &IlpModel,
    backend: &mut dyn MilpBackend,
    options: &SolveOptions,
) -> Result<SolveResult, SolveError> {
    let sol = backend.solve(&model.matrix, options)?;
    let status = match sol.status {
        MilpStatus::Optimal => SolveStatus::Optimal,
        MilpStatus::Infeasible => {
            return Ok(SolveResult::without_solution(
                SolveStatus::Infeasible,
                model.num_criteria,
            ))
        }
        MilpStatus::TimeLimit => SolveStatus::TimeLimit,
        MilpStatus::Other => return Err(SolveError::Unusable),
    };
    let values = match sol.values {
        Some(v) if v.len() == model.matrix.columns.len() => v,
        Some(_) => return Err(SolveError::Unusable),
        None if status == SolveStatus::TimeLimit => return Err(SolveError::NoIncumbent),
        None => return Err(SolveError::Unusable),
    };
    let policy = extract_policy(space, model, &values);
    let risks = (0..model.num_criteria)
        .map(|j| execution_risk(space, &policy, j))
        .collect::<Result<Vec<_>, _>>()?;
    let utility = expected_utility(space, &policy)?;
    Ok(SolveResult {
        status,
        objective: sol
            .objective
            .unwrap_or_else(|| model.matrix.objective_at(&values)),
        utility,
        policy: Some(policy),
        flows: values,
        risks,
    })
}

/// Builds layers and the program for `instance` and solves it. Exhausted
/// budgets are reported as a status rather than an error.
pub fn plan(
    instance: &MccSspInstance,
    backend: &mut dyn MilpBackend,
    options: &SolveOptions,
) -> Result<(LayeredSpace, SolveResult), SolveError> {
    let space = reachable_layers(instance);
    match build_ilp(instance, &space) {
        Ok(model) => {
            let result = solve(&space, &model, backend, options)?;
            Ok((space, result))
        }
        Err(IlpError::BudgetExhausted { .. }) => {
            let n = instance.num_criteria();
            Ok((
                space,
                SolveResult::without_solution(SolveStatus::BudgetExhausted, n),
            ))
        }
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InteractionPoint, JointRiskTable, NoRisk, TabularMdp};
    use crate::risk::occupancy_flows;
    use alloc::sync::Arc;

    /// One state, two actions, one criterion, h = 1.
    fn risky_safe(budget: f64) -> MccSspInstance {
        let agent = TabularMdp {
            states: vec!["s0".into(), "crash".into(), "ok".into()],
            actions: vec!["risky".into(), "safe".into()],
            transitions: vec![
                vec![vec![(1, 1.0)], vec![(2, 1.0)]],
                vec![vec![(1, 1.0)], vec![(1, 1.0)]],
                vec![vec![(2, 1.0)], vec![(2, 1.0)]],
            ],
            utility: vec![vec![10.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]],
            initial_state: 0,
        };
        let mut table = JointRiskTable::default();
        table.entries.insert(vec![1], 0.2);
        let mut inst = MccSspInstance::new(1, vec![budget]);
        let a = inst.add_agent("a", Arc::new(agent));
        inst.add_interaction(InteractionPoint::new(vec![a], vec![Arc::new(table)]));
        inst.assign_default_utility_owners();
        inst
    }

    #[test]
    fn variable_and_row_counts() {
        let inst = risky_safe(0.1);
        let space = reachable_layers(&inst);
        let model = build_ilp(&inst, &space).unwrap();
        assert_eq!(model.num_x(), 4);
        assert_eq!(model.num_z(), 2);
        assert_eq!(model.matrix.num_continuous(), 4);
        assert_eq!(model.matrix.num_integer(), 2);
        assert_eq!(model.rows_of(RowKind::Binding), 4);
        assert_eq!(model.rows_of(RowKind::Risk), 1);
        assert_eq!(model.rows_of(RowKind::Initial), 2);
        assert_eq!(model.rows_of(RowKind::Flow), 0);
        assert_eq!(model.rows_of(RowKind::Consistency), 0);
        for c in 0..model.matrix.columns.len() {
            let key = model.column_key(c);
            let back = match key {
                ColumnKey::X { i, j, k, s, edge } => model.x_col(i, j, k, s, edge),
                ColumnKey::Z { i, k, s, edge } => model.z_col(i, k, s, edge),
            };
            assert_eq!(back, c);
        }
        let lp = model.to_lp_string();
        assert!(lp.starts_with("Maximize"));
        assert!(lp.contains("Binaries\n z_0_0_0_0\n z_0_0_0_1\n"));
    }

    #[test]
    fn exhausted_budget() {
        let mut inst = risky_safe(0.1);
        let mut table = JointRiskTable::default();
        table.entries.insert(vec![0], 0.2);
        inst.interactions[0].risks[0] = Arc::new(table);
        let space = reachable_layers(&inst);
        assert!(matches!(
            build_ilp(&inst, &space),
            Err(IlpError::BudgetExhausted { criterion: 0, .. })
        ));
    }

    #[test]
    fn shared_agent_consistency_rows() {
        let two = TabularMdp {
            states: vec!["s".into()],
            actions: vec!["a".into(), "b".into()],
            transitions: vec![vec![vec![(0, 1.0)], vec![(0, 1.0)]]],
            utility: vec![vec![1.0, 0.0]],
            initial_state: 0,
        };
        let mut inst = MccSspInstance::new(1, vec![0.5]);
        let u = inst.add_agent("u", Arc::new(two.clone()));
        let v = inst.add_agent("v", Arc::new(two.clone()));
        let w = inst.add_agent("w", Arc::new(two));
        inst.add_interaction(InteractionPoint::new(vec![u, v], vec![Arc::new(NoRisk)]));
        inst.add_interaction(InteractionPoint::new(vec![v, w], vec![Arc::new(NoRisk)]));
        inst.assign_default_utility_owners();
        let space = reachable_layers(&inst);
        let model = build_ilp(&inst, &space).unwrap();
        assert_eq!(model.rows_of(RowKind::Consistency), 2);
    }

    #[test]
    fn policy_columns_satisfy_model() {
        let inst = risky_safe(0.3);
        let space = reachable_layers(&inst);
        let model = build_ilp(&inst, &space).unwrap();
        let pol = Policy::deterministic(&space, |_, _, _| 0);
        let values = model.columns_from_policy(&space, &pol).unwrap();
        assert!(model.matrix.max_violation(&values) < 1e-12);
        assert!((model.matrix.objective_at(&values) - 10.0).abs() < 1e-12);
        let flows = occupancy_flows(&space, &pol, Some(0)).unwrap();
        let er = execution_risk(&space, &pol, 0).unwrap();
        assert!((model.risk_row_value(0, &values) + model.initial_risk[0] - er).abs() < 1e-12);
        assert_eq!(flows[0][0][0], vec![1.0, 0.0]);
        let extracted = extract_policy(&space, &model, &values);
        assert_eq!(extracted, pol);
        // Under the tight budget the same assignment breaks the risk row.
        let tight = build_ilp(&risky_safe(0.1), &space).unwrap();
        assert!(tight.matrix.max_violation(&values) > 0.09);
    }
}
