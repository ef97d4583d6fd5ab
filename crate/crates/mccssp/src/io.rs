//! File formats: instance documents, flow tubes, trajectory CSV, binary risk
//! tables, scenario files and CSV output.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mccssp_core::intersection::scenario::Scenario;
use mccssp_core::layers::reachable_layers;
use mccssp_core::model::{
    validate_instance, InteractionPoint, JointRiskTable, MccSspInstance, NoRisk, PairwiseRiskTable,
    RiskCoupling, RiskModel, StateId, TabularMdp,
};
use mccssp_core::pft::{Axis, Pft, Point, RiskTable};
use serde::{Deserialize, Serialize};

/// Version written to and accepted from every structured file.
pub const FORMAT_VERSION: u32 = 1;
const RISK_TABLE_MAGIC: &str = "mccssp-risk-table";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {error}")]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: unsupported format_version {found} (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: line {line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },
}

fn invalid(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Invalid {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|error| IoError::Io {
        path: path.to_path_buf(),
        error,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    fs::write(path, bytes).map_err(|error| IoError::Io {
        path: path.to_path_buf(),
        error,
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn check_version(path: &Path, found: u32) -> Result<(), IoError> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(IoError::Version {
            path: path.to_path_buf(),
            found,
        })
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

// ---------------------------------------------------------------- instances

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDocument {
    pub format_version: u32,
    pub horizon: usize,
    pub risk_budgets: Vec<f64>,
    #[serde(default)]
    pub risk_coupling_mode: RiskCoupling,
    #[serde(default = "default_true")]
    pub include_terminal_risk: bool,
    pub agents: Vec<AgentDocument>,
    pub interactions: Vec<InteractionDocument>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDocument {
    pub name: String,
    pub states: Vec<String>,
    pub actions: Vec<String>,
    /// `transitions[state][action]` lists `[successor, probability]` pairs.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// `utility[state][action]`.
    pub utility: Vec<Vec<f64>>,
    #[serde(default)]
    pub initial_state: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionDocument {
    pub members: Vec<usize>,
    /// Which members' utility this point counts. Given for every
    /// interaction or for none; if absent, each agent's first interaction
    /// counts it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility_owner: Option<Vec<bool>>,
    /// One risk model per criterion.
    pub risks: Vec<RiskDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskDocument {
    None,
    /// `[[member states...], risk]` entries; missing joint states are safe.
    Joint {
        entries: Vec<(Vec<StateId>, f64)>,
    },
    Pairwise {
        pairs: Vec<PairDocument>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairDocument {
    /// Positions of the pair within the interaction's members.
    pub members: (usize, usize),
    /// `[[state a, state b], risk]` entries.
    pub entries: Vec<((StateId, StateId), f64)>,
}

/// Builds and validates the instance described by a document.
pub fn instance_from_document(
    doc: &InstanceDocument,
    path: &Path,
) -> Result<MccSspInstance, IoError> {
    check_version(path, doc.format_version)?;
    let mut inst = MccSspInstance::new(doc.horizon, doc.risk_budgets.clone());
    inst.coupling = doc.risk_coupling_mode;
    inst.include_terminal_risk = doc.include_terminal_risk;
    for a in &doc.agents {
        let mut mdp = TabularMdp {
            states: a.states.clone(),
            actions: a.actions.clone(),
            transitions: a.transitions.clone(),
            utility: a.utility.clone(),
            initial_state: a.initial_state,
        };
        mdp.renormalize();
        inst.add_agent(a.name.clone(), Arc::new(mdp));
    }
    let owners_given = doc
        .interactions
        .iter()
        .filter(|i| i.utility_owner.is_some())
        .count();
    if owners_given != 0 && owners_given != doc.interactions.len() {
        return Err(invalid(
            path,
            "utility_owner must be given for every interaction or for none",
        ));
    }
    for (n, it) in doc.interactions.iter().enumerate() {
        if let Some(&m) = it.members.iter().find(|&&m| m >= doc.agents.len()) {
            return Err(invalid(path, format!("interaction {n}: unknown agent {m}")));
        }
        let mut risks: Vec<Arc<dyn RiskModel>> = Vec::with_capacity(it.risks.len());
        for r in &it.risks {
            risks.push(match r {
                RiskDocument::None => Arc::new(NoRisk),
                RiskDocument::Joint { entries } => {
                    let mut table = JointRiskTable::default();
                    for (joint, v) in entries {
                        if joint.len() != it.members.len() {
                            return Err(invalid(
                                path,
                                format!("interaction {n}: joint state {joint:?} does not match {} members", it.members.len()),
                            ));
                        }
                        table.entries.insert(joint.clone(), *v);
                    }
                    Arc::new(table)
                }
                RiskDocument::Pairwise { pairs } => {
                    let mut table = PairwiseRiskTable::default();
                    for p in pairs {
                        let (a, b) = p.members;
                        if a >= it.members.len() || b >= it.members.len() || a == b {
                            return Err(invalid(path, format!("interaction {n}: bad pair positions ({a}, {b})")));
                        }
                        table.pairs.push((p.members, p.entries.iter().copied().collect()));
                    }
                    Arc::new(table)
                }
            });
        }
        let mut point = InteractionPoint::new(it.members.clone(), risks);
        if let Some(owner) = &it.utility_owner {
            if owner.len() != it.members.len() {
                return Err(invalid(
                    path,
                    format!("interaction {n}: utility_owner has the wrong length"),
                ));
            }
            point.utility_owner = owner.clone();
        }
        inst.add_interaction(point);
    }
    if owners_given == 0 {
        inst.assign_default_utility_owners();
    }
    let report = validate_instance(&inst);
    if !report.is_valid() {
        return Err(invalid(path, report.messages().join("; ")));
    }
    Ok(inst)
}

/// Describes an instance as a document. Agents without a tabular form are
/// materialized over the horizon, and risks are tabulated over the
/// reachable joint states.
pub fn instance_to_document(inst: &MccSspInstance) -> InstanceDocument {
    let mut maps: Vec<BTreeMap<StateId, usize>> = Vec::with_capacity(inst.agents.len());
    let mut agents = Vec::with_capacity(inst.agents.len());
    for (name, agent) in inst.agent_names.iter().zip(&inst.agents) {
        let (mdp, map) = match agent.as_tabular() {
            Some(t) => (
                t.clone(),
                (0..t.states.len()).map(|s| (s as StateId, s)).collect(),
            ),
            None => TabularMdp::materialize_indexed(agent.as_ref(), inst.horizon),
        };
        agents.push(AgentDocument {
            name: name.clone(),
            states: mdp.states,
            actions: mdp.actions,
            transitions: mdp.transitions,
            utility: mdp.utility,
            initial_state: mdp.initial_state,
        });
        maps.push(map);
    }
    let space = reachable_layers(inst);
    let interactions = inst
        .interactions
        .iter()
        .zip(&space.interactions)
        .map(|(point, il)| {
            let risks = (0..inst.num_criteria())
                .map(|j| {
                    let Some(model) = point.risks.get(j) else {
                        return RiskDocument::None;
                    };
                    let mut entries = BTreeMap::new();
                    for joint in il.layers.iter().flat_map(|l| &l.states) {
                        let r = model.state_risk(joint);
                        if r != 0.0 {
                            let mapped: Vec<StateId> = joint
                                .iter()
                                .zip(&point.members)
                                .map(|(s, &m)| maps[m][s] as StateId)
                                .collect();
                            entries.insert(mapped, r);
                        }
                    }
                    if entries.is_empty() {
                        RiskDocument::None
                    } else {
                        RiskDocument::Joint {
                            entries: entries.into_iter().collect(),
                        }
                    }
                })
                .collect();
            InteractionDocument {
                members: point.members.clone(),
                utility_owner: Some(point.utility_owner.clone()),
                risks,
            }
        })
        .collect();
    InstanceDocument {
        format_version: FORMAT_VERSION,
        horizon: inst.horizon,
        risk_budgets: inst.risk_budgets.clone(),
        risk_coupling_mode: inst.coupling,
        include_terminal_risk: inst.include_terminal_risk,
        agents,
        interactions,
    }
}

pub fn parse_instance(text: &str, path: &Path) -> Result<MccSspInstance, IoError> {
    let doc: InstanceDocument = parse_json(path, text)?;
    instance_from_document(&doc, path)
}

pub fn read_instance(path: &Path) -> Result<MccSspInstance, IoError> {
    parse_instance(&read_text(path)?, path)
}

pub fn write_instance(path: &Path, inst: &MccSspInstance) -> Result<(), IoError> {
    write_bytes(path, to_json(&instance_to_document(inst)).as_bytes())
}

// ------------------------------------------------------------- flow tubes

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PftDocument {
    pub format_version: u32,
    #[serde(default)]
    pub label: String,
    pub timestep: f64,
    pub means: Vec<Point>,
    /// Row-major 2x2 covariances.
    pub covariances: Vec<[f64; 4]>,
}

impl From<&Pft> for PftDocument {
    fn from(p: &Pft) -> Self {
        PftDocument {
            format_version: FORMAT_VERSION,
            label: p.label.clone(),
            timestep: p.timestep,
            means: p.means.clone(),
            covariances: p
                .covariances
                .iter()
                .map(|c| [c[0][0], c[0][1], c[1][0], c[1][1]])
                .collect(),
        }
    }
}

pub fn parse_pft(text: &str, path: &Path) -> Result<Pft, IoError> {
    let doc: PftDocument = parse_json(path, text)?;
    check_version(path, doc.format_version)?;
    let covs = doc
        .covariances
        .iter()
        .map(|c| [[c[0], c[1]], [c[2], c[3]]])
        .collect();
    Pft::new(doc.timestep, doc.means, covs, doc.label).map_err(|e| invalid(path, e.to_string()))
}

pub fn read_pft(path: &Path) -> Result<Pft, IoError> {
    parse_pft(&read_text(path)?, path)
}

pub fn write_pft(path: &Path, pft: &Pft) -> Result<(), IoError> {
    write_bytes(path, to_json(&PftDocument::from(pft)).as_bytes())
}

// ----------------------------------------------------------- trajectories

/// One recorded trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub times: Vec<f64>,
    pub points: Vec<Point>,
}

impl Trajectory {
    /// Median spacing of the time stamps.
    pub fn timestep(&self) -> Option<f64> {
        let mut d: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        if d.is_empty() {
            return None;
        }
        d.sort_by(f64::total_cmp);
        Some(d[d.len() / 2])
    }
}

#[derive(Deserialize)]
struct TrajectoryRow {
    #[serde(default, alias = "trajectory")]
    id: Option<String>,
    t: f64,
    x: f64,
    y: f64,
}

/// Reads `t,x,y` rows. An optional `id` column splits the file into
/// several trajectories, in order of first appearance; rows are sorted by
/// time within each.
pub fn parse_trajectories<R: Read>(reader: R, path: &Path) -> Result<Vec<Trajectory>, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(f64, Point)>> = BTreeMap::new();
    for rec in rdr.deserialize::<TrajectoryRow>() {
        let row = rec.map_err(|e| IoError::Csv {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !(row.t.is_finite() && row.x.is_finite() && row.y.is_finite()) {
            return Err(invalid(path, "non-finite trajectory value"));
        }
        let id = row.id.unwrap_or_default();
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((row.t, [row.x, row.y]));
    }
    if order.is_empty() {
        return Err(invalid(path, "no trajectory rows"));
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let mut r = rows.remove(&id).unwrap_or_default();
            r.sort_by(|a, b| a.0.total_cmp(&b.0));
            Trajectory {
                id,
                times: r.iter().map(|p| p.0).collect(),
                points: r.iter().map(|p| p.1).collect(),
            }
        })
        .collect())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, IoError> {
    let file = fs::File::open(path).map_err(|error| IoError::Io {
        path: path.to_path_buf(),
        error,
    })?;
    parse_trajectories(file, path)
}

// ------------------------------------------------------------ risk tables

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RiskTableHeader {
    format_version: u32,
    dims: Vec<usize>,
    maneuvers: Vec<String>,
    seed: u64,
    n: usize,
    window: usize,
    tube_lens: Vec<usize>,
    strides: Vec<usize>,
}

/// A text line naming the format, a JSON header line, then the values as
/// little-endian `f64` in row-major order.
pub fn encode_risk_table(table: &RiskTable) -> Vec<u8> {
    let header = RiskTableHeader {
        format_version: FORMAT_VERSION,
        dims: table.dims(),
        maneuvers: table.maneuvers.clone(),
        seed: table.seed,
        n: table.samples,
        window: table.window,
        tube_lens: table.axes.iter().map(|a| a.tube_len).collect(),
        strides: table.axes.iter().map(|a| a.stride).collect(),
    };
    let mut out = format!(
        "{RISK_TABLE_MAGIC}\n{}\n",
        serde_json::to_string(&header).expect("serializable")
    )
    .into_bytes();
    for v in &table.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_risk_table(bytes: &[u8], path: &Path) -> Result<RiskTable, IoError> {
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    let magic = lines.next().unwrap_or_default();
    if magic != RISK_TABLE_MAGIC.as_bytes() {
        return Err(invalid(path, "not a risk table file"));
    }
    let header_line = lines
        .next()
        .ok_or_else(|| invalid(path, "missing header"))?;
    let header_text =
        std::str::from_utf8(header_line).map_err(|_| invalid(path, "header is not UTF-8"))?;
    let header: RiskTableHeader = parse_json(path, header_text)?;
    check_version(path, header.format_version)?;
    let k = header.dims.len();
    if header.maneuvers.len() != k || header.tube_lens.len() != k || header.strides.len() != k {
        return Err(invalid(path, "header arrays differ in length"));
    }
    let axes: Vec<Axis> = header
        .tube_lens
        .iter()
        .zip(&header.strides)
        .map(|(&tube_len, &stride)| Axis { tube_len, stride })
        .collect();
    if axes.iter().any(|a| a.tube_len == 0 || a.stride == 0)
        || axes.iter().map(Axis::size).ne(header.dims.iter().copied())
    {
        return Err(invalid(path, "dims do not match tube lengths and strides"));
    }
    let body = lines.next().unwrap_or_default();
    let total: usize = header.dims.iter().product();
    if body.len() != total * 8 {
        return Err(invalid(
            path,
            format!("expected {} value bytes, found {}", total * 8, body.len()),
        ));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid(path, "risk values must lie in [0,1]"));
    }
    Ok(RiskTable {
        maneuvers: header.maneuvers,
        axes,
        window: header.window,
        seed: header.seed,
        samples: header.n,
        values,
    })
}

pub fn read_risk_table(path: &Path) -> Result<RiskTable, IoError> {
    let bytes = fs::read(path).map_err(|error| IoError::Io {
        path: path.to_path_buf(),
        error,
    })?;
    decode_risk_table(&bytes, path)
}

pub fn write_risk_table(path: &Path, table: &RiskTable) -> Result<(), IoError> {
    write_bytes(path, &encode_risk_table(table))
}

// -------------------------------------------------------------- scenarios

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ScenarioDocument {
    format_version: u32,
    #[serde(flatten)]
    scenario: Scenario,
}

/// Reads a scenario and the flow tubes it references. Tube paths are
/// relative to the scenario file.
pub fn read_scenario(path: &Path) -> Result<(Scenario, BTreeMap<String, Pft>), IoError> {
    let doc: ScenarioDocument = parse_json(path, &read_text(path)?)?;
    check_version(path, doc.format_version)?;
    let scenario = doc.scenario;
    scenario
        .validate()
        .map_err(|e| invalid(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut tubes = BTreeMap::new();
    for (label, file) in &scenario.tube_files {
        let mut pft = read_pft(&base.join(file))?;
        if pft.label.is_empty() {
            pft.label = label.clone();
        }
        tubes.insert(label.clone(), pft);
    }
    Ok((scenario, tubes))
}

pub fn write_scenario(path: &Path, scenario: &Scenario) -> Result<(), IoError> {
    let doc = ScenarioDocument {
        format_version: FORMAT_VERSION,
        scenario: scenario.clone(),
    };
    write_bytes(path, to_json(&doc).as_bytes())
}

// -------------------------------------------------------------------- CSV

/// Writes `rows` as CSV with a leading `# comment` line.
pub fn write_csv<W: Write, T: Serialize>(
    out: W,
    comment: &str,
    rows: &[T],
) -> Result<(), std::io::Error> {
    let mut out = out;
    writeln!(out, "# {comment}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn risky_safe() -> &'static str {
        r#"{
          "format_version": 1,
          "horizon": 1,
          "risk_budgets": [0.1],
          "risk_coupling_mode": "exclusive",
          "agents": [{
            "name": "a",
            "states": ["s0", "crash", "ok"],
            "actions": ["risky", "safe"],
            "transitions": [[[[1, 1.0]], [[2, 1.0]]], [[[1, 1.0]], [[1, 1.0]]], [[[2, 1.0]], [[2, 1.0]]]],
            "utility": [[10.0, 1.0], [0.0, 0.0], [0.0, 0.0]]
          }],
          "interactions": [{"members": [0], "risks": [{"kind": "joint", "entries": [[[1], 0.2]]}]}]
        }"#
    }

    #[test]
    fn instance_round_trip() {
        let p = Path::new("mem.json");
        let inst = parse_instance(risky_safe(), p).unwrap();
        assert_eq!(inst.agents.len(), 1);
        assert_eq!(inst.interactions[0].risks[0].state_risk(&[1]), 0.2);
        let doc = instance_to_document(&inst);
        let again = instance_from_document(&doc, p).unwrap();
        assert_eq!(instance_to_document(&again), doc);
    }

    #[test]
    fn instance_errors_name_the_problem() {
        let p = Path::new("bad.json");
        let err = parse_instance("{\"format_version\": 1,", p).unwrap_err();
        assert!(matches!(err, IoError::Json { line: 1, .. }), "{err}");
        let err = parse_instance(
            &risky_safe().replace("\"format_version\": 1", "\"format_version\": 9"),
            p,
        )
        .unwrap_err();
        assert!(matches!(err, IoError::Version { found: 9, .. }));
        let err = parse_instance(
            &risky_safe().replace("\"members\": [0]", "\"members\": [3]"),
            p,
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown agent 3"), "{err}");
    }

    #[test]
    fn pft_round_trip() {
        let pft = Pft::new(
            0.5,
            vec![[0.0, 0.0], [1.0, 2.0]],
            vec![[[0.1, 0.02], [0.02, 0.2]]; 2],
            "t",
        )
        .unwrap();
        let text = to_json(&PftDocument::from(&pft));
        assert_eq!(parse_pft(&text, Path::new("t.json")).unwrap(), pft);
    }

    #[test]
    fn trajectories_split_by_id() {
        let csv = "id,t,x,y\na,0.1,1,0\na,0.0,0,0\nb,0,5,5\n";
        let t = parse_trajectories(csv.as_bytes(), Path::new("t.csv")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].points, vec![[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(t[0].timestep(), Some(0.1));
        let plain = parse_trajectories("t,x,y\n0,0,0\n".as_bytes(), Path::new("p.csv")).unwrap();
        assert_eq!(plain[0].id, "");
        assert!(parse_trajectories("t,x,y\n0,zero,0\n".as_bytes(), Path::new("p.csv")).is_err());
    }

    #[test]
    fn risk_table_round_trip() {
        let axes = vec![
            Axis {
                tube_len: 7,
                stride: 3,
            },
            Axis {
                tube_len: 4,
                stride: 3,
            },
        ];
        let n: usize = axes.iter().map(Axis::size).product();
        let table = RiskTable {
            maneuvers: vec!["a".into(), "b".into()],
            axes,
            window: 6,
            seed: 42,
            samples: 100,
            values: (0..n).map(|k| k as f64 / n as f64).collect(),
        };
        let bytes = encode_risk_table(&table);
        let p = Path::new("r.bin");
        assert_eq!(decode_risk_table(&bytes, p).unwrap(), table);
        assert!(decode_risk_table(&bytes[..bytes.len() - 1], p).is_err());
        assert!(decode_risk_table(b"nope\n{}\n", p).is_err());
    }

    #[test]
    fn csv_has_comment_line() {
        #[derive(Serialize)]
        struct Row {
            a: u32,
            b: f64,
        }
        let mut out = Vec::new();
        write_csv(&mut out, "cmd --x", &[Row { a: 1, b: 0.5 }]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "# cmd --x\na,b\n1,0.5\n");
    }
}
