//! File formats: JSON configs, state and trajectory CSVs, equilibrium
//! reports and run manifests.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::StepMetrics;
use crate::equilibrium::{Equilibrium, EquilibriumKind, EtaTrace};
use crate::model::{ModelConfig, ModelError, SystemState, TechParams};
use crate::netgraph::{GraphError, WeightedDigraph};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{context}: {source}")]
    Graph { context: String, source: GraphError },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A network given inline, as a path to an edge CSV, or as a path with options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    Matrix(Vec<Vec<f64>>),
    Path(PathBuf),
    Edges {
        path: PathBuf,
        #[serde(default)]
        normalize: bool,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// On-disk config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n: usize,
    pub physical: GraphSource,
    pub social: GraphSource,
    pub tech1: TechParams,
    pub tech2: TechParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ConfigMeta>,
}

impl ConfigFile {
    pub fn inline(cfg: &ModelConfig, meta: Option<ConfigMeta>) -> Self {
        Self {
            n: cfg.n(),
            physical: GraphSource::Matrix(cfg.physical.to_rows()),
            social: GraphSource::Matrix(cfg.social.to_rows()),
            tech1: cfg.tech[0].clone(),
            tech2: cfg.tech[1].clone(),
            meta,
        }
    }
}

/// A parsed config plus the digest of the exact bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ModelConfig,
    pub meta: Option<ConfigMeta>,
    pub file_digest: String,
}

fn resolve_graph(src: &GraphSource, n: usize, base: &Path, name: &str) -> Result<WeightedDigraph, IoError> {
    let graph_err = |source| IoError::Graph { context: name.to_string(), source };
    let from_csv = |rel: &Path, normalize: bool| {
        let path = base.join(rel);
        let f = File::open(&path).map_err(file_err(&path))?;
        WeightedDigraph::from_edge_csv(f, n, normalize)
            .map_err(|source| IoError::Graph { context: format!("{name} ({})", path.display()), source })
    };
    let g = match src {
        GraphSource::Matrix(rows) => WeightedDigraph::from_rows(rows.clone()).map_err(graph_err)?,
        GraphSource::Path(p) => from_csv(p, false)?,
        GraphSource::Edges { path, normalize } => from_csv(path, *normalize)?,
    };
    if g.n() != n {
        return Err(ModelError::Dimension(format!("{name} has {} nodes, config declares n = {n}", g.n())).into());
    }
    Ok(g)
}

/// Parses config bytes; edge-list paths are resolved against `base`.
pub fn parse_config(bytes: &[u8], base: &Path, origin: &Path) -> Result<LoadedConfig, IoError> {
    let doc: ConfigFile =
        serde_json::from_slice(bytes).map_err(|source| IoError::Json { path: origin.to_path_buf(), source })?;
    let physical = resolve_graph(&doc.physical, doc.n, base, "physical")?;
    let social = resolve_graph(&doc.social, doc.n, base, "social")?;
    let config = ModelConfig::new(physical, social, doc.tech1, doc.tech2)?;
    Ok(LoadedConfig { config, meta: doc.meta, file_digest: sha256_hex(bytes) })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, IoError> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(file_err(path))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&bytes, base, path)
}

/// Writes a self-contained config with inline matrices.
pub fn save_config(path: &Path, cfg: &ModelConfig, meta: Option<ConfigMeta>) -> Result<(), IoError> {
    write_json(path, &ConfigFile::inline(cfg, meta))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let f = File::create(path).map_err(file_err(path))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(file_err(path))
}

pub const STATE_HEADER: [&str; 8] = ["node", "s", "a1", "a2", "d1", "d2", "x1", "x2"];

pub fn write_state<W: Write>(w: W, st: &SystemState) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(STATE_HEADER)?;
    for i in 0..st.n() {
        let mut row = vec![i.to_string()];
        row.extend(st.node_values(i).iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_state(path: &Path, st: &SystemState) -> Result<(), IoError> {
    let f = File::create(path).map_err(file_err(path))?;
    write_state(BufWriter::new(f), st).map_err(csv_err(path))
}

/// Reads a state CSV. Rows may come in any order but must cover nodes
/// `0..n` exactly once.
pub fn load_state(path: &Path) -> Result<SystemState, IoError> {
    let format = |msg: String| IoError::Format { path: path.to_path_buf(), msg };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(STATE_HEADER) {
        return Err(format(format!("expected header {}", STATE_HEADER.join(","))));
    }
    let mut rows: Vec<(usize, [f64; 7])> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let node: usize = rec[0].parse().map_err(|_| format(format!("bad node index `{}`", &rec[0])))?;
        let mut vals = [0.0; 7];
        for (v, field) in vals.iter_mut().zip(rec.iter().skip(1)) {
            *v = field.parse().map_err(|_| format(format!("bad number `{field}` at node {node}")))?;
        }
        rows.push((node, vals));
    }
    let n = rows.len();
    let mut st = SystemState::zeros(n);
    let mut seen = vec![false; n];
    for (node, vals) in rows {
        if node >= n || std::mem::replace(&mut seen[node], true) {
            return Err(format(format!("node {node} is out of range or repeated")));
        }
        for (block, v) in st.blocks_mut().into_iter().zip(vals) {
            block[node] = v;
        }
    }
    Ok(st)
}

/// Streaming writer for the per-node trajectory CSV.
pub struct TrajectoryWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(w: W) -> Result<Self, csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t"];
        header.extend(STATE_HEADER);
        out.write_record(&header)?;
        Ok(Self { out })
    }

    pub fn push(&mut self, t: usize, st: &SystemState) -> Result<(), csv::Error> {
        let t = t.to_string();
        for i in 0..st.n() {
            let mut row = vec![t.clone(), i.to_string()];
            row.extend(st.node_values(i).iter().map(f64::to_string));
            self.out.write_record(&row)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), csv::Error> {
        self.out.flush()?;
        Ok(())
    }
}

pub const AGGREGATE_HEADER: [&str; 8] =
    ["t", "mean_s", "mean_a1", "mean_a2", "mean_d1", "mean_d2", "mean_x1", "mean_x2"];

/// Streaming writer for the aggregate (node-mean) CSV.
pub struct AggregateWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> AggregateWriter<W> {
    pub fn new(w: W) -> Result<Self, csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(AGGREGATE_HEADER)?;
        Ok(Self { out })
    }

    pub fn push(&mut self, m: &StepMetrics) -> Result<(), csv::Error> {
        let mut row = vec![m.t.to_string()];
        row.extend(m.values().iter().map(f64::to_string));
        self.out.write_record(&row)
    }

    pub fn finish(mut self) -> Result<(), csv::Error> {
        self.out.flush()?;
        Ok(())
    }
}

/// Reads an aggregate CSV back into metrics.
pub fn load_aggregate(path: &Path) -> Result<Vec<StepMetrics>, IoError> {
    let format = |msg: String| IoError::Format { path: path.to_path_buf(), msg };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let t: usize = rec[0].parse().map_err(|_| format(format!("bad step `{}`", &rec[0])))?;
        let mut v = [0.0; 7];
        for (x, field) in v.iter_mut().zip(rec.iter().skip(1)) {
            *x = field.parse().map_err(|_| format(format!("bad number `{field}` at t = {t}")))?;
        }
        out.push(StepMetrics { t, mean_s: v[0], mean_a: [v[1], v[2]], mean_d: [v[3], v[4]], mean_x: [v[5], v[6]] });
    }
    Ok(out)
}

/// Block arrays keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBlocks {
    pub s: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl From<&SystemState> for StateBlocks {
    fn from(st: &SystemState) -> Self {
        Self {
            s: st.s.clone(),
            a1: st.a[0].clone(),
            a2: st.a[1].clone(),
            d1: st.d[0].clone(),
            d2: st.d[1].clone(),
            x1: st.x[0].clone(),
            x2: st.x[1].clone(),
        }
    }
}

impl From<StateBlocks> for SystemState {
    fn from(b: StateBlocks) -> Self {
        SystemState { s: b.s, a: [b.a1, b.a2], d: [b.d1, b.d2], x: [b.x1, b.x2] }
    }
}

/// The `equilibrium.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub kind: EquilibriumKind,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    pub state: StateBlocks,
    pub ratio_check_max_err: f64,
    pub simplex_max_err: f64,
    pub lower_bound: Vec<f64>,
    pub on_safeguard_boundary: bool,
    pub solver: Option<EtaTrace>,
}

impl From<&Equilibrium> for EquilibriumReport {
    fn from(eq: &Equilibrium) -> Self {
        Self {
            kind: eq.kind,
            converged: eq.converged,
            iterations: eq.iterations,
            residual: eq.residual,
            state: (&eq.state).into(),
            ratio_check_max_err: eq.ratio_check_max_err,
            simplex_max_err: eq.simplex_max_err,
            lower_bound: eq.lower_bound.clone(),
            on_safeguard_boundary: eq.on_safeguard_boundary,
            solver: eq.solver.clone(),
        }
    }
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 of the config file bytes, when the run read one.
    pub config_digest: Option<String>,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub prng: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub parameters: serde_json::Value,
    /// Parameters picked by the tool rather than supplied by the user.
    pub chosen_defaults: Vec<String>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            args,
            config_digest: None,
            seeds: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            prng: crate::model::PRNG_ALGORITHM.to_string(),
            started_unix: unix_now(),
            finished_unix: 0.0,
            parameters: serde_json::Value::Null,
            chosen_defaults: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Stamps the finish time and writes the manifest, listing itself last.
    pub fn finish(mut self, path: &Path) -> Result<(), IoError> {
        self.finished_unix = unix_now();
        self.outputs.push(path.to_path_buf());
        write_json(path, &self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::e1;

    #[test]
    fn config_round_trips_through_inline_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        save_config(&path, &e1(), Some(ConfigMeta { seed: Some(3) })).unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded.config, e1());
        assert_eq!(loaded.meta.unwrap().seed, Some(3));
        assert_eq!(loaded.file_digest, sha256_hex(&std::fs::read(&path).unwrap()));
    }

    #[test]
    fn graph_paths_resolve_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("w.csv"), "src,dst,weight\n0,1,2\n1,0,1\n").unwrap();
        let doc = r#"{"n":2,"physical":"w.csv","social":{"path":"w.csv","normalize":true},
            "tech1":{"beta":[0.3,0.3],"gamma":[0.5,0.5],"delta":[0.2,0.2],"lambda":[0.2,0.2],"xi":[0.3,0.3],"x0":[0.5,0.5]},
            "tech2":{"beta":[0.2,0.2],"gamma":[0.5,0.5],"delta":[0.1,0.1],"lambda":[0.2,0.2],"xi":[0.3,0.3],"x0":[0.5,0.5]}}"#;
        let loaded = parse_config(doc.as_bytes(), dir.path(), Path::new("inline")).unwrap();
        assert_eq!(loaded.config.physical.get(1, 0), 2.0);
        assert_eq!(loaded.config.social.get(1, 0), 1.0);
        assert!(loaded.meta.is_none());
    }

    #[test]
    fn config_rejects_mismatched_n_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let mut doc = serde_json::to_value(ConfigFile::inline(&e1(), None)).unwrap();
        doc["n"] = 2.into();
        let err = parse_config(doc.to_string().as_bytes(), dir.path(), Path::new("x")).unwrap_err();
        assert!(matches!(err, IoError::Model(ModelError::Dimension(_))), "{err}");
        let err = parse_config(b"{not json", dir.path(), Path::new("x")).unwrap_err();
        assert!(matches!(err, IoError::Json { .. }));
    }

    #[test]
    fn state_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let mut st = SystemState::zeros(3);
        st.s = vec![0.1, 1.0 / 3.0, 0.7];
        st.a[1] = vec![0.9, 2.0 / 3.0, 0.3];
        st.x[0] = vec![0.123456789012345, 0.5, 1e-300];
        save_state(&path, &st).unwrap();
        assert_eq!(load_state(&path).unwrap(), st);
    }

    #[test]
    fn state_csv_rejects_duplicate_nodes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        std::fs::write(&path, "node,s,a1,a2,d1,d2,x1,x2\n0,1,0,0,0,0,.5,.5\n0,1,0,0,0,0,.5,.5\n").unwrap();
        assert!(matches!(load_state(&path), Err(IoError::Format { .. })));
    }

    #[test]
    fn aggregate_csv_round_trips() {
        let mut buf = Vec::new();
        let mut st = SystemState::zeros(2);
        st.s = vec![1.0, 0.5];
        st.a[0] = vec![0.0, 0.5];
        let m = StepMetrics::of(4, &st);
        let mut w = AggregateWriter::new(&mut buf).unwrap();
        w.push(&m).unwrap();
        w.finish().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agg.csv");
        std::fs::write(&path, &buf).unwrap();
        assert_eq!(load_aggregate(&path).unwrap(), vec![m]);
        assert!(String::from_utf8(buf).unwrap().starts_with("t,mean_s,mean_a1"));
    }
}
