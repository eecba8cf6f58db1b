//! File formats: binary snapshots and checkpoints, the energy log, and
//! sectioned text configs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::Serialize;

use crate::driver::{
    initial_condition, prepare, run_from, Checkpointer, ProblemConfig, RunOutput, StepRecord,
};
use crate::error::{Error, Result};
use crate::optim::StopReason;
use crate::reference_fd::{
    discrete_energy, fd_solve, l2_difference, sdmm_error, stability_bound, Boundary, FdConfig,
};
use crate::scalar::Real;
use crate::sepnet::{Dense, FeatureNet, SeparableField, Transform};
use crate::snapshot::FieldSnapshot;
use crate::spinn_baseline::SpinnConfig;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"SDMM-FLD";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SDMM-NET";
pub const FORMAT_VERSION: u32 = 1;
pub const ENV_PREFIX: &str = "SDMM_";
pub const CSV_HEADER: &str = "step,time,L_E,L_M,total,iters,max_abs_phi";

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::Io(e)
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader {
            bytes,
            pos: 0,
            what,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!("{} truncated at byte {}", self.what, self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn count(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{}: count {v} too large", self.what)))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::Format(format!("{}: bad magic", self.what)));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "{}: unsupported version {v}",
                self.what
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn f64_of<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Snapshot bytes. Only uniform node grids are representable.
pub fn encode_snapshot<T: Real>(snap: &FieldSnapshot<T>) -> Result<Vec<u8>> {
    if !snap.is_uniform() {
        return Err(Error::Unsupported(
            "writing a snapshot on a non-uniform grid".into(),
        ));
    }
    let d = snap.dim();
    let mut out = Vec::with_capacity(32 + 24 * d + 8 * snap.values.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for n in snap.shape() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for (lo, hi) in snap.bounds() {
        out.extend_from_slice(&f64_of(lo).to_le_bytes());
        out.extend_from_slice(&f64_of(hi).to_le_bytes());
    }
    out.extend_from_slice(&f64_of(snap.time).to_le_bytes());
    for &v in snap.values.as_standard_layout().iter() {
        out.extend_from_slice(&f64_of(v).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_snapshot<T: Real>(bytes: &[u8]) -> Result<FieldSnapshot<T>> {
    let mut r = Reader::new(bytes, "snapshot");
    r.header(SNAPSHOT_MAGIC)?;
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(Error::Format("snapshot: zero dimensions".into()));
    }
    let counts = (0..d).map(|_| r.count()).collect::<Result<Vec<_>>>()?;
    let bounds = (0..d)
        .map(|_| Ok((T::lit(r.f64()?), T::lit(r.f64()?))))
        .collect::<Result<Vec<_>>>()?;
    let time = T::lit(r.f64()?);
    let len = counts
        .iter()
        .try_fold(1usize, |a, &n| a.checked_mul(n))
        .ok_or_else(|| Error::Format("snapshot: node count overflows".into()))?;
    let payload = r.take(
        len.checked_mul(8)
            .ok_or_else(|| Error::Format("snapshot too large".into()))?,
    )?;
    r.finish()?;
    let values: Vec<T> = payload
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let values =
        ArrayD::from_shape_vec(IxDyn(&counts), values).map_err(|e| Error::Format(e.to_string()))?;
    FieldSnapshot::new(FieldSnapshot::uniform_axes(&bounds, &counts), values, time)
}

pub fn write_snapshot<T: Real>(path: &Path, snap: &FieldSnapshot<T>) -> Result<()> {
    write_atomic(path, &encode_snapshot(snap)?)
}

pub fn read_snapshot<T: Real>(path: &Path) -> Result<FieldSnapshot<T>> {
    decode_snapshot(&fs::read(path)?)
}

/// Checkpoint bytes: header, then per net its layer widths and input range,
/// then every parameter in declaration order.
pub fn encode_checkpoint<T: Real>(field: &SeparableField<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(field.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(field.rank() as u64).to_le_bytes());
    out.extend_from_slice(&u32::from(field.transform() == Transform::Tanh).to_le_bytes());
    for net in field.nets() {
        let widths = net.widths();
        out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
        for w in widths {
            out.extend_from_slice(&(w as u64).to_le_bytes());
        }
        let (lo, hi) = net.input_range();
        out.extend_from_slice(&f64_of(lo).to_le_bytes());
        out.extend_from_slice(&f64_of(hi).to_le_bytes());
    }
    out.extend_from_slice(&(field.num_params() as u64).to_le_bytes());
    for p in field.params() {
        out.extend_from_slice(&f64_of(p).to_le_bytes());
    }
    out
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<SeparableField<T>> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.header(CHECKPOINT_MAGIC)?;
    let d = r.u32()? as usize;
    let m = r.count()?;
    let transform = match r.u32()? {
        0 => Transform::Identity,
        1 => Transform::Tanh,
        t => {
            return Err(Error::Format(format!(
                "checkpoint: unknown transform tag {t}"
            )))
        }
    };
    let mut nets = Vec::with_capacity(d);
    for _ in 0..d {
        let n = r.u32()? as usize;
        let widths = (0..n).map(|_| r.count()).collect::<Result<Vec<_>>>()?;
        let range = (T::lit(r.f64()?), T::lit(r.f64()?));
        if widths.len() < 2 || widths[0] != 1 || widths.last() != Some(&m) {
            return Err(Error::Format(format!(
                "checkpoint: bad layer widths {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                weight: ndarray::Array2::zeros((w[0], w[1])),
                bias: ndarray::Array1::zeros(w[1]),
            })
            .collect();
        nets.push(
            FeatureNet::from_layers(layers, range).map_err(|e| Error::Format(e.to_string()))?,
        );
    }
    let mut field =
        SeparableField::from_nets(nets, transform).map_err(|e| Error::Format(e.to_string()))?;
    let count = r.count()?;
    if count != field.num_params() {
        return Err(Error::Format(format!(
            "checkpoint: {count} parameters for a net with {}",
            field.num_params()
        )));
    }
    let params = (0..count)
        .map(|_| Ok(T::lit(r.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    field.set_params(&params)?;
    Ok(field)
}

pub fn write_checkpoint<T: Real>(path: &Path, field: &SeparableField<T>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(field))
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<SeparableField<T>> {
    decode_checkpoint(&fs::read(path)?)
}

/// Writes `checkpoint_<step>.bin` into a directory.
pub struct DirCheckpointer {
    pub dir: PathBuf,
}

impl<T: Real> Checkpointer<T> for DirCheckpointer {
    fn save(&mut self, step: usize, field: &SeparableField<T>) -> Result<PathBuf> {
        let path = self.dir.join(checkpoint_name(step));
        write_checkpoint(&path, field)?;
        Ok(path)
    }
}

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_{step:06}.bin")
}

pub fn snapshot_name(step: usize) -> String {
    format!("snapshot_{step:06}.fld")
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// The energy log as text. Wall time and stop reason are not written.
pub fn energy_csv(records: &[StepRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step,
            fmt_f64(r.time),
            fmt_f64(r.energy),
            fmt_f64(r.movement),
            fmt_f64(r.total),
            r.iterations,
            fmt_f64(r.max_abs_phi)
        ));
    }
    s
}

pub fn write_energy_csv(path: &Path, records: &[StepRecord]) -> Result<()> {
    write_atomic(path, energy_csv(records).as_bytes())
}

pub fn parse_energy_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("energy log: missing header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| Error::Format(format!("energy log line {}: bad {what}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad("column count"));
            }
            let num = |k: usize, what: &str| f[k].parse::<f64>().map_err(|_| bad(what));
            Ok(StepRecord {
                step: f[0].parse().map_err(|_| bad("step"))?,
                time: num(1, "time")?,
                energy: num(2, "L_E")?,
                movement: num(3, "L_M")?,
                total: num(4, "total")?,
                iterations: f[5].parse().map_err(|_| bad("iters"))?,
                max_abs_phi: num(6, "max_abs_phi")?,
                stop: StopReason::MaxIters,
                wall_seconds: 0.0,
            })
        })
        .collect()
}

pub fn read_energy_csv(path: &Path) -> Result<Vec<StepRecord>> {
    parse_energy_csv(&fs::read_to_string(path)?)
}

fn to_table<S: Serialize>(v: &S) -> Result<toml::Table> {
    toml::Table::try_from(v).map_err(|e| Error::Config(e.to_string()))
}

/// Overlays `user` onto `base`, rejecting keys `base` does not have.
fn merge(base: &mut toml::Table, user: toml::Table, path: &str) -> Result<()> {
    for (k, v) in user {
        let here = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u, &here)?,
            (Some(slot), v) => *slot = v,
            (None, v) if is_optional_key(&here) => {
                base.insert(k, v);
            }
            (None, _) => return Err(Error::config(format!("unknown config key `{here}`"))),
        }
    }
    Ok(())
}

fn is_optional_key(path: &str) -> bool {
    path == "output.dir"
}

/// Parses a value given in an environment variable: TOML syntax if it
/// parses, a bare string otherwise.
fn parse_env_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `SDMM_<SECTION>_<KEY>` overrides. Nested tables are addressed by
/// joining names with `_`, e.g. `SDMM_FIT_ADAM_LEARNING_RATE`.
pub fn apply_env_overrides(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<Vec<String>> {
    let mut applied = Vec::new();
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let rest = rest.to_ascii_lowercase();
        let (key_path, slot) = locate(table, &rest, "").ok_or_else(|| {
            Error::config(format!("environment variable {name} names no config key"))
        })?;
        *slot = parse_env_value(&raw);
        applied.push(key_path);
    }
    Ok(applied)
}

fn locate<'a>(
    table: &'a mut toml::Table,
    rest: &str,
    path: &str,
) -> Option<(String, &'a mut toml::Value)> {
    let keys: Vec<String> = table.keys().cloned().collect();
    // longest key first, so `max_iters` wins over a hypothetical `max`
    let mut keys = keys;
    keys.sort_by_key(|k| std::cmp::Reverse(k.len()));
    for k in keys {
        let here = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        if rest == k {
            let v = table.get_mut(&k)?;
            if v.is_table() {
                return None;
            }
            return Some((here, v));
        }
        if let Some(tail) = rest.strip_prefix(&k).and_then(|t| t.strip_prefix('_')) {
            if table.get(&k).is_some_and(toml::Value::is_table) {
                let Some(toml::Value::Table(sub)) = table.get_mut(&k) else {
                    unreachable!()
                };
                return locate(sub, tail, &here);
            }
        }
    }
    None
}

/// Resolves config text: defaults, then the text, then overrides from
/// `vars`. A `[manifest]` section is ignored, so manifests load as configs.
pub fn resolve_config(
    text: &str,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<ProblemConfig> {
    let mut user: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    user.remove("manifest");
    let mut table = to_table(&ProblemConfig::default())?;
    table
        .entry("output")
        .or_insert_with(|| toml::Value::Table(Default::default()));
    merge(&mut table, user, "")?;
    apply_env_overrides(&mut table, vars)?;
    let config: ProblemConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    Ok(config)
}

/// Loads a config file with `SDMM_*` overrides from the process environment.
pub fn load_config(path: &Path) -> Result<ProblemConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    resolve_config(&text, std::env::vars())
}

/// Baseline settings from a TOML file; missing keys take their defaults.
pub fn load_spinn_config(path: &Path) -> Result<SpinnConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
}

pub fn config_to_string(config: &ProblemConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Config(e.to_string()))
}

/// Everything needed to repeat a run: the resolved config plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config: ProblemConfig,
    pub version: String,
    pub seeds: BTreeMap<String, u64>,
    /// Output files relative to the run directory.
    pub files: Vec<String>,
}

pub fn version_string() -> String {
    match option_env!("SDMM_GIT_DESCRIBE") {
        Some(g) => format!("sdmm {} ({g})", env!("CARGO_PKG_VERSION")),
        None => format!("sdmm {}", env!("CARGO_PKG_VERSION")),
    }
}

impl RunManifest {
    pub fn new(config: ProblemConfig, files: Vec<String>) -> Self {
        let seeds = BTreeMap::from([
            ("initial".to_string(), config.initial.seed),
            ("network".to_string(), config.network.seed),
        ]);
        RunManifest {
            config,
            version: version_string(),
            seeds,
            files,
        }
    }

    pub fn to_text(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Section<'a> {
            version: &'a str,
            seeds: &'a BTreeMap<String, u64>,
            files: &'a [String],
        }
        let mut table = to_table(&self.config)?;
        table.insert(
            "manifest".into(),
            toml::Value::Table(to_table(&Section {
                version: &self.version,
                seeds: &self.seeds,
                files: &self.files,
            })?),
        );
        toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }
}

/// Snapshots named `snapshot_*.fld` in `dir`, in file-name order.
pub fn read_snapshot_dir<T: Real>(dir: &Path) -> Result<Vec<FieldSnapshot<T>>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("snapshot_") && n.ends_with(".fld"))
        })
        .collect();
    names.sort();
    names.iter().map(|p| read_snapshot(p)).collect()
}

/// Fits, steps and writes snapshots, the energy log, checkpoints and a
/// manifest into `dir`.
pub fn run_to_dir(config: &ProblemConfig, dir: &Path) -> Result<(RunOutput<f64>, Vec<String>)> {
    let (field, fit) = prepare::<f64>(config)?;
    let mut checkpoints = DirCheckpointer {
        dir: dir.join("checkpoints"),
    };
    let mut out = run_from(config, field, &mut checkpoints)?;
    out.fit = Some(fit);
    let mut files = Vec::new();
    let stride = config.output.snapshot_stride;
    for (k, snap) in out.snapshots.iter().enumerate() {
        let name = snapshot_name(k * stride);
        write_snapshot(&dir.join(&name), snap)?;
        files.push(name);
    }
    write_energy_csv(&dir.join(ENERGY_FILE), &out.records)?;
    files.push(ENERGY_FILE.into());
    for c in &out.checkpoints {
        if let Ok(rel) = c.strip_prefix(dir) {
            files.push(rel.to_string_lossy().into_owned());
        }
    }
    let mut resolved = config.clone();
    resolved.output.dir = dir.to_path_buf();
    RunManifest::new(resolved, files.clone()).write(&dir.join(MANIFEST_FILE))?;
    Ok((out, files))
}

pub const ENERGY_FILE: &str = "energy.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const COMPARE_FILE: &str = "compare.csv";

/// Largest step not above half the explicit bound that divides `tau`.
pub fn reference_dt(tau: f64, spacings: &[f64], epsilon: f64) -> f64 {
    let limit = 0.5 * stability_bound(spacings, epsilon) / 0.9;
    tau / (tau / limit).ceil()
}

/// Finite-difference reference for `config` on `nodes` points per axis,
/// sampled at the run's snapshot times.
pub fn reference_run(
    config: &ProblemConfig,
    nodes: usize,
    dt: Option<f64>,
    boundary: Boundary,
) -> Result<Vec<FieldSnapshot<f64>>> {
    config.validate()?;
    let bounds = config.bounds();
    let axes = FieldSnapshot::uniform_axes(&bounds, &vec![nodes; bounds.len()]);
    let spacings: Vec<f64> = bounds
        .iter()
        .map(|(a, b)| (b - a) / (nodes - 1) as f64)
        .collect();
    let tau = config.problem.tau;
    let dt = dt.unwrap_or_else(|| reference_dt(tau, &spacings, config.problem.epsilon));
    let stride = config.output.snapshot_stride.max(1);
    let n = config.num_steps()?;
    let output_times: Vec<f64> = (0..=n).step_by(stride).map(|k| k as f64 * tau).collect();
    let ic = initial_condition(config, axes)?;
    fd_solve(
        &ic,
        &FdConfig {
            epsilon: config.problem.epsilon,
            dt,
            boundary,
            potential_scale: config.problem.potential_scale,
            output_times,
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub time: f64,
    pub l2_error: f64,
    pub energy_pred: f64,
    pub energy_ref: f64,
    /// `100 · (E − E_ref) / E_ref`.
    pub energy_diff_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Mean L² error over the snapshots after `t = 0`.
    pub e_sdmm: f64,
    pub rows: Vec<CompareRow>,
}

/// Pairs snapshots in order, restricting each reference onto the predicted
/// node grid.
pub fn compare_snapshots(
    pred: &[FieldSnapshot<f64>],
    reference: &[FieldSnapshot<f64>],
    epsilon: f64,
    potential_scale: f64,
) -> Result<Comparison> {
    if pred.len() != reference.len() {
        return Err(Error::shape(format!(
            "{} predicted snapshots against {} reference snapshots",
            pred.len(),
            reference.len()
        )));
    }
    let mut rows = Vec::with_capacity(pred.len());
    let mut coarse = Vec::with_capacity(pred.len());
    for (p, r) in pred.iter().zip(reference) {
        let r = if r.shape() == p.shape() {
            r.clone()
        } else {
            r.restrict_to(&p.shape())?
        };
        if (p.time - r.time).abs() > 1e-12 * (1.0 + r.time.abs()) {
            return Err(Error::shape(format!(
                "snapshot at t = {} paired with t = {}",
                p.time, r.time
            )));
        }
        let energy_pred = discrete_energy(p, epsilon, potential_scale)?;
        let energy_ref = discrete_energy(&r, epsilon, potential_scale)?;
        let diff = energy_pred - energy_ref;
        rows.push(CompareRow {
            time: p.time,
            l2_error: l2_difference(p, &r)?,
            energy_pred,
            energy_ref,
            energy_diff_percent: if diff == 0.0 {
                0.0
            } else {
                100.0 * diff / energy_ref
            },
        });
        coarse.push(r);
    }
    let keep: Vec<usize> = (0..pred.len()).filter(|&k| pred[k].time > 0.0).collect();
    let keep = if keep.is_empty() {
        (0..pred.len()).collect()
    } else {
        keep
    };
    let p: Vec<_> = keep.iter().map(|&k| pred[k].clone()).collect();
    let r: Vec<_> = keep.iter().map(|&k| coarse[k].clone()).collect();
    Ok(Comparison {
        e_sdmm: sdmm_error(&p, &r)?,
        rows,
    })
}

pub fn comparison_csv(c: &Comparison) -> String {
    let mut s = String::from("time,l2_error,energy_pred,energy_ref,energy_diff_percent\n");
    for r in &c.rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(r.time),
            fmt_f64(r.l2_error),
            fmt_f64(r.energy_pred),
            fmt_f64(r.energy_ref),
            fmt_f64(r.energy_diff_percent)
        ));
    }
    s
}
