//! Scenario files: stations, channel, and sub-protocol setup, with sweep
//! overrides, and the run pipeline that turns a scenario into outputs.

use std::collections::BTreeMap;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, AnalyticReport, Viewpoint};
use crate::codec::HeaderModel;
use crate::consensus::{FaultMode, Outcome, Role};
use crate::crypto::{KeyRegistry, SignerBackend, SigningKey};
use crate::simnet::{
    CamGenerator, CamSizeModel, ChannelModel, DistError, FixedGenerator, Generator, Mobility, Path, PeriodDistribution,
    PeriodPoint, Placement, SimConfig, SimOutput, Simulation, StationSpec,
};
use crate::subprotocols::{
    ManeuverConfig, ManeuverSp, TollAdvert, TollClient, TollProvider, TollingConfig, ViewConfig, ViewSp,
};
use crate::token::{SettlementLedger, TokenWallet};
use crate::types::{MsgType, SimTime, SpId, StationId};
use crate::vep::{ExtensionQueue, Kinematics, Record, VepEngine, DEFAULT_WARN_THRESHOLD};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
    #[error("distribution `{name}`: {source}")]
    Dist { name: String, source: DistError },
}

fn invalid(s: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(s.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistSource {
    File { file: String },
    Constant { constant_ms: u64 },
    Uniform { uniform_ms: [u64; 3] },
    Inline { support: Vec<PeriodPoint> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationKind {
    Vehicle,
    Rsu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub count: u32,
    #[serde(default = "vehicle")]
    pub kind: StationKind,
    /// CAM period distribution; stations without one send no CAMs.
    #[serde(default)]
    pub distribution: Option<String>,
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default = "default_speed")]
    pub speed_kmh: f64,
    /// Distance between consecutive stations of the group along the path.
    #[serde(default = "default_spacing")]
    pub spacing_m: f64,
    #[serde(default)]
    pub start_offset_m: f64,
    /// Position of fixed stations.
    #[serde(default)]
    pub position: Option<[f64; 2]>,
}

fn vehicle() -> StationKind {
    StationKind::Vehicle
}
fn default_speed() -> f64 {
    90.0
}
fn default_spacing() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VepSettings {
    pub enabled: bool,
    pub queue_warn: usize,
    pub queue_cap: Option<usize>,
    /// Signer of ITS messages.
    pub signer: SignerBackend,
    /// Signer of token transactions.
    pub token_signer: SignerBackend,
    pub certificate_bytes: usize,
}

impl Default for VepSettings {
    fn default() -> Self {
        VepSettings {
            enabled: true,
            queue_warn: DEFAULT_WARN_THRESHOLD,
            queue_cap: None,
            signer: SignerBackend::Null,
            token_signer: SignerBackend::Ecdsa,
            certificate_bytes: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McsSettings {
    pub period_ms: u64,
    /// Trajectory bytes after the kinematics prefix.
    pub body_bytes: usize,
}

impl Default for McsSettings {
    fn default() -> Self {
        McsSettings {
            period_ms: 100,
            body_bytes: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSection {
    #[serde(flatten)]
    pub cfg: ManeuverConfig,
    /// Stations that start maneuvers; the first vehicle by default.
    #[serde(default)]
    pub initiators: Vec<u32>,
    /// Targets of periodic maneuvers; every other vehicle by default.
    #[serde(default)]
    pub targets: Vec<u32>,
    #[serde(default = "default_balance")]
    pub initial_balance: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSection {
    #[serde(flatten)]
    pub cfg: ViewConfig,
    /// The first vehicle by default.
    #[serde(default)]
    pub proposers: Vec<u32>,
    /// Every vehicle by default.
    #[serde(default)]
    pub membership: Vec<u32>,
    #[serde(default)]
    pub faulty: Vec<u32>,
    #[serde(default = "silent")]
    pub fault_mode: FaultMode,
}

fn silent() -> FaultMode {
    FaultMode::Silent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TollingSection {
    #[serde(flatten)]
    pub cfg: TollingConfig,
    /// The first roadside unit by default.
    #[serde(default)]
    pub rsu: Option<u32>,
    #[serde(default = "default_saem")]
    pub saem_period_ms: u64,
    #[serde(default = "default_balance")]
    pub initial_balance: u64,
}

fn default_saem() -> u64 {
    1000
}
fn default_balance() -> u64 {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Shortcut for `channel.pdr`.
    #[serde(default)]
    pub pdr: Option<f64>,
    #[serde(default)]
    pub channel: ChannelModel,
    #[serde(default)]
    pub header: HeaderModel,
    #[serde(default)]
    pub vep: VepSettings,
    #[serde(default)]
    pub cam: CamSizeModel,
    #[serde(default)]
    pub mcs: Option<McsSettings>,
    #[serde(default)]
    pub distributions: BTreeMap<String, DistSource>,
    #[serde(default)]
    pub paths: BTreeMap<String, Vec<[f64; 2]>>,
    #[serde(rename = "group")]
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub maneuver: Option<ManeuverSection>,
    #[serde(default)]
    pub view: Option<ViewSection>,
    #[serde(default)]
    pub tolling: Option<TollingSection>,
    /// Keep a record of every transmitted frame.
    #[serde(default)]
    pub record_packets: bool,
}

/// Built-in short names accepted on the command line.
fn alias(key: &str) -> &str {
    match key {
        "n" => "group.0.count",
        "seed" => "seed",
        "P" | "period" => "view.trigger_period_ms",
        other => other,
    }
}

fn parse_scalar(v: &str) -> toml::Value {
    match format!("x = {v}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").unwrap_or_else(|| toml::Value::String(v.into())),
        Err(_) => toml::Value::String(v.into()),
    }
}

/// Sets a dotted key such as `group.0.count` or `view.pbft.tau_d_ms`,
/// creating missing tables.
pub fn apply_override(root: &mut toml::Value, key: &str, value: &str) -> Result<(), ScenarioError> {
    let path = alias(key);
    let parts: Vec<&str> = path.split('.').collect();
    let err = |m: &str| ScenarioError::Override(key.to_string(), m.to_string());
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i == parts.len() - 1;
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(part.to_string(), parse_scalar(value));
                    return Ok(());
                }
                // arrays of tables may be addressed by their TOML key
                let k = if *part == "groups" { "group" } else { part };
                t.entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = part.parse().map_err(|_| err("expected an array index"))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| err(&format!("index {idx} out of {len}")))?;
                if last {
                    *slot = parse_scalar(value);
                    return Ok(());
                }
                slot
            }
            _ => return Err(err("path goes through a scalar")),
        };
    }
    Err(err("empty key"))
}

/// A loaded scenario and the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub raw: toml::Value,
    pub base_dir: PathBuf,
}

impl ScenarioFile {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &FsPath) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let raw = if path.extension().is_some_and(|e| e == "json") {
            let j: serde_json::Value = serde_json::from_str(&text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
            toml::Value::try_from(j).map_err(|e| ScenarioError::Parse(e.to_string()))?
        } else {
            toml::Value::Table(
                text.parse::<toml::Table>()
                    .map_err(|e| ScenarioError::Parse(e.to_string()))?,
            )
        };
        Ok(ScenarioFile {
            raw,
            base_dir: path.parent().map(FsPath::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ScenarioError> {
        Ok(ScenarioFile {
            raw: toml::Value::Table(
                text.parse::<toml::Table>()
                    .map_err(|e| ScenarioError::Parse(e.to_string()))?,
            ),
            base_dir: base_dir.into(),
        })
    }

    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<ScenarioFile, ScenarioError> {
        let mut raw = self.raw.clone();
        for (k, v) in overrides {
            apply_override(&mut raw, k, v)?;
        }
        Ok(ScenarioFile {
            raw,
            base_dir: self.base_dir.clone(),
        })
    }

    pub fn scenario(&self) -> Result<Scenario, ScenarioError> {
        let s: Scenario = self
            .raw
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

/// Splits `key=v1,v2,...` into the key and its values.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<String>), ScenarioError> {
    let (k, vs) = spec
        .split_once('=')
        .ok_or_else(|| ScenarioError::Override(spec.into(), "expected key=v1,v2".into()))?;
    let values: Vec<String> = vs
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(ScenarioError::Override(spec.into(), "no values".into()));
    }
    Ok((k.trim().to_string(), values))
}

/// Cartesian product of sweep axes, in axis order.
pub fn sweep_points(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut out = vec![Vec::new()];
    for (k, vs) in axes {
        let mut next = Vec::with_capacity(out.len() * vs.len());
        for prefix in &out {
            for v in vs {
                let mut p: Vec<(String, String)> = prefix.clone();
                p.push((k.clone(), v.clone()));
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Role of each station as built.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub stations: Vec<u32>,
    pub vehicles: Vec<u32>,
    pub rsus: Vec<u32>,
    /// CAM distribution name per station.
    pub cam_distribution: BTreeMap<u32, String>,
    pub view_membership: Vec<u32>,
    pub view_proposers: Vec<u32>,
    pub maneuver_initiators: Vec<u32>,
    pub maneuver_targets: Vec<u32>,
    pub initial_supply: u128,
    /// Token address per station, hex.
    pub wallets: BTreeMap<u32, String>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.duration_s.is_nan() || self.duration_s <= 0.0 {
            return Err(invalid("duration_s must be positive"));
        }
        let pdr = self.effective_pdr();
        if !(0.0..=1.0).contains(&pdr) {
            return Err(invalid(format!("pdr must be in [0, 1], got {pdr}")));
        }
        if self.channel.bitrate_bps.is_nan() || self.channel.bitrate_bps <= 0.0 {
            return Err(invalid("channel.bitrate_bps must be positive"));
        }
        if self.groups.is_empty() {
            return Err(invalid("no station groups"));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if let Some(d) = &g.distribution {
                if !self.distributions.contains_key(d) {
                    return Err(invalid(format!("group {i}: unknown distribution `{d}`")));
                }
            }
            if let Some(p) = &g.path {
                if !self.paths.contains_key(p) {
                    return Err(invalid(format!("group {i}: unknown path `{p}`")));
                }
            }
            if g.kind == StationKind::Vehicle && g.path.is_none() && g.position.is_none() {
                return Err(invalid(format!(
                    "group {i}: a vehicle group needs a path or a position"
                )));
            }
        }
        if let Some(v) = &self.view {
            if v.cfg.trigger_period_ms == 0 {
                return Err(invalid("view.trigger_period_ms must be positive"));
            }
        }
        Ok(())
    }

    pub fn effective_pdr(&self) -> f64 {
        self.pdr.unwrap_or(self.channel.pdr)
    }

    pub fn distribution(&self, name: &str, base_dir: &FsPath) -> Result<PeriodDistribution, ScenarioError> {
        let src = self
            .distributions
            .get(name)
            .ok_or_else(|| invalid(format!("unknown distribution `{name}`")))?;
        let wrap = |e: DistError| ScenarioError::Dist {
            name: name.to_string(),
            source: e,
        };
        let d = match src {
            DistSource::File { file } => PeriodDistribution::load(&base_dir.join(file)).map_err(wrap)?,
            DistSource::Constant { constant_ms } => PeriodDistribution::constant(*constant_ms).map_err(wrap)?,
            DistSource::Uniform {
                uniform_ms: [lo, hi, step],
            } => PeriodDistribution::uniform(*lo, *hi, *step).map_err(wrap)?,
            DistSource::Inline { support } => {
                let pairs: Vec<(u64, f64)> = support.iter().map(|p| (p.period_ms, p.probability)).collect();
                PeriodDistribution::new(&pairs).map_err(wrap)?
            }
        };
        Ok(d.named(name))
    }

    /// Instantiates every station.
    pub fn build(&self, base_dir: &FsPath) -> Result<(Simulation, ScenarioMeta), ScenarioError> {
        self.validate()?;
        let mut meta = ScenarioMeta::default();
        struct Proto {
            id: StationId,
            kind: StationKind,
            placement: Placement,
            dist: Option<String>,
        }
        let mut protos = Vec::new();
        let mut next_id = 1u32;
        for g in &self.groups {
            for k in 0..g.count {
                let id = StationId(next_id);
                next_id += 1;
                let placement = match (&g.path, g.position) {
                    (Some(p), _) => {
                        let wps = self.paths[p].iter().map(|w| (w[0], w[1])).collect();
                        let offset = g.start_offset_m + g.spacing_m * k as f64;
                        Placement::Mobile(Mobility::new(Path::new(wps), g.speed_kmh, offset))
                    }
                    (None, Some([x, y])) => Placement::Fixed(Kinematics {
                        x: x + g.spacing_m * k as f64,
                        y,
                        vx: 0.0,
                        vy: 0.0,
                    }),
                    (None, None) => Placement::Fixed(Kinematics::default()),
                };
                protos.push(Proto {
                    id,
                    kind: g.kind,
                    placement,
                    dist: g.distribution.clone(),
                });
            }
        }
        meta.stations = protos.iter().map(|p| p.id.0).collect();
        meta.vehicles = protos
            .iter()
            .filter(|p| p.kind == StationKind::Vehicle)
            .map(|p| p.id.0)
            .collect();
        meta.rsus = protos
            .iter()
            .filter(|p| p.kind == StationKind::Rsu)
            .map(|p| p.id.0)
            .collect();

        let ids: Vec<StationId> = protos.iter().map(|p| p.id).collect();
        let keys = KeyRegistry::with_stations(self.vep.signer, ids.iter().copied());
        let mut settlement = SettlementLedger::new();
        let wallet = |id: StationId| {
            TokenWallet::new(
                SigningKey::for_station(self.vep.token_signer, "token-wallet", id),
                self.vep.certificate_bytes,
            )
        };
        let known = |v: &[u32], what: &str| -> Result<Vec<StationId>, ScenarioError> {
            v.iter()
                .map(|i| {
                    if meta.stations.contains(i) {
                        Ok(StationId(*i))
                    } else {
                        Err(invalid(format!("{what}: no station {i}")))
                    }
                })
                .collect()
        };
        let first_vehicle = meta.vehicles.first().copied();

        let view = match &self.view {
            Some(v) => {
                let membership = if v.membership.is_empty() {
                    meta.vehicles.iter().map(|i| StationId(*i)).collect()
                } else {
                    known(&v.membership, "view.membership")?
                };
                let proposers = if v.proposers.is_empty() {
                    first_vehicle.map(StationId).into_iter().collect()
                } else {
                    known(&v.proposers, "view.proposers")?
                };
                let faulty = known(&v.faulty, "view.faulty")?;
                meta.view_membership = membership.iter().map(|s| s.0).collect();
                meta.view_proposers = proposers.iter().map(|s| s.0).collect();
                Some((v, membership, proposers, faulty))
            }
            None => None,
        };
        let maneuver = match &self.maneuver {
            Some(m) => {
                let initiators = if m.initiators.is_empty() {
                    first_vehicle.map(StationId).into_iter().collect()
                } else {
                    known(&m.initiators, "maneuver.initiators")?
                };
                let targets: Vec<StationId> = if m.targets.is_empty() {
                    meta.vehicles
                        .iter()
                        .map(|i| StationId(*i))
                        .filter(|s| !initiators.contains(s))
                        .collect()
                } else {
                    known(&m.targets, "maneuver.targets")?
                };
                meta.maneuver_initiators = initiators.iter().map(|s| s.0).collect();
                meta.maneuver_targets = targets.iter().map(|s| s.0).collect();
                Some((m, initiators, targets))
            }
            None => None,
        };
        let tolling = match &self.tolling {
            Some(t) => {
                let rsu = match t.rsu {
                    Some(r) => known(&[r], "tolling.rsu")?[0],
                    None => StationId(
                        *meta
                            .rsus
                            .first()
                            .ok_or_else(|| invalid("tolling needs a roadside unit"))?,
                    ),
                };
                Some((t, rsu))
            }
            None => None,
        };

        let mut specs = Vec::with_capacity(protos.len());
        for p in protos {
            let id = p.id;
            let mut generators = Vec::new();
            if let Some(d) = &p.dist {
                let dist = self.distribution(d, base_dir)?;
                meta.cam_distribution.insert(id.0, d.clone());
                generators.push(Generator::Cam(CamGenerator::new(dist, self.cam.clone())));
            }
            if let (Some(mcs), StationKind::Vehicle) = (&self.mcs, p.kind) {
                generators.push(Generator::Fixed(FixedGenerator {
                    msg_type: MsgType::Other,
                    period_ms: mcs.period_ms,
                    body: vec![0x4d; mcs.body_bytes],
                    kinematics_prefix: true,
                }));
            }
            let mut engine = if self.vep.enabled {
                VepEngine::new(id)
                    .with_queue(ExtensionQueue::new(id).with_limits(self.vep.queue_warn, self.vep.queue_cap))
            } else {
                VepEngine::disabled(id)
            };

            if let Some((v, membership, proposers, faulty)) = &view {
                let fault = if faulty.contains(&id) {
                    v.fault_mode
                } else {
                    FaultMode::Honest
                };
                let proposer = proposers.contains(&id) && fault == FaultMode::Honest;
                engine.register(Box::new(ViewSp::new(
                    id,
                    v.cfg.clone(),
                    membership.clone(),
                    proposer,
                    fault,
                )));
            }
            if let Some((m, initiators, targets)) = &maneuver {
                if p.kind == StationKind::Vehicle {
                    let w = wallet(id);
                    if m.cfg.promise_amount > 0 {
                        settlement.fund(
                            w.address(),
                            if initiators.contains(&id) { m.initial_balance } else { 0 },
                        );
                        meta.wallets.insert(id.0, w.address().0.to_hex());
                    }
                    let initiator = initiators.contains(&id);
                    let t = if initiator {
                        targets.iter().copied().filter(|t| *t != id).collect()
                    } else {
                        Vec::new()
                    };
                    engine.register(Box::new(ManeuverSp::new(id, m.cfg.clone(), initiator, t, Some(w))));
                }
            }
            if let Some((t, rsu)) = &tolling {
                let w = wallet(id);
                if id == *rsu {
                    settlement.fund(w.address(), 0);
                    meta.wallets.insert(id.0, w.address().0.to_hex());
                    let advert = TollAdvert {
                        zone: t.cfg.zone,
                        fee: t.cfg.fee,
                        provider: w.address(),
                    };
                    generators.push(Generator::Fixed(FixedGenerator {
                        msg_type: MsgType::Saem,
                        period_ms: t.saem_period_ms,
                        body: advert.encode(),
                        kinematics_prefix: false,
                    }));
                    engine.register(Box::new(TollProvider::new(id, w.address(), t.cfg.fee)));
                } else if p.kind == StationKind::Vehicle {
                    settlement.fund(w.address(), t.initial_balance);
                    meta.wallets.insert(id.0, w.address().0.to_hex());
                    engine.register(Box::new(TollClient::new(id, t.cfg.clone(), w)));
                }
            }
            specs.push(StationSpec {
                id,
                placement: p.placement,
                generators,
                engine,
                localchain_id: 1,
            });
        }
        meta.initial_supply = settlement.total_supply();

        let mut channel = self.channel.clone();
        channel.pdr = self.effective_pdr();
        let cfg = SimConfig {
            duration: SimTime::from_ms_f64(self.duration_s * 1000.0),
            seed: self.seed,
            channel,
            header: self.header.clone(),
            record_packets: self.record_packets,
        };
        Ok((Simulation::new(cfg, specs, keys, settlement), meta))
    }
}

/// Everything one run produced.
pub struct RunResult {
    pub scenario: Scenario,
    pub meta: ScenarioMeta,
    pub output: SimOutput,
    pub report: AnalyticReport,
}

impl RunResult {
    pub fn pbft_records(&self) -> impl Iterator<Item = &crate::vep::PbftRecord> {
        self.output.records.iter().filter_map(|r| match r {
            Record::Pbft(p) => Some(p),
            _ => None,
        })
    }

    pub fn delays(&self, sp: SpId, phase: &str) -> Vec<f64> {
        self.output
            .records
            .iter()
            .filter_map(|r| match r {
                Record::Delay(d) if d.sp_id == sp.0 && d.phase == phase => Some(d.delay_ms),
                _ => None,
            })
            .collect()
    }

    /// Decided delays seen by proposers.
    pub fn primary_delays(&self) -> Vec<f64> {
        self.pbft_records()
            .filter(|p| p.role == Role::Primary && p.outcome == Outcome::Decided)
            .filter_map(|p| p.delay_ms)
            .collect()
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn run(file: &ScenarioFile) -> Result<RunResult, ScenarioError> {
    let scenario = file.scenario()?;
    let (sim, meta) = scenario.build(&file.base_dir)?;
    let output = sim.run();
    let mut res = RunResult {
        scenario,
        meta,
        output,
        report: AnalyticReport::default(),
    };
    res.report = report(&res, &file.base_dir);
    Ok(res)
}

/// Theory next to simulation for whatever the scenario exercised.
fn report(res: &RunResult, base_dir: &FsPath) -> AnalyticReport {
    let s = &res.scenario;
    let m = &res.output.metrics;
    let mut r = AnalyticReport::default();
    r.input("scenario", &s.name)
        .input("seed", s.seed)
        .input("duration_s", s.duration_s)
        .input("pdr", s.effective_pdr());

    // a distribution shared by a set of stations, if there is exactly one
    let shared = |ids: &[u32]| -> Option<PeriodDistribution> {
        let names: std::collections::BTreeSet<&String> =
            ids.iter().filter_map(|i| res.meta.cam_distribution.get(i)).collect();
        if names.len() == 1 && ids.iter().all(|i| res.meta.cam_distribution.contains_key(i)) {
            s.distribution(names.into_iter().next().expect("one name"), base_dir)
                .ok()
        } else {
            None
        }
    };

    for name in s.distributions.keys() {
        if let Ok(d) = s.distribution(name, base_dir) {
            let w = analytics::waiting_time(&d);
            r.output(
                &format!("dist.{name}"),
                serde_json::json!({"mean_period_ms": d.mean(), "mean_waiting_ms": w.mean_ms}),
            );
        }
    }

    let packets = m.packets as f64;
    if m.extended_packets > 0 && packets > 0.0 {
        let le = m.ext_bytes as f64 / m.extended_packets as f64;
        let lp = (m.frame_bytes - m.ext_bytes) as f64 / packets;
        if let Ok(o) = analytics::overhead(le, lp, m.extended_packets as f64, packets) {
            r.output("overhead", o);
            r.compare("overhead_pct", o.expected_pct, m.overhead_pct);
        }
    }

    if let (Some(_), Some(d)) = (&s.view, shared(&res.meta.view_membership)) {
        let n = res.meta.view_membership.len();
        let sim = mean(&res.primary_delays());
        for (vp, key) in [
            (Viewpoint::Primary, "pbft_delay_primary_ms"),
            (Viewpoint::AllNodes, "pbft_delay_all_nodes_ms"),
        ] {
            if let Ok(t) = analytics::pbft_delay(&d, n, vp) {
                r.output(key, t);
                if let (Some(sim), Viewpoint::Primary) = (sim, vp) {
                    r.compare(key, t, sim);
                }
            }
        }
    }

    if s.maneuver.is_some() {
        let mut participants = res.meta.maneuver_initiators.clone();
        participants.extend(&res.meta.maneuver_targets);
        participants.sort();
        participants.dedup();
        // one initiator plus its targets verify each event
        let k = res.meta.maneuver_targets.len() + 1;
        if let Some(d) = shared(&participants) {
            if let Ok(t) = analytics::verification_delay(&d, k) {
                r.output("verification_delay_ms", t);
                if let Some(sim) = mean(&res.delays(SpId::MANEUVER, "verification")) {
                    r.compare("verification_delay_ms", t, sim);
                }
            }
        }
    }

    // queued delay by position in the queue; entries enqueued right as the
    // station transmits wait a whole period and are left out
    let mut by_j: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for q in res.output.queue_trace.iter().filter(|q| !q.tx_aligned) {
        by_j.entry(q.j).or_default().push(q.delay_ms);
    }
    let stations: Vec<u32> = res.meta.cam_distribution.keys().copied().collect();
    if let Some(d) = shared(&stations) {
        for (j, xs) in by_j.iter().take(4) {
            if xs.len() >= 30 {
                r.compare(
                    &format!("queued_delay_j{j}_ms"),
                    analytics::queued_delay(&d, *j),
                    mean(xs).unwrap_or(0.0),
                );
            }
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let mut v: toml::Value = toml::Value::Table(
            "name='x'\nduration_s=1\n[[group]]\ncount=3\n"
                .parse::<toml::Table>()
                .unwrap(),
        );
        apply_override(&mut v, "n", "7").unwrap();
        apply_override(&mut v, "view.pbft.tau_d_ms", "1000").unwrap();
        apply_override(&mut v, "pdr", "0.8").unwrap();
        assert_eq!(v["group"][0]["count"].as_integer(), Some(7));
        assert_eq!(v["view"]["pbft"]["tau_d_ms"].as_integer(), Some(1000));
        assert_eq!(v["pdr"].as_float(), Some(0.8));
        assert!(apply_override(&mut v, "group.5.count", "1").is_err());
    }

    #[test]
    fn sweep_product() {
        let a = parse_sweep("pdr=1.0,0.9").unwrap();
        let b = parse_sweep("n=4,7").unwrap();
        let pts = sweep_points(&[a, b]);
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[1], vec![("pdr".into(), "1.0".into()), ("n".into(), "7".into())]);
        assert!(parse_sweep("pdr").is_err());
    }
}
