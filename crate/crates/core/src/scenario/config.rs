//! Scenario files (TOML): methods, classes, topology, servers and flows.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queue::ServiceClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CapacityControl,
    FractalRouting,
    LoadBalancing,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::CapacityControl,
        Method::FractalRouting,
        Method::LoadBalancing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::CapacityControl => "capacity_control",
            Method::FractalRouting => "fractal_routing",
            Method::LoadBalancing => "load_balancing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub name: String,
    pub a: String,
    pub b: String,
    pub base_cost: f64,
    /// Service work units per slot.
    pub capacity: f64,
    /// Ceiling for capacity growth; defaults to `capacity`.
    #[serde(default)]
    pub max_capacity: Option<f64>,
    /// Shared buffer in work units. Ignored when `classical_buffer` is set.
    #[serde(default)]
    pub buffer: f64,
    /// Size the buffer from the calibration table for independent,
    /// low-variability traffic at the link's nominal load.
    #[serde(default)]
    pub classical_buffer: bool,
    /// Ceiling for buffer growth; defaults to unbounded.
    #[serde(default)]
    pub max_buffer: Option<f64>,
    /// Low-priority storage area; defaults to a quarter of the buffer.
    #[serde(default)]
    pub storage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub id: String,
    pub node: String,
    /// Processing work units per slot.
    pub cpu: f64,
    /// Intake work units per slot.
    pub net: f64,
    /// Buffered work units.
    pub ram: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub id: String,
    pub class: u32,
    pub src: String,
    /// Server used while load balancing is off, and the initial one.
    pub server: String,
    pub hurst: f64,
    /// Mean work units per slot.
    pub intensity: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub depth: u32,
    #[serde(default = "default_cv")]
    pub envelope_cv: f64,
}

fn default_weight() -> f64 {
    0.5
}

fn default_cv() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub slots: u64,
    #[serde(default = "default_window")]
    pub window: u64,
    #[serde(default = "default_warmup")]
    pub warmup_windows: u64,
    #[serde(default = "default_slot_ms")]
    pub slot_duration_ms: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub methods: Vec<Method>,
    /// Calibration table CSV, relative to the scenario file.
    pub table: PathBuf,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_p_eject")]
    pub p_eject: f64,
    #[serde(default = "default_loss_target")]
    pub loss_target: f64,
    /// Largest packet in work units.
    #[serde(default = "default_packet")]
    pub max_packet: u64,
    /// Announcement interval in slots; defaults to the window length.
    #[serde(default)]
    pub announce_interval: Option<u64>,
    /// Fraction of a link's capacity that routing may reserve.
    #[serde(default = "default_reservable")]
    pub reservable_fraction: f64,
    /// Utilization at which the burst headroom factor is read.
    #[serde(default = "default_rho_ref")]
    pub rho_ref: f64,
    /// Forecast-imbalance gain a rebalance must offer before flows migrate.
    #[serde(default)]
    pub migration_margin: f64,
    /// Relative objective gain a fresh routing must offer over keeping the
    /// current paths.
    #[serde(default)]
    pub reroute_margin: f64,
    pub nodes: Vec<String>,
    pub classes: Vec<ServiceClass>,
    pub links: Vec<LinkConfig>,
    pub servers: Vec<ServerConfig>,
    pub flows: Vec<FlowConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_window() -> u64 {
    1024
}
fn default_warmup() -> u64 {
    2
}
fn default_slot_ms() -> f64 {
    1.0
}
fn default_c0() -> f64 {
    10.0
}
fn default_p_eject() -> f64 {
    1.0
}
fn default_loss_target() -> f64 {
    0.01
}
fn default_packet() -> u64 {
    8
}
fn default_reservable() -> f64 {
    0.9
}
fn default_rho_ref() -> f64 {
    0.7
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &dir)
    }

    pub fn table_path(&self) -> PathBuf {
        self.base_dir.join(&self.table)
    }

    pub fn enabled(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    pub fn with_methods(&self, methods: &[Method]) -> Self {
        let mut c = self.clone();
        c.methods = methods.to_vec();
        c
    }

    pub fn announce_interval(&self) -> u64 {
        self.announce_interval.unwrap_or(self.window)
    }

    pub fn class(&self, id: u32) -> Option<&ServiceClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |path: String, reason: &str| Err(Error::config(path, reason));
        if self.window < 512 {
            return err("window".into(), "must be at least 512 slots");
        }
        if !self.slots.is_multiple_of(self.window) {
            return err("slots".into(), "must be a whole number of windows");
        }
        if self.slots < 4 * self.window {
            return err("slots".into(), "run length must cover at least 4 windows");
        }
        if self.warmup_windows + 1 >= self.slots / self.window {
            return err("warmup_windows".into(), "leaves no measured window");
        }
        if self.seeds.is_empty() {
            return err("seeds".into(), "at least one seed");
        }
        if !(self.slot_duration_ms > 0.0) {
            return err("slot_duration_ms".into(), "must be > 0");
        }
        if !(self.c0 > 0.0) {
            return err("c0".into(), "must be > 0");
        }
        if !(0.0..=1.0).contains(&self.p_eject) {
            return err("p_eject".into(), "must lie in [0, 1]");
        }
        if !(self.loss_target > 0.0 && self.loss_target <= 0.2) {
            return err("loss_target".into(), "must lie in (0, 0.2]");
        }
        if self.max_packet == 0 {
            return err("max_packet".into(), "must be >= 1");
        }
        if self.announce_interval == Some(0) {
            return err("announce_interval".into(), "must be > 0");
        }
        if !(self.reroute_margin >= 0.0 && self.reroute_margin.is_finite()) {
            return err(
                "reroute_margin".into(),
                "must be a finite non-negative number",
            );
        }
        if !(self.migration_margin >= 0.0 && self.migration_margin.is_finite()) {
            return err(
                "migration_margin".into(),
                "must be a finite non-negative number",
            );
        }
        if !(self.reservable_fraction > 0.0 && self.reservable_fraction <= 1.0) {
            return err("reservable_fraction".into(), "must lie in (0, 1]");
        }
        if self.classes.is_empty() {
            return err("classes".into(), "at least one class");
        }
        for (i, c) in self.classes.iter().enumerate() {
            c.validate()
                .map_err(|e| Error::config(format!("classes[{i}]"), e.to_string()))?;
        }
        let node = |n: &str| self.nodes.iter().any(|x| x == n);
        for (i, l) in self.links.iter().enumerate() {
            if !node(&l.a) || !node(&l.b) {
                return err(format!("links[{i}]"), "endpoint is not a declared node");
            }
            if !(l.capacity > 0.0 && l.base_cost > 0.0) {
                return err(format!("links[{i}]"), "capacity and base_cost must be > 0");
            }
            if l.max_capacity.is_some_and(|m| m < l.capacity) {
                return err(format!("links[{i}].max_capacity"), "below capacity");
            }
            if !l.classical_buffer && !(l.buffer >= 1.0) {
                return err(format!("links[{i}].buffer"), "must be >= 1 work unit");
            }
        }
        if self.servers.is_empty() {
            return err("servers".into(), "at least one server");
        }
        for (i, s) in self.servers.iter().enumerate() {
            if !node(&s.node) {
                return err(format!("servers[{i}].node"), "not a declared node");
            }
            if !(s.cpu > 0.0 && s.net > 0.0 && s.ram > 0.0) {
                return err(format!("servers[{i}]"), "cpu, net and ram must be > 0");
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            if self.class(f.class).is_none() {
                return err(format!("flows[{i}].class"), "unknown class");
            }
            if !node(&f.src) {
                return err(format!("flows[{i}].src"), "not a declared node");
            }
            if !self.servers.iter().any(|s| s.id == f.server) {
                return err(format!("flows[{i}].server"), "unknown server");
            }
            if !(f.hurst > 0.0 && f.hurst < 1.0) {
                return err(format!("flows[{i}].hurst"), "must lie in (0, 1)");
            }
            if !(f.intensity > 0.0) {
                return err(format!("flows[{i}].intensity"), "must be > 0");
            }
            if f.depth > 0 && !(f.weight > 0.5 && f.weight < 1.0) {
                return err(
                    format!("flows[{i}].weight"),
                    "must lie in (0.5, 1) when depth > 0",
                );
            }
        }
        let path = self.table_path();
        if !path.exists() {
            return err(
                "table".into(),
                &format!("file {} does not exist", path.display()),
            );
        }
        Ok(())
    }
}
