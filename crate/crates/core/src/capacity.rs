//! Buffer and capacity dependencies `Q_w = f(Net, λ, H, σ_var)` and
//! `Net = φ(Q_w, λ, H, σ_var)`, obtained by simulation, and the per-window
//! control step that grows buffers and channel capacity ahead of overload.
//!
//! The table stores the smallest buffer, in units of mean per-slot traffic,
//! that keeps a single fluid queue's loss at or below the target for each
//! `(ρ, H, σ_var)` cell. Traffic for a cell is a lognormal fGn envelope with
//! the cell's H and coefficient of variation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{signature_of, FractalSignature};
use crate::generator::{compose_traffic, GeneratorSpec};

pub const TABLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rho: Vec<f64>,
    pub hurst: Vec<f64>,
    pub sigma_var: Vec<f64>,
    /// Slots per calibration trace.
    pub trace_len: usize,
    /// Largest probed buffer, in units of mean per-slot traffic.
    pub max_probe: f64,
    pub base_seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            rho: vec![0.3, 0.5, 0.7, 0.8, 0.9, 0.95],
            hurst: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            sigma_var: vec![0.5, 1.0, 2.0, 3.0, 4.0],
            trace_len: 1 << 16,
            max_probe: 16384.0,
            base_seed: 0x5EED,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        for (name, axis) in [
            ("rho", &self.rho),
            ("hurst", &self.hurst),
            ("sigma_var", &self.sigma_var),
        ] {
            if axis.is_empty() {
                return Err(Error::invalid(name, "grid axis is empty"));
            }
            if axis.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::invalid(
                    name,
                    "grid axis must be strictly increasing",
                ));
            }
        }
        if self.rho[0] <= 0.0 {
            return Err(Error::invalid("rho", "utilization must be > 0"));
        }
        if self.hurst.iter().any(|h| !(*h > 0.0 && *h < 1.0)) {
            return Err(Error::invalid("hurst", "values must lie in (0, 1)"));
        }
        if self.sigma_var[0] < 0.0 {
            return Err(Error::invalid("sigma_var", "values must be >= 0"));
        }
        if self.trace_len < 1024 {
            return Err(Error::invalid("trace_len", "at least 1024 slots"));
        }
        if !(self.max_probe > 0.0) {
            return Err(Error::invalid("max_probe", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub version: u32,
    pub loss_target: f64,
    pub seeds: usize,
    pub window: usize,
    pub base_seed: u64,
    pub max_probe: f64,
}

/// Calibrated cells indexed `[rho][hurst][sigma]`; saturated cells hold
/// `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    pub rho: Vec<f64>,
    pub hurst: Vec<f64>,
    pub sigma_var: Vec<f64>,
    cells: Vec<f64>,
    pub metadata: TableMetadata,
}

/// Interpolated buffer requirement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferQuery {
    /// Work units; infinite when saturated.
    pub buffer: f64,
    pub clamped: bool,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityQuery {
    pub capacity: f64,
    /// The answer sits on the table boundary.
    pub clamped: bool,
}

/// Loss fraction of a fluid queue with `capacity` service per slot and a
/// buffer of `buffer`, fed by `arrivals`.
pub fn fluid_loss(arrivals: &[f64], capacity: f64, buffer: f64) -> f64 {
    let mut q = 0.0f64;
    let mut lost = 0.0;
    let mut total = 0.0;
    for &a in arrivals {
        total += a;
        q = (q + a - capacity).max(0.0);
        if q > buffer {
            lost += q - buffer;
            q = buffer;
        }
    }
    if total > 0.0 {
        lost / total
    } else {
        0.0
    }
}

fn mean_loss(traces: &[Vec<f64>], capacity: f64, buffer: f64) -> f64 {
    traces
        .iter()
        .map(|t| fluid_loss(t, capacity, buffer))
        .sum::<f64>()
        / traces.len() as f64
}

/// Smallest buffer in `[0, max_probe]` with seed-mean loss at or below the
/// target, or `None` when even `max_probe` is not enough.
fn search_buffer(
    traces: &[Vec<f64>],
    capacity: f64,
    loss_target: f64,
    max_probe: f64,
) -> Option<f64> {
    if mean_loss(traces, capacity, 0.0) <= loss_target {
        return Some(0.0);
    }
    if mean_loss(traces, capacity, max_probe) > loss_target {
        return None;
    }
    let (mut lo, mut hi) = (0.0, max_probe);
    while hi - lo > 1e-3 * hi.max(1e-3) {
        let mid = 0.5 * (lo + hi);
        if mean_loss(traces, capacity, mid) <= loss_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

fn cell_seed(base: u64, hi: usize, si: usize, rep: usize) -> u64 {
    base ^ ((hi as u64) << 48) ^ ((si as u64) << 32) ^ rep as u64
}

/// Runs the calibration and returns the isotonic table.
///
/// Every `(H, σ_var)` pair shares its traffic realizations across the ρ
/// axis; only the service rate changes. Cells with `ρ >= 1` are saturated.
pub fn calibrate(grid: &GridSpec, loss_target: f64, seeds: usize) -> Result<CalibrationTable> {
    grid.validate()?;
    if !(loss_target > 0.0 && loss_target <= 0.2) {
        return Err(Error::invalid(
            "loss_target",
            format!("must lie in (0, 0.2], got {loss_target}"),
        ));
    }
    if seeds == 0 {
        return Err(Error::invalid("seeds", "at least one replication"));
    }
    let (nr, nh, ns) = (grid.rho.len(), grid.hurst.len(), grid.sigma_var.len());
    let pairs: Vec<(usize, usize)> = (0..nh).flat_map(|h| (0..ns).map(move |s| (h, s))).collect();

    let columns: Vec<Result<Vec<f64>>> = pairs
        .par_iter()
        .map(|&(hi, si)| {
            let traces = (0..seeds)
                .map(|rep| {
                    let spec = GeneratorSpec::new(
                        grid.hurst[hi],
                        1.0,
                        grid.trace_len,
                        cell_seed(grid.base_seed, hi, si, rep),
                    )
                    .with_envelope_cv(grid.sigma_var[si]);
                    compose_traffic(&spec).map(|t| t.into_values())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(grid
                .rho
                .iter()
                .map(|&rho| {
                    if rho >= 1.0 {
                        f64::INFINITY
                    } else {
                        search_buffer(&traces, 1.0 / rho, loss_target, grid.max_probe)
                            .unwrap_or(f64::INFINITY)
                    }
                })
                .collect())
        })
        .collect();

    let mut cells = vec![0.0; nr * nh * ns];
    for (&(hi, si), col) in pairs.iter().zip(columns) {
        for (ri, v) in col?.into_iter().enumerate() {
            cells[(ri * nh + hi) * ns + si] = v;
        }
    }
    let mut table = CalibrationTable {
        rho: grid.rho.clone(),
        hurst: grid.hurst.clone(),
        sigma_var: grid.sigma_var.clone(),
        cells,
        metadata: TableMetadata {
            version: TABLE_VERSION,
            loss_target,
            seeds,
            window: grid.trace_len,
            base_seed: grid.base_seed,
            max_probe: grid.max_probe,
        },
    };
    table.make_isotonic();
    Ok(table)
}

/// Position of `x` on an increasing axis: lower index, fractional weight, clamped flag.
fn locate(axis: &[f64], x: f64) -> (usize, f64, bool) {
    let n = axis.len();
    if n == 1 {
        return (0, 0.0, x != axis[0]);
    }
    if x <= axis[0] {
        return (0, 0.0, x < axis[0]);
    }
    if x >= axis[n - 1] {
        return (n - 2, 1.0, x > axis[n - 1]);
    }
    let i = axis.partition_point(|a| *a <= x) - 1;
    let t = (x - axis[i]) / (axis[i + 1] - axis[i]);
    (i, t, false)
}

fn lerp(v0: f64, v1: f64, t: f64) -> f64 {
    if t == 0.0 {
        return v0;
    }
    if t == 1.0 {
        return v1;
    }
    if v0.is_infinite() || v1.is_infinite() {
        return f64::INFINITY;
    }
    // bounded by the corners so the result stays monotone across cell edges
    (v0 + t * (v1 - v0)).clamp(v0.min(v1), v0.max(v1))
}

impl CalibrationTable {
    /// Builds a table from explicit cells indexed `[rho][hurst][sigma]`.
    pub fn from_cells(
        rho: Vec<f64>,
        hurst: Vec<f64>,
        sigma_var: Vec<f64>,
        cells: Vec<f64>,
        metadata: TableMetadata,
    ) -> Result<Self> {
        if cells.len() != rho.len() * hurst.len() * sigma_var.len() {
            return Err(Error::invalid("cells", "length does not match the grid"));
        }
        if cells.iter().any(|c| c.is_nan() || *c < 0.0) {
            return Err(Error::invalid("cells", "values must be >= 0 or infinite"));
        }
        Ok(CalibrationTable {
            rho,
            hurst,
            sigma_var,
            cells,
            metadata,
        })
    }

    fn idx(&self, r: usize, h: usize, s: usize) -> usize {
        (r * self.hurst.len() + h) * self.sigma_var.len() + s
    }

    pub fn cell(&self, r: usize, h: usize, s: usize) -> f64 {
        self.cells[self.idx(r, h, s)]
    }

    pub fn is_saturated(&self, r: usize, h: usize, s: usize) -> bool {
        self.cell(r, h, s).is_infinite()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.rho.len(), self.hurst.len(), self.sigma_var.len())
    }

    /// Running maximum along ρ, then H, then σ_var. Each pass keeps the
    /// monotonicity established by the earlier ones.
    pub fn make_isotonic(&mut self) {
        let (nr, nh, ns) = self.dims();
        for h in 0..nh {
            for s in 0..ns {
                for r in 1..nr {
                    let (a, b) = (self.idx(r - 1, h, s), self.idx(r, h, s));
                    self.cells[b] = self.cells[b].max(self.cells[a]);
                }
            }
        }
        for r in 0..nr {
            for s in 0..ns {
                for h in 1..nh {
                    let (a, b) = (self.idx(r, h - 1, s), self.idx(r, h, s));
                    self.cells[b] = self.cells[b].max(self.cells[a]);
                }
            }
        }
        for r in 0..nr {
            for h in 0..nh {
                for s in 1..ns {
                    let (a, b) = (self.idx(r, h, s - 1), self.idx(r, h, s));
                    self.cells[b] = self.cells[b].max(self.cells[a]);
                }
            }
        }
    }

    pub fn is_isotonic(&self) -> bool {
        let (nr, nh, ns) = self.dims();
        (0..nr).all(|r| {
            (0..nh).all(|h| {
                (0..ns).all(|s| {
                    let v = self.cell(r, h, s);
                    (r == 0 || self.cell(r - 1, h, s) <= v)
                        && (h == 0 || self.cell(r, h - 1, s) <= v)
                        && (s == 0 || self.cell(r, h, s - 1) <= v)
                })
            })
        })
    }

    /// Normalized buffer at `(ρ, H, σ_var)`. H and σ_var are combined first
    /// and ρ last, which keeps the result monotone in ρ.
    pub fn buffer_norm(&self, rho: f64, h: f64, sigma: f64) -> BufferQuery {
        let (hi, ht, hc) = locate(&self.hurst, h);
        let (si, st, sc) = locate(&self.sigma_var, sigma);
        let (ri, rt, rc) = locate(&self.rho, rho);
        let nh1 = (hi + 1).min(self.hurst.len() - 1);
        let ns1 = (si + 1).min(self.sigma_var.len() - 1);
        let nr1 = (ri + 1).min(self.rho.len() - 1);
        let at_rho = |r: usize| {
            let lo_h = lerp(self.cell(r, hi, si), self.cell(r, hi, ns1), st);
            let hi_h = lerp(self.cell(r, nh1, si), self.cell(r, nh1, ns1), st);
            lerp(lo_h, hi_h, ht)
        };
        let v = lerp(at_rho(ri), at_rho(nr1), rt);
        let saturated = v.is_infinite() || rho >= 1.0;
        BufferQuery {
            buffer: if saturated { f64::INFINITY } else { v },
            clamped: hc || sc || rc,
            saturated,
        }
    }

    /// Buffer in work units needed at capacity `net` for mean intensity `lambda`.
    pub fn required_buffer(&self, net: f64, lambda: f64, h: f64, sigma: f64) -> BufferQuery {
        if lambda <= 0.0 {
            return BufferQuery {
                buffer: 0.0,
                clamped: false,
                saturated: false,
            };
        }
        if !(net > lambda) {
            return BufferQuery {
                buffer: f64::INFINITY,
                clamped: false,
                saturated: true,
            };
        }
        let q = self.buffer_norm(lambda / net, h, sigma);
        BufferQuery {
            buffer: q.buffer * lambda,
            ..q
        }
    }

    /// Smallest capacity whose required buffer fits in `buffer`, found by
    /// bisection on the table's ρ range.
    pub fn required_capacity(&self, buffer: f64, lambda: f64, h: f64, sigma: f64) -> CapacityQuery {
        let rho_max = *self.rho.last().expect("non-empty axis");
        let rho_min = self.rho[0];
        if lambda <= 0.0 {
            return CapacityQuery {
                capacity: 0.0,
                clamped: false,
            };
        }
        let fits = |net: f64| {
            let q = self.required_buffer(net, lambda, h, sigma);
            !q.saturated && q.buffer <= buffer
        };
        let mut lo = lambda / rho_max.min(1.0);
        let mut hi = lambda / rho_min;
        if fits(lo) {
            return CapacityQuery {
                capacity: lo,
                clamped: true,
            };
        }
        if !fits(hi) {
            return CapacityQuery {
                capacity: hi,
                clamped: true,
            };
        }
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if fits(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        CapacityQuery {
            capacity: hi,
            clamped: false,
        }
    }

    fn sidecar(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    /// Writes the CSV table and its `.meta.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["rho", "H", "sigma_var", "buffer_norm", "saturated"])?;
        let (nr, nh, ns) = self.dims();
        for r in 0..nr {
            for h in 0..nh {
                for s in 0..ns {
                    let v = self.cell(r, h, s);
                    w.write_record([
                        format!("{:?}", self.rho[r]),
                        format!("{:?}", self.hurst[h]),
                        format!("{:?}", self.sigma_var[s]),
                        format!("{v:?}"),
                        v.is_infinite().to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        let mut meta = BufWriter::new(File::create(Self::sidecar(path))?);
        serde_json::to_writer_pretty(&mut meta, &self.metadata)?;
        meta.write_all(b"\n")?;
        meta.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::config(path.display().to_string(), reason);
        let metadata: TableMetadata =
            serde_json::from_reader(BufReader::new(File::open(Self::sidecar(path))?))?;
        if metadata.version != TABLE_VERSION {
            return Err(bad(format!(
                "unsupported table version {}",
                metadata.version
            )));
        }
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>()
            != ["rho", "H", "sigma_var", "buffer_norm", "saturated"]
        {
            return Err(bad("unexpected header".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| bad(format!("bad number in column {i}")))
            };
            let saturated = rec.get(4).map(|s| s == "true").unwrap_or(false);
            let v = if saturated { f64::INFINITY } else { num(3)? };
            rows.push((num(0)?, num(1)?, num(2)?, v));
        }
        let axis = |f: fn(&(f64, f64, f64, f64)) -> f64| {
            let mut a: Vec<f64> = rows.iter().map(f).collect();
            a.sort_by(f64::total_cmp);
            a.dedup();
            a
        };
        let rho = axis(|r| r.0);
        let hurst = axis(|r| r.1);
        let sigma_var = axis(|r| r.2);
        if rows.len() != rho.len() * hurst.len() * sigma_var.len() {
            return Err(bad("rows do not form a full grid".into()));
        }
        rows.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.total_cmp(&b.2))
        });
        let cells = rows.into_iter().map(|r| r.3).collect();
        Self::from_cells(rho, hurst, sigma_var, cells, metadata)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    None,
    GrowBuffer,
    GrowCapacity,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provision {
    pub buffer: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub window_index: u64,
    pub signature: Option<FractalSignature>,
    pub current: Provision,
    pub recommended: Provision,
    pub action: ControlAction,
    /// Set when the window could not be characterized.
    pub degenerate: bool,
    pub saturated: bool,
}

/// One monitoring step: characterize the window, look up the buffer needed
/// at the current capacity and the capacity needed with the current buffer,
/// and recommend growth where either exceeds what is provisioned. A pure
/// function of its inputs.
pub fn control_step(
    table: &CalibrationTable,
    window_index: u64,
    window: &[f64],
    current: Provision,
) -> ControlDecision {
    let sig = match signature_of(window) {
        Ok(s) => s,
        Err(_) => {
            return ControlDecision {
                window_index,
                signature: None,
                current,
                recommended: current,
                action: ControlAction::None,
                degenerate: true,
                saturated: false,
            }
        }
    };
    let lambda = sig.intensity_lambda;
    let q = table.required_buffer(current.capacity, lambda, sig.hurst_h, sig.sigma_var);
    let net = table.required_capacity(current.buffer, lambda, sig.hurst_h, sig.sigma_var);
    let recommended = Provision {
        buffer: q.buffer,
        capacity: net.capacity,
    };
    let grow_buffer = recommended.buffer > current.buffer && !q.saturated;
    let grow_capacity = recommended.capacity > current.capacity || q.saturated;
    let action = match (grow_buffer, grow_capacity) {
        (false, false) => ControlAction::None,
        (true, false) => ControlAction::GrowBuffer,
        (false, true) => ControlAction::GrowCapacity,
        (true, true) => ControlAction::Both,
    };
    ControlDecision {
        window_index,
        signature: Some(sig),
        current,
        recommended,
        action,
        degenerate: false,
        saturated: q.saturated,
    }
}
