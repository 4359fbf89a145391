//! Link environment: node placement, log-distance path loss with log-normal
//! shadowing, Rayleigh fading and per-node transmit power imbalance.
//!
//! SNR from transmitter `m` at receiver `n`:
//!
//! ```text
//! snr = gamma0 + psi_m + phi_nm + 10 log10 |h_nm|^2 - 10 eta log10(d_nm / d0)
//! ```
//!
//! A link is accessible when `snr > gamma_min`. Shadowing and fading are
//! symmetric per pair, so only the imbalance term makes links one-way.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("deployment dimension must be positive: {0}")]
    NonPositiveDimension(&'static str),
    #[error("nodes {0} and {1} share a position")]
    CoincidentNodes(usize, usize),
    #[error("invalid channel parameter: {0}")]
    InvalidParam(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

fn default_origin() -> Point {
    Point::new(0.0, 0.0)
}

/// Where a group of nodes is placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Deployment {
    /// `rows x cols` lattice, row-major from `origin`.
    Grid {
        rows: u32,
        cols: u32,
        dx: f64,
        dy: f64,
        #[serde(default = "default_origin")]
        origin: Point,
    },
    /// `count` points, each offset by `(dx, dy)` from the previous one.
    Line {
        count: u32,
        dx: f64,
        dy: f64,
        #[serde(default = "default_origin")]
        origin: Point,
    },
    UniformRandom { width: f64, height: f64, count: u32 },
    Explicit { points: Vec<Point> },
}

impl Deployment {
    pub fn count(&self) -> usize {
        match self {
            Deployment::Grid { rows, cols, .. } => (*rows * *cols) as usize,
            Deployment::Line { count, .. } | Deployment::UniformRandom { count, .. } => *count as usize,
            Deployment::Explicit { points } => points.len(),
        }
    }
}

pub fn place_nodes(spec: &Deployment, rng: &mut impl Rng) -> Result<Vec<Point>, ChannelError> {
    match *spec {
        Deployment::Grid { rows, cols, dx, dy, origin } => {
            if rows == 0 || cols == 0 {
                return Err(ChannelError::NonPositiveDimension("grid rows/cols"));
            }
            if dx <= 0.0 || dy <= 0.0 {
                return Err(ChannelError::NonPositiveDimension("grid spacing"));
            }
            Ok((0..rows)
                .flat_map(|r| (0..cols).map(move |c| Point::new(origin.x + c as f64 * dx, origin.y + r as f64 * dy)))
                .collect())
        }
        Deployment::Line { count, dx, dy, origin } => {
            if count == 0 {
                return Err(ChannelError::NonPositiveDimension("line count"));
            }
            if dx == 0.0 && dy == 0.0 && count > 1 {
                return Err(ChannelError::NonPositiveDimension("line step"));
            }
            Ok((0..count).map(|k| Point::new(origin.x + k as f64 * dx, origin.y + k as f64 * dy)).collect())
        }
        Deployment::UniformRandom { width, height, count } => {
            if !(width > 0.0) || !(height > 0.0) {
                return Err(ChannelError::NonPositiveDimension("area width/height"));
            }
            if count == 0 {
                return Err(ChannelError::NonPositiveDimension("node count"));
            }
            Ok((0..count)
                .map(|_| Point::new(rng.random_range(0.0..=width), rng.random_range(0.0..=height)))
                .collect())
        }
        Deployment::Explicit { ref points } => Ok(points.clone()),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FadingMode {
    /// One Rayleigh draw per node pair for the whole realization.
    #[default]
    Static,
    /// Fresh draw for every directed transmission.
    PerPacket,
    /// `|h|^2 = 1` everywhere; for hand-built deterministic topologies.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub eta: f64,
    pub shadow_sigma_db: f64,
    pub gamma0_db: f64,
    pub d0_m: f64,
    pub gamma_min_db: f64,
    pub imbalance_sigma_db: f64,
    #[serde(default)]
    pub fading_mode: FadingMode,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            eta: 3.7,
            shadow_sigma_db: 6.0,
            gamma0_db: 20.0,
            d0_m: 10.0,
            gamma_min_db: -5.0,
            imbalance_sigma_db: 3.0,
            fading_mode: FadingMode::Static,
        }
    }
}

impl ChannelParams {
    /// No randomness at all: SNR depends on distance (and imbalance overrides) only.
    pub fn deterministic() -> Self {
        Self { shadow_sigma_db: 0.0, imbalance_sigma_db: 0.0, fading_mode: FadingMode::None, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.eta > 0.0) {
            return Err(ChannelError::InvalidParam("eta must be > 0"));
        }
        if !(self.d0_m > 0.0) {
            return Err(ChannelError::InvalidParam("d0_m must be > 0"));
        }
        if !(self.shadow_sigma_db >= 0.0) || !(self.imbalance_sigma_db >= 0.0) {
            return Err(ChannelError::InvalidParam("standard deviations must be >= 0"));
        }
        Ok(())
    }
}

/// God-view realization of every link in a network.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkTable {
    params: ChannelParams,
    coords: Vec<Point>,
    // n x n, symmetric, diagonal unused
    shadow_db: Vec<f64>,
    fade_power: Vec<f64>,
    imbalance_db: Vec<f64>,
}

/// One Rayleigh power draw: exponential with unit mean.
pub fn draw_fade(rng: &mut impl Rng) -> f64 {
    Exp1.sample(rng)
}

pub fn realize_links(coords: &[Point], params: &ChannelParams, rng: &mut impl Rng) -> Result<LinkTable, ChannelError> {
    params.validate()?;
    let n = coords.len();
    for i in 0..n {
        for j in i + 1..n {
            if coords[i].distance(coords[j]) <= 0.0 {
                return Err(ChannelError::CoincidentNodes(i, j));
            }
        }
    }
    let shadow = Normal::new(0.0, params.shadow_sigma_db).expect("validated sigma");
    let imbalance = Normal::new(0.0, params.imbalance_sigma_db).expect("validated sigma");
    let mut shadow_db = vec![0.0; n * n];
    let mut fade_power = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let phi = shadow.sample(rng);
            shadow_db[i * n + j] = phi;
            shadow_db[j * n + i] = phi;
        }
    }
    if params.fading_mode != FadingMode::None {
        for i in 0..n {
            for j in i + 1..n {
                let h2 = draw_fade(rng);
                fade_power[i * n + j] = h2;
                fade_power[j * n + i] = h2;
            }
        }
    }
    let imbalance_db = (0..n).map(|_| imbalance.sample(rng)).collect();
    Ok(LinkTable { params: params.clone(), coords: coords.to_vec(), shadow_db, fade_power, imbalance_db })
}

/// Per-node true neighbor sets (node indices).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrueNeighbors {
    /// Nodes whose frames this node can decode.
    pub heard: Vec<usize>,
    /// Nodes decodable in both directions.
    pub bidirectional: Vec<usize>,
}

impl LinkTable {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.coords[a].distance(self.coords[b])
    }

    pub fn shadow_db(&self, a: usize, b: usize) -> f64 {
        self.shadow_db[a * self.len() + b]
    }

    pub fn fade_power(&self, a: usize, b: usize) -> f64 {
        self.fade_power[a * self.len() + b]
    }

    pub fn imbalance_db(&self, node: usize) -> f64 {
        self.imbalance_db[node]
    }

    /// Pins a node's transmit power offset, e.g. to model an attenuator.
    pub fn set_imbalance_db(&mut self, node: usize, value: f64) {
        self.imbalance_db[node] = value;
    }

    /// SNR of `tx`'s signal at `rx` with an explicit fading power.
    pub fn snr_db_with_fade(&self, tx: usize, rx: usize, fade_power: f64) -> f64 {
        let p = &self.params;
        p.gamma0_db + self.imbalance_db[tx] + self.shadow_db(rx, tx) + 10.0 * fade_power.log10()
            - 10.0 * p.eta * (self.distance(rx, tx) / p.d0_m).log10()
    }

    pub fn snr_db(&self, tx: usize, rx: usize) -> f64 {
        self.snr_db_with_fade(tx, rx, self.fade_power(rx, tx))
    }

    pub fn decodable(&self, snr_db: f64) -> bool {
        snr_db > self.params.gamma_min_db
    }

    /// Whether `rx` can decode `tx`.
    pub fn accessible(&self, tx: usize, rx: usize) -> bool {
        tx != rx && self.decodable(self.snr_db(tx, rx))
    }

    /// Receivers that can decode `tx`.
    pub fn hearers(&self, tx: usize) -> Vec<usize> {
        (0..self.len()).filter(|&rx| self.accessible(tx, rx)).collect()
    }

    pub fn true_neighbor_sets(&self) -> Vec<TrueNeighbors> {
        let n = self.len();
        (0..n)
            .map(|node| {
                let heard: Vec<usize> = (0..n).filter(|&m| self.accessible(m, node)).collect();
                let bidirectional = heard.iter().copied().filter(|&m| self.accessible(node, m)).collect();
                TrueNeighbors { heard, bidirectional }
            })
            .collect()
    }

    /// CSV dump, one row per ordered pair. Node columns are 1-based IDs; `n`
    /// receives and `m` transmits.
    pub fn write_csv(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "n,m,d_m,phi_db,h2,psi_m_db,snr_db,accessible")?;
        for rx in 0..self.len() {
            for tx in 0..self.len() {
                if rx == tx {
                    continue;
                }
                writeln!(
                    out,
                    "{},{},{:.3},{:.4},{:.6},{:.4},{:.4},{}",
                    rx + 1,
                    tx + 1,
                    self.distance(rx, tx),
                    self.shadow_db(rx, tx),
                    self.fade_power(rx, tx),
                    self.imbalance_db[tx],
                    self.snr_db(tx, rx),
                    u8::from(self.accessible(tx, rx))
                )?;
            }
        }
        Ok(())
    }
}
