//! Network topology, channel realizations and channel-uncertainty models.
//!
//! A [`NetworkInstance`] is the single source of problem data for every
//! solver. It is immutable once built and may be shared across worker
//! threads.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, frob_sq, CMat};
use crate::rng::{complex_gaussian, derive_seed, stream_rng, tag};

/// Reference distance (meters) of the path-loss law `(200 / dist)^3`.
pub const PATHLOSS_REFERENCE_M: f64 = 200.0;

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub num_bs: usize,
    pub num_users: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub tones: usize,
    pub slots: usize,
}

impl Dims {
    pub fn resources(&self) -> usize {
        self.tones * self.slots
    }

    /// Linear index of `(q, i, f, t)` in a channel tensor.
    pub fn channel_index(&self, q: usize, i: usize, f: usize, t: usize) -> usize {
        ((q * self.num_users + i) * self.tones + f) * self.slots + t
    }

    pub fn num_channels(&self) -> usize {
        self.num_bs * self.num_users * self.resources()
    }

    fn validate(&self) -> Result<()> {
        let d = self;
        if d.num_bs == 0 || d.num_users == 0 || d.tx_antennas == 0 || d.rx_antennas == 0 || d.tones == 0 || d.slots == 0 {
            return Err(Error::Config(format!("all dimensions must be at least 1: {d:?}")));
        }
        Ok(())
    }
}

/// Complete description of one network realization.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    dims: Dims,
    channels: Vec<CMat>,
    noise_power: Vec<f64>,
    power_budget: Vec<f64>,
    link_gain: Vec<f64>,
    home_bs: Vec<usize>,
    bs_positions: Vec<[f64; 2]>,
    user_positions: Vec<[f64; 2]>,
}

/// Raw parts of a [`NetworkInstance`], validated by [`NetworkInstance::new`].
#[derive(Debug, Clone)]
pub struct InstanceParts {
    pub dims: Dims,
    pub channels: Vec<CMat>,
    pub noise_power: Vec<f64>,
    pub power_budget: Vec<f64>,
    /// Long-term gain per `(q, i)`; estimated from the channels when empty.
    pub link_gain: Vec<f64>,
    /// Default serving BS per user; `i % num_bs` when empty.
    pub home_bs: Vec<usize>,
    pub bs_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
}

impl NetworkInstance {
    /// Checked constructor.
    pub fn new(parts: InstanceParts) -> Result<Self> {
        let InstanceParts {
            dims,
            channels,
            noise_power,
            power_budget,
            mut link_gain,
            mut home_bs,
            mut bs_positions,
            mut user_positions,
        } = parts;
        dims.validate()?;
        if channels.len() != dims.num_channels() {
            return Err(Error::Dimension(format!(
                "expected {} channel matrices, got {}",
                dims.num_channels(),
                channels.len()
            )));
        }
        if let Some(h) = channels
            .iter()
            .find(|h| h.nrows() != dims.rx_antennas || h.ncols() != dims.tx_antennas)
        {
            return Err(Error::Dimension(format!(
                "channel matrix is {}x{}, expected {}x{}",
                h.nrows(),
                h.ncols(),
                dims.rx_antennas,
                dims.tx_antennas
            )));
        }
        if channels.iter().any(|h| h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(Error::Domain("channel entries must be finite".into()));
        }
        if noise_power.len() != dims.num_users || noise_power.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("noise_power needs one positive value per user".into()));
        }
        if power_budget.len() != dims.num_bs || power_budget.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Config("power_budget needs one positive value per BS".into()));
        }
        if link_gain.is_empty() {
            link_gain = (0..dims.num_bs * dims.num_users)
                .map(|k| {
                    let (q, i) = (k / dims.num_users, k % dims.num_users);
                    let mut s = 0.0;
                    for f in 0..dims.tones {
                        for t in 0..dims.slots {
                            s += frob_sq(&channels[dims.channel_index(q, i, f, t)]);
                        }
                    }
                    s / (dims.resources() * dims.rx_antennas * dims.tx_antennas) as f64
                })
                .collect();
        }
        if link_gain.len() != dims.num_bs * dims.num_users || link_gain.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::Config("link_gain needs one nonnegative value per (bs, user)".into()));
        }
        if home_bs.is_empty() {
            home_bs = (0..dims.num_users).map(|i| i % dims.num_bs).collect();
        }
        if home_bs.len() != dims.num_users || home_bs.iter().any(|&q| q >= dims.num_bs) {
            return Err(Error::Config("home_bs needs one valid BS index per user".into()));
        }
        if bs_positions.is_empty() {
            bs_positions = vec![[0.0, 0.0]; dims.num_bs];
        }
        if user_positions.is_empty() {
            user_positions = vec![[0.0, 0.0]; dims.num_users];
        }
        if bs_positions.len() != dims.num_bs || user_positions.len() != dims.num_users {
            return Err(Error::Dimension("position lists do not match the BS/user counts".into()));
        }
        Ok(NetworkInstance {
            dims,
            channels,
            noise_power,
            power_budget,
            link_gain,
            home_bs,
            bs_positions,
            user_positions,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_bs(&self) -> usize {
        self.dims.num_bs
    }

    pub fn num_users(&self) -> usize {
        self.dims.num_users
    }

    pub fn channel(&self, q: usize, i: usize, f: usize, t: usize) -> &CMat {
        &self.channels[self.dims.channel_index(q, i, f, t)]
    }

    pub fn channels(&self) -> &[CMat] {
        &self.channels
    }

    pub fn noise_power(&self, i: usize) -> f64 {
        self.noise_power[i]
    }

    pub fn noise_powers(&self) -> &[f64] {
        &self.noise_power
    }

    pub fn power_budget(&self, q: usize) -> f64 {
        self.power_budget[q]
    }

    pub fn power_budgets(&self) -> &[f64] {
        &self.power_budget
    }

    /// Long-term (path-loss) gain between BS `q` and user `i`.
    pub fn link_gain(&self, q: usize, i: usize) -> f64 {
        self.link_gain[q * self.dims.num_users + i]
    }

    pub fn home_bs(&self, i: usize) -> usize {
        self.home_bs[i]
    }

    pub fn home_assignment(&self) -> &[usize] {
        &self.home_bs
    }

    pub fn bs_positions(&self) -> &[[f64; 2]] {
        &self.bs_positions
    }

    pub fn user_positions(&self) -> &[[f64; 2]] {
        &self.user_positions
    }

    pub fn parts(&self) -> InstanceParts {
        InstanceParts {
            dims: self.dims,
            channels: self.channels.clone(),
            noise_power: self.noise_power.clone(),
            power_budget: self.power_budget.clone(),
            link_gain: self.link_gain.clone(),
            home_bs: self.home_bs.clone(),
            bs_positions: self.bs_positions.clone(),
            user_positions: self.user_positions.clone(),
        }
    }

    /// Same instance with a different channel tensor.
    pub fn with_channels(&self, channels: Vec<CMat>) -> Result<Self> {
        let mut parts = self.parts();
        parts.channels = channels;
        NetworkInstance::new(parts)
    }

    /// Same instance with a different default association.
    pub fn with_home_bs(&self, home_bs: Vec<usize>) -> Result<Self> {
        let mut parts = self.parts();
        parts.home_bs = home_bs;
        NetworkInstance::new(parts)
    }

    /// Repeats a single-slot instance over `slots` identical slots.
    pub fn replicate_slots(&self, slots: usize) -> Result<Self> {
        if self.dims.slots == slots {
            return Ok(self.clone());
        }
        if self.dims.slots != 1 || slots == 0 {
            return Err(Error::Config(format!(
                "cannot replicate an instance with {} slots into {slots}",
                self.dims.slots
            )));
        }
        let mut dims = self.dims;
        dims.slots = slots;
        let mut channels = Vec::with_capacity(dims.num_channels());
        for q in 0..dims.num_bs {
            for i in 0..dims.num_users {
                for f in 0..dims.tones {
                    for _ in 0..slots {
                        channels.push(self.channel(q, i, f, 0).clone());
                    }
                }
            }
        }
        let mut parts = self.parts();
        parts.dims = dims;
        parts.channels = channels;
        NetworkInstance::new(parts)
    }
}

/// Variance `(200 / dist)^3` of a wireless link at distance `dist` meters.
pub fn pathloss_variance(dist: f64) -> Result<f64> {
    if !(dist > 0.0) || !dist.is_finite() {
        return Err(Error::Domain(format!("distance must be positive, got {dist}")));
    }
    Ok((PATHLOSS_REFERENCE_M / dist).powi(3))
}

/// Draws an `rows x cols` matrix with i.i.d. CN(0, variance) entries
/// (column-major draw order).
pub fn rayleigh_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> CMat {
    CMat::from_fn(rows, cols, |_, _| complex_gaussian(rng, variance))
}

fn rayleigh_channels(dims: &Dims, gain: impl Fn(usize, usize) -> f64, seed: u64) -> Vec<CMat> {
    let seed = derive_seed(seed, &[tag::CHANNEL]);
    let mut out = Vec::with_capacity(dims.num_channels());
    for q in 0..dims.num_bs {
        for i in 0..dims.num_users {
            let g = gain(q, i);
            for f in 0..dims.tones {
                for t in 0..dims.slots {
                    let mut rng = stream_rng(seed, dims.channel_index(q, i, f, t) as u64);
                    out.push(rayleigh_matrix(&mut rng, dims.rx_antennas, dims.tx_antennas, g));
                }
            }
        }
    }
    out
}

/// Hexagonal wrap-around layout parameters.
///
/// Geometry is an approximation of the usual macro-cell evaluation layouts:
/// sites on a triangular lattice, sectors of equal angular width with a
/// parabolic horizontal antenna pattern, users dropped uniformly inside their
/// sector at least `min_distance` from the site. Path loss follows
/// [`pathloss_variance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HexLayout {
    pub cells: usize,
    pub sectors_per_cell: usize,
    pub users_per_sector: usize,
    pub inter_site_distance: f64,
    pub min_distance: f64,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub tones: usize,
    pub slots: usize,
    pub power_budget: f64,
    /// Transmit SNR at unit link gain; noise power is `power_budget / snr`.
    pub snr_db: f64,
}

impl Default for HexLayout {
    fn default() -> Self {
        HexLayout {
            cells: 1,
            sectors_per_cell: 1,
            users_per_sector: 1,
            inter_site_distance: 500.0,
            min_distance: 35.0,
            tx_antennas: 1,
            rx_antennas: 1,
            tones: 1,
            slots: 1,
            power_budget: 1.0,
            snr_db: 15.0,
        }
    }
}

fn hex_sites(cells: usize, isd: f64) -> Result<(Vec<[f64; 2]>, (i32, i32))> {
    let (radius, shift): (i32, (i32, i32)) = match cells {
        1 => (0, (1, 0)),
        7 => (1, (2, 1)),
        19 => (2, (3, 2)),
        _ => return Err(Error::Config(format!("unsupported cell count {cells}; use 1, 7 or 19"))),
    };
    let mut sites = Vec::new();
    for a in -radius..=radius {
        for b in -radius..=radius {
            if (a.abs() + b.abs() + (a + b).abs()) / 2 <= radius {
                sites.push(lattice_point(a, b, isd));
            }
        }
    }
    sites.sort_by(|x, y| {
        let dx = x[0].hypot(x[1]);
        let dy = y[0].hypot(y[1]);
        dx.partial_cmp(&dy).unwrap().then(x[1].atan2(x[0]).partial_cmp(&y[1].atan2(y[0])).unwrap())
    });
    Ok((sites, shift))
}

fn lattice_point(a: i32, b: i32, isd: f64) -> [f64; 2] {
    [isd * (a as f64 + 0.5 * b as f64), isd * (b as f64) * 3f64.sqrt() / 2.0]
}

fn rotate(p: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn inside_hexagon(p: [f64; 2], isd: f64) -> bool {
    (0..6).all(|k| {
        let (s, c) = (k as f64 * PI / 3.0).sin_cos();
        p[0] * c + p[1] * s <= isd / 2.0
    })
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    a
}

impl HexLayout {
    pub fn num_bs(&self) -> usize {
        self.cells * self.sectors_per_cell
    }

    pub fn generate(&self, seed: u64) -> Result<NetworkInstance> {
        if self.sectors_per_cell == 0 || self.users_per_sector == 0 {
            return Err(Error::Config("sectors_per_cell and users_per_sector must be at least 1".into()));
        }
        if !(self.inter_site_distance > 0.0) || !(self.min_distance > 0.0) || self.min_distance >= self.inter_site_distance / 3f64.sqrt() {
            return Err(Error::Config("invalid inter-site or minimum distance".into()));
        }
        let isd = self.inter_site_distance;
        let (sites, (sa, sb)) = hex_sites(self.cells, isd)?;
        let shift0 = lattice_point(sa, sb, isd);
        let images: Vec<[f64; 2]> = std::iter::once([0.0, 0.0])
            .chain((0..6).map(|k| rotate(shift0, k as f64 * PI / 3.0)))
            .collect();
        let sectors = self.sectors_per_cell;
        let width = 2.0 * PI / sectors as f64;
        let num_bs = self.num_bs();
        let num_users = num_bs * self.users_per_sector;

        let layout_seed = derive_seed(seed, &[tag::LAYOUT]);
        let mut bs_positions = Vec::with_capacity(num_bs);
        let mut user_positions = Vec::with_capacity(num_users);
        let mut home_bs = Vec::with_capacity(num_users);
        for (c, site) in sites.iter().enumerate() {
            for s in 0..sectors {
                let q = c * sectors + s;
                bs_positions.push(*site);
                let mut rng = stream_rng(layout_seed, q as u64);
                let r_max = isd / 3f64.sqrt();
                let mut placed = 0;
                while placed < self.users_per_sector {
                    let p = [rng.random_range(-r_max..r_max), rng.random_range(-r_max..r_max)];
                    let d = p[0].hypot(p[1]);
                    if d < self.min_distance || !inside_hexagon(p, isd) {
                        continue;
                    }
                    let ang = wrap_angle(p[1].atan2(p[0]));
                    if sectors > 1 && !(ang >= s as f64 * width && ang < (s + 1) as f64 * width) {
                        continue;
                    }
                    user_positions.push([site[0] + p[0], site[1] + p[1]]);
                    home_bs.push(q);
                    placed += 1;
                }
            }
        }

        let beamwidth = (70.0f64).to_radians() * 3.0 / sectors as f64;
        let mut link_gain = vec![0.0; num_bs * num_users];
        for q in 0..num_bs {
            let site = bs_positions[q];
            let boresight = (q % sectors) as f64 * width + width / 2.0;
            for (i, u) in user_positions.iter().enumerate() {
                let (dist, rel) = images
                    .iter()
                    .map(|img| {
                        let rel = [u[0] - site[0] - img[0], u[1] - site[1] - img[1]];
                        (rel[0].hypot(rel[1]), rel)
                    })
                    .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
                    .unwrap();
                let mut gain = pathloss_variance(dist.max(self.min_distance))?;
                if sectors > 1 {
                    let mut off = wrap_angle(rel[1].atan2(rel[0]) - boresight);
                    if off > PI {
                        off = 2.0 * PI - off;
                    }
                    let att_db = (12.0 * (off / beamwidth).powi(2)).min(20.0);
                    gain *= 10f64.powf(-att_db / 10.0);
                }
                link_gain[q * num_users + i] = gain;
            }
        }

        let dims = Dims {
            num_bs,
            num_users,
            tx_antennas: self.tx_antennas,
            rx_antennas: self.rx_antennas,
            tones: self.tones,
            slots: self.slots,
        };
        dims.validate()?;
        let channels = rayleigh_channels(&dims, |q, i| link_gain[q * num_users + i], seed);
        let noise = self.power_budget / 10f64.powf(self.snr_db / 10.0);
        NetworkInstance::new(InstanceParts {
            dims,
            channels,
            noise_power: vec![noise; num_users],
            power_budget: vec![self.power_budget; num_bs],
            link_gain,
            home_bs,
            bs_positions,
            user_positions,
        })
    }
}

/// Hexagonal layout with default geometry and single-antenna, single-tone
/// links.
pub fn generate_hex_layout(cells: usize, sectors_per_cell: usize, users_per_sector: usize, seed: u64) -> Result<NetworkInstance> {
    HexLayout {
        cells,
        sectors_per_cell,
        users_per_sector,
        ..HexLayout::default()
    }
    .generate(seed)
}

/// Random heterogeneous drop: BSs uniform in a square, each user dropped in a
/// disk around a BS chosen round-robin. `home_bs` is the strongest long-term
/// link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DropLayout {
    pub num_bs: usize,
    pub num_users: usize,
    pub area_side: f64,
    pub drop_radius: f64,
    pub min_distance: f64,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub tones: usize,
    pub slots: usize,
    pub power_budget: f64,
    pub snr_db: f64,
}

impl Default for DropLayout {
    fn default() -> Self {
        DropLayout {
            num_bs: 4,
            num_users: 8,
            area_side: 1000.0,
            drop_radius: 300.0,
            min_distance: 35.0,
            tx_antennas: 2,
            rx_antennas: 2,
            tones: 1,
            slots: 1,
            power_budget: 1.0,
            snr_db: 15.0,
        }
    }
}

impl DropLayout {
    pub fn generate(&self, seed: u64) -> Result<NetworkInstance> {
        let dims = Dims {
            num_bs: self.num_bs,
            num_users: self.num_users,
            tx_antennas: self.tx_antennas,
            rx_antennas: self.rx_antennas,
            tones: self.tones,
            slots: self.slots,
        };
        dims.validate()?;
        if !(self.area_side > 0.0) || !(self.drop_radius > self.min_distance) || !(self.min_distance > 0.0) {
            return Err(Error::Config("invalid drop geometry".into()));
        }
        let layout_seed = derive_seed(seed, &[tag::LAYOUT]);
        let mut rng = stream_rng(layout_seed, 0);
        let bs_positions: Vec<[f64; 2]> = (0..self.num_bs)
            .map(|_| [rng.random_range(0.0..self.area_side), rng.random_range(0.0..self.area_side)])
            .collect();
        let user_positions: Vec<[f64; 2]> = (0..self.num_users)
            .map(|i| {
                let c = bs_positions[i % self.num_bs];
                let r = rng.random_range(self.min_distance..self.drop_radius);
                let a = rng.random_range(0.0..2.0 * PI);
                [c[0] + r * a.cos(), c[1] + r * a.sin()]
            })
            .collect();
        let mut link_gain = Vec::with_capacity(self.num_bs * self.num_users);
        for b in &bs_positions {
            for u in &user_positions {
                let d = (u[0] - b[0]).hypot(u[1] - b[1]).max(self.min_distance);
                link_gain.push(pathloss_variance(d)?);
            }
        }
        let home_bs = (0..self.num_users)
            .map(|i| {
                (0..self.num_bs)
                    .max_by(|&a, &b| {
                        link_gain[a * self.num_users + i]
                            .partial_cmp(&link_gain[b * self.num_users + i])
                            .unwrap()
                            .then(b.cmp(&a))
                    })
                    .unwrap()
            })
            .collect();
        let channels = rayleigh_channels(&dims, |q, i| link_gain[q * self.num_users + i], seed);
        let noise = self.power_budget / 10f64.powf(self.snr_db / 10.0);
        NetworkInstance::new(InstanceParts {
            dims,
            channels,
            noise_power: vec![noise; self.num_users],
            power_budget: vec![self.power_budget; self.num_bs],
            link_gain,
            home_bs,
            bs_positions,
            user_positions,
        })
    }
}

/// Statistical model of one channel matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelDistribution {
    /// Known exactly.
    Deterministic { value: CMat },
    /// Rayleigh fading on top of path loss: entries CN(0, pathloss).
    RayleighPathloss { pathloss: f64 },
    /// MMSE estimate with Gaussian error: entries CN(estimate, error_variance).
    EstimatedGaussian { estimate: CMat, pathloss: f64, error_variance: f64 },
}

impl ChannelDistribution {
    /// Estimated link with error variance `pathloss / (1 + gamma * snr)`.
    pub fn estimated(estimate: CMat, pathloss: f64, gamma: f64, snr: f64) -> Result<Self> {
        if !(pathloss >= 0.0) || !(gamma >= 0.0) || !(snr >= 0.0) {
            return Err(Error::Domain("pathloss, gamma and snr must be nonnegative".into()));
        }
        Ok(ChannelDistribution::EstimatedGaussian {
            estimate,
            pathloss,
            error_variance: estimation_error_variance(pathloss, gamma, snr),
        })
    }

    pub fn error_variance(&self) -> f64 {
        match self {
            ChannelDistribution::Deterministic { .. } => 0.0,
            ChannelDistribution::RayleighPathloss { pathloss } => *pathloss,
            ChannelDistribution::EstimatedGaussian { error_variance, .. } => *error_variance,
        }
    }

    pub fn is_estimated(&self) -> bool {
        !matches!(self, ChannelDistribution::RayleighPathloss { .. })
    }

    /// Mean channel matrix.
    pub fn mean(&self, rows: usize, cols: usize) -> CMat {
        match self {
            ChannelDistribution::Deterministic { value } => value.clone(),
            ChannelDistribution::RayleighPathloss { .. } => CMat::zeros(rows, cols),
            ChannelDistribution::EstimatedGaussian { estimate, .. } => estimate.clone(),
        }
    }

    /// Draws one realization.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, rows: usize, cols: usize) -> CMat {
        match self {
            ChannelDistribution::Deterministic { value } => value.clone(),
            ChannelDistribution::RayleighPathloss { pathloss } => rayleigh_matrix(rng, rows, cols, *pathloss),
            ChannelDistribution::EstimatedGaussian { estimate, error_variance, .. } => {
                estimate + rayleigh_matrix(rng, rows, cols, *error_variance)
            }
        }
    }
}

/// `pathloss / (1 + gamma * snr)`.
pub fn estimation_error_variance(pathloss: f64, gamma: f64, snr: f64) -> f64 {
    pathloss / (1.0 + gamma * snr)
}

/// One [`ChannelDistribution`] per channel-tensor entry `(q, i, f, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTable {
    dims: Dims,
    entries: Vec<ChannelDistribution>,
}

impl DistributionTable {
    pub fn new(dims: Dims, entries: Vec<ChannelDistribution>) -> Result<Self> {
        if entries.len() != dims.num_channels() {
            return Err(Error::Dimension(format!(
                "distribution table has {} entries, expected {}",
                entries.len(),
                dims.num_channels()
            )));
        }
        for e in &entries {
            let shape = match e {
                ChannelDistribution::Deterministic { value } => Some(value.shape()),
                ChannelDistribution::EstimatedGaussian { estimate, .. } => Some(estimate.shape()),
                ChannelDistribution::RayleighPathloss { .. } => None,
            };
            if let Some(s) = shape {
                if s != (dims.rx_antennas, dims.tx_antennas) {
                    return Err(Error::Dimension("distribution mean has the wrong shape".into()));
                }
            }
            if e.error_variance() < 0.0 {
                return Err(Error::Domain("error variance must be nonnegative".into()));
            }
        }
        Ok(DistributionTable { dims, entries })
    }

    /// Every entry deterministic at the instance's channels.
    pub fn deterministic(instance: &NetworkInstance) -> Self {
        DistributionTable {
            dims: instance.dims(),
            entries: instance
                .channels()
                .iter()
                .map(|h| ChannelDistribution::Deterministic { value: h.clone() })
                .collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn entries(&self) -> &[ChannelDistribution] {
        &self.entries
    }

    pub fn entry(&self, q: usize, i: usize, f: usize, t: usize) -> &ChannelDistribution {
        &self.entries[self.dims.channel_index(q, i, f, t)]
    }

    pub fn mean_channels(&self) -> Vec<CMat> {
        self.entries
            .iter()
            .map(|e| e.mean(self.dims.rx_antennas, self.dims.tx_antennas))
            .collect()
    }

    /// Fraction of `(q, i)` links that are estimated.
    pub fn estimated_fraction(&self) -> f64 {
        let n = self.entries.iter().filter(|e| e.is_estimated()).count();
        n as f64 / self.entries.len() as f64
    }
}

/// Draws one channel tensor. Entry `k` of the tensor uses generator stream
/// `k`, so the draw is independent of evaluation order.
pub fn sample_channels(dims: Dims, table: &DistributionTable, seed: u64) -> Result<Vec<CMat>> {
    if table.dims != dims {
        return Err(Error::Dimension("distribution table does not match the instance".into()));
    }
    let seed = derive_seed(seed, &[tag::SAMPLE]);
    Ok(table
        .entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let mut rng = stream_rng(seed, k as u64);
            e.sample(&mut rng, dims.rx_antennas, dims.tx_antennas)
        })
        .collect())
}

/// Links `(q, i)` whose long-term gain is at most `eta_db` below the user's
/// direct (home) link; the direct link is always included.
pub fn estimated_set(instance: &NetworkInstance, eta_db: f64) -> Vec<bool> {
    let (nq, ni) = (instance.num_bs(), instance.num_users());
    let ratio = 10f64.powf(-eta_db / 10.0);
    let mut out = vec![false; nq * ni];
    for i in 0..ni {
        let home = instance.home_bs(i);
        let direct = instance.link_gain(home, i);
        for q in 0..nq {
            out[q * ni + i] = q == home || instance.link_gain(q, i) >= direct * ratio;
        }
    }
    out
}

/// Partial-CSI model: links in [`estimated_set`] get an MMSE estimate drawn
/// so that the true channel is marginally CN(0, pathloss), with error
/// variance `pathloss / (1 + gamma * snr)`; every other link is Rayleigh on
/// its path loss.
pub fn partial_csi_table(instance: &NetworkInstance, eta_db: f64, gamma: f64, snr: f64, seed: u64) -> Result<DistributionTable> {
    let dims = instance.dims();
    let est = estimated_set(instance, eta_db);
    let seed = derive_seed(seed, &[tag::ESTIMATE]);
    let mut entries = Vec::with_capacity(dims.num_channels());
    for q in 0..dims.num_bs {
        for i in 0..dims.num_users {
            let pl = instance.link_gain(q, i);
            for f in 0..dims.tones {
                for t in 0..dims.slots {
                    if est[q * dims.num_users + i] {
                        let err = estimation_error_variance(pl, gamma, snr);
                        let mut rng = stream_rng(seed, dims.channel_index(q, i, f, t) as u64);
                        let estimate = rayleigh_matrix(&mut rng, dims.rx_antennas, dims.tx_antennas, pl - err);
                        entries.push(ChannelDistribution::estimated(estimate, pl, gamma, snr)?);
                    } else {
                        entries.push(ChannelDistribution::RayleighPathloss { pathloss: pl });
                    }
                }
            }
        }
    }
    DistributionTable::new(dims, entries)
}

/// One explicit channel matrix in an instance file, row-major.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChannelEntry {
    pub q: usize,
    pub i: usize,
    #[serde(default)]
    pub f: usize,
    #[serde(default)]
    pub t: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// TOML schema of an instance file.
///
/// Required: the six counts. `noise_power` and `power_budget` accept either
/// one value per user/BS or a single value broadcast to all. Channels not
/// listed under `[[channel]]` are drawn as Rayleigh on `link_gain` (unit gain
/// when absent) using `seed`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstanceFile {
    pub num_bs: usize,
    pub num_users: usize,
    #[serde(default = "one")]
    pub tx_antennas: usize,
    #[serde(default = "one")]
    pub rx_antennas: usize,
    #[serde(default = "one")]
    pub tones: usize,
    #[serde(default = "one")]
    pub slots: usize,
    pub noise_power: Vec<f64>,
    pub power_budget: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub home_bs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub link_gain: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bs_positions: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub user_positions: Vec<[f64; 2]>,
    #[serde(default, rename = "channel", skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<ChannelEntry>,
}

fn one() -> usize {
    1
}

fn broadcast(values: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        k if k == n => Ok(values.to_vec()),
        k => Err(Error::Config(format!("{what}: expected 1 or {n} values, got {k}"))),
    }
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<NetworkInstance> {
        let dims = Dims {
            num_bs: self.num_bs,
            num_users: self.num_users,
            tx_antennas: self.tx_antennas,
            rx_antennas: self.rx_antennas,
            tones: self.tones,
            slots: self.slots,
        };
        dims.validate()?;
        let gains = self.link_gain.clone();
        if !gains.is_empty() && gains.len() != dims.num_bs * dims.num_users {
            return Err(Error::Config("link_gain needs num_bs * num_users values".into()));
        }
        let mut channels = rayleigh_channels(
            &dims,
            |q, i| if gains.is_empty() { 1.0 } else { gains[q * dims.num_users + i] },
            self.seed,
        );
        for e in &self.channels {
            if e.q >= dims.num_bs || e.i >= dims.num_users || e.f >= dims.tones || e.t >= dims.slots {
                return Err(Error::Config(format!("channel entry ({}, {}, {}, {}) out of range", e.q, e.i, e.f, e.t)));
            }
            let n = dims.rx_antennas * dims.tx_antennas;
            if e.re.len() != n || e.im.len() != n {
                return Err(Error::Config(format!("channel entry needs {n} re/im values")));
            }
            let m = CMat::from_fn(dims.rx_antennas, dims.tx_antennas, |r, c| {
                let k = r * dims.tx_antennas + c;
                c64(e.re[k], e.im[k])
            });
            channels[dims.channel_index(e.q, e.i, e.f, e.t)] = m;
        }
        NetworkInstance::new(InstanceParts {
            dims,
            channels,
            noise_power: broadcast(&self.noise_power, dims.num_users, "noise_power")?,
            power_budget: broadcast(&self.power_budget, dims.num_bs, "power_budget")?,
            link_gain: self.link_gain,
            home_bs: self.home_bs,
            bs_positions: self.bs_positions,
            user_positions: self.user_positions,
        })
    }

    /// Complete description of `instance` with every channel listed.
    pub fn from_instance(instance: &NetworkInstance) -> Self {
        let d = instance.dims();
        let mut channels = Vec::with_capacity(d.num_channels());
        for q in 0..d.num_bs {
            for i in 0..d.num_users {
                for f in 0..d.tones {
                    for t in 0..d.slots {
                        let h = instance.channel(q, i, f, t);
                        let mut re = Vec::with_capacity(h.len());
                        let mut im = Vec::with_capacity(h.len());
                        for r in 0..h.nrows() {
                            for c in 0..h.ncols() {
                                re.push(h[(r, c)].re);
                                im.push(h[(r, c)].im);
                            }
                        }
                        channels.push(ChannelEntry { q, i, f, t, re, im });
                    }
                }
            }
        }
        InstanceFile {
            num_bs: d.num_bs,
            num_users: d.num_users,
            tx_antennas: d.tx_antennas,
            rx_antennas: d.rx_antennas,
            tones: d.tones,
            slots: d.slots,
            noise_power: instance.noise_powers().to_vec(),
            power_budget: instance.power_budgets().to_vec(),
            seed: 0,
            home_bs: instance.home_assignment().to_vec(),
            link_gain: instance.link_gain.clone(),
            bs_positions: instance.bs_positions().to_vec(),
            user_positions: instance.user_positions().to_vec(),
            channels,
        }
    }
}

/// Parses an instance file.
pub fn parse_instance(text: &str) -> Result<NetworkInstance> {
    let file: InstanceFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_instance()
}

pub fn load_instance(path: &Path) -> Result<NetworkInstance> {
    parse_instance(&std::fs::read_to_string(path)?)
}

/// Serializes `instance` with explicit channels.
pub fn instance_to_toml(instance: &NetworkInstance) -> Result<String> {
    toml::to_string(&InstanceFile::from_instance(instance)).map_err(|e| Error::Parse(e.to_string()))
}

/// One row of a channel dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub q: usize,
    pub i: usize,
    pub f: usize,
    pub t: usize,
    pub rx: usize,
    pub tx: usize,
    pub re: f64,
    pub im: f64,
}

/// Writes the channel tensor as CSV `(q, i, f, t, rx, tx, re, im)`.
pub fn write_channels_csv<W: Write>(instance: &NetworkInstance, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = instance.dims();
    for q in 0..d.num_bs {
        for i in 0..d.num_users {
            for f in 0..d.tones {
                for t in 0..d.slots {
                    let h = instance.channel(q, i, f, t);
                    for rx in 0..d.rx_antennas {
                        for tx in 0..d.tx_antennas {
                            let z = h[(rx, tx)];
                            w.serialize(ChannelRecord { q, i, f, t, rx, tx, re: z.re, im: z.im })?;
                        }
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a channel dump back into a tensor for `dims`.
pub fn read_channels_csv<R: Read>(dims: Dims, input: R) -> Result<Vec<CMat>> {
    let mut channels = vec![CMat::zeros(dims.rx_antennas, dims.tx_antennas); dims.num_channels()];
    let mut seen = vec![false; dims.num_channels() * dims.rx_antennas * dims.tx_antennas];
    let mut r = csv::Reader::from_reader(input);
    for rec in r.deserialize() {
        let rec: ChannelRecord = rec?;
        if rec.q >= dims.num_bs || rec.i >= dims.num_users || rec.f >= dims.tones || rec.t >= dims.slots || rec.rx >= dims.rx_antennas || rec.tx >= dims.tx_antennas {
            return Err(Error::Dimension(format!("channel record out of range: {rec:?}")));
        }
        let k = dims.channel_index(rec.q, rec.i, rec.f, rec.t);
        channels[k][(rec.rx, rec.tx)] = c64(rec.re, rec.im);
        seen[k * dims.rx_antennas * dims.tx_antennas + rec.rx * dims.tx_antennas + rec.tx] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Dimension("channel dump is missing entries".into()));
    }
    Ok(channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pathloss_examples() {
        assert_eq!(pathloss_variance(200.0).unwrap(), 1.0);
        assert!((pathloss_variance(100.0).unwrap() - 8.0).abs() < 1e-12);
        assert!((pathloss_variance(400.0).unwrap() - 0.125).abs() < 1e-12);
        assert!(pathloss_variance(0.0).is_err());
        assert!(pathloss_variance(-3.0).is_err());
    }

    #[test]
    fn hex_counts() {
        let inst = generate_hex_layout(19, 3, 5, 1).unwrap();
        assert_eq!(inst.num_bs(), 57);
        assert_eq!(inst.num_users(), 285);
        let inst = generate_hex_layout(1, 1, 1, 1).unwrap();
        assert_eq!((inst.num_bs(), inst.num_users()), (1, 1));
        assert!(matches!(generate_hex_layout(3, 1, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn hex_users_respect_min_distance_and_home_sector() {
        let layout = HexLayout { cells: 7, sectors_per_cell: 3, users_per_sector: 4, ..HexLayout::default() };
        let inst = layout.generate(9).unwrap();
        for i in 0..inst.num_users() {
            let q = inst.home_bs(i);
            let (b, u) = (inst.bs_positions()[q], inst.user_positions()[i]);
            let d = (u[0] - b[0]).hypot(u[1] - b[1]);
            assert!(d >= layout.min_distance && d <= layout.inter_site_distance / 3f64.sqrt() + 1e-9);
        }
    }

    #[test]
    fn same_seed_same_channels() {
        let a = generate_hex_layout(7, 3, 2, 42).unwrap();
        let b = generate_hex_layout(7, 3, 2, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_hex_layout(7, 3, 2, 43).unwrap();
        assert_ne!(a.channels(), c.channels());
    }

    #[test]
    fn error_variance_example() {
        let snr = 10f64.powf(1.5);
        let v = estimation_error_variance(1.0, 1.0, snr);
        assert!((v - 1.0 / 32.622_776_601_683_8).abs() < 1e-12);
        assert!((v - 0.03065).abs() < 1e-5);
    }

    #[test]
    fn deterministic_kind_returns_value() {
        let inst = generate_hex_layout(1, 1, 2, 5).unwrap();
        let table = DistributionTable::deterministic(&inst);
        let s = sample_channels(inst.dims(), &table, 77).unwrap();
        assert_eq!(s.as_slice(), inst.channels());
    }

    #[test]
    fn rayleigh_variance_matches_pathloss() {
        let pl = pathloss_variance(150.0).unwrap();
        let dist = ChannelDistribution::RayleighPathloss { pathloss: pl };
        let mut rng = stream_rng(11, 0);
        let n = 100_000;
        let var: f64 = (0..n).map(|_| dist.sample(&mut rng, 1, 1)[(0, 0)].norm_sqr()).sum::<f64>() / n as f64;
        assert!((var / pl - 1.0).abs() < 0.03, "empirical {var} vs {pl}");
    }

    #[test]
    fn eta_rule_uses_long_term_gains() {
        let mut parts = generate_hex_layout(1, 1, 1, 0).unwrap().parts();
        parts.dims.num_bs = 3;
        parts.channels = vec![CMat::zeros(1, 1); 3];
        parts.power_budget = vec![1.0; 3];
        parts.bs_positions = vec![];
        parts.home_bs = vec![0];
        // direct 1.0; 6 dB below is 0.251
        parts.link_gain = vec![1.0, 0.3, 0.2];
        let inst = NetworkInstance::new(parts).unwrap();
        assert_eq!(estimated_set(&inst, 6.0), vec![true, true, false]);
    }

    #[test]
    fn constructor_rejects_bad_data() {
        let mut parts = generate_hex_layout(1, 1, 1, 0).unwrap().parts();
        parts.noise_power = vec![0.0];
        assert!(NetworkInstance::new(parts).is_err());
        let mut parts = generate_hex_layout(1, 1, 1, 0).unwrap().parts();
        parts.channels.push(CMat::zeros(1, 1));
        assert!(matches!(NetworkInstance::new(parts), Err(Error::Dimension(_))));
    }

    #[test]
    fn instance_file_round_trip() {
        let layout = HexLayout { cells: 1, sectors_per_cell: 3, users_per_sector: 1, tx_antennas: 2, rx_antennas: 2, ..HexLayout::default() };
        let inst = layout.generate(3).unwrap();
        let text = instance_to_toml(&inst).unwrap();
        let back = parse_instance(&text).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn minimal_instance_file() {
        let text = r#"
num_bs = 1
num_users = 1
noise_power = [1.0]
power_budget = [2.0]
[[channel]]
q = 0
i = 0
re = [1.0]
im = [0.0]
"#;
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.channel(0, 0, 0, 0)[(0, 0)], c64(1.0, 0.0));
        assert_eq!(inst.power_budget(0), 2.0);
    }

    #[test]
    fn channel_csv_round_trip() {
        let layout = HexLayout { cells: 1, sectors_per_cell: 2, users_per_sector: 1, tx_antennas: 2, rx_antennas: 1, tones: 2, ..HexLayout::default() };
        let inst = layout.generate(8).unwrap();
        let mut buf = Vec::new();
        write_channels_csv(&inst, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("q,i,f,t,rx,tx,re,im"));
        let back = read_channels_csv(inst.dims(), buf.as_slice()).unwrap();
        assert_eq!(back.as_slice(), inst.channels());
    }
}
