//! Physical scenario: RAP/user layouts, path loss, Rayleigh fading and the
//! normalized channel matrices consumed by the solver.
//!
//! Raw power densities span more than twelve orders of magnitude
//! (-40 dBm/Hz budgets against -162 dBm/Hz noise), so channels are rescaled
//! by `sqrt(P_unit / sigma2)`. The power unit is one antenna's share of the
//! largest RAP budget, `P_unit = P_ref / N_c`. After rescaling the noise
//! power is 1, the largest RAP budget is `N_c` and all rates are unchanged.
//!
//! The unit matters for the dual step size: multipliers are measured in
//! bits per power unit, so a fixed step `δ` acts like `δ N_c²` relative to a
//! per-RAP unit.

use std::ops::Range;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{CMat, Error, Result};

pub const DEFAULT_P_MAX_DBM_HZ: f64 = -40.0;
pub const DEFAULT_NOISE_DBM_HZ: f64 = -162.0;

/// Physical scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Number of RAPs (`L`).
    pub num_raps: usize,
    /// Antennas per RAP (`N_c`).
    pub rap_antennas: usize,
    /// Number of users (`K`).
    pub num_users: usize,
    /// Antennas per user (`N`).
    pub user_antennas: usize,
    /// Per-RAP power budget density in dBm/Hz, one entry per RAP.
    pub p_max_dbm_hz: Vec<f64>,
    /// Noise power density in dBm/Hz.
    pub noise_dbm_hz: f64,
    /// Radius of the layout disc in km.
    pub radius_km: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::new(10, 2, 2, 3)
    }
}

impl SystemConfig {
    /// Scenario with the given dimensions and default powers, 1 km radius.
    pub fn new(num_raps: usize, rap_antennas: usize, num_users: usize, user_antennas: usize) -> Self {
        Self {
            num_raps,
            rap_antennas,
            num_users,
            user_antennas,
            p_max_dbm_hz: vec![DEFAULT_P_MAX_DBM_HZ; num_raps],
            noise_dbm_hz: DEFAULT_NOISE_DBM_HZ,
            radius_km: 1.0,
            seed: 0,
        }
    }

    /// Total BS antennas `M = N_c L`.
    pub fn total_antennas(&self) -> usize {
        self.rap_antennas * self.num_raps
    }

    /// Smallest active-set size that leaves every user `N` BD dimensions,
    /// `ceil(K N / N_c)`.
    pub fn min_active_raps(&self) -> usize {
        (self.num_users * self.user_antennas).div_ceil(self.rap_antennas)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |field, reason: &str| Err(Error::InvalidConfig { field, reason: reason.to_string() });
        if self.num_raps == 0 {
            return invalid("num_raps", "must be at least 1");
        }
        if self.rap_antennas == 0 {
            return invalid("rap_antennas", "must be at least 1");
        }
        if self.num_users == 0 {
            return invalid("num_users", "must be at least 1");
        }
        if self.user_antennas == 0 {
            return invalid("user_antennas", "must be at least 1");
        }
        if self.p_max_dbm_hz.len() != self.num_raps {
            return Err(Error::InvalidConfig {
                field: "p_max_dbm_hz",
                reason: format!("expected {} entries, got {}", self.num_raps, self.p_max_dbm_hz.len()),
            });
        }
        if self.p_max_dbm_hz.iter().any(|p| !p.is_finite()) {
            return invalid("p_max_dbm_hz", "entries must be finite");
        }
        if !self.noise_dbm_hz.is_finite() {
            return invalid("noise_dbm_hz", "must be finite");
        }
        if !(self.radius_km > 0.0 && self.radius_km.is_finite()) {
            return invalid("radius_km", "must be positive");
        }
        let m = self.total_antennas();
        let interference_dims = self.user_antennas * (self.num_users - 1);
        if m < interference_dims + self.user_antennas {
            return Err(Error::InvalidConfig {
                field: "num_raps",
                reason: format!(
                    "BD needs N_c*L - N*(K-1) >= N, got M = {m}, N*(K-1) = {interference_dims}, N = {}",
                    self.user_antennas
                ),
            });
        }
        Ok(())
    }
}

/// Positions in km, RAPs and users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub rap_positions: Vec<[f64; 2]>,
    pub user_positions: Vec<[f64; 2]>,
}

impl Layout {
    pub fn distance_km(&self, user: usize, rap: usize) -> f64 {
        let [ux, uy] = self.user_positions[user];
        let [rx, ry] = self.rap_positions[rap];
        (ux - rx).hypot(uy - ry)
    }
}

/// Independent, reproducible random stream for realization `index` of a
/// run seeded with `seed`. Streams do not depend on evaluation order.
pub fn realization_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform point in a disc of the given radius (uniform over area).
pub fn sample_disc_point<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    [r * theta.cos(), r * theta.sin()]
}

/// Draws `L` RAP positions followed by `K` user positions, uniform over
/// the disc.
pub fn generate_layout<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Layout {
    let rap_positions = (0..cfg.num_raps).map(|_| sample_disc_point(cfg.radius_km, rng)).collect();
    let user_positions = (0..cfg.num_users).map(|_| sample_disc_point(cfg.radius_km, rng)).collect();
    Layout { rap_positions, user_positions }
}

/// `128 + 37.6 log10(d)` dB for a distance in km.
pub fn path_loss_db(distance_km: f64) -> Result<f64> {
    if !(distance_km > 0.0) || !distance_km.is_finite() {
        return Err(Error::Domain(format!("path loss needs a positive finite distance, got {distance_km}")));
    }
    Ok(128.0 + 37.6 * distance_km.log10())
}

/// Linear large-scale gain `10^(-PL/10)`.
pub fn large_scale_gain(pl_db: f64) -> f64 {
    10f64.powf(-pl_db / 10.0)
}

pub fn dbm_to_linear(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// `rows x cols` block of iid `CN(0, gamma2)` entries: real and imaginary
/// parts are independent with variance `gamma2 / 2` each.
pub fn draw_block<R: Rng + ?Sized>(gamma2: f64, rows: usize, cols: usize, rng: &mut R) -> CMat {
    let sd = (gamma2 / 2.0).sqrt();
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(sd * re, sd * im)
    })
}

/// One draw of all user/RAP channels in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    rap_antennas: usize,
    user_antennas: usize,
    /// `blocks[k][l]`: normalized `N x N_c` channel from RAP `l` to user `k`.
    blocks: Vec<Vec<CMat>>,
    /// `stacked[k]`: normalized `N x M` channel of user `k`, RAP blocks in
    /// index order.
    stacked: Vec<CMat>,
    /// Large-scale gain per (user, RAP), linear.
    pub gamma2: Vec<Vec<f64>>,
    /// Factor applied to the physical channel: `H_norm = norm_scale * H`.
    pub norm_scale: f64,
    /// Per-RAP budgets in normalized units.
    pub budgets: Vec<f64>,
    /// Noise power in normalized units.
    pub sigma2: f64,
    pub seed: Option<u64>,
    pub layout: Option<Layout>,
}

/// Draws the fading for `layout`, normalizes it and stacks per-user matrices.
pub fn sample_channel<R: Rng + ?Sized>(cfg: &SystemConfig, layout: &Layout, rng: &mut R) -> Result<ChannelRealization> {
    cfg.validate()?;
    if layout.rap_positions.len() != cfg.num_raps || layout.user_positions.len() != cfg.num_users {
        return Err(Error::DimensionMismatch(format!(
            "layout has {} RAPs / {} users, config expects {} / {}",
            layout.rap_positions.len(),
            layout.user_positions.len(),
            cfg.num_raps,
            cfg.num_users
        )));
    }
    let p_lin: Vec<f64> = cfg.p_max_dbm_hz.iter().map(|&p| dbm_to_linear(p)).collect();
    let p_ref = p_lin.iter().cloned().fold(f64::MIN, f64::max);
    let noise = dbm_to_linear(cfg.noise_dbm_hz);
    let p_unit = p_ref / cfg.rap_antennas as f64;
    let norm_scale = (p_unit / noise).sqrt();

    let mut gamma2 = Vec::with_capacity(cfg.num_users);
    let mut blocks = Vec::with_capacity(cfg.num_users);
    for k in 0..cfg.num_users {
        let mut g_row = Vec::with_capacity(cfg.num_raps);
        let mut b_row = Vec::with_capacity(cfg.num_raps);
        for l in 0..cfg.num_raps {
            let g = large_scale_gain(path_loss_db(layout.distance_km(k, l))?);
            let raw = draw_block(g, cfg.user_antennas, cfg.rap_antennas, rng);
            g_row.push(g);
            b_row.push(raw.scale(norm_scale));
        }
        gamma2.push(g_row);
        blocks.push(b_row);
    }
    let budgets = p_lin.iter().map(|p| p / p_unit).collect();
    let mut ch = ChannelRealization::from_blocks(cfg.rap_antennas, blocks, budgets, 1.0)?;
    ch.gamma2 = gamma2;
    ch.norm_scale = norm_scale;
    ch.seed = Some(cfg.seed);
    ch.layout = Some(layout.clone());
    Ok(ch)
}

/// Layout plus channel for realization `index` of a seeded run. Each index
/// owns an independent stream, so realizations can be generated in any
/// order or concurrently.
pub fn realize(cfg: &SystemConfig, index: u64) -> Result<ChannelRealization> {
    let mut rng = realization_rng(cfg.seed, index);
    let layout = generate_layout(cfg, &mut rng);
    sample_channel(cfg, &layout, &mut rng)
}

/// Layout number `layout_index` of a seeded run. Shared by all of its
/// fading draws.
pub fn layout_for(cfg: &SystemConfig, layout_index: u32) -> Layout {
    let mut rng = realization_rng(cfg.seed, (1u64 << 62) | ((layout_index as u64) << 32));
    generate_layout(cfg, &mut rng)
}

/// Fading draw `fading_index` on layout `layout_index`. Layouts and fading
/// draws use disjoint streams from [`realize`]'s small indices.
pub fn realize_fading(cfg: &SystemConfig, layout_index: u32, fading_index: u32) -> Result<ChannelRealization> {
    let layout = layout_for(cfg, layout_index);
    let stream = (1u64 << 63) | ((layout_index as u64) << 32) | fading_index as u64;
    sample_channel(cfg, &layout, &mut realization_rng(cfg.seed, stream))
}

fn stack_blocks(row: &[CMat], user_antennas: usize, rap_antennas: usize) -> CMat {
    let mut h = CMat::zeros(user_antennas, rap_antennas * row.len());
    for (l, b) in row.iter().enumerate() {
        h.view_mut((0, l * rap_antennas), (user_antennas, rap_antennas)).copy_from(b);
    }
    h
}

impl ChannelRealization {
    /// Builds a realization from already-normalized blocks `blocks[k][l]`.
    pub fn from_blocks(rap_antennas: usize, blocks: Vec<Vec<CMat>>, budgets: Vec<f64>, sigma2: f64) -> Result<Self> {
        let k = blocks.len();
        if k == 0 || blocks[0].is_empty() || rap_antennas == 0 {
            return Err(Error::DimensionMismatch("need at least one user, one RAP and one antenna".into()));
        }
        let l = blocks[0].len();
        let n = blocks[0][0].nrows();
        if n == 0 {
            return Err(Error::DimensionMismatch("users need at least one antenna".into()));
        }
        for row in &blocks {
            if row.len() != l || row.iter().any(|b| b.shape() != (n, rap_antennas)) {
                return Err(Error::DimensionMismatch(format!("every block must be {n}x{rap_antennas}, {l} per user")));
            }
        }
        if budgets.len() != l || budgets.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::DimensionMismatch(format!("need {l} positive budgets")));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::Domain("noise power must be positive".into()));
        }
        let stacked = blocks.iter().map(|row| stack_blocks(row, n, rap_antennas)).collect();
        Ok(Self {
            rap_antennas,
            user_antennas: n,
            blocks,
            stacked,
            gamma2: vec![vec![1.0; l]; k],
            norm_scale: 1.0,
            budgets,
            sigma2,
            seed: None,
            layout: None,
        })
    }

    pub fn num_raps(&self) -> usize {
        self.budgets.len()
    }

    pub fn num_users(&self) -> usize {
        self.stacked.len()
    }

    pub fn rap_antennas(&self) -> usize {
        self.rap_antennas
    }

    pub fn user_antennas(&self) -> usize {
        self.user_antennas
    }

    pub fn total_antennas(&self) -> usize {
        self.rap_antennas * self.num_raps()
    }

    /// Antenna index range of RAP `l` inside the stacked matrices.
    pub fn rap_range(&self, l: usize) -> Range<usize> {
        l * self.rap_antennas..(l + 1) * self.rap_antennas
    }

    pub fn block(&self, user: usize, rap: usize) -> &CMat {
        &self.blocks[user][rap]
    }

    /// Block in physical units (before normalization).
    pub fn raw_block(&self, user: usize, rap: usize) -> CMat {
        self.blocks[user][rap].unscale(self.norm_scale)
    }

    pub fn stacked(&self) -> &[CMat] {
        &self.stacked
    }

    /// BD dimension check: every user keeps at least `N` dimensions
    /// orthogonal to the other users' channels.
    pub fn is_bd_feasible(&self) -> bool {
        self.total_antennas() >= self.user_antennas * self.num_users()
    }

    /// Channel seen by the RAPs in `subset` only (RAP order preserved).
    pub fn restrict(&self, subset: &[usize]) -> Result<Self> {
        if subset.is_empty() || subset.iter().any(|&l| l >= self.num_raps()) {
            return Err(Error::DimensionMismatch(format!("invalid RAP subset {subset:?}")));
        }
        let blocks = self
            .blocks
            .iter()
            .map(|row| subset.iter().map(|&l| row[l].clone()).collect())
            .collect();
        let budgets = subset.iter().map(|&l| self.budgets[l]).collect();
        let mut out = Self::from_blocks(self.rap_antennas, blocks, budgets, self.sigma2)?;
        out.gamma2 = self.gamma2.iter().map(|row| subset.iter().map(|&l| row[l]).collect()).collect();
        out.norm_scale = self.norm_scale;
        out.seed = self.seed;
        out.layout = self.layout.as_ref().map(|lay| Layout {
            rap_positions: subset.iter().map(|&l| lay.rap_positions[l]).collect(),
            user_positions: lay.user_positions.clone(),
        });
        Ok(out)
    }

    /// Zero-pads a covariance computed on `subset` back to the full antenna
    /// set.
    pub fn embed_covariance(&self, subset: &[usize], restricted: &CMat) -> CMat {
        let nc = self.rap_antennas;
        let mut full = CMat::zeros(self.total_antennas(), self.total_antennas());
        for (a, &la) in subset.iter().enumerate() {
            for (b, &lb) in subset.iter().enumerate() {
                full.view_mut((la * nc, lb * nc), (nc, nc))
                    .copy_from(&restricted.view((a * nc, b * nc), (nc, nc)));
            }
        }
        full
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ChannelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ChannelFile>(text)?.try_into()
    }
}

pub const CHANNEL_FORMAT: &str = "cran-channel/v1";

/// Self-describing container for replaying a realization elsewhere.
///
/// Complex entries of each normalized block are stored row-major as
/// `[re, im]` pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub format: String,
    pub num_raps: usize,
    pub rap_antennas: usize,
    pub num_users: usize,
    pub user_antennas: usize,
    pub seed: Option<u64>,
    pub layout: Option<Layout>,
    pub gamma2: Vec<Vec<f64>>,
    pub norm_scale: f64,
    pub budgets: Vec<f64>,
    pub sigma2: f64,
    pub blocks: Vec<BlockEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub user: usize,
    pub rap: usize,
    pub entries: Vec<[f64; 2]>,
}

impl From<&ChannelRealization> for ChannelFile {
    fn from(ch: &ChannelRealization) -> Self {
        let mut blocks = Vec::new();
        for (k, row) in ch.blocks.iter().enumerate() {
            for (l, b) in row.iter().enumerate() {
                let entries = (0..b.nrows())
                    .flat_map(|r| (0..b.ncols()).map(move |c| (r, c)))
                    .map(|(r, c)| [b[(r, c)].re, b[(r, c)].im])
                    .collect();
                blocks.push(BlockEntry { user: k, rap: l, entries });
            }
        }
        Self {
            format: CHANNEL_FORMAT.to_string(),
            num_raps: ch.num_raps(),
            rap_antennas: ch.rap_antennas,
            num_users: ch.num_users(),
            user_antennas: ch.user_antennas,
            seed: ch.seed,
            layout: ch.layout.clone(),
            gamma2: ch.gamma2.clone(),
            norm_scale: ch.norm_scale,
            budgets: ch.budgets.clone(),
            sigma2: ch.sigma2,
            blocks,
        }
    }
}

impl TryFrom<ChannelFile> for ChannelRealization {
    type Error = Error;

    fn try_from(f: ChannelFile) -> Result<Self> {
        if f.format != CHANNEL_FORMAT {
            return Err(Error::Domain(format!("unsupported channel format {:?}", f.format)));
        }
        let (n, nc) = (f.user_antennas, f.rap_antennas);
        let mut blocks: Vec<Vec<Option<CMat>>> = vec![vec![None; f.num_raps]; f.num_users];
        for b in f.blocks {
            if b.user >= f.num_users || b.rap >= f.num_raps || b.entries.len() != n * nc {
                return Err(Error::DimensionMismatch(format!("bad block entry for user {} RAP {}", b.user, b.rap)));
            }
            let m = CMat::from_fn(n, nc, |r, c| {
                let [re, im] = b.entries[r * nc + c];
                Complex64::new(re, im)
            });
            blocks[b.user][b.rap] = Some(m);
        }
        let blocks = blocks
            .into_iter()
            .map(|row| row.into_iter().collect::<Option<Vec<_>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::DimensionMismatch("missing channel blocks".into()))?;
        if f.gamma2.len() != f.num_users || f.gamma2.iter().any(|r| r.len() != f.num_raps) {
            return Err(Error::DimensionMismatch("gamma2 table has wrong shape".into()));
        }
        let mut ch = ChannelRealization::from_blocks(nc, blocks, f.budgets, f.sigma2)?;
        ch.gamma2 = f.gamma2;
        ch.norm_scale = f.norm_scale;
        ch.seed = f.seed;
        ch.layout = f.layout;
        Ok(ch)
    }
}
