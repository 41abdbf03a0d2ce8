//! Physical model of the multigroup multicast downlink: configuration,
//! channels, SINR, the rate-dependent power model and the efficiency
//! metrics used to score any candidate schedule.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance used when checking QoS on a rounded schedule.
pub const QOS_TOL: f64 = 1e-6;

/// Converts a power level in dBW to Watts.
pub fn dbw_to_watts(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

pub fn watts_to_dbw(watts: f64) -> f64 {
    10.0 * watts.log10()
}

/// One convex, nondecreasing building block of the processing-power model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvexTerm {
    Zero,
    /// `a·x² + b·x` with `a, b ≥ 0`.
    Quadratic { a: f64, b: f64 },
    /// `exp(c·x) − 1` with `c > 0`.
    Exponential { c: f64 },
    /// `coeff·x^exponent` with `exponent ≥ 1`. Only usable as the subtracted
    /// term, since it has no built-in conic epigraph.
    Power { coeff: f64, exponent: f64 },
}

impl ConvexTerm {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ConvexTerm::Zero => 0.0,
            ConvexTerm::Quadratic { a, b } => a * x * x + b * x,
            ConvexTerm::Exponential { c } => (c * x).exp_m1(),
            ConvexTerm::Power { coeff, exponent } => coeff * x.max(0.0).powf(exponent),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ConvexTerm::Zero => 0.0,
            ConvexTerm::Quadratic { a, b } => 2.0 * a * x + b,
            ConvexTerm::Exponential { c } => c * (c * x).exp(),
            ConvexTerm::Power { coeff, exponent } => {
                if x <= 0.0 {
                    if exponent == 1.0 {
                        coeff
                    } else {
                        0.0
                    }
                } else {
                    coeff * exponent * x.powf(exponent - 1.0)
                }
            }
        }
    }

    fn check_params(&self, field: &str) -> Result<()> {
        let ok = match *self {
            ConvexTerm::Zero => true,
            ConvexTerm::Quadratic { a, b } => a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite(),
            ConvexTerm::Exponential { c } => c > 0.0 && c.is_finite(),
            ConvexTerm::Power { coeff, exponent } => {
                coeff >= 0.0 && exponent >= 1.0 && coeff.is_finite() && exponent.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(field, format!("parameters of {self:?} out of range")))
        }
    }
}

/// Rate-dependent processing power `p(x) = p1(x) − p2(x)` with both parts
/// convex and nondecreasing on `[0, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcFunctionSpec {
    pub p1: ConvexTerm,
    pub p2: ConvexTerm,
}

impl Default for DcFunctionSpec {
    fn default() -> Self {
        DcFunctionSpec {
            p1: ConvexTerm::Quadratic { a: 1.0, b: 0.0 },
            p2: ConvexTerm::Zero,
        }
    }
}

impl DcFunctionSpec {
    pub fn value(&self, x: f64) -> f64 {
        self.p1.value(x) - self.p2.value(x)
    }

    /// Grid check of `p(0) = 0`, convexity and monotonicity of both parts,
    /// and nonnegativity of `p`, on `[0, 20]`.
    pub fn validate(&self) -> Result<()> {
        self.p1.check_params("power_fn.p1")?;
        self.p2.check_params("power_fn.p2")?;
        if (self.p1.value(0.0) - self.p2.value(0.0)).abs() > 1e-12 {
            return Err(Error::config("power_fn", "p1(0) must equal p2(0)"));
        }
        let grid: Vec<f64> = (0..=200).map(|k| k as f64 * 0.1).collect();
        for (name, term) in [("power_fn.p1", &self.p1), ("power_fn.p2", &self.p2)] {
            let vals: Vec<f64> = grid.iter().map(|&x| term.value(x)).collect();
            for w in vals.windows(2) {
                if w[1] < w[0] - 1e-9 * (1.0 + w[0].abs()) {
                    return Err(Error::config(name, "not nondecreasing on [0, 20]"));
                }
            }
            for w in vals.windows(3) {
                let second = w[0] - 2.0 * w[1] + w[2];
                if second < -1e-9 * (1.0 + w[1].abs()) {
                    return Err(Error::config(name, "not convex on [0, 20]"));
                }
            }
        }
        if grid.iter().any(|&x| self.value(x) < -1e-9) {
            return Err(Error::config("power_fn", "p = p1 - p2 must be nonnegative"));
        }
        Ok(())
    }
}

/// Physical and model constants for one downlink cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Transmit antennas, also the number of groups served per slot.
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "B")]
    pub bandwidth: f64,
    pub sigma2: f64,
    #[serde(rename = "P_T")]
    pub p_t: f64,
    /// Per-group QoS thresholds in bits/s/Hz.
    pub eps: Vec<f64>,
    pub psi: Vec<f64>,
    #[serde(rename = "P0")]
    pub p0: f64,
    pub rho: f64,
    #[serde(rename = "Pi_coeff")]
    pub pi_coeff: f64,
    pub power_fn: DcFunctionSpec,
    /// `interest_mask[i][j]` is true iff user `i` wants message `j`.
    pub interest_mask: Vec<Vec<bool>>,
}

impl SystemConfig {
    /// The operating point used throughout the evaluation: unit bandwidth and
    /// noise, `P0 = 16 W`, `ρ = 0.2`, `Π = 2.4`, `p(x) = x²`, unit weights and
    /// every user interested in every message.
    pub fn standard(m: usize, n: usize, g: usize, p_t_dbw: f64, eps: f64) -> Self {
        SystemConfig {
            m,
            n,
            g,
            bandwidth: 1.0,
            sigma2: 1.0,
            p_t: dbw_to_watts(p_t_dbw),
            eps: vec![eps; g],
            psi: vec![1.0; g],
            p0: 16.0,
            rho: 0.2,
            pi_coeff: 2.4,
            power_fn: DcFunctionSpec::default(),
            interest_mask: vec![vec![true; g]; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("M", "must be positive"));
        }
        if self.n == 0 {
            return Err(Error::config("N", "must be positive"));
        }
        if self.g == 0 {
            return Err(Error::config("G", "must be positive"));
        }
        if self.n < self.m {
            return Err(Error::config("N", "must be at least M"));
        }
        if self.g < self.m {
            return Err(Error::config("G", "must be at least M"));
        }
        let positive = [
            ("B", self.bandwidth),
            ("sigma2", self.sigma2),
            ("P_T", self.p_t),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be positive and finite"));
            }
        }
        if !(self.p0 >= 0.0 && self.p0.is_finite()) {
            return Err(Error::config("P0", "must be nonnegative"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::config("rho", "must lie in (0, 1]"));
        }
        if !(self.pi_coeff >= 0.0 && self.pi_coeff.is_finite()) {
            return Err(Error::config("Pi_coeff", "must be nonnegative"));
        }
        if self.eps.len() != self.g {
            return Err(Error::config("eps", format!("expected {} entries", self.g)));
        }
        if let Some(j) = self.eps.iter().position(|&e| !(e >= 0.0 && e.is_finite())) {
            return Err(Error::config(format!("eps[{j}]"), "must be nonnegative"));
        }
        if self.psi.len() != self.g {
            return Err(Error::config("psi", format!("expected {} entries", self.g)));
        }
        if let Some(j) = self.psi.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::config(format!("psi[{j}]"), "must be positive"));
        }
        if self.interest_mask.len() != self.n {
            return Err(Error::config("interest_mask", format!("expected {} rows", self.n)));
        }
        if let Some(i) = self.interest_mask.iter().position(|r| r.len() != self.g) {
            return Err(Error::config(
                format!("interest_mask[{i}]"),
                format!("expected {} columns", self.g),
            ));
        }
        self.power_fn.validate()
    }

    #[inline]
    pub fn interested(&self, i: usize, j: usize) -> bool {
        self.interest_mask[i][j]
    }

    /// SINR threshold `2^ε_j − 1` equivalent to the rate threshold of group `j`.
    pub fn sinr_threshold(&self, j: usize) -> f64 {
        self.eps[j].exp2() - 1.0
    }

    pub fn interested_count(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.interested(i, j)).count()
    }
}

/// Downlink channels. Row `i` of `h` is `h_iᴴ`, so that `h_iᴴ w = Σ_m h[(i, m)]·w[m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub h: DMatrix<Complex64>,
    pub seed: u64,
    pub distribution: String,
}

#[derive(Serialize, Deserialize)]
struct ChannelJson {
    seed: u64,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "H_re")]
    h_re: Vec<Vec<f64>>,
    #[serde(rename = "H_im")]
    h_im: Vec<Vec<f64>>,
}

impl Serialize for ChannelSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (n, m) = self.h.shape();
        ChannelJson {
            seed: self.seed,
            n,
            m,
            h_re: (0..n).map(|i| (0..m).map(|k| self.h[(i, k)].re).collect()).collect(),
            h_im: (0..n).map(|i| (0..m).map(|k| self.h[(i, k)].im).collect()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChannelSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ChannelJson::deserialize(d)?;
        let shape_ok = raw.h_re.len() == raw.n
            && raw.h_im.len() == raw.n
            && raw.h_re.iter().chain(&raw.h_im).all(|r| r.len() == raw.m);
        if !shape_ok {
            return Err(D::Error::custom("H_re/H_im do not match N x M"));
        }
        let h = DMatrix::from_fn(raw.n, raw.m, |i, k| Complex64::new(raw.h_re[i][k], raw.h_im[i][k]));
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(D::Error::custom("channel entries must be finite"));
        }
        Ok(ChannelSet {
            h,
            seed: raw.seed,
            distribution: "rayleigh-iid".into(),
        })
    }
}

impl ChannelSet {
    pub fn n_users(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_antennas(&self) -> usize {
        self.h.ncols()
    }

    /// `h_iᴴ w_j` for precoder column `j`.
    pub fn response(&self, w: &PrecoderMatrix, i: usize, j: usize) -> Complex64 {
        (0..self.n_antennas()).map(|k| self.h[(i, k)] * w.w[(k, j)]).sum()
    }

    /// `|h_iᴴ w_l|²` for every column `l`.
    pub fn gains(&self, w: &PrecoderMatrix, i: usize) -> Vec<f64> {
        (0..w.n_groups()).map(|l| self.response(w, i, l).norm_sqr()).collect()
    }

    pub fn user_gain(&self, i: usize) -> f64 {
        self.h.row(i).iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn check_against(&self, cfg: &SystemConfig) -> Result<()> {
        if self.h.shape() != (cfg.n, cfg.m) {
            return Err(Error::Dimension(format!(
                "channel is {:?}, config expects ({}, {})",
                self.h.shape(),
                cfg.n,
                cfg.m
            )));
        }
        Ok(())
    }
}

/// Draws i.i.d. circularly-symmetric unit-variance complex Gaussian channels.
pub fn generate_channels(cfg: &SystemConfig, seed: u64) -> Result<ChannelSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let h = DMatrix::from_fn(cfg.n, cfg.m, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(re * scale, im * scale)
    });
    Ok(ChannelSet {
        h,
        seed,
        distribution: "rayleigh-iid".into(),
    })
}

/// Precoders, one column per group (`M × G`).
#[derive(Clone, Debug, PartialEq)]
pub struct PrecoderMatrix {
    pub w: DMatrix<Complex64>,
}

impl PrecoderMatrix {
    pub fn zeros(m: usize, g: usize) -> Self {
        PrecoderMatrix {
            w: DMatrix::zeros(m, g),
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_groups(&self) -> usize {
        self.w.ncols()
    }

    pub fn column_power(&self, j: usize) -> f64 {
        self.w.column(j).iter().map(|z| z.norm_sqr()).sum()
    }

    /// `‖W‖_F²`.
    pub fn power(&self) -> f64 {
        self.w.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn to_parts(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (m, g) = self.w.shape();
        (
            (0..m).map(|k| (0..g).map(|l| self.w[(k, l)].re).collect()).collect(),
            (0..m).map(|k| (0..g).map(|l| self.w[(k, l)].im).collect()).collect(),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct PrecoderJson {
    #[serde(rename = "W_re")]
    w_re: Vec<Vec<f64>>,
    #[serde(rename = "W_im")]
    w_im: Vec<Vec<f64>>,
}

impl Serialize for PrecoderMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (w_re, w_im) = self.to_parts();
        PrecoderJson { w_re, w_im }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PrecoderMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = PrecoderJson::deserialize(d)?;
        let m = raw.w_re.len();
        let g = raw.w_re.first().map_or(0, Vec::len);
        let shape_ok = raw.w_im.len() == m && raw.w_re.iter().chain(&raw.w_im).all(|r| r.len() == g);
        if !shape_ok {
            return Err(D::Error::custom("W_re/W_im must both be M x G"));
        }
        Ok(PrecoderMatrix {
            w: DMatrix::from_fn(m, g, |k, l| Complex64::new(raw.w_re[k][l], raw.w_im[k][l])),
        })
    }
}

/// SINR of user `i` decoding group `j`'s stream.
pub fn sinr(h: &ChannelSet, w: &PrecoderMatrix, i: usize, j: usize, sigma2: f64) -> f64 {
    let gains = h.gains(w, i);
    let interference: f64 = gains.iter().enumerate().filter(|&(l, _)| l != j).map(|(_, g)| g).sum();
    gains[j] / (interference + sigma2)
}

/// Total power drawn at the base station for precoders `w` and per-group
/// rates `r` (bits/s).
pub fn consumed_power(cfg: &SystemConfig, w: &PrecoderMatrix, r: &[f64]) -> Result<f64> {
    if let Some((j, &v)) = r.iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::NegativeRate { group: j, value: v });
    }
    let processing: f64 = r.iter().map(|&x| cfg.power_fn.value(x)).sum();
    Ok(cfg.p0 + w.power() / cfg.rho + cfg.pi_coeff * processing)
}

/// Grouping (`η`) and group-scheduling (`δ`) indicators, possibly relaxed.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentState {
    pub eta: DMatrix<f64>,
    pub delta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct AssignmentJson {
    eta: Vec<Vec<f64>>,
    delta: Vec<f64>,
}

impl Serialize for AssignmentState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AssignmentJson {
            eta: (0..self.eta.nrows()).map(|i| self.eta.row(i).iter().copied().collect()).collect(),
            delta: self.delta.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AssignmentState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = AssignmentJson::deserialize(d)?;
        let g = raw.delta.len();
        if raw.eta.iter().any(|r| r.len() != g) {
            return Err(D::Error::custom("eta rows must have one entry per group"));
        }
        let n = raw.eta.len();
        Ok(AssignmentState {
            eta: DMatrix::from_fn(n, g, |i, j| raw.eta[i][j]),
            delta: raw.delta,
        })
    }
}

impl AssignmentState {
    pub fn empty(n: usize, g: usize) -> Self {
        AssignmentState {
            eta: DMatrix::zeros(n, g),
            delta: vec![0.0; g],
        }
    }

    /// Users assigned to group `j` (entries above one half).
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.eta.nrows()).filter(|&i| self.eta[(i, j)] > 0.5).collect()
    }

    pub fn selected_groups(&self) -> Vec<usize> {
        (0..self.delta.len()).filter(|&j| self.delta[j] > 0.5).collect()
    }

    /// `max(min(x, 1 − x))` over every entry of `η` and `δ`.
    pub fn binary_residual(&self) -> f64 {
        self.eta
            .iter()
            .chain(self.delta.iter())
            .map(|&x| x.min(1.0 - x).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn is_binary(&self) -> bool {
        self.eta.iter().chain(self.delta.iter()).all(|&x| x == 0.0 || x == 1.0)
    }

    /// Checks binary entries, at most one group per user, members only in
    /// selected groups and the interest mask.
    pub fn check_rounded(&self, cfg: &SystemConfig) -> Result<()> {
        if self.eta.shape() != (cfg.n, cfg.g) || self.delta.len() != cfg.g {
            return Err(Error::Dimension(format!(
                "assignment is {:?}/{}, config expects ({}, {})",
                self.eta.shape(),
                self.delta.len(),
                cfg.n,
                cfg.g
            )));
        }
        if !self.is_binary() {
            return Err(Error::Unrounded("entries must be exactly 0 or 1".into()));
        }
        for i in 0..cfg.n {
            let row_sum: f64 = self.eta.row(i).sum();
            if row_sum > 1.0 {
                return Err(Error::Unrounded(format!("user {i} is in {row_sum} groups")));
            }
            for j in 0..cfg.g {
                if self.eta[(i, j)] == 1.0 {
                    if self.delta[j] == 0.0 {
                        return Err(Error::Unrounded(format!(
                            "user {i} assigned to unscheduled group {j}"
                        )));
                    }
                    if !cfg.interested(i, j) {
                        return Err(Error::Unrounded(format!(
                            "user {i} assigned to group {j} it is not interested in"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scores of one rounded schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mee: f64,
    pub ee: f64,
    pub throughput: f64,
    pub consumed_power: f64,
    pub scheduled_users: usize,
    pub scheduled_groups: usize,
    pub min_rates: Vec<f64>,
}

/// Per-group minimum rate in bits/s; zero for unscheduled or empty groups.
pub fn group_min_rates(cfg: &SystemConfig, h: &ChannelSet, w: &PrecoderMatrix, a: &AssignmentState) -> Vec<f64> {
    (0..cfg.g)
        .map(|j| {
            if a.delta[j] < 0.5 {
                return 0.0;
            }
            let worst = a
                .members(j)
                .into_iter()
                .map(|i| sinr(h, w, i, j, cfg.sigma2))
                .fold(f64::INFINITY, f64::min);
            if worst.is_finite() {
                cfg.bandwidth * worst.ln_1p() / std::f64::consts::LN_2
            } else {
                0.0
            }
        })
        .collect()
}

/// Evaluates MEE, EE, throughput and consumed power of a rounded schedule.
pub fn score(cfg: &SystemConfig, h: &ChannelSet, w: &PrecoderMatrix, a: &AssignmentState) -> Result<Metrics> {
    a.check_rounded(cfg)?;
    let min_rates = group_min_rates(cfg, h, w, a);
    let power = consumed_power(cfg, w, &min_rates)?;
    let throughput: f64 = min_rates.iter().sum();
    let weighted: f64 = (0..cfg.g)
        .map(|j| cfg.psi[j] * a.members(j).len() as f64 * min_rates[j])
        .sum();
    Ok(Metrics {
        mee: weighted / power,
        ee: throughput / power,
        throughput,
        consumed_power: power,
        scheduled_users: a.eta.iter().filter(|&&x| x == 1.0).count(),
        scheduled_groups: a.delta.iter().filter(|&&x| x == 1.0).count(),
        min_rates,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QosViolation {
    pub user: usize,
    pub group: usize,
    /// Achieved spectral efficiency `log2(1 + γ)`.
    pub rate: f64,
    pub required: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QosReport {
    pub satisfied: bool,
    pub violators: Vec<QosViolation>,
}

/// Spectral efficiency `log2(1 + γ_ij)`.
pub fn spectral_efficiency(cfg: &SystemConfig, h: &ChannelSet, w: &PrecoderMatrix, i: usize, j: usize) -> f64 {
    sinr(h, w, i, j, cfg.sigma2).ln_1p() / std::f64::consts::LN_2
}

/// Checks `log2(1 + γ_ij) ≥ ε_j` for every scheduled member.
pub fn qos_satisfied(cfg: &SystemConfig, h: &ChannelSet, w: &PrecoderMatrix, a: &AssignmentState) -> QosReport {
    let mut violators = Vec::new();
    for j in 0..cfg.g {
        if a.delta[j] < 0.5 {
            continue;
        }
        for i in a.members(j) {
            let rate = spectral_efficiency(cfg, h, w, i, j);
            if rate < cfg.eps[j] - QOS_TOL {
                violators.push(QosViolation {
                    user: i,
                    group: j,
                    rate,
                    required: cfg.eps[j],
                });
            }
        }
    }
    QosReport {
        satisfied: violators.is_empty(),
        violators,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn chan(rows: &[&[Complex64]]) -> ChannelSet {
        let n = rows.len();
        let m = rows[0].len();
        ChannelSet {
            h: DMatrix::from_fn(n, m, |i, k| rows[i][k]),
            seed: 0,
            distribution: "fixed".into(),
        }
    }

    fn tiny_cfg(m: usize, n: usize, g: usize) -> SystemConfig {
        let mut cfg = SystemConfig::standard(m, n, g, 20.0, 1.0);
        cfg.sigma2 = 1.0;
        cfg
    }

    #[test]
    fn channels_are_deterministic_per_seed() {
        let cfg = tiny_cfg(2, 2, 2);
        let a = generate_channels(&cfg, 7).unwrap();
        let b = generate_channels(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let other = generate_channels(&cfg, 8).unwrap();
        assert_ne!(a.h, other.h);
    }

    #[test]
    fn channel_entries_have_unit_variance() {
        let cfg = tiny_cfg(10, 10_000, 10);
        let ch = generate_channels(&cfg, 11).unwrap();
        let mean = ch.h.iter().map(|z| z.norm_sqr()).sum::<f64>() / ch.h.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean |h|^2 = {mean}");
    }

    #[test]
    fn zero_users_rejected() {
        let mut cfg = tiny_cfg(2, 2, 2);
        cfg.n = 0;
        cfg.interest_mask.clear();
        assert!(generate_channels(&cfg, 1).is_err());
    }

    #[test]
    fn sinr_examples() {
        let h = chan(&[&[c(1.0, 0.0), c(0.0, 0.0)]]);
        let mut w = PrecoderMatrix::zeros(2, 2);
        w.w[(0, 0)] = c(2.0, 0.0);
        assert!((sinr(&h, &w, 0, 0, 1.0) - 4.0).abs() < 1e-15);

        let zero = PrecoderMatrix::zeros(2, 2);
        assert_eq!(sinr(&h, &zero, 0, 1, 1.0), 0.0);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = chan(&[&[c(s, 0.0), c(s, 0.0)]]);
        let mut w = PrecoderMatrix::zeros(2, 2);
        w.w[(0, 0)] = c(1.0, 0.0);
        w.w[(1, 1)] = c(1.0, 0.0);
        // |h^H w1|^2 = 0.5, interference 0.5
        let expected = 0.5 / (0.5 + 1.0);
        assert!((sinr(&h, &w, 0, 0, 1.0) - expected).abs() < 1e-12);
        assert!((expected - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn consumed_power_examples() {
        let mut cfg = tiny_cfg(1, 1, 1);
        let w0 = PrecoderMatrix::zeros(1, 1);
        assert_eq!(consumed_power(&cfg, &w0, &[0.0]).unwrap(), 16.0);

        cfg.pi_coeff = 0.0;
        let mut w = PrecoderMatrix::zeros(1, 1);
        w.w[(0, 0)] = c(1.0, 0.0);
        assert!((consumed_power(&cfg, &w, &[0.0]).unwrap() - 21.0).abs() < 1e-12);

        cfg.pi_coeff = 2.4;
        let got = consumed_power(&cfg, &w, &[2.0]).unwrap();
        assert!((got - (16.0 + 5.0 + 2.4 * 4.0)).abs() < 1e-12);

        assert!(matches!(
            consumed_power(&cfg, &w, &[-1.0]),
            Err(Error::NegativeRate { group: 0, .. })
        ));
    }

    #[test]
    fn score_empty_schedule() {
        let cfg = tiny_cfg(2, 2, 2);
        let h = generate_channels(&cfg, 3).unwrap();
        let mut w = PrecoderMatrix::zeros(2, 2);
        w.w[(0, 1)] = c(1.0, 1.0);
        let mut a = AssignmentState::empty(2, 2);
        a.delta = vec![1.0, 0.0];
        let m = score(&cfg, &h, &w, &a).unwrap();
        assert_eq!(m.mee, 0.0);
        assert_eq!(m.ee, 0.0);
        assert_eq!(m.consumed_power, consumed_power(&cfg, &w, &[0.0, 0.0]).unwrap());
    }

    #[test]
    fn score_single_user_gamma_three() {
        // h = 1, w = 1, sigma2 = 1/3 gives gamma = 3; rho = 1, P0 = 1 gives g = 2.
        let mut cfg = tiny_cfg(1, 1, 1);
        cfg.sigma2 = 1.0 / 3.0;
        cfg.rho = 1.0;
        cfg.p0 = 1.0;
        cfg.pi_coeff = 0.0;
        let h = chan(&[&[c(1.0, 0.0)]]);
        let mut w = PrecoderMatrix::zeros(1, 1);
        w.w[(0, 0)] = c(1.0, 0.0);
        let mut a = AssignmentState::empty(1, 1);
        a.eta[(0, 0)] = 1.0;
        a.delta[0] = 1.0;
        let m = score(&cfg, &h, &w, &a).unwrap();
        assert!((m.min_rates[0] - 2.0).abs() < 1e-12);
        assert!((m.consumed_power - 2.0).abs() < 1e-12);
        assert!((m.mee - 1.0).abs() < 1e-12);
        assert!((m.ee - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mee_scales_with_group_size() {
        // Four identical users vs one: same minimum rate, same power.
        let cfg = tiny_cfg(1, 4, 1);
        let h = chan(&[&[c(1.0, 0.0)], &[c(1.0, 0.0)], &[c(1.0, 0.0)], &[c(1.0, 0.0)]]);
        let mut w = PrecoderMatrix::zeros(1, 1);
        w.w[(0, 0)] = c(1.5, 0.0);
        let mut one = AssignmentState::empty(4, 1);
        one.delta[0] = 1.0;
        one.eta[(0, 0)] = 1.0;
        let mut four = one.clone();
        for i in 0..4 {
            four.eta[(i, 0)] = 1.0;
        }
        let m1 = score(&cfg, &h, &w, &one).unwrap();
        let m4 = score(&cfg, &h, &w, &four).unwrap();
        assert!((m4.mee - 4.0 * m1.mee).abs() < 1e-12);
        assert!((m4.ee - m1.ee).abs() < 1e-12);
    }

    #[test]
    fn score_rejects_fractional() {
        let cfg = tiny_cfg(1, 1, 1);
        let h = chan(&[&[c(1.0, 0.0)]]);
        let w = PrecoderMatrix::zeros(1, 1);
        let mut a = AssignmentState::empty(1, 1);
        a.eta[(0, 0)] = 0.4;
        a.delta[0] = 1.0;
        assert!(matches!(score(&cfg, &h, &w, &a), Err(Error::Unrounded(_))));
    }

    #[test]
    fn qos_examples() {
        let cfg = tiny_cfg(1, 1, 1);
        let h = chan(&[&[c(1.0, 0.0)]]);
        let mut a = AssignmentState::empty(1, 1);
        a.delta[0] = 1.0;
        let w = PrecoderMatrix::zeros(1, 1);
        assert!(qos_satisfied(&cfg, &h, &w, &a).satisfied);

        a.eta[(0, 0)] = 1.0;
        let mut w = PrecoderMatrix::zeros(1, 1);
        w.w[(0, 0)] = c(1.0, 0.0); // gamma = 1
        assert!(qos_satisfied(&cfg, &h, &w, &a).satisfied);

        w.w[(0, 0)] = c(0.9f64.sqrt(), 0.0); // gamma = 0.9
        let rep = qos_satisfied(&cfg, &h, &w, &a);
        assert!(!rep.satisfied);
        assert_eq!((rep.violators[0].user, rep.violators[0].group), (0, 0));
        assert!(rep.violators[0].rate < 1.0);
    }

    #[test]
    fn config_validation_catches_bad_power_model() {
        let mut cfg = tiny_cfg(2, 3, 2);
        assert!(cfg.validate().is_ok());
        cfg.power_fn.p2 = ConvexTerm::Quadratic { a: 2.0, b: 0.0 };
        assert!(cfg.validate().is_err(), "p = x^2 - 2x^2 is negative");
        cfg.power_fn.p2 = ConvexTerm::Zero;
        cfg.power_fn.p1 = ConvexTerm::Quadratic { a: -1.0, b: 0.0 };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn derivative_evaluators_match_central_differences() {
        let terms = [
            ConvexTerm::Quadratic { a: 1.3, b: 0.4 },
            ConvexTerm::Exponential { c: 0.7 },
            ConvexTerm::Power { coeff: 0.5, exponent: 3.0 },
            ConvexTerm::Zero,
        ];
        for term in terms {
            for k in 1..40 {
                let x = 0.25 * k as f64;
                let step = 1e-5 * (1.0 + x);
                let fd = (term.value(x + step) - term.value(x - step)) / (2.0 * step);
                let an = term.derivative(x);
                let rel = (fd - an).abs() / an.abs().max(1e-12);
                assert!(an == 0.0 && fd.abs() < 1e-9 || rel <= 1e-6, "{term:?} at {x}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn channel_json_round_trip() {
        let cfg = tiny_cfg(2, 3, 2);
        let ch = generate_channels(&cfg, 5).unwrap();
        let text = serde_json::to_string(&ch).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["seed", "N", "M", "H_re", "H_im"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: ChannelSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back.h, ch.h);
    }
}
