//! Configuration, geometry, user placement and dataset-size assignment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ota::{AmpNoiseModel, GainGrouping};
use crate::sca::{ScaConfig, StepSchedule};

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// dBm to watts.
pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Which surface sits between the users and the base station.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceKind {
    /// Active STARS: every element both reflects and transmits, with gain.
    Stars,
    /// Two passive reflect-only surfaces, one per half-space.
    DualRis,
    /// No surface at all.
    Off,
}

impl SurfaceKind {
    fn name(self) -> &'static str {
        match self {
            SurfaceKind::Stars => "stars",
            SurfaceKind::DualRis => "dual-ris",
            SurfaceKind::Off => "off",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "stars" => Some(SurfaceKind::Stars),
            "dual-ris" => Some(SurfaceKind::DualRis),
            "off" => Some(SurfaceKind::Off),
            _ => None,
        }
    }
}

/// All physical and learning parameters. Powers in watts, gains linear.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub j_antennas: usize,
    pub q_elements: usize,
    pub n_reflect: usize,
    pub m_transmit: usize,
    pub kappa: f64,
    pub alpha: f64,
    pub eta0: f64,
    pub lambda_amp: f64,
    pub beta_r: f64,
    pub beta_t: f64,
    pub sigma_s2: f64,
    pub sigma_02: f64,
    pub p_max: f64,
    pub eta_lr: f64,
    pub rho_reg: f64,
    pub rounds: usize,
    pub seed: u64,
    pub surface: SurfaceKind,
    /// Direct-link power gain for transmission-side users (0 = blocked).
    pub tx_direct_gain: f64,
    /// Penetration loss applied by the no-surface baseline.
    pub noris_pen: f64,
    pub amp_noise: AmpNoiseModel,
    pub grouping: GainGrouping,
    pub redraw_per_round: bool,
    pub sca: ScaConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            j_antennas: 5,
            q_elements: 30,
            n_reflect: 40,
            m_transmit: 40,
            kappa: db_to_lin(-5.0),
            alpha: 2.0,
            eta0: db_to_lin(-30.0),
            lambda_amp: 5.0,
            beta_r: 0.7,
            beta_t: 0.3,
            sigma_s2: dbm_to_w(-70.0),
            sigma_02: dbm_to_w(-90.0),
            p_max: dbm_to_w(10.0),
            eta_lr: 0.01,
            rho_reg: 1.0,
            rounds: 150,
            seed: 1,
            surface: SurfaceKind::Stars,
            tx_direct_gain: 0.0,
            noris_pen: db_to_lin(-20.0),
            amp_noise: AmpNoiseModel::Lumped,
            grouping: GainGrouping::PerUser,
            redraw_per_round: false,
            sca: ScaConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{raw}`")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got `{raw}`"))),
    }
}

impl SystemConfig {
    pub fn users(&self) -> usize {
        self.n_reflect + self.m_transmit
    }

    /// Set one field from its textual form. dB-valued keys are converted here.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim().trim_matches('"');
        match key {
            "j_antennas" => self.j_antennas = parse_num(key, raw)?,
            "q_elements" => self.q_elements = parse_num(key, raw)?,
            "n_reflect" => self.n_reflect = parse_num(key, raw)?,
            "m_transmit" => self.m_transmit = parse_num(key, raw)?,
            "kappa_db" => self.kappa = db_to_lin(parse_num(key, raw)?),
            "alpha" => self.alpha = parse_num(key, raw)?,
            "eta0_db" => self.eta0 = db_to_lin(parse_num(key, raw)?),
            "lambda_amp" => self.lambda_amp = parse_num(key, raw)?,
            "beta_r" => self.beta_r = parse_num(key, raw)?,
            "beta_t" => self.beta_t = parse_num(key, raw)?,
            "sigma_s2_dbm" => self.sigma_s2 = dbm_to_w(parse_num(key, raw)?),
            "sigma_02_dbm" => self.sigma_02 = dbm_to_w(parse_num(key, raw)?),
            "p_max_dbm" => self.p_max = dbm_to_w(parse_num(key, raw)?),
            "eta_lr" => self.eta_lr = parse_num(key, raw)?,
            "rho_reg" => self.rho_reg = parse_num(key, raw)?,
            "rounds" => self.rounds = parse_num(key, raw)?,
            "seed" => self.seed = parse_num(key, raw)?,
            "surface" => {
                self.surface = SurfaceKind::parse(raw)
                    .ok_or_else(|| Error::Config(format!("surface: unknown kind `{raw}`")))?
            }
            "tx_direct_db" => {
                self.tx_direct_gain = if raw == "off" {
                    0.0
                } else {
                    db_to_lin(parse_num(key, raw)?)
                }
            }
            "noris.pen_db" => self.noris_pen = db_to_lin(parse_num(key, raw)?),
            "amp_noise" => {
                self.amp_noise = AmpNoiseModel::parse(raw)
                    .ok_or_else(|| Error::Config(format!("amp_noise: unknown model `{raw}`")))?
            }
            "grouping" => {
                self.grouping = GainGrouping::parse(raw)
                    .ok_or_else(|| Error::Config(format!("grouping: unknown mode `{raw}`")))?
            }
            "redraw_per_round" => self.redraw_per_round = parse_bool(key, raw)?,
            "sca.imax" => self.sca.imax = parse_num(key, raw)?,
            "sca.xi" => self.sca.xi = parse_num(key, raw)?,
            "sca.varpi" => self.sca.varpi = parse_num(key, raw)?,
            "sca.restarts" => self.sca.restarts = parse_num(key, raw)?,
            "sca.zeta_iters" => self.sca.zeta_iters = parse_num(key, raw)?,
            "sca.zeta_stages" => self.sca.zeta_stages = parse_num(key, raw)?,
            "sca.step" => {
                self.sca.step = StepSchedule::parse(raw)
                    .ok_or_else(|| Error::Config(format!("sca.step: cannot parse `{raw}`")))?
            }
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Check the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if self.j_antennas == 0 {
            return bad("j_antennas", "must be at least 1");
        }
        if self.q_elements == 0 {
            return bad("q_elements", "must be at least 1");
        }
        if self.users() == 0 {
            return bad("n_reflect/m_transmit", "need at least one user");
        }
        for (name, v) in [
            ("kappa_db", self.kappa),
            ("alpha", self.alpha),
            ("eta0_db", self.eta0),
            ("lambda_amp", self.lambda_amp),
            ("p_max_dbm", self.p_max),
            ("eta_lr", self.eta_lr),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, "must be strictly positive");
            }
        }
        for (name, v) in [
            ("sigma_s2_dbm", self.sigma_s2),
            ("sigma_02_dbm", self.sigma_02),
            ("rho_reg", self.rho_reg),
            ("tx_direct_db", self.tx_direct_gain),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name, "must be non-negative");
            }
        }
        for (name, v) in [("beta_r", self.beta_r), ("beta_t", self.beta_t)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(name, "must lie in (0, 1]");
            }
        }
        if self.beta_r + self.beta_t > 1.0 + 1e-12 {
            return bad("beta_r + beta_t", "beta sum exceeds 1");
        }
        self.sca.validate()
    }

    /// Resolved configuration as flat `key = value` lines, in the same units
    /// the config file uses. Feeding this back through [`load_config_str`]
    /// reproduces `self`.
    pub fn to_flat(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("j_antennas", self.j_antennas.to_string());
        kv("q_elements", self.q_elements.to_string());
        kv("n_reflect", self.n_reflect.to_string());
        kv("m_transmit", self.m_transmit.to_string());
        kv("kappa_db", lin_to_db(self.kappa).to_string());
        kv("alpha", self.alpha.to_string());
        kv("eta0_db", lin_to_db(self.eta0).to_string());
        kv("lambda_amp", self.lambda_amp.to_string());
        kv("beta_r", self.beta_r.to_string());
        kv("beta_t", self.beta_t.to_string());
        kv("sigma_s2_dbm", fmt_dbm(self.sigma_s2));
        kv("sigma_02_dbm", fmt_dbm(self.sigma_02));
        kv("p_max_dbm", w_to_dbm(self.p_max).to_string());
        kv("eta_lr", self.eta_lr.to_string());
        kv("rho_reg", self.rho_reg.to_string());
        kv("rounds", self.rounds.to_string());
        kv("seed", self.seed.to_string());
        kv("surface", format!("\"{}\"", self.surface.name()));
        kv(
            "tx_direct_db",
            if self.tx_direct_gain > 0.0 {
                lin_to_db(self.tx_direct_gain).to_string()
            } else {
                "\"off\"".into()
            },
        );
        kv("noris.pen_db", lin_to_db(self.noris_pen).to_string());
        kv("amp_noise", format!("\"{}\"", self.amp_noise.name()));
        kv("grouping", format!("\"{}\"", self.grouping.name()));
        kv("redraw_per_round", self.redraw_per_round.to_string());
        kv("sca.imax", self.sca.imax.to_string());
        kv("sca.xi", fmt_f64(self.sca.xi));
        kv("sca.varpi", self.sca.varpi.to_string());
        kv("sca.restarts", self.sca.restarts.to_string());
        kv("sca.zeta_iters", self.sca.zeta_iters.to_string());
        kv("sca.zeta_stages", self.sca.zeta_stages.to_string());
        kv("sca.step", format!("\"{}\"", self.sca.step));
        s
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "\"inf\"".into()
    } else {
        v.to_string()
    }
}

// A zero noise power has no dBm value; write it as -inf so it round-trips.
fn fmt_dbm(w: f64) -> String {
    if w == 0.0 {
        "\"-inf\"".into()
    } else {
        w_to_dbm(w).to_string()
    }
}

fn value_to_raw(v: &toml::Value) -> Result<String> {
    Ok(match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        other => return Err(Error::Config(format!("unsupported value `{other}`"))),
    })
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, String>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out)?,
            _ => {
                out.insert(key, value_to_raw(v)?);
            }
        }
    }
    Ok(())
}

/// Parse config text, apply `overrides` (key, value) in order, and validate.
pub fn load_config_str(text: &str, overrides: &[(String, String)]) -> Result<SystemConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("parse failure: {e}")))?;
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat)?;
    for (k, v) in overrides {
        flat.insert(k.clone(), v.clone());
    }
    let mut cfg = SystemConfig::default();
    for (k, v) in &flat {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Load a config file (or defaults when `path` is `None`) plus overrides.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<SystemConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    load_config_str(&text, overrides)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Reflection,
    Transmission,
}

pub type Point = [f64; 3];

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub bs_pos: Point,
    pub stars_pos: Point,
    pub user_pos: Vec<Point>,
    /// Reflection users come first, then transmission users.
    pub sides: Vec<Side>,
}

impl Geometry {
    pub fn d_sr(&self) -> f64 {
        distance(&self.bs_pos, &self.stars_pos)
    }

    pub fn d_su(&self, phi: usize) -> f64 {
        distance(&self.stars_pos, &self.user_pos[phi])
    }

    pub fn d_bu(&self, phi: usize) -> f64 {
        distance(&self.bs_pos, &self.user_pos[phi])
    }
}

pub const BS_POS: Point = [0.0, 0.0, 10.0];
pub const STARS_POS: Point = [50.0, 0.0, 10.0];

/// Uniform placement: reflection users in {(50+x, 50+y, 0): 0≤x≤20, |y|≤10},
/// transmission users in the same box with −20≤x≤0.
pub fn place_users<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Geometry {
    let mut user_pos = Vec::with_capacity(cfg.users());
    let mut sides = Vec::with_capacity(cfg.users());
    for (count, side, xr) in [
        (cfg.n_reflect, Side::Reflection, (0.0, 20.0)),
        (cfg.m_transmit, Side::Transmission, (-20.0, 0.0)),
    ] {
        for _ in 0..count {
            let x = xr.0 + (xr.1 - xr.0) * rng.random::<f64>();
            let y = -10.0 + 20.0 * rng.random::<f64>();
            user_pos.push([50.0 + x, 50.0 + y, 0.0]);
            sides.push(side);
        }
    }
    Geometry {
        bs_pos: BS_POS,
        stars_pos: STARS_POS,
        user_pos,
        sides,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    Set1,
    Set2,
}

impl std::str::FromStr for DataMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "set1" => Ok(DataMode::Set1),
            "set2" => Ok(DataMode::Set2),
            _ => Err(Error::Config(format!("unknown data mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for DataMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataMode::Set1 => "set1",
            DataMode::Set2 => "set2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataAssignment {
    pub k: Vec<usize>,
    pub mode: DataMode,
}

impl DataAssignment {
    pub fn total(&self) -> usize {
        self.k.iter().sum()
    }
}

pub const SET1_SIZE: usize = 750;

/// Set1: every user holds 750 samples. Set2: a random ⌈Φ/2⌉ of the users
/// draw from [100, 200], the rest from [1000, 2000].
pub fn assign_data<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    mode: DataMode,
    rng: &mut R,
) -> DataAssignment {
    let phi = cfg.users();
    let k = match mode {
        DataMode::Set1 => vec![SET1_SIZE; phi],
        DataMode::Set2 => {
            let mut idx: Vec<usize> = (0..phi).collect();
            // Fisher-Yates so the small-data half is a random subset.
            for i in (1..phi).rev() {
                let j = rng.random_range(0..=i);
                idx.swap(i, j);
            }
            let n_small = phi.div_ceil(2);
            let mut k = vec![0; phi];
            for (rank, &u) in idx.iter().enumerate() {
                k[u] = if rank < n_small {
                    rng.random_range(100..=200)
                } else {
                    rng.random_range(1000..=2000)
                };
            }
            k
        }
    };
    DataAssignment { k, mode }
}
