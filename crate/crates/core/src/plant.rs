//! Synthetic PV + storage plant.
//!
//! Irradiance drives PV and (weakly) temperature, temperature derates PV,
//! a dispatch policy covers part of the gap between demand and PV from the
//! battery, and SOC integrates the battery output. With meter noise off,
//! `total = pv + storage` holds exactly at every step.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, PriorGraph};
use crate::series::{DataError, TimeSeriesMatrix};

pub const IRRADIANCE: &str = "irradiance";
pub const TEMPERATURE: &str = "temperature";
pub const PV_POWER: &str = "pv_power";
pub const TOTAL_POWER: &str = "total_power";
pub const STORAGE_POWER: &str = "storage_power";
pub const SOC: &str = "soc";

/// Row order of every generated day.
pub const PLANT_VARIABLES: [&str; 6] = [IRRADIANCE, TEMPERATURE, PV_POWER, TOTAL_POWER, STORAGE_POWER, SOC];

/// Row indices of the power-balance roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerRoles {
    pub total: usize,
    pub pv: usize,
    pub storage: usize,
}

impl PowerRoles {
    pub const PLANT: PowerRoles = PowerRoles {
        total: 3,
        pv: 2,
        storage: 4,
    };

    /// Looks the roles up by the plant variable names.
    pub fn by_name(names: &[String]) -> Option<Self> {
        let find = |n: &str| names.iter().position(|x| x == n);
        Some(Self {
            total: find(TOTAL_POWER)?,
            pv: find(PV_POWER)?,
            storage: find(STORAGE_POWER)?,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid plant config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Double-hump daily demand: `base + morning·bump(t; 8h) + evening·bump(t; 19h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandProfile {
    pub base_kw: (f64, f64),
    pub morning_kw: (f64, f64),
    pub evening_kw: (f64, f64),
    pub morning_hour: f64,
    pub evening_hour: f64,
    /// Peak hours jitter uniformly by up to this many hours.
    pub hour_jitter: f64,
    pub width_hours: f64,
}

impl Default for DemandProfile {
    fn default() -> Self {
        Self {
            base_kw: (250.0, 350.0),
            morning_kw: (200.0, 400.0),
            evening_kw: (300.0, 500.0),
            morning_hour: 8.0,
            evening_hour: 19.0,
            hour_jitter: 1.0,
            width_hours: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub resolution_minutes: u32,
    pub day_minutes: u32,
    pub pv_capacity_kw: f64,
    pub storage_capacity_kwh: f64,
    pub initial_soc: f64,
    /// PV power temperature coefficient γ (1/°C).
    pub temp_coefficient: f64,
    /// Depth of the multiplicative cloud attenuation, in `[0, 1]`.
    pub cloud_amplitude: f64,
    /// Temperature rise per W/m² of irradiance.
    pub irradiance_heating: f64,
    pub temp_mean_c: (f64, f64),
    pub temp_swing_c: f64,
    pub temp_noise_c: f64,
    /// Fraction of the demand-minus-PV gap the battery tries to cover.
    pub dispatch_share: f64,
    pub demand: DemandProfile,
    /// Std of the storage meter error (kW); 0 gives exact power balance.
    pub meter_noise_kw: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            resolution_minutes: 15,
            day_minutes: 1440,
            pv_capacity_kw: 1000.0,
            storage_capacity_kwh: 4000.0,
            initial_soc: 0.5,
            temp_coefficient: 0.004,
            cloud_amplitude: 0.6,
            irradiance_heating: 0.01,
            temp_mean_c: (15.0, 25.0),
            temp_swing_c: 2.0,
            temp_noise_c: 1.0,
            dispatch_share: 0.8,
            demand: DemandProfile::default(),
            meter_noise_kw: 0.0,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
        }
    }
}

impl PlantConfig {
    pub fn steps_per_day(&self) -> usize {
        (self.day_minutes / self.resolution_minutes) as usize
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: &str| Err(PlantError::Config(m.to_string()));
        if self.resolution_minutes == 0 || !self.day_minutes.is_multiple_of(self.resolution_minutes) {
            return bad("resolution must divide the day length");
        }
        if self.steps_per_day() < 2 {
            return bad("need at least two steps per day");
        }
        if !(self.pv_capacity_kw > 0.0 && self.storage_capacity_kwh > 0.0) {
            return bad("capacities must be positive");
        }
        if !(0.0..=1.0).contains(&self.initial_soc) {
            return bad("initial SOC must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.cloud_amplitude) {
            return bad("cloud amplitude must be in [0, 1]");
        }
        if !(self.meter_noise_kw >= 0.0 && self.temp_noise_c >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        let (lo, hi) = self.temp_mean_c;
        if lo > hi {
            return bad("temperature range is inverted");
        }
        Ok(())
    }
}

/// One generated day, rows in [`PLANT_VARIABLES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantDay {
    pub date: NaiveDate,
    pub series: TimeSeriesMatrix<f64>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Generates one day from `rng`. `date` is only carried along.
pub fn generate_day<R: Rng + ?Sized>(cfg: &PlantConfig, date: NaiveDate, rng: &mut R) -> Result<PlantDay, PlantError> {
    cfg.validate()?;
    let len = cfg.steps_per_day();
    let dt_h = cfg.resolution_minutes as f64 / 60.0;
    let hours: Vec<f64> = (0..len).map(|i| i as f64 * dt_h).collect();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let sunrise = 6.0 + rng.random_range(-0.5..0.5);
    let sunset = 18.0 + rng.random_range(-0.5..0.5);
    let peak = rng.random_range(800.0..1050.0);
    let mut cloud = rng.random::<f64>();
    let irradiance: Vec<f64> = hours
        .iter()
        .map(|&t| {
            cloud = (0.95 * cloud + 0.05 * rng.random::<f64>() + 0.08 * unit.sample(rng)).clamp(0.0, 1.0);
            if t <= sunrise || t >= sunset {
                return 0.0;
            }
            let x = (t - sunrise) / (sunset - sunrise);
            let bell = peak * (std::f64::consts::PI * x).sin().max(0.0).powf(1.5);
            bell * (1.0 - cfg.cloud_amplitude * cloud)
        })
        .collect();

    let t_mean = uniform(rng, cfg.temp_mean_c);
    let temperature: Vec<f64> = hours
        .iter()
        .zip(&irradiance)
        .map(|(&t, &g)| {
            t_mean
                + cfg.temp_swing_c * (2.0 * std::f64::consts::PI * (t - 9.0) / 24.0).sin()
                + cfg.irradiance_heating * g
                + cfg.temp_noise_c * unit.sample(rng)
        })
        .collect();

    let pv: Vec<f64> = irradiance
        .iter()
        .zip(&temperature)
        .map(|(&g, &temp)| (cfg.pv_capacity_kw * g / 1000.0 * (1.0 - cfg.temp_coefficient * (temp - 25.0))).max(0.0))
        .collect();

    let d = &cfg.demand;
    let base = uniform(rng, d.base_kw);
    let morning = uniform(rng, d.morning_kw);
    let evening = uniform(rng, d.evening_kw);
    let m_at = d.morning_hour + uniform(rng, (-d.hour_jitter, d.hour_jitter));
    let e_at = d.evening_hour + uniform(rng, (-d.hour_jitter, d.hour_jitter));
    let bump = |t: f64, at: f64| (-(t - at).powi(2) / (2.0 * d.width_hours * d.width_hours)).exp();

    let ecap = cfg.storage_capacity_kwh;
    let mut soc_now = cfg.initial_soc;
    let mut storage = vec![0.0; len];
    let mut total = vec![0.0; len];
    let mut soc = vec![0.0; len];
    for i in 0..len {
        let demand = base + morning * bump(hours[i], m_at) + evening * bump(hours[i], e_at);
        let mut want = cfg.dispatch_share * (demand - pv[i]);
        let next = soc_now - want * dt_h / ecap;
        if next > 1.0 {
            want = (soc_now - 1.0) * ecap / dt_h;
        } else if next < 0.0 {
            want = soc_now * ecap / dt_h;
        }
        soc_now = (soc_now - want * dt_h / ecap).clamp(0.0, 1.0);
        storage[i] = want;
        total[i] = pv[i] + want;
        soc[i] = soc_now;
    }
    if cfg.meter_noise_kw > 0.0 {
        let meter = Normal::new(0.0, cfg.meter_noise_kw).expect("finite meter noise");
        for s in &mut storage {
            *s += meter.sample(rng);
        }
    }

    let names = PLANT_VARIABLES.iter().map(|s| s.to_string()).collect();
    let series = TimeSeriesMatrix::from_rows(
        names,
        vec![irradiance, temperature, pv, total, storage, soc],
        cfg.resolution_minutes,
    )?;
    Ok(PlantDay { date, series })
}

/// RNG for day `index` of the dataset seeded by `seed`; days are independent
/// streams so they can be generated in any order.
pub fn day_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generated days together with the physical prior graph.
#[derive(Debug, Clone)]
pub struct PlantDataset {
    pub days: Vec<PlantDay>,
    pub prior: PriorGraph,
}

pub fn generate_dataset(cfg: &PlantConfig, n_days: usize) -> Result<PlantDataset, PlantError> {
    if n_days == 0 {
        return Err(PlantError::Config("n_days must be at least 1".into()));
    }
    let days = (0..n_days)
        .map(|i| {
            let date = cfg
                .start_date
                .checked_add_days(Days::new(i as u64))
                .ok_or_else(|| PlantError::Config("date overflow".into()))?;
            generate_day(cfg, date, &mut day_rng(cfg.seed, i as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PlantDataset {
        days,
        prior: plant_prior()?,
    })
}

fn names() -> Vec<String> {
    PLANT_VARIABLES.iter().map(|s| s.to_string()).collect()
}

/// Physical prior edges of the plant.
pub fn plant_prior() -> Result<PriorGraph, GraphError> {
    PriorGraph::from_named(
        names(),
        &[
            (IRRADIANCE, PV_POWER),
            (TEMPERATURE, PV_POWER),
            (PV_POWER, STORAGE_POWER),
            (STORAGE_POWER, SOC),
        ],
    )
}

/// Every structural dependency in the generator: the prior plus the power
/// balance (`total = pv + storage`) and irradiance heating.
pub fn plant_ground_truth() -> Result<PriorGraph, GraphError> {
    PriorGraph::from_named(
        names(),
        &[
            (IRRADIANCE, PV_POWER),
            (TEMPERATURE, PV_POWER),
            (PV_POWER, STORAGE_POWER),
            (STORAGE_POWER, SOC),
            (PV_POWER, TOTAL_POWER),
            (STORAGE_POWER, TOTAL_POWER),
            (IRRADIANCE, TEMPERATURE),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_balance_is_exact() {
        let cfg = PlantConfig::default();
        let ds = generate_dataset(&cfg, 3).unwrap();
        for day in &ds.days {
            let s = &day.series;
            for t in 0..s.len() {
                assert_eq!(s.get(3, t), s.get(2, t) + s.get(4, t));
            }
        }
    }

    #[test]
    fn night_is_dark() {
        let day = generate_day(&PlantConfig::default(), NaiveDate::MIN, &mut day_rng(1, 0)).unwrap();
        assert_eq!(day.series.get(0, 0), 0.0);
        assert_eq!(day.series.get(2, 0), 0.0);
        assert_eq!(day.series.get(0, day.series.len() - 1), 0.0);
    }

    #[test]
    fn config_validation() {
        let cfg = PlantConfig {
            initial_soc: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = PlantConfig {
            resolution_minutes: 7,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
