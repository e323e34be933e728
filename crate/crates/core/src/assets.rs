//! Renewable generation (synthetic PV and wind, or CSV) and the per-cluster
//! electric vehicle: a charge-from-surplus / discharge-at-peak policy plus the
//! battery bookkeeping behind it.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Weibull};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tariff::{PeakPeriod, TimeOfDay};

pub const INTERVALS_PER_DAY: usize = 144;
pub const INTERVAL_HOURS: f64 = 1.0 / 6.0;
const SOC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PvModel {
    /// Mean daylight length in hours; the seasonal swing is added on top.
    pub mean_daylight_h: f64,
    pub seasonal_swing_h: f64,
    pub solar_noon_h: f64,
    pub cloud_mean: f64,
    pub cloud_persistence: f64,
    pub cloud_noise: f64,
}

impl Default for PvModel {
    fn default() -> Self {
        PvModel {
            mean_daylight_h: 12.0,
            seasonal_swing_h: 2.5,
            solar_noon_h: 12.5,
            cloud_mean: 0.75,
            cloud_persistence: 0.95,
            cloud_noise: 0.06,
        }
    }
}

impl PvModel {
    pub fn daylight(&self, day_of_year: usize) -> (f64, f64) {
        let season = (2.0 * PI * (day_of_year as f64 - 80.0) / 365.0).sin();
        let half = 0.5 * (self.mean_daylight_h + self.seasonal_swing_h * season);
        (self.solar_noon_h - half, self.solar_noon_h + half)
    }
}

/// Half-sine clear-sky output between sunrise and sunset.
pub fn pv_clear_sky(capacity_kw: f64, hour: f64, sunrise: f64, sunset: f64) -> f64 {
    if hour <= sunrise || hour >= sunset {
        0.0
    } else {
        capacity_kw * (PI * (hour - sunrise) / (sunset - sunrise)).sin()
    }
}

/// One day of PV output sampled at interval midpoints, scaled by an AR(1)
/// cloud factor kept in `[0, 1]`.
pub fn synth_pv<R: Rng + ?Sized>(
    capacity_kw: f64,
    day_of_year: usize,
    model: &PvModel,
    cloud_rng: &mut R,
) -> Vec<f64> {
    let (sunrise, sunset) = model.daylight(day_of_year);
    let mut cloud = model.cloud_mean;
    (0..INTERVALS_PER_DAY)
        .map(|n| {
            let z: f64 = StandardNormal.sample(cloud_rng);
            cloud = (model.cloud_mean
                + model.cloud_persistence * (cloud - model.cloud_mean)
                + model.cloud_noise * z)
                .clamp(0.0, 1.0);
            let hour = (n as f64 + 0.5) * INTERVAL_HOURS;
            pv_clear_sky(capacity_kw, hour, sunrise, sunset) * cloud
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindModel {
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    pub cut_in: f64,
    pub rated: f64,
    pub cut_out: f64,
}

impl Default for WindModel {
    fn default() -> Self {
        WindModel {
            weibull_shape: 2.0,
            weibull_scale: 7.0,
            cut_in: 3.0,
            rated: 12.0,
            cut_out: 25.0,
        }
    }
}

impl WindModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.weibull_shape > 0.0 && self.weibull_scale > 0.0) {
            return Err(Error::Config("Weibull shape and scale must be > 0".into()));
        }
        if !(0.0 <= self.cut_in && self.cut_in < self.rated && self.rated < self.cut_out) {
            return Err(Error::Config(
                "wind curve needs 0 <= cut_in < rated < cut_out".into(),
            ));
        }
        Ok(())
    }

    /// Turbine power curve: cubic ramp between cut-in and rated speed.
    pub fn power(&self, capacity_kw: f64, speed: f64) -> f64 {
        if speed < self.cut_in || speed > self.cut_out {
            0.0
        } else if speed >= self.rated {
            capacity_kw
        } else {
            let c3 = self.cut_in.powi(3);
            capacity_kw * (speed.powi(3) - c3) / (self.rated.powi(3) - c3)
        }
    }
}

/// Hourly Weibull speed draws, linearly interpolated to 10-minute steps and
/// mapped through the power curve.
pub fn synth_wind<R: Rng + ?Sized>(capacity_kw: f64, model: &WindModel, rng: &mut R) -> Result<Vec<f64>> {
    model.validate()?;
    let dist = Weibull::new(model.weibull_scale, model.weibull_shape)
        .map_err(|e| Error::Config(format!("Weibull parameters: {e}")))?;
    let hourly: Vec<f64> = (0..=24).map(|_| dist.sample(rng)).collect();
    Ok((0..INTERVALS_PER_DAY)
        .map(|n| {
            let pos = (n as f64 + 0.5) / 6.0;
            let h = pos.floor() as usize;
            let frac = pos - h as f64;
            let speed = hourly[h] + (hourly[h + 1] - hourly[h]) * frac;
            model.power(capacity_kw, speed)
        })
        .collect())
}

/// Wind and PV output per cluster on a common 10-minute grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationProfile {
    wind: Vec<Vec<f64>>,
    pv: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GenerationRecord {
    interval: usize,
    cluster_id: usize,
    wind_kw: f64,
    pv_kw: f64,
}

impl GenerationProfile {
    pub fn new(wind: Vec<Vec<f64>>, pv: Vec<Vec<f64>>) -> Result<Self> {
        if wind.len() != pv.len() || wind.is_empty() {
            return Err(Error::Config(format!(
                "generation profile needs matching non-empty cluster counts (wind {}, pv {})",
                wind.len(),
                pv.len()
            )));
        }
        let len = wind[0].len();
        for (c, (w, p)) in wind.iter().zip(&pv).enumerate() {
            if w.len() != len || p.len() != len {
                return Err(Error::Config(format!(
                    "generation series of cluster {c} differ in length"
                )));
            }
            if w.iter().chain(p).any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!(
                    "generation series of cluster {c} has a negative sample"
                )));
            }
        }
        Ok(GenerationProfile { wind, pv })
    }

    pub fn clusters(&self) -> usize {
        self.wind.len()
    }

    pub fn len(&self) -> usize {
        self.wind[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn wind(&self, cluster: usize) -> &[f64] {
        &self.wind[cluster]
    }

    pub fn pv(&self, cluster: usize) -> &[f64] {
        &self.pv[cluster]
    }

    pub fn total(&self, cluster: usize, n: usize) -> f64 {
        self.wind[cluster][n] + self.pv[cluster][n]
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows: Vec<GenerationRecord> = Vec::new();
        for rec in rdr.deserialize() {
            rows.push(rec?);
        }
        let clusters = rows.iter().map(|r| r.cluster_id + 1).max().unwrap_or(0);
        let intervals = rows.iter().map(|r| r.interval + 1).max().unwrap_or(0);
        if rows.len() != clusters * intervals {
            return Err(Error::Config(format!(
                "generation CSV has {} rows, expected {clusters} clusters x {intervals} intervals",
                rows.len()
            )));
        }
        let mut wind = vec![vec![f64::NAN; intervals]; clusters];
        let mut pv = vec![vec![f64::NAN; intervals]; clusters];
        for r in rows {
            if !wind[r.cluster_id][r.interval].is_nan() {
                return Err(Error::Config(format!(
                    "duplicate generation row for interval {} cluster {}",
                    r.interval, r.cluster_id
                )));
            }
            wind[r.cluster_id][r.interval] = r.wind_kw;
            pv[r.cluster_id][r.interval] = r.pv_kw;
        }
        Self::new(wind, pv)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for n in 0..self.len() {
            for c in 0..self.clusters() {
                wtr.serialize(GenerationRecord {
                    interval: n,
                    cluster_id: c,
                    wind_kw: self.wind[c][n],
                    pv_kw: self.pv[c][n],
                })?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<generation csv>", e))?;
        Ok(())
    }
}

/// Battery-electric vehicle attached to a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElectricVehicle {
    pub capacity_kwh: f64,
    pub soc: f64,
    pub max_charge_kw: f64,
    pub max_discharge_kw: f64,
    /// One-way conversion efficiency.
    pub efficiency: f64,
    pub available_from_h: f64,
    pub available_until_h: f64,
    pub soc_min: f64,
    pub soc_max: f64,
}

impl Default for ElectricVehicle {
    fn default() -> Self {
        ElectricVehicle {
            capacity_kwh: 40.0,
            soc: 0.5,
            max_charge_kw: 7.0,
            max_discharge_kw: 7.0,
            efficiency: 0.95,
            available_from_h: 18.0,
            available_until_h: 8.0,
            soc_min: 0.2,
            soc_max: 0.9,
        }
    }
}

impl ElectricVehicle {
    pub fn validate(&self) -> Result<()> {
        let ok = self.capacity_kwh > 0.0
            && self.max_charge_kw >= 0.0
            && self.max_discharge_kw >= 0.0
            && self.efficiency > 0.0
            && self.efficiency <= 1.0
            && 0.0 <= self.soc_min
            && self.soc_min <= self.soc_max
            && self.soc_max <= 1.0
            && (self.soc_min..=self.soc_max).contains(&self.soc);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid EV parameters {self:?}")))
        }
    }

    /// Plugged in on `[from, until)`, wrapping past midnight.
    pub fn is_available(&self, t: TimeOfDay) -> bool {
        let h = t.hours();
        let (from, until) = (self.available_from_h, self.available_until_h);
        if from <= until {
            h >= from && h < until
        } else {
            h >= from || h < until
        }
    }

    /// Largest charging power that keeps `soc <= soc_max` over `dt_h`.
    pub fn charge_headroom_kw(&self, dt_h: f64) -> f64 {
        ((self.soc_max - self.soc) * self.capacity_kwh / (dt_h * self.efficiency)).max(0.0)
    }

    /// Largest terminal discharge power that keeps `soc >= soc_min` over `dt_h`.
    pub fn discharge_headroom_kw(&self, dt_h: f64) -> f64 {
        ((self.soc - self.soc_min) * self.capacity_kwh * self.efficiency / dt_h).max(0.0)
    }
}

/// Charge from renewable surplus, discharge into a deficit at mid/on-peak.
/// Returns signed power: positive charges, negative discharges.
pub fn ev_decide(
    res_surplus_kw: f64,
    deficit_kw: f64,
    t: TimeOfDay,
    period: PeakPeriod,
    ev: &ElectricVehicle,
    surplus_threshold_kw: f64,
    dt_h: f64,
) -> f64 {
    if !ev.is_available(t) {
        return 0.0;
    }
    if res_surplus_kw > surplus_threshold_kw && ev.soc < ev.soc_max {
        return ev
            .max_charge_kw
            .min(res_surplus_kw)
            .min(ev.charge_headroom_kw(dt_h));
    }
    if deficit_kw > 0.0 && ev.soc > ev.soc_min && period != PeakPeriod::OffPeak {
        return -ev
            .max_discharge_kw
            .min(deficit_kw)
            .min(ev.discharge_headroom_kw(dt_h));
    }
    0.0
}

/// Applies `power_kw` for `dt_h` hours and returns the new state of charge.
/// The vehicle is only updated when the result stays inside its bounds.
pub fn ev_apply(ev: &mut ElectricVehicle, power_kw: f64, dt_h: f64) -> Result<f64> {
    let limit = if power_kw >= 0.0 {
        ev.max_charge_kw
    } else {
        ev.max_discharge_kw
    };
    if !power_kw.is_finite() || power_kw.abs() > limit + 1e-12 {
        return Err(Error::Contract(format!(
            "EV power {power_kw} kW exceeds limit {limit} kW"
        )));
    }
    let stored_delta = if power_kw >= 0.0 {
        power_kw * dt_h * ev.efficiency
    } else {
        power_kw * dt_h / ev.efficiency
    };
    let mut soc = ev.soc + stored_delta / ev.capacity_kwh;
    if soc > ev.soc_max + SOC_TOL || soc < ev.soc_min - SOC_TOL {
        return Err(Error::SocBounds {
            soc,
            min: ev.soc_min,
            max: ev.soc_max,
        });
    }
    soc = soc.clamp(ev.soc_min, ev.soc_max);
    ev.soc = soc;
    Ok(soc)
}
