//! Exogenous day trajectories: household loads after peak shaving, renewable
//! output, EV operation, SMP, month-to-date consumption and the per-cluster
//! consumption cap. None of these depend on trading actions, so they are
//! generated once and shared by the learner and baseline worlds.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assets::{
    ev_apply, ev_decide, synth_pv, synth_wind, ElectricVehicle, GenerationProfile, PvModel, WindModel,
    INTERVALS_PER_DAY, INTERVAL_HOURS,
};
use crate::demand::{self, accumulate_profile, Appliance, OccupantChain, Room};
use crate::error::{Error, Result};
use crate::market::UtMultiplier;
use crate::scheduler::{schedule_flexible, unscheduled_plan, DEFAULT_D_MAX};
use crate::tariff::{CcecComponents, SmpSeries, TariffSchedule, TimeOfDay, TouPreset};

pub const DAYS_PER_MONTH: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "path")]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TariffConfig {
    pub preset: TouPreset,
    pub ccec: CcecComponents,
    pub smp: DataSource,
    /// Replace the SMP series by its 30-day means.
    pub smp_monthly_average: bool,
}

impl Default for TariffConfig {
    fn default() -> Self {
        TariffConfig {
            preset: TouPreset::Equation,
            ccec: CcecComponents::DEFAULT,
            smp: DataSource::Synthetic,
            smp_monthly_average: false,
        }
    }
}

/// How the allowable consumption `PW^max` of each cluster is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "kw")]
pub enum PwMaxRule {
    /// 75th percentile of the cluster's unscheduled appliance demand that day.
    Percentile75,
    Fixed(f64),
}

impl Default for PwMaxRule {
    fn default() -> Self {
        PwMaxRule::Percentile75
    }
}

/// Quantity offered by a sell action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SellRule {
    /// `max{0, PW^max - (PW_cluster + PW_RES)}` capped at the physical surplus.
    LiteralClamped,
    /// The whole physical surplus.
    #[default]
    Surplus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub clusters: usize,
    pub nanogrids_per_cluster: usize,
    /// Cluster `c` (1-based) gets `c * pv_kw_per_index` kW of PV.
    pub pv_kw_per_index: f64,
    pub wind_kw_per_index: f64,
    pub pv: PvModel,
    pub wind: WindModel,
    pub generation: DataSource,
    pub appliances: Option<PathBuf>,
    pub stay_probability: f64,
    pub d_max: usize,
    pub ev: ElectricVehicle,
    pub evs_per_cluster: usize,
    pub ev_surplus_threshold_kw: f64,
    pub tariff: TariffConfig,
    pub pw_max: PwMaxRule,
    pub sell_rule: SellRule,
    pub ut_multiplier: UtMultiplier,
    /// Day of year of scenario day 0.
    pub start_day_of_year: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            clusters: 10,
            nanogrids_per_cluster: 3,
            pv_kw_per_index: 1.0,
            wind_kw_per_index: 0.6,
            pv: PvModel::default(),
            wind: WindModel::default(),
            generation: DataSource::Synthetic,
            appliances: None,
            stay_probability: 0.7,
            d_max: DEFAULT_D_MAX,
            ev: ElectricVehicle::default(),
            evs_per_cluster: 1,
            ev_surplus_threshold_kw: 0.5,
            tariff: TariffConfig::default(),
            pw_max: PwMaxRule::Percentile75,
            sell_rule: SellRule::Surplus,
            ut_multiplier: UtMultiplier::Sign,
            start_day_of_year: 152,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 {
            return Err(Error::Config("at least one cluster is required".into()));
        }
        if self.nanogrids_per_cluster == 0 {
            return Err(Error::Config("clusters need at least one nanogrid".into()));
        }
        if !(self.pv_kw_per_index >= 0.0 && self.wind_kw_per_index >= 0.0) {
            return Err(Error::Config("RES capacities must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.stay_probability) {
            return Err(Error::Config("stay_probability must be in [0, 1]".into()));
        }
        if let PwMaxRule::Fixed(kw) = self.pw_max {
            if !(kw > 0.0) {
                return Err(Error::Config(format!("PW^max must be > 0, got {kw}")));
            }
        }
        self.wind.validate()?;
        self.ev.validate()
    }

    pub fn pv_capacity(&self, cluster: usize) -> f64 {
        self.pv_kw_per_index * (cluster + 1) as f64
    }

    pub fn wind_capacity(&self, cluster: usize) -> f64 {
        self.wind_kw_per_index * (cluster + 1) as f64
    }
}

/// Everything exogenous about one simulated day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayTrajectory {
    pub day: usize,
    /// Cluster demand after peak shaving, including EV charging, kW `[cluster][n]`.
    pub demand_kw: Vec<Vec<f64>>,
    /// Appliance demand with every request served on arrival, kW.
    pub unscheduled_kw: Vec<Vec<f64>>,
    pub res_kw: Vec<Vec<f64>>,
    /// Signed EV power: positive charging, negative discharging.
    pub ev_kw: Vec<Vec<f64>>,
    pub ev_soc: Vec<Vec<f64>>,
    pub smp: Vec<f64>,
    pub pw_max_kw: Vec<f64>,
    pub month_start_kwh: Vec<f64>,
}

impl DayTrajectory {
    pub fn clusters(&self) -> usize {
        self.demand_kw.len()
    }

    pub fn horizon(&self) -> usize {
        self.smp.len()
    }

    pub fn ev_discharge_kw(&self, c: usize, n: usize) -> f64 {
        (-self.ev_kw[c][n]).max(0.0)
    }

    /// Available supply: RES plus EV discharge.
    pub fn supply_kw(&self, c: usize, n: usize) -> f64 {
        self.res_kw[c][n] + self.ev_discharge_kw(c, n)
    }

    pub fn consumption_kwh(&self, c: usize) -> f64 {
        self.demand_kw[c].iter().sum::<f64>() * INTERVAL_HOURS
    }
}

/// Pre-generated days plus the price schedule and appliance model.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub tariff: TariffSchedule,
    pub catalog: Vec<Appliance>,
    pub chain: OccupantChain,
    days: Vec<DayTrajectory>,
    first_day: usize,
}

/// SplitMix64-style mixing of a seed with stream identifiers.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        x = x.wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Linear-interpolation percentile of `values` (`q` in `[0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

const STREAM_HOUSEHOLD: u64 = 1;
const STREAM_PV: u64 = 2;
const STREAM_WIND: u64 = 3;

/// Synthetic PV and wind output of cluster `c` on absolute day `day`.
fn synth_res_day(cfg: &ScenarioConfig, seed: u64, day: usize, c: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let doy = (cfg.start_day_of_year + day) % 365;
    let mut pv_rng = rng_for(seed, &[STREAM_PV, day as u64, c as u64]);
    let mut wind_rng = rng_for(seed, &[STREAM_WIND, day as u64, c as u64]);
    let pv = synth_pv(cfg.pv_capacity(c), doy, &cfg.pv, &mut pv_rng);
    let wind = synth_wind(cfg.wind_capacity(c), &cfg.wind, &mut wind_rng)?;
    Ok((pv, wind))
}

/// The synthetic RES output of days `0..days`, as drawn by [`Scenario::generate`].
pub fn synthetic_generation(config: &ScenarioConfig, seed: u64, days: usize) -> Result<GenerationProfile> {
    config.validate()?;
    let k = config.clusters;
    let mut pv = vec![Vec::with_capacity(days * INTERVALS_PER_DAY); k];
    let mut wind = vec![Vec::with_capacity(days * INTERVALS_PER_DAY); k];
    for day in 0..days {
        for c in 0..k {
            let (p, w) = synth_res_day(config, seed, day, c)?;
            pv[c].extend(p);
            wind[c].extend(w);
        }
    }
    GenerationProfile::new(wind, pv)
}

impl Scenario {
    /// Generates days `first_day .. first_day + days`. Month-to-date totals for
    /// `first_day` account for the earlier days of its month.
    pub fn generate(config: &ScenarioConfig, seed: u64, first_day: usize, days: usize) -> Result<Self> {
        config.validate()?;
        if days == 0 {
            return Err(Error::Config("scenario needs at least one day".into()));
        }
        let catalog = match &config.appliances {
            Some(path) => demand::load_catalog(path)?,
            None => demand::default_catalog(),
        };
        let chain = OccupantChain::uniform_moves(
            config.stay_probability,
            catalog.iter().map(|a| a.category().default_usage_prob()).collect(),
        )?;
        let month_first = first_day - first_day % DAYS_PER_MONTH;
        let last_day = first_day + days;
        let start_hour = ((config.start_day_of_year + month_first) * 24) as f64;

        let mut smp = match &config.tariff.smp {
            DataSource::Synthetic => SmpSeries::synthetic_diurnal(start_hour, last_day - month_first + 1),
            DataSource::Csv(path) => SmpSeries::load_csv(path)?,
        };
        if config.tariff.smp_monthly_average {
            smp = smp.monthly_averaged();
        }
        let tariff = TariffSchedule::with_preset(config.tariff.preset, config.tariff.ccec, smp)?;

        let generation_csv = match &config.generation {
            DataSource::Synthetic => None,
            DataSource::Csv(path) => {
                let g = GenerationProfile::load_csv(path)?;
                if g.clusters() != config.clusters {
                    return Err(Error::Config(format!(
                        "generation CSV has {} clusters, scenario has {}",
                        g.clusters(),
                        config.clusters
                    )));
                }
                if g.len() < last_day * INTERVALS_PER_DAY {
                    return Err(Error::Config(format!(
                        "generation CSV covers {} intervals, scenario needs {}",
                        g.len(),
                        last_day * INTERVALS_PER_DAY
                    )));
                }
                Some(g)
            }
        };

        let mut scenario = Scenario {
            config: config.clone(),
            seed,
            tariff,
            catalog,
            chain,
            days: Vec::with_capacity(days),
            first_day,
        };
        let mut month_kwh = vec![0.0; config.clusters];
        for day in month_first..last_day {
            if day % DAYS_PER_MONTH == 0 {
                month_kwh.iter_mut().for_each(|k| *k = 0.0);
            }
            let traj = scenario.generate_day(day, &month_kwh, generation_csv.as_ref())?;
            for (c, k) in month_kwh.iter_mut().enumerate() {
                *k += traj.consumption_kwh(c);
            }
            if day >= first_day {
                scenario.days.push(traj);
            }
        }
        Ok(scenario)
    }

    pub fn first_day(&self) -> usize {
        self.first_day
    }

    pub fn num_days(&self) -> usize {
        self.days.len()
    }

    pub fn clusters(&self) -> usize {
        self.config.clusters
    }

    /// Trajectory of absolute day index `day`.
    pub fn day(&self, day: usize) -> Result<&DayTrajectory> {
        day.checked_sub(self.first_day)
            .and_then(|i| self.days.get(i))
            .ok_or_else(|| {
                Error::Config(format!(
                    "day {day} outside generated range {}..{}",
                    self.first_day,
                    self.first_day + self.days.len()
                ))
            })
    }

    pub fn days(&self) -> &[DayTrajectory] {
        &self.days
    }

    fn generate_day(
        &self,
        day: usize,
        month_start_kwh: &[f64],
        generation_csv: Option<&GenerationProfile>,
    ) -> Result<DayTrajectory> {
        let cfg = &self.config;
        let k = cfg.clusters;
        let horizon = INTERVALS_PER_DAY;
        let mut out = DayTrajectory {
            day,
            demand_kw: Vec::with_capacity(k),
            unscheduled_kw: Vec::with_capacity(k),
            res_kw: Vec::with_capacity(k),
            ev_kw: Vec::with_capacity(k),
            ev_soc: Vec::with_capacity(k),
            smp: (0..horizon)
                .map(|n| {
                    let hour = ((cfg.start_day_of_year + day) * 24) as f64 + (n + 1) as f64 * INTERVAL_HOURS;
                    self.tariff.smp_at(hour)
                })
                .collect(),
            pw_max_kw: Vec::with_capacity(k),
            month_start_kwh: month_start_kwh.to_vec(),
        };

        for c in 0..k {
            let ids = [day as u64, c as u64];
            // Household requests, pooled over the cluster's nanogrids.
            let mut requests = Vec::new();
            for g in 0..cfg.nanogrids_per_cluster {
                let mut rng = rng_for(self.seed, &[STREAM_HOUSEHOLD, ids[0], ids[1], g as u64]);
                let start = Room::new(rng.gen_range(1..=4))?;
                requests.extend(demand::simulate_household(start, &self.chain, &self.catalog, horizon, &mut rng));
            }
            let zeros = vec![0.0; horizon];
            let unscheduled = unscheduled_plan(&requests, &zeros).profile;
            let plan = schedule_flexible(&requests, &zeros, cfg.d_max);

            let res: Vec<f64> = match generation_csv {
                Some(g) => (0..horizon).map(|n| g.total(c, day * horizon + n)).collect(),
                None => {
                    let (pv, wind) = synth_res_day(cfg, self.seed, day, c)?;
                    pv.iter().zip(&wind).map(|(a, b)| a + b).collect()
                }
            };

            // EV fleet operates as one aggregate vehicle per cluster.
            let mut ev = ElectricVehicle {
                capacity_kwh: cfg.ev.capacity_kwh * cfg.evs_per_cluster as f64,
                max_charge_kw: cfg.ev.max_charge_kw * cfg.evs_per_cluster as f64,
                max_discharge_kw: cfg.ev.max_discharge_kw * cfg.evs_per_cluster as f64,
                ..cfg.ev
            };
            let mut demand = plan.profile.clone();
            let mut ev_kw = vec![0.0; horizon];
            let mut ev_soc = vec![ev.soc; horizon];
            if cfg.evs_per_cluster > 0 {
                for n in 0..horizon {
                    let t = TimeOfDay::at_interval_end(n, 10.0);
                    let period = self.tariff.peak_period(t);
                    let surplus = (res[n] - demand[n]).max(0.0);
                    let deficit = (demand[n] - res[n]).max(0.0);
                    let p = ev_decide(surplus, deficit, t, period, &ev, cfg.ev_surplus_threshold_kw, INTERVAL_HOURS);
                    ev_apply(&mut ev, p, INTERVAL_HOURS)?;
                    ev_kw[n] = p;
                    ev_soc[n] = ev.soc;
                    if p > 0.0 {
                        accumulate_profile(&mut demand[n..=n], p, 0, 1);
                    }
                }
            }

            let pw_max = match cfg.pw_max {
                PwMaxRule::Percentile75 => percentile(&unscheduled, 0.75).max(1e-6),
                PwMaxRule::Fixed(kw) => kw,
            };
            out.demand_kw.push(demand);
            out.unscheduled_kw.push(unscheduled);
            out.res_kw.push(res);
            out.ev_kw.push(ev_kw);
            out.ev_soc.push(ev_soc);
            out.pw_max_kw.push(pw_max);
        }
        Ok(out)
    }
}
