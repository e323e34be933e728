//! Electricity prices: time-of-use bands, progressive monthly tiers, the
//! climate/environment charge, their composite demand-response rate, and the
//! system marginal price (SMP) used for locally produced renewable energy.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HOURS_PER_DAY: f64 = 24.0;
const BOUNDARY_EPS: f64 = 1e-9;

/// Hour of day in `[0, 24)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct TimeOfDay(f64);

impl TimeOfDay {
    /// Wraps any hour value onto the 24-hour circle.
    pub fn from_hours(hours: f64) -> Self {
        TimeOfDay(hours.rem_euclid(HOURS_PER_DAY))
    }

    pub fn from_hm(hour: u32, minute: u32) -> Self {
        Self::from_hours(hour as f64 + minute as f64 / 60.0)
    }

    /// End of the 10-minute interval `n` (intervals are labelled by their end,
    /// which matches the right-closed band boundaries).
    pub fn at_interval_end(n: usize, interval_minutes: f64) -> Self {
        Self::from_hours((n + 1) as f64 * interval_minutes / 60.0)
    }

    pub fn hours(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakPeriod {
    OffPeak,
    MidPeak,
    OnPeak,
}

/// One ToU band covering `start < t <= end`, wrapping past midnight when
/// `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouBand {
    pub start_h: f64,
    pub end_h: f64,
    pub rate: f64,
    pub period: PeakPeriod,
}

impl TouBand {
    fn length(&self) -> f64 {
        let len = (self.end_h - self.start_h).rem_euclid(HOURS_PER_DAY);
        if len == 0.0 {
            HOURS_PER_DAY
        } else {
            len
        }
    }

    pub fn contains(&self, t: TimeOfDay) -> bool {
        let t = t.hours();
        // Midnight is represented as 0 but closes a band ending at 24.
        let end = if self.end_h >= HOURS_PER_DAY { 0.0 } else { self.end_h };
        if self.start_h < end {
            t > self.start_h && t <= end
        } else {
            t > self.start_h || t <= end
        }
    }
}

/// Upper bound (inclusive) of a progressive tier; `None` for the open last tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveTier {
    pub upper_kwh: Option<f64>,
    pub rate: f64,
}

/// Climate change & environmental charge components, $/kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcecComponents {
    pub rps: f64,
    pub ets: f64,
    pub cgr: f64,
}

impl CcecComponents {
    /// Synthetic defaults; the source data gives no values.
    pub const DEFAULT: CcecComponents = CcecComponents {
        rps: 0.005,
        ets: 0.003,
        cgr: 0.002,
    };

    pub const ZERO: CcecComponents = CcecComponents {
        rps: 0.0,
        ets: 0.0,
        cgr: 0.0,
    };

    pub fn total(&self) -> f64 {
        self.rps + self.ets + self.cgr
    }
}

impl Default for CcecComponents {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TouPreset {
    /// 0.06 / 0.12 / 0.18 $/kWh.
    #[default]
    Equation,
    /// 0.05 / 0.10 / 0.18 $/kWh, the values quoted in the system description.
    Prose,
}

/// Time-indexed SMP samples, `(hour_of_year, $/kWh)`, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SmpSeries {
    samples: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SmpRecord {
    hour_of_year: f64,
    smp_usd_per_kwh: f64,
}

impl SmpSeries {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("SMP series is empty".into()));
        }
        for (i, &(h, rate)) in samples.iter().enumerate() {
            if !h.is_finite() || !rate.is_finite() || rate < 0.0 {
                return Err(Error::Config(format!(
                    "SMP sample {i} ({h}, {rate}) must be finite with a non-negative rate"
                )));
            }
            if i > 0 && h <= samples[i - 1].0 {
                return Err(Error::Config(format!(
                    "SMP sample times must be strictly increasing (sample {i} at hour {h})"
                )));
            }
        }
        Ok(SmpSeries { samples })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(vec![(0.0, rate)])
    }

    /// Hourly synthetic diurnal series: mean 0.09 $/kWh with a ±0.02 sinusoid
    /// peaking mid-afternoon.
    pub fn synthetic_diurnal(start_hour: f64, days: usize) -> Self {
        let samples = (0..=days * 24)
            .map(|i| {
                let h = start_hour + i as f64;
                let phase = 2.0 * PI * (h.rem_euclid(HOURS_PER_DAY) - 9.0) / HOURS_PER_DAY;
                (h, 0.09 + 0.02 * phase.sin())
            })
            .collect();
        SmpSeries { samples }
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Piecewise-linear interpolation, constant beyond both ends.
    pub fn at(&self, hour_of_year: f64) -> f64 {
        let s = &self.samples;
        let first = s[0];
        let last = s[s.len() - 1];
        if hour_of_year <= first.0 {
            return first.1;
        }
        if hour_of_year >= last.0 {
            return last.1;
        }
        let idx = s.partition_point(|&(h, _)| h <= hour_of_year);
        let (h0, r0) = s[idx - 1];
        let (h1, r1) = s[idx];
        r0 + (r1 - r0) * (hour_of_year - h0) / (h1 - h0)
    }

    /// Replaces every sample by the mean of its 30-day month (months counted
    /// from hour 0 in 720-hour blocks).
    pub fn monthly_averaged(&self) -> Self {
        const MONTH_HOURS: f64 = 720.0;
        let month_of = |h: f64| (h / MONTH_HOURS).floor() as i64;
        let mut out = Vec::with_capacity(self.samples.len());
        let mut start = 0;
        while start < self.samples.len() {
            let m = month_of(self.samples[start].0);
            let mut end = start;
            while end < self.samples.len() && month_of(self.samples[end].0) == m {
                end += 1;
            }
            let mean = self.samples[start..end].iter().map(|s| s.1).sum::<f64>()
                / (end - start) as f64;
            out.extend(self.samples[start..end].iter().map(|&(h, _)| (h, mean)));
            start = end;
        }
        SmpSeries { samples: out }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["hour_of_year", "smp_usd_per_kwh"] {
            return Err(Error::Config(format!(
                "SMP CSV header must be `hour_of_year,smp_usd_per_kwh`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        for rec in rdr.deserialize::<SmpRecord>() {
            let rec = rec?;
            samples.push((rec.hour_of_year, rec.smp_usd_per_kwh));
        }
        Self::new(samples)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for &(h, r) in &self.samples {
            wtr.serialize(SmpRecord {
                hour_of_year: h,
                smp_usd_per_kwh: r,
            })?;
        }
        wtr.flush().map_err(|e| Error::io("<smp csv>", e))?;
        Ok(())
    }
}

/// The full demand-response price schedule plus the SMP series.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffSchedule {
    tou_bands: Vec<TouBand>,
    progressive_tiers: Vec<ProgressiveTier>,
    ccec: CcecComponents,
    smp: SmpSeries,
}

impl TariffSchedule {
    pub fn new(
        tou_bands: Vec<TouBand>,
        progressive_tiers: Vec<ProgressiveTier>,
        ccec: CcecComponents,
        smp: SmpSeries,
    ) -> Result<Self> {
        validate_bands(&tou_bands)?;
        validate_tiers(&progressive_tiers)?;
        for (name, v) in [("rps", ccec.rps), ("ets", ccec.ets), ("cgr", ccec.cgr)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("CCEC component {name} = {v} must be >= 0")));
            }
        }
        Ok(TariffSchedule {
            tou_bands,
            progressive_tiers,
            ccec,
            smp,
        })
    }

    pub fn tou_bands_for(preset: TouPreset) -> Vec<TouBand> {
        let (off, mid, on) = match preset {
            TouPreset::Equation => (0.06, 0.12, 0.18),
            TouPreset::Prose => (0.05, 0.10, 0.18),
        };
        use PeakPeriod::*;
        let band = |start_h, end_h, rate, period| TouBand {
            start_h,
            end_h,
            rate,
            period,
        };
        vec![
            band(23.0, 9.0, off, OffPeak),
            band(9.0, 10.0, mid, MidPeak),
            band(10.0, 12.0, on, OnPeak),
            band(12.0, 13.0, mid, MidPeak),
            band(13.0, 17.0, on, OnPeak),
            band(17.0, 23.0, mid, MidPeak),
        ]
    }

    /// Tiers `[0, 300]`, `(300, 450]`, `(450, inf)` kWh/month.
    pub fn default_progressive_tiers() -> Vec<ProgressiveTier> {
        vec![
            ProgressiveTier {
                upper_kwh: Some(300.0),
                rate: 0.008,
            },
            ProgressiveTier {
                upper_kwh: Some(450.0),
                rate: 0.018,
            },
            ProgressiveTier {
                upper_kwh: None,
                rate: 0.027,
            },
        ]
    }

    pub fn with_preset(preset: TouPreset, ccec: CcecComponents, smp: SmpSeries) -> Result<Self> {
        Self::new(
            Self::tou_bands_for(preset),
            Self::default_progressive_tiers(),
            ccec,
            smp,
        )
    }

    pub fn tou_bands(&self) -> &[TouBand] {
        &self.tou_bands
    }

    pub fn ccec(&self) -> CcecComponents {
        self.ccec
    }

    pub fn smp(&self) -> &SmpSeries {
        &self.smp
    }

    pub fn band_at(&self, t: TimeOfDay) -> &TouBand {
        self.tou_bands
            .iter()
            .find(|b| b.contains(t))
            .expect("validated bands partition the day")
    }

    pub fn tou_rate(&self, t: TimeOfDay) -> f64 {
        self.band_at(t).rate
    }

    pub fn peak_period(&self, t: TimeOfDay) -> PeakPeriod {
        self.band_at(t).period
    }

    pub fn progressive_rate(&self, cum_month_kwh: f64) -> Result<f64> {
        if !(cum_month_kwh >= 0.0) || !cum_month_kwh.is_finite() {
            return Err(Error::Domain(format!(
                "monthly consumption must be a finite value >= 0 kWh, got {cum_month_kwh}"
            )));
        }
        let tier = self
            .progressive_tiers
            .iter()
            .find(|tier| tier.upper_kwh.map_or(true, |ub| cum_month_kwh <= ub))
            .expect("last tier is unbounded");
        Ok(tier.rate)
    }

    /// ToU + progressive + CCEC, all billed on the same kWh.
    pub fn effective_dr_rate(&self, t: TimeOfDay, cum_month_kwh: f64) -> Result<f64> {
        Ok(self.tou_rate(t) + self.progressive_rate(cum_month_kwh)? + self.ccec.total())
    }

    pub fn smp_at(&self, hour_of_year: f64) -> f64 {
        self.smp.at(hour_of_year)
    }
}

fn validate_bands(bands: &[TouBand]) -> Result<()> {
    if bands.is_empty() {
        return Err(Error::Config("no ToU bands".into()));
    }
    let mut total = 0.0;
    for b in bands {
        let in_range = |h: f64| (0.0..=HOURS_PER_DAY).contains(&h);
        if !in_range(b.start_h) || !in_range(b.end_h) || !(b.rate >= 0.0) {
            return Err(Error::Config(format!("invalid ToU band {b:?}")));
        }
        total += b.length();
    }
    if (total - HOURS_PER_DAY).abs() > BOUNDARY_EPS {
        return Err(Error::Config(format!(
            "ToU bands cover {total} h instead of exactly 24 h"
        )));
    }
    // Chained ends plus exact total length leave no gaps and no overlaps.
    for b in bands {
        let end = b.end_h.rem_euclid(HOURS_PER_DAY);
        let chained = bands
            .iter()
            .any(|o| (o.start_h.rem_euclid(HOURS_PER_DAY) - end).abs() < BOUNDARY_EPS);
        if !chained {
            return Err(Error::Config(format!(
                "ToU band ending at {} h is not followed by another band",
                b.end_h
            )));
        }
    }
    Ok(())
}

fn validate_tiers(tiers: &[ProgressiveTier]) -> Result<()> {
    let Some(last) = tiers.last() else {
        return Err(Error::Config("no progressive tiers".into()));
    };
    if last.upper_kwh.is_some() {
        return Err(Error::Config("last progressive tier must be unbounded".into()));
    }
    let mut prev = f64::NEG_INFINITY;
    for (i, tier) in tiers.iter().enumerate() {
        if !(tier.rate >= 0.0) {
            return Err(Error::Config(format!("tier {i} has negative rate")));
        }
        match tier.upper_kwh {
            Some(ub) if i + 1 < tiers.len() => {
                if !(ub > prev) || ub < 0.0 {
                    return Err(Error::Config(format!(
                        "tier bounds must be strictly increasing (tier {i} bound {ub})"
                    )));
                }
                prev = ub;
            }
            None if i + 1 < tiers.len() => {
                return Err(Error::Config(format!("only the last tier may be unbounded (tier {i})")));
            }
            _ => {}
        }
    }
    Ok(())
}
