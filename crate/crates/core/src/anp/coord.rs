use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Number of coordinate features fed to the model.
pub const COORD_DIM: usize = 5;

/// Normalized position plus seasonal phase and inter-annual position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalCoord {
    pub lon_norm: f64,
    pub lat_norm: f64,
    pub doy_sin: f64,
    pub doy_cos: f64,
    pub tau: f64,
}

impl SpatioTemporalCoord {
    pub fn to_array(&self) -> [f64; COORD_DIM] {
        [self.lon_norm, self.lat_norm, self.doy_sin, self.doy_cos, self.tau]
    }

    pub fn is_valid(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.lon_norm)
            && unit(self.lat_norm)
            && unit(self.tau)
            && (self.doy_sin.powi(2) + self.doy_cos.powi(2) - 1.0).abs() <= 1e-9
    }
}

/// Inclusive date range spanning the whole study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StudyPeriod {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl StudyPeriod {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start >= end {
            return Err(contract(format!("study period start {start} is not before end {end}")));
        }
        Ok(Self { start, end })
    }

    /// January 1st of `first` through December 31st of `last`.
    pub fn from_years(first: i32, last: i32) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(first, 1, 1).ok_or_else(|| Error::Config(format!("bad year {first}")))?;
        let end = NaiveDate::from_ymd_opt(last, 12, 31).ok_or_else(|| Error::Config(format!("bad year {last}")))?;
        Self::new(start, end)
    }

    /// Position of `date` in the period, in `[0, 1]`.
    pub fn tau(&self, date: NaiveDate) -> Result<f64> {
        if date < self.start || date > self.end {
            return Err(contract(format!("{date} outside study period {}..{}", self.start, self.end)));
        }
        let span = (self.end - self.start).num_days() as f64;
        Ok((date - self.start).num_days() as f64 / span)
    }

    /// `tau` of the first day of `year`, clamped into the period.
    pub fn year_start_tau(&self, year: i32) -> f64 {
        NaiveDate::from_ymd_opt(year, 1, 1)
            .and_then(|d| self.tau(d).ok())
            .unwrap_or(if year <= self.start.year() { 0.0 } else { 1.0 })
    }
}

/// Seasonal phase of a day of year, with the year length fixed at 365.
pub fn doy_phase(day_of_year: f64) -> (f64, f64) {
    let angle = std::f64::consts::TAU * day_of_year / 365.0;
    (angle.sin(), angle.cos())
}

/// `(sin(2πd/365), cos(2πd/365), τ)` for a day of year and a timestamp.
pub fn temporal_encode(day_of_year: f64, timestamp: NaiveDate, period: &StudyPeriod) -> Result<(f64, f64, f64)> {
    if !(0.0..=366.0).contains(&day_of_year) {
        return Err(contract(format!("day of year {day_of_year} out of range")));
    }
    let (s, c) = doy_phase(day_of_year);
    Ok((s, c, period.tau(timestamp)?))
}

/// Full coordinate for an observation on `(year, day_of_year)` at a
/// normalized position.
pub fn coord_for(lon_norm: f64, lat_norm: f64, year: i32, day_of_year: u32, period: &StudyPeriod) -> Result<SpatioTemporalCoord> {
    let date = NaiveDate::from_yo_opt(year, day_of_year)
        .ok_or_else(|| contract(format!("invalid day {day_of_year} of {year}")))?;
    let (doy_sin, doy_cos, tau) = temporal_encode(day_of_year as f64, date, period)?;
    Ok(SpatioTemporalCoord {
        lon_norm,
        lat_norm,
        doy_sin,
        doy_cos,
        tau,
    })
}
