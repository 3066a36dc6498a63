//! Smart-meter ingestion: hourly readings in, normalized daily profiles out.
//!
//! Also hosts the deterministic archetype generator used as reference data
//! when no metered data is at hand.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::STEPS;

const READINGS_HEADER: [&str; 3] = ["household_id", "timestamp", "kwh"];

#[derive(Debug, Clone, PartialEq)]
pub struct RawReading {
    pub household_id: String,
    /// Naive local time, whole hours only.
    pub timestamp: NaiveDateTime,
    pub kwh: f64,
}

/// Pre-normalization extremes of a metered day, in kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayScale {
    pub min: f64,
    pub max: f64,
}

/// One daily load pattern of [`STEPS`] values in `[0, 1]`.
///
/// Profiles built from readings carry their [`DayScale`] and have min 0 and
/// max 1 exactly. Profiles read back from a profile CSV or produced by a
/// generator have no scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub household_id: String,
    pub date: NaiveDate,
    pub values: [f64; STEPS],
    pub scale: Option<DayScale>,
}

impl LoadProfile {
    pub fn new(household_id: impl Into<String>, date: NaiveDate, values: [f64; STEPS]) -> Self {
        LoadProfile {
            household_id: household_id.into(),
            date,
            values,
            scale: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
    Generated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    pub profiles: Vec<LoadProfile>,
    pub provenance: Provenance,
}

impl ProfileSet {
    pub fn new(profiles: Vec<LoadProfile>, provenance: Provenance) -> Self {
        ProfileSet {
            profiles,
            provenance,
        }
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LoadProfile> {
        self.profiles.iter()
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64; STEPS]> {
        self.profiles.iter().map(|p| &p.values)
    }

    /// All values of all profiles, profile by profile.
    pub fn pooled(&self) -> Vec<f64> {
        self.profiles
            .iter()
            .flat_map(|p| p.values.iter().copied())
            .collect()
    }
}

/// Kept and dropped (household, day) groups.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub readings: usize,
    pub days_seen: usize,
    pub kept: usize,
    /// Fewer than 24 distinct hours.
    pub dropped_incomplete: usize,
    /// More than 24 readings, or a repeated hour.
    pub dropped_excess: usize,
    /// Every reading equal, so the day cannot be min-max scaled.
    pub dropped_flat: usize,
}

impl IngestReport {
    pub fn dropped(&self) -> usize {
        self.dropped_incomplete + self.dropped_excess + self.dropped_flat
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(t);
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_local())
}

/// Reads `household_id,timestamp,kwh` rows.
pub fn parse_readings<R: Read>(source: R) -> Result<Vec<RawReading>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().map(str::trim).ne(READINGS_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", READINGS_HEADER.join(",")),
        });
    }

    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        if record.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", record.len())));
        }
        let household_id = record[0].trim().to_string();
        if household_id.is_empty() {
            return Err(parse_err("empty household_id".into()));
        }
        let timestamp = parse_timestamp(&record[1])
            .ok_or_else(|| parse_err(format!("bad timestamp `{}`", &record[1])))?;
        let kwh: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad kwh `{}`", &record[2])))?;
        if !kwh.is_finite() || kwh < 0.0 {
            return Err(Error::Validation {
                line,
                message: format!("kwh must be finite and non-negative, got {kwh}"),
            });
        }
        if timestamp.minute() != 0 || timestamp.second() != 0 || timestamp.nanosecond() != 0 {
            return Err(Error::Validation {
                line,
                message: format!("timestamp {timestamp} is not on the hour"),
            });
        }
        out.push(RawReading {
            household_id,
            timestamp,
            kwh,
        });
    }
    Ok(out)
}

/// Min-max scales one day onto `[0, 1]`.
pub fn normalize_day(raw: &[f64]) -> Result<[f64; STEPS]> {
    if raw.len() != STEPS {
        return Err(Error::arg(format!("a day has {STEPS} values, got {}", raw.len())));
    }
    let (min, max) = min_max(raw);
    if !(max > min) {
        return Err(Error::DegenerateDay { value: min });
    }
    let span = max - min;
    let mut out = [0.0; STEPS];
    for (o, &r) in out.iter_mut().zip(raw) {
        *o = (r - min) / span;
    }
    Ok(out)
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Groups readings by household and calendar day, keeping complete days.
/// Output is ordered by household id, then date.
pub fn build_daily_profiles(readings: &[RawReading]) -> (ProfileSet, IngestReport) {
    let mut days: BTreeMap<(&str, NaiveDate), Vec<(u32, f64)>> = BTreeMap::new();
    for r in readings {
        days.entry((r.household_id.as_str(), r.timestamp.date()))
            .or_default()
            .push((r.timestamp.hour(), r.kwh));
    }

    let mut report = IngestReport {
        readings: readings.len(),
        days_seen: days.len(),
        ..Default::default()
    };
    let mut profiles = Vec::new();
    for ((household, date), mut hours) in days {
        if hours.len() > STEPS {
            report.dropped_excess += 1;
            continue;
        }
        hours.sort_by_key(|&(h, _)| h);
        if hours.windows(2).any(|w| w[0].0 == w[1].0) {
            report.dropped_excess += 1;
            continue;
        }
        if hours.len() < STEPS {
            report.dropped_incomplete += 1;
            continue;
        }
        let raw: Vec<f64> = hours.iter().map(|&(_, kwh)| kwh).collect();
        match normalize_day(&raw) {
            Ok(values) => {
                let (min, max) = min_max(&raw);
                profiles.push(LoadProfile {
                    household_id: household.to_string(),
                    date,
                    values,
                    scale: Some(DayScale { min, max }),
                });
                report.kept += 1;
            }
            Err(_) => report.dropped_flat += 1,
        }
    }
    (ProfileSet::new(profiles, Provenance::Real), report)
}

/// Seeded shuffle into `(train, test)` with `round(test_fraction * n)` test
/// profiles.
pub fn split(set: &ProfileSet, test_fraction: f64, seed: u64) -> Result<(ProfileSet, ProfileSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::arg(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if set.is_empty() {
        return Err(Error::arg("cannot split an empty profile set"));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (test_fraction * set.len() as f64).round() as usize;
    let pick = |idx: &[usize]| {
        ProfileSet::new(
            idx.iter().map(|&i| set.profiles[i].clone()).collect(),
            set.provenance,
        )
    };
    Ok((pick(&order[n_test..]), pick(&order[..n_test])))
}

// ---------------------------------------------------------------------------
// Archetype reference data

/// Gaussian bump `height * exp(-((t - center) / width)^2 / 2)` over hour `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    MorningPeak,
    EveningPeak,
    DoublePeak,
    FlatNoise,
}

pub const ARCHETYPES: [Archetype; 4] = [
    Archetype::MorningPeak,
    Archetype::EveningPeak,
    Archetype::DoublePeak,
    Archetype::FlatNoise,
];
pub const ARCHETYPE_WEIGHTS: [f64; 4] = [0.3, 0.3, 0.25, 0.15];

/// Constant base load under every archetype, kWh.
pub const ARCHETYPE_BASE: f64 = 0.2;
/// Half-width of the uniform per-hour noise, kWh.
pub const ARCHETYPE_NOISE: f64 = 0.04;
/// Half-width of the uniform per-day shift of every bump center, hours.
pub const ARCHETYPE_CENTER_JITTER: f64 = 0.5;
/// Per-day multiplicative spread of bump heights.
pub const ARCHETYPE_HEIGHT_SPREAD: f64 = 0.2;

const MORNING: Bump = Bump {
    center: 7.5,
    width: 1.5,
    height: 1.0,
};
const EVENING: Bump = Bump {
    center: 19.0,
    width: 2.0,
    height: 1.0,
};
const SMALL_MORNING: Bump = Bump {
    center: 7.5,
    width: 1.5,
    height: 0.7,
};

impl Archetype {
    pub fn bumps(self) -> &'static [Bump] {
        match self {
            Archetype::MorningPeak => &[MORNING],
            Archetype::EveningPeak => &[EVENING],
            Archetype::DoublePeak => &[SMALL_MORNING, EVENING],
            Archetype::FlatNoise => &[],
        }
    }
}

fn sample_archetype(rng: &mut ChaCha8Rng) -> Archetype {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, w) in ARCHETYPES.iter().zip(ARCHETYPE_WEIGHTS) {
        acc += w;
        if u < acc {
            return *a;
        }
    }
    Archetype::FlatNoise
}

/// Raw (un-normalized) kWh curve for one archetype day.
fn archetype_day(kind: Archetype, rng: &mut ChaCha8Rng) -> [f64; STEPS] {
    let shift = rng.random_range(-ARCHETYPE_CENTER_JITTER..=ARCHETYPE_CENTER_JITTER);
    let scale = rng.random_range(1.0 - ARCHETYPE_HEIGHT_SPREAD..=1.0 + ARCHETYPE_HEIGHT_SPREAD);
    let mut day = [ARCHETYPE_BASE; STEPS];
    for (t, v) in day.iter_mut().enumerate() {
        for b in kind.bumps() {
            let z = (t as f64 - b.center - shift) / b.width;
            *v += scale * b.height * (-0.5 * z * z).exp();
        }
        *v += rng.random_range(-ARCHETYPE_NOISE..=ARCHETYPE_NOISE);
    }
    day
}

/// Deterministic mixture of the four archetype shapes, each day min-max
/// normalized. Returns the profiles and the archetype behind each one.
pub fn synth_reference_labeled(n_profiles: usize, seed: u64) -> Result<(ProfileSet, Vec<Archetype>)> {
    if n_profiles == 0 {
        return Err(Error::arg("need at least one profile"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = NaiveDate::from_ymd_opt(2017, 1, 1).expect("valid date");
    let mut profiles = Vec::with_capacity(n_profiles);
    let mut labels = Vec::with_capacity(n_profiles);
    while profiles.len() < n_profiles {
        let kind = sample_archetype(&mut rng);
        let raw = archetype_day(kind, &mut rng);
        // A flat draw is measure-zero but would break normalization.
        let Ok(values) = normalize_day(&raw) else {
            continue;
        };
        let k = profiles.len();
        let (min, max) = min_max(&raw);
        profiles.push(LoadProfile {
            household_id: format!("synth-{:04}", k / 365),
            date: base + chrono::Days::new((k % 365) as u64),
            values,
            scale: Some(DayScale { min, max }),
        });
        labels.push(kind);
    }
    Ok((ProfileSet::new(profiles, Provenance::Synthetic), labels))
}

pub fn synth_reference(n_profiles: usize, seed: u64) -> Result<ProfileSet> {
    synth_reference_labeled(n_profiles, seed).map(|(set, _)| set)
}

// ---------------------------------------------------------------------------
// Profile CSV: household_id,date,h00,...,h23

fn profile_header() -> Vec<String> {
    let mut h = vec!["household_id".to_string(), "date".to_string()];
    h.extend((0..STEPS).map(|t| format!("h{t:02}")));
    h
}

/// Writes profiles with shortest round-trip decimal values.
pub fn write_profiles<W: Write>(set: &ProfileSet, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(profile_header()).map_err(io)?;
    for p in &set.profiles {
        let mut row = vec![p.household_id.clone(), p.date.format("%Y-%m-%d").to_string()];
        row.extend(p.values.iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profiles<R: Read>(source: R, provenance: Provenance) -> Result<ProfileSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let expected = profile_header();
    if header.len() != expected.len() || header.iter().zip(&expected).any(|(a, b)| a.trim() != b) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header `household_id,date,h00..h{:02}` ({} columns), found {} columns",
                STEPS - 1,
                expected.len(),
                header.len()
            ),
        });
    }
    let mut profiles = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != STEPS + 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} values, found {}", STEPS, record.len().saturating_sub(2)),
            });
        }
        let date = NaiveDate::parse_from_str(record[1].trim(), "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{}`: {e}", &record[1]),
        })?;
        let mut values = [0.0; STEPS];
        for (t, v) in values.iter_mut().enumerate() {
            let field = record[t + 2].trim();
            *v = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad value `{field}`"),
            })?;
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Validation {
                    line,
                    message: format!("value {v} outside [0, 1]"),
                });
            }
        }
        profiles.push(LoadProfile::new(record[0].trim(), date, values));
    }
    Ok(ProfileSet::new(profiles, provenance))
}
