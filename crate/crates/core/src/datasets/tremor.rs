use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::signal::{band_energy, butter_highpass, filtfilt, resample_linear};
use super::{Bag, DatasetError};
use crate::autograd::Tensor;

pub const TARGET_RATE_HZ: f64 = 100.0;
/// Samples per axis in a 5 s segment at the target rate.
pub const SEGMENT_LEN: usize = 500;
pub const TREMOR_BAND_HZ: (f64, f64) = (3.0, 7.0);
const STANDARD_GRAVITY: f64 = 9.80665;
/// Provenance of a segment is `signal_id * SEGMENT_ID_STRIDE + index`.
pub const SEGMENT_ID_STRIDE: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    G,
    Ms2,
}

impl Units {
    fn to_g(self) -> f64 {
        match self {
            Units::G => 1.0,
            Units::Ms2 => 1.0 / STANDARD_GRAVITY,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Units::G => "g",
            Units::Ms2 => "ms2",
        }
    }
}

/// One tri-axial accelerometer recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub subject_id: String,
    /// Seconds, strictly increasing.
    pub timestamps: Vec<f64>,
    pub samples: Vec<[f64; 3]>,
    pub nominal_rate: f64,
    pub units: Units,
}

impl Session {
    pub fn new(
        subject_id: impl Into<String>,
        timestamps: Vec<f64>,
        samples: Vec<[f64; 3]>,
        nominal_rate: f64,
        units: Units,
    ) -> Result<Self, DatasetError> {
        if timestamps.len() != samples.len() {
            return Err(DatasetError::Invalid(format!(
                "{} timestamps for {} samples",
                timestamps.len(),
                samples.len()
            )));
        }
        if timestamps.len() < 2 {
            return Err(DatasetError::Invalid("a session needs at least two samples".into()));
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(DatasetError::Invalid(format!(
                "timestamps not strictly increasing at sample {}",
                i + 1
            )));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            timestamps,
            samples,
            nominal_rate,
            units,
        })
    }

    /// Rate estimated from the timestamps.
    pub fn estimated_rate(&self) -> f64 {
        let span = self.timestamps[self.timestamps.len() - 1] - self.timestamps[0];
        (self.timestamps.len() - 1) as f64 / span
    }

    /// `samples / estimated_rate`, so `n` samples at `fs` last `n / fs` s.
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.estimated_rate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationRules {
    pub min_duration_s: f64,
    pub min_rate_hz: f64,
    /// Largest accepted absolute acceleration on any axis, in g.
    pub max_abs_g: f64,
    pub trim_s: f64,
    pub highpass_hz: f64,
    pub filter_order: usize,
}

impl Default for ValidationRules {
    fn default() -> Self {
        Self {
            min_duration_s: 15.0,
            min_rate_hz: 40.0,
            max_abs_g: 4.0,
            trim_s: 5.0,
            highpass_hz: 1.0,
            filter_order: 3,
        }
    }
}

/// Why a session was not used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum Discard {
    Short { duration_s: f64, min_s: f64 },
    LowRate { rate_hz: f64, min_hz: f64 },
    Extreme { peak_g: f64, max_g: f64 },
}

impl fmt::Display for Discard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discard::Short { duration_s, min_s } => {
                write!(f, "short: {duration_s:.2} s < {min_s} s")
            }
            Discard::LowRate { rate_hz, min_hz } => {
                write!(f, "low rate: {rate_hz:.2} Hz < {min_hz} Hz")
            }
            Discard::Extreme { peak_g, max_g } => {
                write!(f, "extreme value: {peak_g:.2} g > {max_g} g")
            }
        }
    }
}

/// Resampled, trimmed and high-passed session, in g at [`TARGET_RATE_HZ`].
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedSignal {
    pub subject_id: String,
    pub signal_id: usize,
    /// Session time of the first retained sample, relative to its start.
    pub offset_s: f64,
    pub channels: [Vec<f64>; 3],
}

impl ProcessedSignal {
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / TARGET_RATE_HZ
    }
}

/// Applies the validation rules, then resamples to 100 Hz, trims both ends
/// and removes the gravity component with a zero-phase high-pass.
pub fn preprocess_session(
    session: &Session,
    rules: &ValidationRules,
    signal_id: usize,
) -> Result<ProcessedSignal, Discard> {
    let duration_s = session.duration_s();
    if duration_s < rules.min_duration_s {
        return Err(Discard::Short {
            duration_s,
            min_s: rules.min_duration_s,
        });
    }
    let rate_hz = session.estimated_rate();
    if rate_hz < rules.min_rate_hz {
        return Err(Discard::LowRate {
            rate_hz,
            min_hz: rules.min_rate_hz,
        });
    }
    let to_g = session.units.to_g();
    let peak_g = session
        .samples
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |m, v| m.max(v.abs() * to_g));
    if peak_g > rules.max_abs_g {
        return Err(Discard::Extreme {
            peak_g,
            max_g: rules.max_abs_g,
        });
    }

    let trim = (rules.trim_s * TARGET_RATE_HZ).round() as usize;
    let (b, a) = butter_highpass(rules.filter_order, rules.highpass_hz, TARGET_RATE_HZ);
    let mut channels: [Vec<f64>; 3] = Default::default();
    for (axis, out) in channels.iter_mut().enumerate() {
        let x: Vec<f64> = session.samples.iter().map(|s| s[axis] * to_g).collect();
        let resampled = resample_linear(&session.timestamps, &x, TARGET_RATE_HZ);
        if resampled.len() <= 2 * trim {
            return Err(Discard::Short {
                duration_s,
                min_s: rules.min_duration_s.max(2.0 * rules.trim_s),
            });
        }
        let kept = &resampled[trim..resampled.len() - trim];
        *out = filtfilt(&b, &a, kept);
    }
    Ok(ProcessedSignal {
        subject_id: session.subject_id.clone(),
        signal_id,
        offset_s: trim as f64 / TARGET_RATE_HZ,
        channels,
    })
}

/// A 5 s, 3-axis window of a processed signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub signal_id: usize,
    pub index: usize,
    /// Start in session time.
    pub start_s: f64,
    /// Axis-major `[3, SEGMENT_LEN]`.
    pub data: Vec<f64>,
    /// Tremor-band periodogram energy summed over the three axes.
    pub band_energy: f64,
}

impl Segment {
    pub fn from_axes(signal_id: usize, index: usize, start_s: f64, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), 3 * SEGMENT_LEN);
        let band_energy = segment_band_energy(&data);
        Self {
            signal_id,
            index,
            start_s,
            data,
            band_energy,
        }
    }

    pub fn end_s(&self) -> f64 {
        self.start_s + SEGMENT_LEN as f64 / TARGET_RATE_HZ
    }

    pub fn provenance(&self) -> usize {
        self.signal_id * SEGMENT_ID_STRIDE + self.index
    }
}

/// Sum over axes of the 3-7 Hz energy of an axis-major `[3, SEGMENT_LEN]`
/// segment.
pub fn segment_band_energy(data: &[f64]) -> f64 {
    data.chunks(SEGMENT_LEN)
        .map(|axis| band_energy(axis, TARGET_RATE_HZ, TREMOR_BAND_HZ.0, TREMOR_BAND_HZ.1))
        .sum()
}

fn segments_of(signal: &ProcessedSignal) -> impl Iterator<Item = Segment> + '_ {
    (0..signal.len() / SEGMENT_LEN).map(move |j| {
        let range = j * SEGMENT_LEN..(j + 1) * SEGMENT_LEN;
        let data = signal
            .channels
            .iter()
            .flat_map(|c| c[range.clone()].iter().copied())
            .collect();
        let start_s = signal.offset_s + (j * SEGMENT_LEN) as f64 / TARGET_RATE_HZ;
        Segment::from_axes(signal.signal_id, j, start_s, data)
    })
}

/// Cuts every signal into non-overlapping segments and keeps the `k_t` with
/// the highest tremor-band energy, ties broken by signal id then index.
pub fn form_subject_bag(
    subject_id: &str,
    signals: &[ProcessedSignal],
    k_t: usize,
) -> Result<Vec<Segment>, DatasetError> {
    let mut segments: Vec<Segment> = signals.iter().flat_map(segments_of).collect();
    if segments.is_empty() {
        return Err(DatasetError::NoSegments(subject_id.to_string()));
    }
    segments.sort_by(|x, y| {
        y.band_energy
            .total_cmp(&x.band_energy)
            .then(x.signal_id.cmp(&y.signal_id))
            .then(x.index.cmp(&y.index))
    });
    segments.truncate(k_t);
    Ok(segments)
}

impl Bag {
    /// `[K, 3, SEGMENT_LEN]` bag of ranked segments.
    pub fn from_segments(subject_id: &str, segments: &[Segment], label: Option<bool>) -> Result<Bag, DatasetError> {
        let data = segments
            .iter()
            .flat_map(|s| s.data.iter().map(|&v| v as f32))
            .collect();
        Ok(Bag {
            id: subject_id.to_string(),
            instances: Tensor::new(vec![segments.len(), 3, SEGMENT_LEN], data)?,
            label,
            subject_id: Some(subject_id.to_string()),
            provenance: segments.iter().map(Segment::provenance).collect(),
            instance_labels: None,
        })
    }
}

/// Per-channel mean and standard deviation of `[K, C, L]` bags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit<'a>(bags: impl IntoIterator<Item = &'a Bag>) -> Result<Self, DatasetError> {
        let mut sums: Vec<(f64, f64, usize)> = Vec::new();
        for bag in bags {
            let shape = bag.instances.shape();
            let (channels, len) = (shape[1], shape[2..].iter().product::<usize>());
            if sums.is_empty() {
                sums = vec![(0.0, 0.0, 0); channels];
            } else if sums.len() != channels {
                return Err(DatasetError::Invalid(format!(
                    "bag {} has {channels} channels, expected {}",
                    bag.id,
                    sums.len()
                )));
            }
            for inst in bag.instances.data().chunks(channels * len) {
                for (c, values) in inst.chunks(len).enumerate() {
                    for &v in values {
                        let v = f64::from(v);
                        sums[c].0 += v;
                        sums[c].1 += v * v;
                    }
                    sums[c].2 += len;
                }
            }
        }
        if sums.is_empty() {
            return Err(DatasetError::Invalid("no bags to fit channel statistics".into()));
        }
        let mean: Vec<f64> = sums.iter().map(|s| s.0 / s.2 as f64).collect();
        let std = sums
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s.1 / s.2 as f64 - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, bag: &mut Bag) {
        let shape = bag.instances.shape().to_vec();
        let len: usize = shape[2..].iter().product();
        let channels = shape[1];
        for inst in bag.instances.data_mut().chunks_mut(channels * len) {
            for (c, values) in inst.chunks_mut(len).enumerate() {
                let (m, s) = (self.mean[c], self.std[c]);
                for v in values {
                    *v = ((f64::from(*v) - m) / s) as f32;
                }
            }
        }
    }
}

/// Ground truth of one injected tremor burst.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstTruth {
    pub session: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub freq_hz: f64,
    pub amplitude_g: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: bool,
    pub sessions: Vec<Session>,
    pub bursts: Vec<BurstTruth>,
}

impl SubjectRecord {
    /// Whether `segment` overlaps any injected burst.
    pub fn overlaps_burst(&self, segment: &Segment) -> bool {
        self.bursts.iter().any(|b| {
            b.session == segment.signal_id && b.start_s < segment.end_s() && segment.start_s < b.end_s
        })
    }
}

/// Knobs of the synthetic accelerometer cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSpec {
    pub sessions_per_subject: [usize; 2],
    pub session_duration_s: [f64; 2],
    /// Candidate sampling rates, chosen uniformly per session.
    pub rates_hz: Vec<f64>,
    /// Fraction of a positive subject's recorded time covered by tremor.
    pub tremor_coverage: [f64; 2],
    pub burst_duration_s: [f64; 2],
    pub tremor_amplitude_g: [f64; 2],
    /// Fraction of time spent in gait-like activity bouts (all subjects).
    pub activity_coverage: [f64; 2],
    pub activity_amplitude_g: [f64; 2],
    pub noise_g: f64,
    /// Bursts stay this far from session ends, clear of the trimmed edges.
    pub burst_margin_s: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            sessions_per_subject: [1, 3],
            session_duration_s: [40.0, 100.0],
            rates_hz: vec![50.0, 100.0, 200.0],
            tremor_coverage: [0.05, 0.2],
            burst_duration_s: [5.0, 20.0],
            tremor_amplitude_g: [0.03, 0.12],
            activity_coverage: [0.1, 0.3],
            activity_amplitude_g: [0.1, 0.3],
            noise_g: 0.02,
            burst_margin_s: 5.0,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v: [f64; 3] = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Places bouts of `[min, max]` seconds until `target` seconds are covered.
fn place_bouts<R: Rng>(rng: &mut R, duration: f64, target: f64, len: [f64; 2]) -> Vec<(f64, f64)> {
    let mut bouts = Vec::new();
    let mut covered = 0.0;
    let mut attempts = 0;
    while covered < target && attempts < 1000 {
        attempts += 1;
        let d = uniform(rng, len).min(target - covered).max(1.0).min(duration);
        let start = rng.random_range(0.0..(duration - d).max(1e-9));
        let end = start + d;
        if bouts.iter().any(|&(s, e)| start < e && s < end) {
            continue;
        }
        bouts.push((start, end));
        covered += d;
    }
    bouts.sort_by(|a, b| a.0.total_cmp(&b.0));
    bouts
}

fn synth_session<R: Rng>(
    spec: &CohortSpec,
    subject_id: &str,
    session: usize,
    tremor_coverage: f64,
    rng: &mut R,
    bursts: &mut Vec<BurstTruth>,
) -> Result<Session, DatasetError> {
    let duration = uniform(rng, spec.session_duration_s);
    // tremor time is a share of each session's own length
    let tremor_seconds = tremor_coverage * duration;
    let rate = *spec.rates_hz.choose(rng).expect("at least one rate");
    let n = (duration * rate).round() as usize;
    let noise = Normal::new(0.0, spec.noise_g).map_err(|e| DatasetError::Spec(e.to_string()))?;
    let gravity = random_unit(rng);

    // slow postural drift
    let drift: Vec<(f64, f64, f64, [f64; 3])> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.1..0.8),
                rng.random_range(0.02..0.08),
                rng.random_range(0.0..TAU),
                random_unit(rng),
            )
        })
        .collect();

    // gait-like bouts: fundamental in 1.5-2.5 Hz with harmonics
    let activity_target = duration * uniform(rng, spec.activity_coverage);
    let activity: Vec<(f64, f64, f64, f64, [f64; 3])> =
        place_bouts(rng, duration, activity_target, [5.0, 20.0])
            .into_iter()
            .map(|(s, e)| {
                (s, e, rng.random_range(1.5..2.5), uniform(rng, spec.activity_amplitude_g), random_unit(rng))
            })
            .collect();

    let tremor: Vec<(f64, f64, f64, f64, [f64; 3])> = if tremor_seconds > 0.0 {
        let margin = spec.burst_margin_s.clamp(0.0, duration / 4.0);
        let usable = duration - 2.0 * margin;
        place_bouts(rng, usable, tremor_seconds.min(usable), spec.burst_duration_s)
            .into_iter()
            .map(|(s, e)| (s + margin, e + margin))
            .map(|(s, e)| {
                let f = rng.random_range(3.0..7.0);
                let amp = uniform(rng, spec.tremor_amplitude_g);
                bursts.push(BurstTruth {
                    session,
                    start_s: s,
                    end_s: e,
                    freq_hz: f,
                    amplitude_g: amp,
                });
                (s, e, f, amp, random_unit(rng))
            })
            .collect()
    } else {
        Vec::new()
    };

    let jitter = 0.1 / rate;
    let mut timestamps = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate + rng.random_range(-jitter..jitter);
        let mut v = gravity;
        for &(f, amp, phase, dir) in &drift {
            let s = amp * (TAU * f * t + phase).sin();
            for k in 0..3 {
                v[k] += s * dir[k];
            }
        }
        for &(s, e, f, amp, dir) in &activity {
            if t >= s && t < e {
                let w = TAU * f * t;
                let x = amp * (w.sin() + 0.5 * (2.0 * w).sin() + 0.25 * (3.0 * w).sin());
                for k in 0..3 {
                    v[k] += x * dir[k];
                }
            }
        }
        for &(s, e, f, amp, dir) in &tremor {
            if t >= s && t < e {
                let x = amp * (TAU * f * t).sin();
                for k in 0..3 {
                    v[k] += x * dir[k];
                }
            }
        }
        for x in &mut v {
            *x += noise.sample(rng);
        }
        timestamps.push(t);
        samples.push(v);
    }
    Session::new(subject_id, timestamps, samples, rate, Units::G)
}

/// Synthetic subjects: `round(n_subjects * tremor_fraction)` of them get
/// 3-7 Hz bursts covering part of their recorded time; everyone gets
/// gravity, postural drift, gait-like bouts and sensor noise.
pub fn synth_tremor_cohort<R: Rng>(
    n_subjects: usize,
    tremor_fraction: f64,
    spec: &CohortSpec,
    rng: &mut R,
) -> Result<Vec<SubjectRecord>, DatasetError> {
    if !(tremor_fraction > 0.0 && tremor_fraction < 1.0) {
        return Err(DatasetError::Spec(format!(
            "tremor fraction {tremor_fraction} must lie in (0, 1)"
        )));
    }
    if spec.rates_hz.is_empty() || spec.sessions_per_subject[0] == 0 {
        return Err(DatasetError::Spec("cohort needs rates and at least one session".into()));
    }
    let n_pos = (n_subjects as f64 * tremor_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n_subjects).collect();
    order.shuffle(rng);
    let mut positive = vec![false; n_subjects];
    for &i in &order[..n_pos] {
        positive[i] = true;
    }

    let mut records = Vec::with_capacity(n_subjects);
    for (i, &label) in positive.iter().enumerate() {
        let subject_id = format!("s{i:03}");
        let n_sessions = rng.random_range(spec.sessions_per_subject[0]..=spec.sessions_per_subject[1]);
        let coverage = if label { uniform(rng, spec.tremor_coverage) } else { 0.0 };
        let mut sessions = Vec::with_capacity(n_sessions);
        let mut bursts = Vec::new();
        for s in 0..n_sessions {
            sessions.push(synth_session(spec, &subject_id, s, coverage, rng, &mut bursts)?);
        }
        records.push(SubjectRecord {
            subject_id,
            label,
            sessions,
            bursts,
        });
    }
    Ok(records)
}

pub fn write_session_csv(path: &Path, session: &Session) -> Result<(), DatasetError> {
    let mut out = format!(
        "# subject={} rate={} units={}\nt,x,y,z\n",
        session.subject_id,
        session.nominal_rate,
        session.units.as_str()
    );
    for (t, s) in session.timestamps.iter().zip(&session.samples) {
        out.push_str(&format!("{t},{},{},{}\n", s[0], s[1], s[2]));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_session_csv(path: &Path) -> Result<Session, DatasetError> {
    let text = fs::read_to_string(path)?;
    let name = path.display().to_string();
    let err = |line: usize, detail: String| DatasetError::Csv {
        path: name.clone(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let meta = header
        .strip_prefix('#')
        .ok_or_else(|| err(n, "expected `# subject=.. rate=.. units=..` header".into()))?;
    let (mut subject, mut rate, mut units) = (None, None, None);
    for field in meta.split_whitespace() {
        match field.split_once('=') {
            Some(("subject", v)) => subject = Some(v.to_string()),
            Some(("rate", v)) => {
                rate = Some(v.parse::<f64>().map_err(|e| err(n, format!("rate `{v}`: {e}")))?)
            }
            Some(("units", "g")) => units = Some(Units::G),
            Some(("units", "ms2")) => units = Some(Units::Ms2),
            _ => return Err(err(n, format!("unknown header field `{field}`"))),
        }
    }
    let subject = subject.ok_or_else(|| err(n, "missing subject".into()))?;
    let rate = rate.ok_or_else(|| err(n, "missing rate".into()))?;
    let units = units.ok_or_else(|| err(n, "missing units (g or ms2)".into()))?;
    match lines.next() {
        Some((_, "t,x,y,z")) => {}
        Some((n, other)) => return Err(err(n, format!("expected `t,x,y,z`, found `{other}`"))),
        None => return Err(err(2, "missing column header".into())),
    }
    let mut timestamps = Vec::new();
    let mut samples = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(n, e.to_string()))?;
        let [t, x, y, z] = values[..] else {
            return Err(err(n, format!("expected 4 columns, found {}", values.len())));
        };
        timestamps.push(t);
        samples.push([x, y, z]);
    }
    Session::new(subject, timestamps, samples, rate, units).map_err(|e| err(0, e.to_string()))
}
