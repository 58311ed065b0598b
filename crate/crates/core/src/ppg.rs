//! PPG beat segmentation and the 21-element beat feature vector.
//!
//! A beat runs from one local minimum (T1) through the local maximum (T2) to
//! the next local minimum (T3), which is also the next beat's T1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub const PPG_FEATURES: usize = 21;
pub const MIN_BEATS_FOR_FEATURES: usize = 5;

/// A uniformly sampled PPG waveform in raw device units.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgRecord {
    samples: Vec<f64>,
    rate: f64,
    t0: f64,
}

impl PpgRecord {
    pub fn new(samples: Vec<f64>, rate: f64, t0: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Format(format!(
                "PPG record needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Sampling(format!(
                "PPG sampling rate must be positive, got {rate}"
            )));
        }
        Ok(PpgRecord { samples, rate, t0 })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beat {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl Beat {
    pub fn rise(&self) -> f64 {
        self.t2 - self.t1
    }

    pub fn fall(&self) -> f64 {
        self.t3 - self.t2
    }

    pub fn period(&self) -> f64 {
        self.t3 - self.t1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Minimum peak prominence as a fraction of the signal's range.
    pub min_prominence: f64,
    /// Minimum beat duration in seconds.
    pub min_period: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            min_prominence: 0.1,
            min_period: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy)]
struct Extremum {
    index: usize,
    value: f64,
    kind: Kind,
}

/// Strict local extrema of `x`; a plateau counts once, at its first sample.
/// Boundary runs qualify against their single neighbour. The result
/// alternates between minima and maxima.
fn local_extrema(x: &[f64]) -> Vec<Extremum> {
    let mut runs: Vec<(usize, f64)> = Vec::new();
    for (i, &v) in x.iter().enumerate() {
        if runs.last().map_or(true, |&(_, last)| last != v) {
            runs.push((i, v));
        }
    }
    if runs.len() < 2 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for k in 0..runs.len() {
        let (index, value) = runs[k];
        let left = k.checked_sub(1).map(|j| runs[j].1);
        let right = runs.get(k + 1).map(|r| r.1);
        let below = |n: Option<f64>| n.map_or(true, |n| n > value);
        let above = |n: Option<f64>| n.map_or(true, |n| n < value);
        if below(left) && below(right) {
            out.push(Extremum {
                index,
                value,
                kind: Kind::Min,
            });
        } else if above(left) && above(right) {
            out.push(Extremum {
                index,
                value,
                kind: Kind::Max,
            });
        }
    }
    out
}

fn is_beat_peak(ext: &[Extremum], p: usize) -> bool {
    p > 0 && p + 1 < ext.len() && ext[p].kind == Kind::Max
}

/// Removes the weakest peaks until every peak inside a beat rises at least
/// `threshold` above its higher neighbouring trough.
fn drop_shallow_peaks(ext: &mut Vec<Extremum>, threshold: f64) {
    loop {
        let weakest = (0..ext.len())
            .filter(|&p| is_beat_peak(ext, p))
            .map(|p| (p, ext[p].value - ext[p - 1].value.max(ext[p + 1].value)))
            .filter(|&(_, prom)| prom < threshold)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((p, _)) = weakest else { break };
        // keep the deeper trough
        let trough = if ext[p - 1].value < ext[p + 1].value {
            p + 1
        } else {
            p - 1
        };
        ext.remove(p.max(trough));
        ext.remove(p.min(trough));
    }
}

/// Merges beats shorter than `min_len` samples into a neighbour by removing
/// the shallower shared trough and the lower of the two peaks beside it.
fn merge_short_beats(ext: &mut Vec<Extremum>, min_len: f64) {
    loop {
        let shortest = (0..ext.len())
            .filter(|&p| is_beat_peak(ext, p))
            .map(|p| (p, (ext[p + 1].index - ext[p - 1].index) as f64))
            .filter(|&(_, len)| len < min_len)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((p, _)) = shortest else { break };
        let has_left = p >= 2 && is_beat_peak(ext, p - 2);
        let has_right = is_beat_peak(ext, p + 2);
        let trough = match (has_left, has_right) {
            (true, true) => {
                if ext[p + 1].value > ext[p - 1].value {
                    p + 1
                } else {
                    p - 1
                }
            }
            (true, false) => p - 1,
            (false, true) => p + 1,
            (false, false) => {
                // isolated short beat: drop it
                let trough = if ext[p - 1].value < ext[p + 1].value {
                    p + 1
                } else {
                    p - 1
                };
                ext.remove(p.max(trough));
                ext.remove(p.min(trough));
                continue;
            }
        };
        let other_peak = if trough > p { p + 2 } else { p - 2 };
        let peak = if ext[other_peak].value < ext[p].value {
            other_peak
        } else {
            p
        };
        ext.remove(peak.max(trough));
        ext.remove(peak.min(trough));
    }
}

/// Splits a PPG record into consecutive beats.
///
/// Extrema are found by strict neighbour comparison on the mean-removed
/// signal. Peaks whose prominence is below `min_prominence` of the signal
/// range are discarded, then beats shorter than `min_period` are merged into
/// their neighbours. Times are sample index divided by the sampling rate.
pub fn segment_beats(ppg: &PpgRecord, params: SegmentParams) -> Result<Vec<Beat>> {
    if !(0.0..1.0).contains(&params.min_prominence) {
        return Err(Error::Usage(format!(
            "min_prominence must lie in [0, 1), got {}",
            params.min_prominence
        )));
    }
    if !(params.min_period > 0.0) {
        return Err(Error::Usage(format!(
            "min_period must be positive, got {}",
            params.min_period
        )));
    }
    let raw = ppg.samples();
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite PPG sample at index {i}")));
    }
    let m = stats::mean(raw);
    let x: Vec<f64> = raw.iter().map(|v| v - m).collect();
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });

    let mut ext = local_extrema(&x);
    if params.min_prominence > 0.0 {
        drop_shallow_peaks(&mut ext, params.min_prominence * (hi - lo));
    }
    merge_short_beats(&mut ext, params.min_period * ppg.rate());

    let rate = ppg.rate();
    Ok((0..ext.len())
        .filter(|&p| is_beat_peak(&ext, p))
        .map(|p| {
            let (s, pk, e) = (ext[p - 1].index, ext[p].index, ext[p + 1].index);
            Beat {
                t1: s as f64 / rate,
                t2: pk as f64 / rate,
                t3: e as f64 / rate,
                a1: raw[s],
                a2: raw[pk],
                a3: raw[e],
            }
        })
        .collect())
}

/// The 21 PPG beat features, in this order:
///
/// | index | feature |
/// |-------|---------|
/// | f1-f5 | T2 - T1 of beats 1-5 |
/// | f6-f9 | T3 - T2 of beats 1-4 |
/// | f10-f13 | T3 - T1 of beats 1-4 |
/// | f14 | SD of the amplitude at T2 over all beats |
/// | f15 | SD of the amplitude at T1 over all beats |
/// | f16-f18 | mean of T2-T1, T3-T2, T3-T1 over all beats |
/// | f19-f21 | SD of T2-T1, T3-T2, T3-T1 over all beats |
///
/// Standard deviations use the N - 1 denominator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpgFeatures(Vec<f64>);

impl PpgFeatures {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != PPG_FEATURES {
            return Err(Error::Shape(format!(
                "PPG features need {PPG_FEATURES} values, got {}",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("PPG feature f{} is not finite", k + 1)));
        }
        Ok(PpgFeatures(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub fn extract_ppg_features(beats: &[Beat]) -> Result<PpgFeatures> {
    if beats.len() < MIN_BEATS_FOR_FEATURES {
        return Err(Error::InsufficientBeats {
            found: beats.len(),
            required: MIN_BEATS_FOR_FEATURES,
        });
    }
    let rise: Vec<f64> = beats.iter().map(Beat::rise).collect();
    let fall: Vec<f64> = beats.iter().map(Beat::fall).collect();
    let period: Vec<f64> = beats.iter().map(Beat::period).collect();
    let peaks: Vec<f64> = beats.iter().map(|b| b.a2).collect();
    let troughs: Vec<f64> = beats.iter().map(|b| b.a1).collect();

    let mut f = Vec::with_capacity(PPG_FEATURES);
    f.extend_from_slice(&rise[..5]);
    f.extend_from_slice(&fall[..4]);
    f.extend_from_slice(&period[..4]);
    f.push(stats::sample_sd(&peaks));
    f.push(stats::sample_sd(&troughs));
    for series in [&rise, &fall, &period] {
        f.push(stats::mean(series));
    }
    for series in [&rise, &fall, &period] {
        f.push(stats::sample_sd(series));
    }
    PpgFeatures::new(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Mean and sample SD of the beat durations (T3 - T1).
pub fn interval_stats(beats: &[Beat]) -> Result<IntervalStats> {
    if beats.len() < 2 {
        return Err(Error::InsufficientBeats {
            found: beats.len(),
            required: 2,
        });
    }
    let periods: Vec<f64> = beats.iter().map(Beat::period).collect();
    Ok(IntervalStats {
        count: periods.len(),
        mean: stats::mean(&periods),
        sd: stats::sample_sd(&periods),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(samples: Vec<f64>, rate: f64) -> PpgRecord {
        PpgRecord::new(samples, rate, 0.0).unwrap()
    }

    fn no_filter() -> SegmentParams {
        SegmentParams {
            min_prominence: 0.0,
            min_period: 1e-9,
        }
    }

    fn beat(t1: f64, t2: f64, t3: f64) -> Beat {
        Beat {
            t1,
            t2,
            t3,
            a1: 0.0,
            a2: 1.0,
            a3: 0.0,
        }
    }

    #[test]
    fn monotone_signal_has_no_beats() {
        let r = record((0..50).map(f64::from).collect(), 10.0);
        assert!(segment_beats(&r, SegmentParams::default()).unwrap().is_empty());
    }

    #[test]
    fn triangle_wave_hand_example() {
        let r = record(vec![0., 1., 2., 1., 0., 1., 2., 1., 0.], 1.0);
        let beats = segment_beats(&r, SegmentParams { min_prominence: 0.0, min_period: 0.3 }).unwrap();
        let times: Vec<_> = beats.iter().map(|b| (b.t1, b.t2, b.t3)).collect();
        assert_eq!(times, vec![(0.0, 2.0, 4.0), (4.0, 6.0, 8.0)]);
    }

    #[test]
    fn plateau_extremum_is_first_sample() {
        let r = record(vec![1., 0., 0., 0., 2., 2., 1., 0., 3.], 1.0);
        let beats = segment_beats(&r, no_filter()).unwrap();
        assert_eq!(beats.len(), 1);
        assert_eq!((beats[0].t1, beats[0].t2, beats[0].t3), (1.0, 4.0, 7.0));
    }

    #[test]
    fn constant_signal_has_no_beats() {
        let r = record(vec![3.0; 20], 5.0);
        assert!(segment_beats(&r, no_filter()).unwrap().is_empty());
    }

    #[test]
    fn shallow_notch_is_removed_by_prominence() {
        // a dicrotic-style wiggle on the falling edge
        let s = vec![0., 5., 10., 6., 6.5, 3., 0., 5., 10., 6., 6.5, 3., 0.];
        let r = record(s, 1.0);
        assert_eq!(segment_beats(&r, no_filter()).unwrap().len(), 4);
        let filtered = segment_beats(
            &r,
            SegmentParams {
                min_prominence: 0.1,
                min_period: 1e-9,
            },
        )
        .unwrap();
        let times: Vec<_> = filtered.iter().map(|b| (b.t1, b.t2, b.t3)).collect();
        assert_eq!(times, vec![(0.0, 2.0, 6.0), (6.0, 8.0, 12.0)]);
    }

    #[test]
    fn short_beats_are_merged() {
        let s = vec![0., 10., 0., 4., 1., 9., 0., 10., 0.];
        let r = record(s, 1.0);
        let beats = segment_beats(
            &r,
            SegmentParams {
                min_prominence: 0.0,
                min_period: 2.5,
            },
        )
        .unwrap();
        assert!(beats.iter().all(|b| b.period() >= 2.5));
        for w in beats.windows(2) {
            assert_eq!(w[0].t3, w[1].t1);
        }
    }

    #[test]
    fn non_finite_sample_is_rejected() {
        let r = record(vec![0.0, f64::NAN, 1.0], 1.0);
        assert!(matches!(segment_beats(&r, no_filter()), Err(Error::Numeric(_))));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let r = record(vec![0.0, 1.0, 0.0], 1.0);
        let bad = SegmentParams {
            min_prominence: 1.0,
            min_period: 0.3,
        };
        assert!(segment_beats(&r, bad).is_err());
        let bad = SegmentParams {
            min_prominence: 0.1,
            min_period: 0.0,
        };
        assert!(segment_beats(&r, bad).is_err());
    }

    #[test]
    fn periodic_train_features() {
        let beats: Vec<Beat> = (0..8)
            .map(|k| {
                let t = k as f64 * 0.8;
                beat(t, t + 0.3, t + 0.8)
            })
            .collect();
        let f = extract_ppg_features(&beats).unwrap();
        let f = f.as_slice();
        assert_eq!(f.len(), PPG_FEATURES);
        for k in 0..5 {
            assert!((f[k] - 0.3).abs() < 1e-12);
        }
        assert!((f[15] - 0.3).abs() < 1e-12);
        assert!(f[18].abs() < 1e-12);
        // identical peak amplitudes
        assert_eq!(f[13], 0.0);
    }

    #[test]
    fn too_few_beats_is_typed_error() {
        let beats: Vec<Beat> = (0..4).map(|k| beat(k as f64, k as f64 + 0.5, k as f64 + 1.0)).collect();
        match extract_ppg_features(&beats) {
            Err(Error::InsufficientBeats { found, required }) => {
                assert_eq!((found, required), (4, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn interval_stats_examples() {
        let s = interval_stats(&[beat(0.0, 0.3, 1.0), beat(1.0, 1.3, 2.0)]).unwrap();
        assert_eq!((s.mean, s.sd), (1.0, 0.0));
        let s = interval_stats(&[beat(0.0, 0.3, 0.8), beat(0.8, 1.1, 2.0)]).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-12);
        assert!((s.sd - 0.282_842_712_474_619).abs() < 1e-12);
        assert!(interval_stats(&[beat(0.0, 0.3, 0.8)]).is_err());
    }
}
