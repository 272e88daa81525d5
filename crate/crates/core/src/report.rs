//! Telemetry CSV formats and the confidence report built from them.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value parses back to the identical `f64`; infinite thresholds appear as
//! `inf`.

use std::fmt::Write as _;

use crate::dplf::{EmaSchedule, Moments, ThresholdState};
use crate::error::{Error, Result};
use crate::trainer::{ConfidenceSample, IterationRecord};

/// Fixed thresholds every report compares against.
pub const FIXED_THRESHOLDS: [f64; 2] = [0.85, 0.9];
pub const HISTOGRAM_BINS: usize = 20;

pub fn iterations_csv(records: &[IterationRecord], num_classes: usize) -> String {
    let mut s = String::from("iteration,loss,seg,dmc,tau_global,teacher_updated");
    for c in 0..num_classes {
        let _ = write!(s, ",tau_class_{c}");
    }
    for c in 0..num_classes {
        let _ = write!(s, ",retained_{c}");
    }
    s.push('\n');
    for r in records {
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            r.iteration,
            r.loss,
            r.seg,
            r.dmc,
            r.tau_global,
            u8::from(r.teacher_updated)
        );
        for v in r.tau_class.iter().chain(&r.retained) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn confidences_csv(samples: &[ConfidenceSample]) -> String {
    let mut s = String::from("class,raw,weighted,rejected\n");
    for x in samples {
        let _ = writeln!(s, "{},{},{},{}", x.class, x.raw, x.weighted, u8::from(x.rejected));
    }
    s
}

fn data_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("line {line}: {msg}"))
}

fn field<T: std::str::FromStr>(parts: &[&str], i: usize, line: usize) -> Result<T> {
    parts
        .get(i)
        .ok_or_else(|| data_err(line, "missing column"))?
        .parse()
        .map_err(|_| data_err(line, format!("cannot parse column {i}")))
}

fn rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        _ => return Err(Error::Data(format!("expected header `{header}`"))),
    }
    Ok(lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i + 1, l.split(',').collect()))
        .collect())
}

pub fn parse_confidences(text: &str) -> Result<Vec<ConfidenceSample>> {
    rows(text, "class,raw,weighted,rejected")?
        .into_iter()
        .map(|(n, p)| {
            Ok(ConfidenceSample {
                class: field(&p, 0, n)?,
                raw: field(&p, 1, n)?,
                weighted: field(&p, 2, n)?,
                rejected: field::<u8>(&p, 3, n)? != 0,
            })
        })
        .collect()
}

const THRESHOLD_HEADER: &str = "kind,class,mean,std";

/// Threshold state as CSV: one `global` row, one `class` row per class, and
/// one `schedule` row holding `t, λg, λcs, γ, warmup`. Unset statistics have
/// empty mean and std.
pub fn thresholds_csv(state: &ThresholdState) -> String {
    let mut s = format!("{THRESHOLD_HEADER}\n");
    let cell = |m: Option<Moments>| m.map_or(",".to_string(), |m| format!("{},{}", m.mean, m.std));
    let _ = writeln!(s, "global,,{}", cell(state.global()));
    for c in 0..state.num_classes() {
        let _ = writeln!(s, "class,{c},{}", cell(state.class(c)));
    }
    let sch = state.schedule();
    let _ = writeln!(
        s,
        "schedule,{},{},{},{},{}",
        state.iteration(),
        sch.lambda_global,
        sch.lambda_class,
        sch.period,
        sch.warmup
    );
    s
}

pub fn parse_thresholds(text: &str) -> Result<ThresholdState> {
    let moments = |p: &[&str], n: usize| -> Result<Option<Moments>> {
        if p.get(2).is_some_and(|v| v.is_empty()) {
            return Ok(None);
        }
        Ok(Some(Moments {
            mean: field(p, 2, n)?,
            std: field(p, 3, n)?,
        }))
    };
    let mut global = None;
    let mut class = Vec::new();
    let mut sched = None;
    for (n, p) in rows(text, THRESHOLD_HEADER)? {
        match p[0] {
            "global" => global = moments(&p, n)?,
            "class" => {
                let c: usize = field(&p, 1, n)?;
                if c != class.len() {
                    return Err(data_err(n, "class rows out of order"));
                }
                class.push(moments(&p, n)?);
            }
            "schedule" => {
                let t: u64 = field(&p, 1, n)?;
                let s = EmaSchedule {
                    lambda_global: field(&p, 2, n)?,
                    lambda_class: field(&p, 3, n)?,
                    period: field(&p, 4, n)?,
                    warmup: field(&p, 5, n)?,
                };
                sched = Some((t, s));
            }
            other => return Err(data_err(n, format!("unknown row kind `{other}`"))),
        }
    }
    let (t, schedule) = sched.ok_or_else(|| Error::Data("missing schedule row".into()))?;
    Ok(ThresholdState::from_parts(global, class, schedule, t))
}

/// Per-class confidence histograms and retained fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceReport {
    /// `[class][bin]` counts of raw confidences over `HISTOGRAM_BINS` equal
    /// bins of `[0, 1]`; 1.0 falls in the last bin.
    pub raw_histogram: Vec<Vec<u64>>,
    pub weighted_histogram: Vec<Vec<u64>>,
    pub totals: Vec<u64>,
    /// `[class][k]` fraction with raw confidence `>= FIXED_THRESHOLDS[k]`.
    pub fixed_retained: Vec<[f64; 2]>,
    /// Fraction passing the dynamic rule against the final state.
    pub dynamic_retained: Vec<f64>,
}

fn bin_of(v: f64) -> usize {
    ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
}

impl ConfidenceReport {
    pub fn build(samples: &[ConfidenceSample], state: &ThresholdState) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("no confidence samples in telemetry"));
        }
        let k = state.num_classes();
        let mut raw_histogram = vec![vec![0; HISTOGRAM_BINS]; k];
        let mut weighted_histogram = vec![vec![0; HISTOGRAM_BINS]; k];
        let mut totals = vec![0u64; k];
        let mut fixed = vec![[0u64; 2]; k];
        let mut dynamic = vec![0u64; k];
        for s in samples {
            if s.class >= k {
                return Err(Error::ClassOutOfRange {
                    class: s.class as i64,
                    num_classes: k,
                });
            }
            totals[s.class] += 1;
            raw_histogram[s.class][bin_of(s.raw)] += 1;
            weighted_histogram[s.class][bin_of(s.weighted)] += 1;
            for (i, &t) in FIXED_THRESHOLDS.iter().enumerate() {
                if s.raw >= t {
                    fixed[s.class][i] += 1;
                }
            }
            if !s.rejected && s.weighted >= state.effective_threshold(s.class) {
                dynamic[s.class] += 1;
            }
        }
        let frac = |n: u64, c: usize| {
            if totals[c] == 0 {
                0.0
            } else {
                n as f64 / totals[c] as f64
            }
        };
        Ok(Self {
            fixed_retained: (0..k).map(|c| [frac(fixed[c][0], c), frac(fixed[c][1], c)]).collect(),
            dynamic_retained: (0..k).map(|c| frac(dynamic[c], c)).collect(),
            raw_histogram,
            weighted_histogram,
            totals,
        })
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("class,bin,lower,upper,raw,weighted\n");
        for c in 0..self.totals.len() {
            for b in 0..HISTOGRAM_BINS {
                let _ = writeln!(
                    s,
                    "{c},{b},{},{},{},{}",
                    b as f64 / HISTOGRAM_BINS as f64,
                    (b + 1) as f64 / HISTOGRAM_BINS as f64,
                    self.raw_histogram[c][b],
                    self.weighted_histogram[c][b]
                );
            }
        }
        s
    }

    pub fn retained_csv(&self) -> String {
        let mut s = String::from("class,total,fixed_0.85,fixed_0.9,dynamic\n");
        for c in 0..self.totals.len() {
            let [a, b] = self.fixed_retained[c];
            let _ = writeln!(s, "{c},{},{a},{b},{}", self.totals[c], self.dynamic_retained[c]);
        }
        s
    }
}

/// Threshold lines for plotting: the fixed thresholds, τg, and every
/// class's τcs and effective threshold.
pub fn threshold_lines_csv(state: &ThresholdState) -> String {
    let mut s = String::from("name,class,value\n");
    for t in FIXED_THRESHOLDS {
        let _ = writeln!(s, "fixed,,{t}");
    }
    let _ = writeln!(s, "tau_global,,{}", state.global_threshold());
    for c in 0..state.num_classes() {
        let _ = writeln!(s, "tau_class,{c},{}", state.class_threshold(c));
        let _ = writeln!(s, "effective,{c},{}", state.effective_threshold(c));
    }
    s
}

/// Parses a CSV written by [`ConfidenceReport::retained_csv`] into
/// `(class, total, fixed 0.85, fixed 0.9, dynamic)` rows.
pub fn parse_retained(text: &str) -> Result<Vec<(usize, u64, f64, f64, f64)>> {
    rows(text, "class,total,fixed_0.85,fixed_0.9,dynamic")?
        .into_iter()
        .map(|(n, p)| {
            Ok((
                field(&p, 0, n)?,
                field(&p, 1, n)?,
                field(&p, 2, n)?,
                field(&p, 3, n)?,
                field(&p, 4, n)?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> ThresholdState {
        ThresholdState::from_parts(
            Some(Moments { mean: 0.7, std: 0.1 + 1e-17 }),
            vec![Some(Moments { mean: 0.6, std: 0.25 }), None],
            EmaSchedule::default(),
            12,
        )
    }

    fn samples() -> Vec<ConfidenceSample> {
        vec![
            ConfidenceSample { class: 0, raw: 0.95, weighted: 0.9, rejected: false },
            ConfidenceSample { class: 0, raw: 0.3, weighted: 0.2, rejected: true },
            ConfidenceSample { class: 0, raw: 0.86, weighted: 0.36, rejected: false },
            ConfidenceSample { class: 1, raw: 1.0, weighted: 1.0, rejected: false },
        ]
    }

    #[test]
    fn thresholds_round_trip_exactly() {
        let s = state();
        assert_eq!(parse_thresholds(&thresholds_csv(&s)).unwrap(), s);
        let fresh = ThresholdState::new(3, EmaSchedule::short());
        assert_eq!(parse_thresholds(&thresholds_csv(&fresh)).unwrap(), fresh);
    }

    #[test]
    fn confidences_round_trip() {
        let s = samples();
        assert_eq!(parse_confidences(&confidences_csv(&s)).unwrap(), s);
        assert!(parse_confidences("bad header\n").is_err());
        assert!(parse_confidences("class,raw,weighted,rejected\n0,x,1,0\n").is_err());
    }

    #[test]
    fn report_counts() {
        let r = ConfidenceReport::build(&samples(), &state()).unwrap();
        assert_eq!(r.totals, vec![3, 1]);
        for c in 0..2 {
            assert_eq!(r.raw_histogram[c].iter().sum::<u64>(), r.totals[c]);
            assert_eq!(r.weighted_histogram[c].iter().sum::<u64>(), r.totals[c]);
        }
        assert_eq!(r.raw_histogram[1][HISTOGRAM_BINS - 1], 1);
        assert_eq!(r.fixed_retained[0], [2.0 / 3.0, 1.0 / 3.0]);
        // class 0 effective threshold is τcs = 0.35; the rejected point is out.
        assert_eq!(r.dynamic_retained[0], 2.0 / 3.0);
        // class 1 unseen: τg = 0.8 applies.
        assert_eq!(r.dynamic_retained[1], 1.0);
        let rows = parse_retained(&r.retained_csv()).unwrap();
        assert_eq!(rows[0], (0, 3, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0));
        assert!(ConfidenceReport::build(&[], &state()).is_err());
    }

    #[test]
    fn threshold_lines_match_state() {
        let s = state();
        let text = threshold_lines_csv(&s);
        let tau_g: f64 = text
            .lines()
            .find(|l| l.starts_with("tau_global"))
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(tau_g, s.global_threshold());
        assert!(text.contains("tau_class,1,inf"));
    }
}
