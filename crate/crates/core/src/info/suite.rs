//! The four representation metrics, observation baselines and compression.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::estimators::{ksg_mi_cc, mi_cd, EstimatorOptions, MiEstimate};
use super::InfoError;

/// Aligned analysis records: `o` from even episode steps, `o'` the following
/// observation, `v` the discounted return-to-go from `o`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisSample {
    pub actions: Vec<usize>,
    pub obs: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub values: Vec<f64>,
    pub contexts: Vec<u64>,
    /// Global collection index of the step providing `o`.
    pub steps: Vec<usize>,
    pub collection_steps: usize,
}

impl AnalysisSample {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn check(&self) -> Result<(), InfoError> {
        let n = self.len();
        for other in [self.obs.nrows(), self.next_obs.nrows(), self.values.len(), self.contexts.len(), self.steps.len()] {
            if other != n {
                return Err(InfoError::LengthMismatch { left: n, right: other });
            }
        }
        Ok(())
    }
}

/// Latents of one representation on an [`AnalysisSample`].
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub name: String,
    pub z: Array2<f64>,
    pub z_next: Array2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    /// I(Z;L)
    Level,
    /// I(Z;V)
    Value,
    /// I((Z,Z');A)
    Inverse,
    /// I(Z;Z')
    Transition,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Level, Metric::Value, Metric::Inverse, Metric::Transition];

    pub fn tag(self) -> &'static str {
        match self {
            Metric::Level => "I(Z;L)",
            Metric::Value => "I(Z;V)",
            Metric::Inverse => "I((Z,Z');A)",
            Metric::Transition => "I(Z;Z')",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Metric {
    type Err = InfoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| InfoError::Parse(format!("unknown metric `{s}`")))
    }
}

/// Name under which the observation baselines are recorded.
pub const OBSERVATION: &str = "observation";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiRecord {
    pub metric: Metric,
    pub representation: String,
    pub raw: f64,
    pub k: usize,
    pub n: usize,
}

impl MiRecord {
    pub fn value(&self) -> f64 {
        self.raw.max(0.0)
    }

    pub fn clamped(&self) -> bool {
        self.raw < 0.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub records: Vec<MiRecord>,
    pub warnings: Vec<String>,
}

impl MiReport {
    pub fn get(&self, representation: &str, metric: Metric) -> Option<&MiRecord> {
        self.records.iter().find(|r| r.representation == representation && r.metric == metric)
    }

    pub fn value(&self, representation: &str, metric: Metric) -> Option<f64> {
        self.get(representation, metric).map(MiRecord::value)
    }

    pub fn representations(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for r in &self.records {
            if !v.contains(&r.representation) {
                v.push(r.representation.clone());
            }
        }
        v
    }

    pub fn merge(&mut self, other: MiReport) {
        self.records.extend(other.records);
        self.warnings.extend(other.warnings);
    }

    /// C(Z|O;·) for a representation against the observation baseline.
    pub fn compression(&self, representation: &str, metric: Metric) -> Result<f64, InfoError> {
        let z = self.get(representation, metric).ok_or_else(|| InfoError::MissingMetric(representation.into()))?;
        let o = self.get(OBSERVATION, metric).ok_or_else(|| InfoError::MissingMetric(OBSERVATION.into()))?;
        compression_efficiency(z.value(), o.value())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tag,representation,value,raw,k,n,clamped\n");
        for r in &self.records {
            s.push_str(&format!(
                "\"{}\",{},{},{},{},{},{}\n",
                r.metric.tag(),
                r.representation,
                r.value(),
                r.raw,
                r.k,
                r.n,
                r.clamped()
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, InfoError> {
        let mut lines = text.lines();
        if lines.next() != Some("tag,representation,value,raw,k,n,clamped") {
            return Err(InfoError::Parse("bad MI report header".into()));
        }
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let bad = || InfoError::Parse(format!("bad MI report line `{line}`"));
            let rest = line.strip_prefix('"').ok_or_else(bad)?;
            let (tag, rest) = rest.split_once("\",").ok_or_else(bad)?;
            let fields: Vec<&str> = rest.split(',').collect();
            if fields.len() != 6 {
                return Err(bad());
            }
            records.push(MiRecord {
                metric: tag.parse()?,
                representation: fields[0].to_string(),
                raw: fields[2].parse().map_err(|_| bad())?,
                k: fields[3].parse().map_err(|_| bad())?,
                n: fields[4].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { records, warnings: Vec::new() })
    }
}

/// min(I(Z;·) / I(O;·), 1).
pub fn compression_efficiency(i_z: f64, i_o: f64) -> Result<f64, InfoError> {
    if i_o <= 0.0 || !i_o.is_finite() {
        return Err(InfoError::InapplicableCompression(i_o));
    }
    Ok((i_z / i_o).clamp(0.0, 1.0).min(1.0))
}

fn labels_from_actions(actions: &[usize]) -> Vec<u64> {
    actions.iter().map(|&a| a as u64).collect()
}

fn column(values: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column vector")
}

/// The four metrics for one pair of aligned arrays `(z, z')`.
pub fn metric_set(
    name: &str,
    z: &Array2<f64>,
    z_next: &Array2<f64>,
    sample: &AnalysisSample,
    opts: &EstimatorOptions,
) -> Result<MiReport, InfoError> {
    sample.check()?;
    let v = column(&sample.values);
    let pair = concatenate(Axis(1), &[z.view(), z_next.view()]).expect("aligned latents");
    let actions = labels_from_actions(&sample.actions);
    let estimates: [(Metric, MiEstimate); 4] = [
        (Metric::Level, mi_cd(z, &sample.contexts, opts)?),
        (Metric::Value, ksg_mi_cc(z, &v, opts)?),
        (Metric::Inverse, mi_cd(&pair, &actions, opts)?),
        (Metric::Transition, ksg_mi_cc(z, z_next, opts)?),
    ];
    let mut report = MiReport::default();
    for (metric, est) in estimates {
        report.warnings.extend(est.warnings.iter().map(|w| format!("{name} {metric}: {w}")));
        report.records.push(MiRecord { metric, representation: name.to_string(), raw: est.value, k: est.k, n: est.n });
    }
    Ok(report)
}

/// Metrics for every representation plus the observation baselines.
pub fn compute_metric_suite(
    sample: &AnalysisSample,
    latents: &[Latents],
    opts: &EstimatorOptions,
) -> Result<MiReport, InfoError> {
    let mut report = metric_set(OBSERVATION, &sample.obs, &sample.next_obs, sample, opts)?;
    for l in latents {
        report.merge(metric_set(&l.name, &l.z, &l.z_next, sample, opts)?);
    }
    Ok(report)
}
