//! Trial data model: subject records, principal-stratum algebra, analysis
//! time grids and assumption configuration shared by both engines.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// One subject: assigned arm, intercurrent-event indicator, observed
/// follow-up time, event indicator and baseline covariates.
///
/// The covariate vector does not store an intercept; every model in this
/// crate builds its design row as `[1, x]` through [`design_row`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// Assigned arm: 1 = active treatment, 0 = control.
    pub arm: u8,
    /// Intercurrent-event indicator under the assigned arm.
    pub ice: u8,
    /// Observed time (min of failure and censoring time); unit is caller-defined.
    pub time: f64,
    /// 1 = failure observed, 0 = right-censored.
    pub event: u8,
    /// Baseline covariates, fixed dimension across the dataset.
    pub covariates: Vec<f64>,
}

/// Prepend the intercept to a covariate row. Centralised so no model can
/// disagree about intercept handling.
pub fn design_row(x: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(x.len() + 1);
    row.push(1.0);
    row.extend_from_slice(x);
    row
}

/// Principal stratum label, written as the pair of potential ICE statuses
/// `(D(0), D(1))`. `S01` therefore means "no ICE under control, ICE under
/// treatment".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StratumLabel {
    S00,
    S01,
    S10,
    S11,
}

impl StratumLabel {
    pub const ALL: [StratumLabel; 4] = [
        StratumLabel::S00,
        StratumLabel::S01,
        StratumLabel::S10,
        StratumLabel::S11,
    ];

    /// Potential ICE status under control.
    pub fn d0(self) -> u8 {
        match self {
            StratumLabel::S00 | StratumLabel::S01 => 0,
            StratumLabel::S10 | StratumLabel::S11 => 1,
        }
    }

    /// Potential ICE status under treatment.
    pub fn d1(self) -> u8 {
        match self {
            StratumLabel::S00 | StratumLabel::S10 => 0,
            StratumLabel::S01 | StratumLabel::S11 => 1,
        }
    }

    /// Potential ICE status under arm `z`.
    pub fn ice_under(self, z: u8) -> u8 {
        if z == 1 {
            self.d1()
        } else {
            self.d0()
        }
    }

    pub fn from_pair(d0: u8, d1: u8) -> StratumLabel {
        match (d0, d1) {
            (0, 0) => StratumLabel::S00,
            (0, _) => StratumLabel::S01,
            (_, 0) => StratumLabel::S10,
            _ => StratumLabel::S11,
        }
    }

    /// Label under an arm swap: `(D(0), D(1))` becomes `(D(1), D(0))`.
    pub fn mirrored(self) -> StratumLabel {
        match self {
            StratumLabel::S01 => StratumLabel::S10,
            StratumLabel::S10 => StratumLabel::S01,
            other => other,
        }
    }
}

impl fmt::Display for StratumLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StratumLabel::S00 => "00",
            StratumLabel::S01 => "01",
            StratumLabel::S10 => "10",
            StratumLabel::S11 => "11",
        };
        write!(f, "{s}")
    }
}

/// Direction of the monotonicity assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonotonicityDirection {
    /// `D(1) >= D(0)`: the treated arm is at least as likely to experience the
    /// ICE. Rules out stratum `10`.
    TreatedExcess,
    /// `D(0) >= D(1)`: the control arm is at least as likely to experience the
    /// ICE. Rules out stratum `01`.
    ControlExcess,
}

impl MonotonicityDirection {
    /// The stratum eliminated by this direction.
    pub fn excluded_stratum(self) -> StratumLabel {
        match self {
            MonotonicityDirection::TreatedExcess => StratumLabel::S10,
            MonotonicityDirection::ControlExcess => StratumLabel::S01,
        }
    }

    /// The stratum whose ICE status switches between arms and survives the
    /// exclusion (the "switchable" stratum).
    pub fn switchable_stratum(self) -> StratumLabel {
        match self {
            MonotonicityDirection::TreatedExcess => StratumLabel::S01,
            MonotonicityDirection::ControlExcess => StratumLabel::S10,
        }
    }
}

/// Toggles and sensitivity parameters governing which structural assumptions
/// an analysis imposes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConfig {
    /// `Some(direction)` imposes monotonicity in that direction; `None` keeps
    /// all four strata.
    pub monotonicity: Option<MonotonicityDirection>,
    /// Ties the stratum-11 outcome parameters across arms (mixture engine).
    pub exclusion_restriction: bool,
    /// Monotonicity sensitivity parameter; 0 = monotonicity holds.
    pub zeta: f64,
    /// Principal-ignorability sensitivity log-ratios; 0 = PI holds.
    pub xi0: f64,
    pub xi1: f64,
}

impl Default for AssumptionConfig {
    fn default() -> Self {
        AssumptionConfig {
            monotonicity: None,
            exclusion_restriction: false,
            zeta: 0.0,
            xi0: 0.0,
            xi1: 0.0,
        }
    }
}

impl AssumptionConfig {
    /// Strata retained under this configuration, in canonical order.
    pub fn strata(&self) -> Vec<StratumLabel> {
        let excluded = self.monotonicity.map(|m| m.excluded_stratum());
        StratumLabel::ALL
            .into_iter()
            .filter(|u| Some(*u) != excluded)
            .collect()
    }

    /// Strata compatible with an observed `(z, d)` cell under this
    /// configuration: those with `ice_under(z) == d` and not excluded.
    pub fn admissible(&self, z: u8, d: u8) -> Vec<StratumLabel> {
        self.strata()
            .into_iter()
            .filter(|u| u.ice_under(z) == d)
            .collect()
    }
}

/// Strictly increasing, nonnegative analysis times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<TimeGrid> {
        if times.is_empty() {
            return Err(Error::Invalid("time grid must be nonempty".into()));
        }
        if times[0] < 0.0 || !times[0].is_finite() {
            return Err(Error::Invalid("grid times must be finite and >= 0".into()));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::Invalid("grid times must be strictly increasing".into()));
            }
        }
        if *times.last().unwrap() <= 0.0 {
            return Err(Error::Invalid("grid maximum must be positive".into()));
        }
        Ok(TimeGrid { times })
    }

    /// `m` equispaced points `0, t_max/(m-1), ..., t_max`.
    pub fn equispaced(t_max: f64, m: usize) -> Result<TimeGrid> {
        if !(t_max > 0.0) || m < 2 {
            return Err(Error::Invalid("equispaced grid needs t_max > 0 and m >= 2".into()));
        }
        let step = t_max / (m - 1) as f64;
        let mut times: Vec<f64> = (0..m).map(|i| i as f64 * step).collect();
        times[m - 1] = t_max;
        TimeGrid::new(times)
    }

    /// Default analysis grid: 100 equispaced points on `[0, q]` where `q` is
    /// the 0.99 quantile of the observed times.
    pub fn default_for(dataset: &Dataset) -> Result<TimeGrid> {
        let mut times: Vec<f64> = dataset.records.iter().map(|r| r.time).collect();
        times.sort_by(f64::total_cmp);
        let idx = ((times.len() as f64 - 1.0) * 0.99).round() as usize;
        TimeGrid::equispaced(times[idx.min(times.len() - 1)], 100)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// An immutable collection of trial records with named covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<TrialRecord>,
    pub covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(records: Vec<TrialRecord>, covariate_names: Vec<String>) -> Result<Dataset> {
        let p = covariate_names.len();
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != p {
                return Err(Error::Invalid(format!(
                    "record {i} has {} covariates, expected {p}",
                    r.covariates.len()
                )));
            }
            if r.arm > 1 || r.ice > 1 || r.event > 1 {
                return Err(Error::Invalid(format!("record {i}: arm/ice/event must be 0 or 1")));
            }
            if !(r.time >= 0.0) || !r.time.is_finite() {
                return Err(Error::Invalid(format!("record {i}: time must be finite and >= 0")));
            }
            if r.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("record {i}: non-finite covariate")));
            }
        }
        Ok(Dataset {
            records,
            covariate_names,
        })
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Covariate dimension (without intercept).
    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    /// Counts per `(z, d)` cell, indexed `[z][d]`.
    pub fn cell_counts(&self) -> [[usize; 2]; 2] {
        let mut counts = [[0usize; 2]; 2];
        for r in &self.records {
            counts[r.arm as usize][r.ice as usize] += 1;
        }
        counts
    }

    /// Indices of the records in cell `(z, d)`.
    pub fn cell_indices(&self, z: u8, d: u8) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.arm == z && r.ice == d)
            .map(|(i, _)| i)
            .collect()
    }

    /// A copy with the arm labels flipped (`z -> 1 - z`). Estimators written
    /// for one monotonicity direction run on the swapped data to serve the
    /// other direction.
    pub fn with_swapped_arms(&self) -> Dataset {
        let records = self
            .records
            .iter()
            .map(|r| TrialRecord {
                arm: 1 - r.arm,
                ..r.clone()
            })
            .collect();
        Dataset {
            records,
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// JSON summary of the dataset: size, cell counts, covariate names.
    pub fn summary_json(&self) -> serde_json::Value {
        let counts = self.cell_counts();
        let events: usize = self.records.iter().map(|r| r.event as usize).sum();
        serde_json::json!({
            "n": self.n(),
            "p": self.p(),
            "covariates": self.covariate_names,
            "cell_counts": {
                "z0_d0": counts[0][0],
                "z0_d1": counts[0][1],
                "z1_d0": counts[1][0],
                "z1_d1": counts[1][1],
            },
            "events": events,
            "censored": self.n() - events,
        })
    }
}

/// Binding from dataset roles to CSV column names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub arm: String,
    pub ice: String,
    pub time: String,
    pub event: String,
    pub covariates: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            arm: "arm".into(),
            ice: "ice".into(),
            time: "time".into(),
            event: "event".into(),
            covariates: vec![
                "age_std".into(),
                "male".into(),
                "nephrectomy".into(),
                "risk3plus".into(),
            ],
        }
    }
}

fn parse_binary(field: &str, row: usize, name: &str) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Parse {
            row,
            message: format!("column `{name}` must be 0 or 1, got `{other}`"),
        }),
    }
}

fn parse_nonneg(field: &str, row: usize, name: &str) -> Result<f64> {
    let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
        row,
        message: format!("column `{name}` must be a real number, got `{field}`"),
    })?;
    if !value.is_finite() || value < 0.0 {
        return Err(Error::Parse {
            row,
            message: format!("column `{name}` must be finite and >= 0, got `{field}`"),
        });
    }
    Ok(value)
}

fn parse_real(field: &str, row: usize, name: &str) -> Result<f64> {
    let trimmed = field.trim();
    if trimmed.is_empty() {
        return Err(Error::Parse {
            row,
            message: format!("column `{name}` is missing; records with missing covariates are rejected"),
        });
    }
    let value: f64 = trimmed.parse().map_err(|_| Error::Parse {
        row,
        message: format!("column `{name}` must be a real number, got `{field}`"),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("column `{name}` must be finite"),
        });
    }
    Ok(value)
}

/// Load a dataset from a headed UTF-8 CSV file. Rows keep file order;
/// covariates keep the order declared in the map. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn load_csv(path: impl AsRef<Path>, map: &ColumnMap) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in header")))
    };
    let arm_idx = find(&map.arm)?;
    let ice_idx = find(&map.ice)?;
    let time_idx = find(&map.time)?;
    let event_idx = find(&map.event)?;
    let cov_idx: Vec<usize> = map
        .covariates
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let rownum = i + 1;
        let get = |idx: usize| row.get(idx).unwrap_or("");
        let covariates = cov_idx
            .iter()
            .map(|&c| parse_real(get(c), rownum, &headers[c]))
            .collect::<Result<Vec<f64>>>()?;
        records.push(TrialRecord {
            arm: parse_binary(get(arm_idx), rownum, &map.arm)?,
            ice: parse_binary(get(ice_idx), rownum, &map.ice)?,
            time: parse_nonneg(get(time_idx), rownum, &map.time)?,
            event: parse_binary(get(event_idx), rownum, &map.event)?,
            covariates,
        });
    }
    Dataset::new(records, map.covariates.clone())
}

/// Write a dataset as CSV with the given column names.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>, map: &ColumnMap) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec![
        map.arm.clone(),
        map.ice.clone(),
        map.time.clone(),
        map.event.clone(),
    ];
    header.extend(map.covariates.iter().cloned());
    writer.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![
            r.arm.to_string(),
            r.ice.to_string(),
            format_f64(r.time),
            r.event.to_string(),
        ];
        row.extend(r.covariates.iter().map(|v| format_f64(*v)));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Round-trippable float formatting (shortest representation that parses back
/// to the same bits).
pub fn format_f64(v: f64) -> String {
    let mut buffer = ryu_style(v);
    if !buffer.contains('.') && !buffer.contains('e') && !buffer.contains("inf") && !buffer.contains("NaN") {
        buffer.push_str(".0");
    }
    buffer
}

fn ryu_style(v: f64) -> String {
    // `{:?}` on f64 produces the shortest round-trippable decimal.
    format!("{v:?}")
}

/// Policy for missing time-off-treatment values when dichotomizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Missing time off treatment counts as discontinuation within the cutoff.
    TreatAsEvent,
}

/// Dichotomize a continuous time-off-treatment into the binary ICE indicator:
/// `D = 1` iff time off treatment is shorter than `cutoff`. Missing values map
/// to `D = 1` under [`MissingPolicy::TreatAsEvent`].
pub fn dichotomize_ice(
    times_off: &[Option<f64>],
    cutoff: f64,
    policy: MissingPolicy,
) -> Result<Vec<u8>> {
    if !(cutoff > 0.0) {
        return Err(Error::Invalid("cutoff must be positive".into()));
    }
    times_off
        .iter()
        .enumerate()
        .map(|(i, t)| match t {
            None => match policy {
                MissingPolicy::TreatAsEvent => Ok(1),
            },
            Some(v) if *v < 0.0 => Err(Error::Invalid(format!(
                "time off treatment at index {i} is negative"
            ))),
            Some(v) => Ok(u8::from(*v < cutoff)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_csv_reads_records_in_order() {
        let file = write_temp(
            "arm,ice,time,event,age_std,male,nephrectomy,risk3plus\n\
             1,0,12.5,1,0.3,1,0,0\n\
             0,1,3.25,1,-1.2,0,1,0\n\
             1,1,8.0,0,0.0,1,0,1\n\
             0,0,20.0,0,2.1,0,0,0\n",
        );
        let d = load_csv(file.path(), &ColumnMap::default()).unwrap();
        assert_eq!(d.n(), 4);
        assert_eq!(d.p(), 4);
        assert_eq!(d.records[1].time, 3.25);
        assert_eq!(d.records[2].event, 0);
    }

    #[test]
    fn load_csv_names_bad_row() {
        let file = write_temp(
            "arm,ice,time,event,age_std,male,nephrectomy,risk3plus\n\
             1,0,12.5,1,0.3,1,0,0\n\
             0,1,3.25,1,-1.2,0,1,0\n\
             1,2,8.0,0,0.0,1,0,1\n",
        );
        let err = load_csv(file.path(), &ColumnMap::default()).unwrap_err();
        match err {
            Error::Parse { row, message } => {
                assert_eq!(row, 3);
                assert!(message.contains("ice"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_csv_rejects_missing_column() {
        let file = write_temp("arm,ice,time,age_std,male,nephrectomy,risk3plus\n1,0,1.0,0,0,0,0\n");
        let err = load_csv(file.path(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn load_csv_rejects_negative_time() {
        let file = write_temp(
            "arm,ice,time,event,age_std,male,nephrectomy,risk3plus\n1,0,-2.0,1,0,0,0,0\n",
        );
        let err = load_csv(file.path(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }));
    }

    #[test]
    fn load_csv_rejects_missing_covariate() {
        let file = write_temp(
            "arm,ice,time,event,age_std,male,nephrectomy,risk3plus\n1,0,2.0,1,,0,0,0\n",
        );
        let err = load_csv(file.path(), &ColumnMap::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }));
    }

    #[test]
    fn cell_counts_partition_the_dataset() {
        let file = write_temp(
            "arm,ice,time,event,age_std,male,nephrectomy,risk3plus\n\
             1,0,1.0,1,0,0,0,0\n\
             1,1,1.0,1,0,0,0,0\n\
             0,1,1.0,1,0,0,0,0\n\
             0,0,1.0,1,0,0,0,0\n\
             0,0,1.0,0,0,0,0,0\n",
        );
        let d = load_csv(file.path(), &ColumnMap::default()).unwrap();
        let c = d.cell_counts();
        assert_eq!(c[0][0] + c[0][1] + c[1][0] + c[1][1], d.n());
        assert_eq!(c[0][0], 2);
    }

    #[test]
    fn empty_dataset_has_zero_cells() {
        let d = Dataset::new(vec![], vec!["x".into()]).unwrap();
        assert_eq!(d.cell_counts(), [[0, 0], [0, 0]]);
    }

    #[test]
    fn dichotomize_matches_case_study_quartiles() {
        // quartile times 60.5, 111, 277.5 against a 90-day cutoff
        let d = dichotomize_ice(
            &[Some(60.5), Some(111.0), Some(277.5), None],
            90.0,
            MissingPolicy::TreatAsEvent,
        )
        .unwrap();
        assert_eq!(d, vec![1, 0, 0, 1]);
    }

    #[test]
    fn dichotomize_rejects_negative_time_off() {
        assert!(dichotomize_ice(&[Some(-1.0)], 90.0, MissingPolicy::TreatAsEvent).is_err());
    }

    #[test]
    fn strata_count_under_monotonicity() {
        let no_mono = AssumptionConfig::default();
        assert_eq!(no_mono.strata().len(), 4);
        let mono = AssumptionConfig {
            monotonicity: Some(MonotonicityDirection::TreatedExcess),
            ..Default::default()
        };
        let strata = mono.strata();
        assert_eq!(strata.len(), 3);
        assert!(!strata.contains(&StratumLabel::S10));
    }

    #[test]
    fn admissibility_matches_cell_composition() {
        let cfg = AssumptionConfig::default();
        // without monotonicity each cell holds exactly two strata
        assert_eq!(cfg.admissible(0, 0), vec![StratumLabel::S00, StratumLabel::S01]);
        assert_eq!(cfg.admissible(0, 1), vec![StratumLabel::S10, StratumLabel::S11]);
        assert_eq!(cfg.admissible(1, 0), vec![StratumLabel::S00, StratumLabel::S10]);
        assert_eq!(cfg.admissible(1, 1), vec![StratumLabel::S01, StratumLabel::S11]);

        let mono = AssumptionConfig {
            monotonicity: Some(MonotonicityDirection::TreatedExcess),
            ..Default::default()
        };
        assert_eq!(mono.admissible(0, 1), vec![StratumLabel::S11]);
        assert_eq!(mono.admissible(1, 0), vec![StratumLabel::S00]);
    }

    #[test]
    fn equispaced_grid_has_m_points() {
        let g = TimeGrid::equispaced(50.0, 100).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g.times()[0], 0.0);
        assert_eq!(g.t_max(), 50.0);
        for w in g.times().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn grid_rejects_non_increasing() {
        assert!(TimeGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![]).is_err());
        assert!(TimeGrid::new(vec![0.0]).is_err());
    }
}
