use std::io::{Read, Write};
use std::path::Path;

use super::DataError;

/// Role of a dataset column, derived from its canonical name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ColumnRole {
    Baseline(usize),
    Treatment(usize),
    Mediator(usize, usize),
    Outcome,
}

impl ColumnRole {
    /// Parse a canonical column name. `W` is handled separately by callers.
    pub fn parse(name: &str) -> Option<ColumnRole> {
        if name == "Y" {
            return Some(ColumnRole::Outcome);
        }
        if let Some(rest) = name.strip_prefix("L0_") {
            return parse_index(rest)
                .filter(|&j| j >= 1)
                .map(ColumnRole::Baseline);
        }
        if let Some(rest) = name.strip_prefix('A') {
            return parse_index(rest).map(ColumnRole::Treatment);
        }
        if let Some(rest) = name.strip_prefix('M') {
            return match rest.split_once('_') {
                Some((t, j)) => match (parse_index(t), parse_index(j)) {
                    (Some(t), Some(j)) if j >= 1 => Some(ColumnRole::Mediator(t, j)),
                    _ => None,
                },
                None => parse_index(rest).map(|t| ColumnRole::Mediator(t, 0)),
            };
        }
        None
    }

    fn sort_key(self) -> (usize, usize, usize) {
        match self {
            ColumnRole::Baseline(j) => (0, j, 0),
            ColumnRole::Treatment(t) => (1 + 2 * t, 0, 0),
            ColumnRole::Mediator(t, j) => (2 + 2 * t, j, 0),
            ColumnRole::Outcome => (usize::MAX, 0, 0),
        }
    }
}

fn parse_index(s: &str) -> Option<usize> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0'))
    {
        return None;
    }
    s.parse().ok()
}

/// Rectangular longitudinal observations `(L0, A0, M0, ..., AT, MT, Y)` with
/// optional nonnegative row weights.
///
/// Columns are stored in canonical order regardless of input order.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset {
    names: Vec<String>,
    roles: Vec<ColumnRole>,
    columns: Vec<Vec<f64>>,
    weights: Option<Vec<f64>>,
    horizon: usize,
    baseline: Vec<usize>,
    treatment: Vec<usize>,
    mediators: Vec<Vec<usize>>,
    outcome: usize,
    histories: Vec<u32>,
    n_rows: usize,
}

impl LongitudinalDataset {
    /// Build a dataset from named columns. Names must be canonical
    /// (`L0_j`, `At`, `Mt` or `Mt_j`, `Y`).
    pub fn from_columns(
        named: Vec<(String, Vec<f64>)>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self, DataError> {
        let mut tagged = Vec::with_capacity(named.len());
        for (name, col) in named {
            let role = ColumnRole::parse(&name)
                .ok_or_else(|| DataError::UnknownColumn(name.clone()))?;
            tagged.push((role, name, col));
        }
        tagged.sort_by_key(|(role, _, _)| role.sort_key());
        for pair in tagged.windows(2) {
            if pair[0].0 == pair[1].0 || pair[0].0.sort_key() == pair[1].0.sort_key() {
                return Err(DataError::DuplicateColumn(pair[1].1.clone()));
            }
        }

        let n_rows = tagged.first().map(|(_, _, c)| c.len()).unwrap_or(0);
        if n_rows == 0 {
            return Err(DataError::Empty);
        }
        for (_, name, col) in &tagged {
            if col.len() != n_rows {
                return Err(DataError::RaggedColumn {
                    column: name.clone(),
                    expected: n_rows,
                    found: col.len(),
                });
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { column: name.clone(), row });
            }
        }

        let horizon = tagged
            .iter()
            .filter_map(|(r, _, _)| match r {
                ColumnRole::Treatment(t) => Some(*t),
                _ => None,
            })
            .max()
            .ok_or_else(|| DataError::MissingColumn("A0".into()))?;
        if horizon > 30 {
            return Err(DataError::Layout(format!("horizon {horizon} too large")));
        }

        let mut baseline = Vec::new();
        let mut treatment = vec![usize::MAX; horizon + 1];
        let mut mediators = vec![Vec::new(); horizon + 1];
        let mut outcome = None;
        for (idx, (role, name, _)) in tagged.iter().enumerate() {
            match *role {
                ColumnRole::Baseline(_) => baseline.push(idx),
                ColumnRole::Treatment(t) => treatment[t] = idx,
                ColumnRole::Mediator(t, _) => {
                    if t > horizon {
                        return Err(DataError::Layout(format!(
                            "mediator {name} beyond last treatment A{horizon}"
                        )));
                    }
                    mediators[t].push(idx);
                }
                ColumnRole::Outcome => outcome = Some(idx),
            }
        }
        for (t, &a) in treatment.iter().enumerate() {
            if a == usize::MAX {
                return Err(DataError::MissingColumn(format!("A{t}")));
            }
            if mediators[t].is_empty() {
                return Err(DataError::MissingColumn(format!("M{t}")));
            }
            let bare = mediators[t]
                .iter()
                .any(|&i| matches!(tagged[i].0, ColumnRole::Mediator(_, 0)));
            if bare && mediators[t].len() > 1 {
                return Err(DataError::Layout(format!(
                    "M{t} mixes bare and indexed mediator columns"
                )));
            }
        }
        let outcome = outcome.ok_or_else(|| DataError::MissingColumn("Y".into()))?;

        for &a in &treatment {
            let (_, name, col) = &tagged[a];
            if let Some(row) = col.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(DataError::NonBinaryTreatment { column: name.clone(), row });
            }
        }
        if let Some(w) = &weights {
            if w.len() != n_rows {
                return Err(DataError::RaggedColumn {
                    column: "W".into(),
                    expected: n_rows,
                    found: w.len(),
                });
            }
            if let Some(row) = w.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(DataError::InvalidWeight { row });
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(DataError::ZeroWeights);
            }
        }

        let histories = (0..n_rows)
            .map(|i| {
                treatment
                    .iter()
                    .enumerate()
                    .fold(0u32, |acc, (t, &c)| acc | ((tagged[c].2[i] as u32) << t))
            })
            .collect();

        let mut names = Vec::with_capacity(tagged.len());
        let mut roles = Vec::with_capacity(tagged.len());
        let mut columns = Vec::with_capacity(tagged.len());
        for (role, name, col) in tagged {
            names.push(name);
            roles.push(role);
            columns.push(col);
        }
        Ok(Self {
            names,
            roles,
            columns,
            weights,
            horizon,
            baseline,
            treatment,
            mediators,
            outcome,
            histories,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Last time index `T`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    pub fn column(&self, idx: usize) -> &[f64] {
        &self.columns[idx]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.column_index(name).map(|i| self.column(i))
    }

    pub fn baseline_indices(&self) -> &[usize] {
        &self.baseline
    }

    pub fn treatment_index(&self, t: usize) -> usize {
        self.treatment[t]
    }

    pub fn mediator_indices(&self, t: usize) -> &[usize] {
        &self.mediators[t]
    }

    pub fn outcome_index(&self) -> usize {
        self.outcome
    }

    pub fn treatment(&self, t: usize) -> &[f64] {
        &self.columns[self.treatment[t]]
    }

    pub fn outcome(&self) -> &[f64] {
        &self.columns[self.outcome]
    }

    /// Single binary mediator at time `t`, if that is the layout.
    pub fn binary_mediator(&self, t: usize) -> Option<&[f64]> {
        match self.mediators[t].as_slice() {
            [idx] => {
                let col = &self.columns[*idx];
                col.iter().all(|&v| v == 0.0 || v == 1.0).then_some(col.as_slice())
            }
            _ => None,
        }
    }

    /// True when every time point has exactly one 0/1 mediator column.
    pub fn has_binary_mediators(&self) -> bool {
        (0..=self.horizon).all(|t| self.binary_mediator(t).is_some())
    }

    /// Explicit row weights, if any were supplied.
    pub fn explicit_weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Row weights, materialised (all ones when none were supplied).
    pub fn weights(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0; self.n_rows],
        }
    }

    /// Observed treatment history of `row` as a bitmask (bit `t` = `A_t`).
    pub fn history_mask(&self, row: usize) -> u32 {
        self.histories[row]
    }

    /// Observed history truncated to `A_0..A_t`.
    pub fn history_mask_upto(&self, row: usize, t: usize) -> u32 {
        self.histories[row] & low_bits(t + 1)
    }

    /// Same columns with new weights.
    pub fn with_weights(&self, weights: Option<Vec<f64>>) -> Result<Self, DataError> {
        let named = self
            .names
            .iter()
            .cloned()
            .zip(self.columns.iter().cloned())
            .collect();
        Self::from_columns(named, weights)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| DataError::Csv { line: 1, message: e.to_string() })?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let weight_col = header.iter().position(|h| h == "W");
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| DataError::Csv { line, message: e.to_string() })?;
            if record.len() != header.len() {
                return Err(DataError::Csv {
                    line,
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| DataError::Csv {
                    line,
                    message: format!("column {}: cannot parse {:?} as a number", header[j], field),
                })?;
                cols[j].push(v);
            }
        }
        let mut weights = None;
        let mut named = Vec::with_capacity(header.len());
        for (j, (name, col)) in header.into_iter().zip(cols).enumerate() {
            if Some(j) == weight_col {
                weights = Some(col);
            } else {
                named.push((name, col));
            }
        }
        Self::from_columns(named, weights)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path).map_err(|e| DataError::Io(e.to_string()))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    /// Write canonical CSV. Numbers use Rust's shortest round-trip formatting,
    /// so a write/read cycle is lossless.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| DataError::Io(e.to_string());
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        if self.weights.is_some() {
            header.push("W");
        }
        wtr.write_record(&header).map_err(io)?;
        let mut fields = Vec::with_capacity(header.len());
        for i in 0..self.n_rows {
            fields.clear();
            fields.extend(self.columns.iter().map(|c| format_number(c[i])));
            if let Some(w) = &self.weights {
                fields.push(format_number(w[i]));
            }
            wtr.write_record(&fields).map_err(io)?;
        }
        wtr.flush().map_err(|e| DataError::Io(e.to_string()))
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<(), DataError> {
        let file = std::fs::File::create(path).map_err(|e| DataError::Io(e.to_string()))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub(crate) fn low_bits(k: usize) -> u32 {
    if k >= 32 {
        u32::MAX
    } else {
        (1u32 << k) - 1
    }
}

pub(crate) fn format_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// A static treatment regime `(a_0, ..., a_T)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegimeSpec(Vec<u8>);

impl RegimeSpec {
    pub fn new(values: Vec<u8>) -> Result<Self, DataError> {
        if values.is_empty() {
            return Err(DataError::InvalidRegime("empty regime".into()));
        }
        if values.len() > 31 {
            return Err(DataError::InvalidRegime("regime longer than 31".into()));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(DataError::InvalidRegime(format!("entry {v} is not 0 or 1")));
        }
        Ok(Self(values))
    }

    /// The regime that sets every treatment to `a`.
    pub fn constant(a: u8, horizon: usize) -> Self {
        Self(vec![a.min(1); horizon + 1])
    }

    /// Parse `"1,1"`, `"1 1"` or `"11"`.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let text = text.trim();
        let parts: Vec<&str> = if text.contains(',') || text.contains(' ') {
            text.split([',', ' ']).filter(|s| !s.is_empty()).collect()
        } else {
            text.split("").filter(|s| !s.is_empty()).collect()
        };
        let values = parts
            .iter()
            .map(|p| match p.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(DataError::InvalidRegime(format!("cannot parse {other:?}"))),
            })
            .collect::<Result<Vec<u8>, _>>()?;
        Self::new(values)
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.0.len() - 1
    }

    pub fn get(&self, t: usize) -> u8 {
        self.0[t]
    }

    /// Regime as a bitmask (bit `t` = `a_t`).
    pub fn mask(&self) -> u32 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (t, &a)| acc | ((a as u32) << t))
    }

    pub fn mask_upto(&self, t: usize) -> u32 {
        self.mask() & low_bits(t + 1)
    }

    /// Compact label such as `"11"`.
    pub fn label(&self) -> String {
        self.0.iter().map(|a| if *a == 1 { '1' } else { '0' }).collect()
    }

    pub fn check_horizon(&self, horizon: usize) -> Result<(), DataError> {
        if self.horizon() != horizon {
            return Err(DataError::RegimeLength {
                expected: horizon + 1,
                found: self.len(),
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for RegimeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|a| a.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}
