use std::collections::HashMap;
use std::path::Path;

use spc_aux_core::Subgroup;

use crate::CliError;

/// Parsed monitoring input, in file order.
#[derive(Debug, Clone, PartialEq)]
pub enum MonitorInput {
    /// Precomputed statistics, one per subgroup.
    Statistics { labels: Vec<String>, values: Vec<f64> },
    /// Raw `(y, x)` observations grouped by subgroup.
    Pairs { labels: Vec<String>, groups: Vec<Subgroup> },
}

impl MonitorInput {
    pub fn labels(&self) -> &[String] {
        match self {
            Self::Statistics { labels, .. } | Self::Pairs { labels, .. } => labels,
        }
    }
}

fn parse(field: &str, column: &str, row: usize) -> Result<f64, CliError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| CliError::Validation(format!("row {row}: {column} = {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::Validation(format!("row {row}: {column} is not finite")));
    }
    Ok(v)
}

/// Reads `subgroup,statistic`, `subgroup,y,x` or `subgroup,replicate,y,x`.
/// With `column`, that column of a wide file is read as the statistic.
pub fn read_monitor_input(path: &Path, column: Option<&str>) -> Result<MonitorInput, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let subgroup = find("subgroup").ok_or_else(|| CliError::Validation("input has no `subgroup` column".into()))?;

    let stat_col = match column {
        Some(c) => Some(find(c).ok_or_else(|| CliError::Validation(format!("input has no `{c}` column")))?),
        None => find("statistic"),
    };
    if let Some(col) = stat_col {
        let name = &headers[col];
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            labels.push(rec[subgroup].trim().to_string());
            values.push(parse(&rec[col], name, i + 2)?);
        }
        if values.is_empty() {
            return Err(CliError::Validation("input has no rows".into()));
        }
        return Ok(MonitorInput::Statistics { labels, values });
    }

    let (Some(y), Some(x)) = (find("y"), find("x")) else {
        return Err(CliError::Validation("input needs `statistic` or `y` and `x` columns".into()));
    };
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut pairs: Vec<Vec<(f64, f64)>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let label = rec[subgroup].trim().to_string();
        let slot = *index.entry(label.clone()).or_insert_with(|| {
            labels.push(label);
            pairs.push(Vec::new());
            pairs.len() - 1
        });
        pairs[slot].push((parse(&rec[y], "y", i + 2)?, parse(&rec[x], "x", i + 2)?));
    }
    let Some(first) = pairs.first() else {
        return Err(CliError::Validation("input has no rows".into()));
    };
    let n = first.len();
    if let Some((k, g)) = pairs.iter().enumerate().find(|(_, g)| g.len() != n) {
        return Err(CliError::Ragged(format!(
            "subgroup {} has {} observations, subgroup {} has {n}",
            labels[k],
            g.len(),
            labels[0]
        )));
    }
    let groups = pairs
        .into_iter()
        .map(|p| Subgroup::new(p).map_err(|e| CliError::Validation(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MonitorInput::Pairs { labels, groups })
}
