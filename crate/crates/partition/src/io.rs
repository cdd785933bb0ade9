//! Problem files: `# key = value` configuration lines followed by a CSV
//! table `model,rate_rps,static_mem_mb,dynamic_mem_mb`, optionally with
//! `current` (sub-cluster index) and `change_cost` columns.
//!
//! Configuration keys: `subclusters` (required), `r_max`, `s_max`, `w`,
//! `c_max`. Missing caps are unbounded; a missing `w` uses the default
//! weight.

use std::io::Write;
use std::path::Path;

use serde::Deserialize;

use crate::{CurrentAssignment, ModelLoad, PartitionError, PartitionProblem};

#[derive(Debug, Deserialize)]
struct Row {
    model: String,
    rate_rps: f64,
    static_mem_mb: f64,
    dynamic_mem_mb: f64,
    current: Option<usize>,
    change_cost: Option<f64>,
}

pub fn read_problem(path: &Path) -> Result<PartitionProblem, PartitionError> {
    let text = std::fs::read_to_string(path).map_err(|source| PartitionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_problem(&text)
}

fn parse_number(line: u64, key: &str, value: &str) -> Result<f64, PartitionError> {
    let v = value.trim();
    if v.eq_ignore_ascii_case("inf") {
        return Ok(f64::INFINITY);
    }
    v.parse().map_err(|_| PartitionError::Parse {
        line,
        message: format!("`{key}` expects a number, got `{v}`"),
    })
}

pub fn parse_problem(text: &str) -> Result<PartitionProblem, PartitionError> {
    let (mut subclusters, mut r_max, mut s_max, mut w, mut c_max) = (None, f64::INFINITY, f64::INFINITY, None, None);
    for (n, line) in text.lines().enumerate() {
        let line_no = n as u64 + 1;
        let Some(rest) = line.trim_start().strip_prefix('#') else {
            continue;
        };
        let Some((key, value)) = rest.split_once('=') else {
            continue;
        };
        let key = key.trim();
        match key {
            "subclusters" => {
                subclusters = Some(value.trim().parse::<usize>().map_err(|_| PartitionError::Parse {
                    line: line_no,
                    message: format!("`subclusters` expects a positive integer, got `{}`", value.trim()),
                })?)
            }
            "r_max" => r_max = parse_number(line_no, key, value)?,
            "s_max" => s_max = parse_number(line_no, key, value)?,
            "w" => w = Some(parse_number(line_no, key, value)?),
            "c_max" => c_max = Some(parse_number(line_no, key, value)?),
            other => {
                return Err(PartitionError::Parse {
                    line: line_no,
                    message: format!("unknown configuration key `{other}`"),
                })
            }
        }
    }
    let subclusters = subclusters.ok_or(PartitionError::Parse {
        line: 0,
        message: "missing `# subclusters = N` configuration line".into(),
    })?;

    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut models = Vec::new();
    let mut current = Vec::new();
    let mut costs = Vec::new();
    for record in reader.deserialize::<Row>() {
        let row = record.map_err(|e| PartitionError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        current.push(row.current);
        costs.push(row.change_cost.unwrap_or(1.0));
        models.push(ModelLoad {
            name: row.model,
            rate_rps: row.rate_rps,
            static_mem_mb: row.static_mem_mb,
            dynamic_mem_mb: row.dynamic_mem_mb,
        });
    }
    let mut p = PartitionProblem::new(models, subclusters);
    p.r_max = r_max;
    p.s_max = s_max;
    if let Some(w) = w {
        p.w = w;
    }
    let given = current.iter().filter(|c| c.is_some()).count();
    if given > 0 {
        if given != current.len() {
            return Err(PartitionError::Invalid(vec!["`current` must be given for every model or none".into()]));
        }
        p.current = Some(CurrentAssignment {
            assignment: current.into_iter().map(Option::unwrap).collect(),
            cost: costs.iter().map(|c| vec![*c; subclusters]).collect(),
            c_max: c_max.unwrap_or(f64::INFINITY),
        });
    } else if c_max.is_some() {
        return Err(PartitionError::Invalid(vec!["`c_max` needs a `current` column".into()]));
    }
    p.validate()?;
    Ok(p)
}

fn fmt_cap(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        v.to_string()
    }
}

/// Writes `p` in the format [`parse_problem`] reads. Change costs are
/// written per model, so they must not vary across sub-clusters.
pub fn write_problem<W: Write>(p: &PartitionProblem, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# subclusters = {}", p.subclusters)?;
    writeln!(out, "# r_max = {}", fmt_cap(p.r_max))?;
    writeln!(out, "# s_max = {}", fmt_cap(p.s_max))?;
    writeln!(out, "# w = {}", p.w)?;
    if let Some(c) = &p.current {
        writeln!(out, "# c_max = {}", fmt_cap(c.c_max))?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["model", "rate_rps", "static_mem_mb", "dynamic_mem_mb"];
    if p.current.is_some() {
        header.extend(["current", "change_cost"]);
    }
    w.write_record(&header)?;
    for (i, m) in p.models.iter().enumerate() {
        let mut row = vec![m.name.clone(), m.rate_rps.to_string(), m.static_mem_mb.to_string(), m.dynamic_mem_mb.to_string()];
        if let Some(c) = &p.current {
            row.push(c.assignment[i].to_string());
            row.push(c.cost[i].first().copied().unwrap_or(0.0).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()
}

/// `model,subcluster`
pub fn write_assignment<W: Write>(p: &PartitionProblem, assignment: &[usize], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "subcluster"])?;
    for (m, j) in p.models.iter().zip(assignment) {
        w.write_record([m.name.as_str(), &j.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{exponential_instance, InstanceShape};

    #[test]
    fn parses_config_and_rows() {
        let text = "# subclusters = 2\n# r_max = 100\n# w = 0.5\nmodel,rate_rps,static_mem_mb,dynamic_mem_mb\na,10,5,1\nb, 20 ,6,2\n";
        let p = parse_problem(text).unwrap();
        assert_eq!((p.subclusters, p.r_max, p.s_max, p.w), (2, 100.0, f64::INFINITY, 0.5));
        assert_eq!(p.models[1].rate_rps, 20.0);
        assert!(p.current.is_none());
    }

    #[test]
    fn current_column_builds_the_change_budget() {
        let text = "# subclusters = 2\n# c_max = 3\nmodel,rate_rps,static_mem_mb,dynamic_mem_mb,current,change_cost\na,1,1,0,0,2\nb,1,1,0,1,\n";
        let p = parse_problem(text).unwrap();
        let c = p.current.unwrap();
        assert_eq!(c.assignment, vec![0, 1]);
        assert_eq!(c.cost, vec![vec![2.0, 2.0], vec![1.0, 1.0]]);
        assert_eq!(c.c_max, 3.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "# subclusters = 2\nmodel,rate_rps,static_mem_mb,dynamic_mem_mb\na,1,1,0\nb,x,1,0\n";
        match parse_problem(text) {
            Err(PartitionError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_problem("model,rate_rps,static_mem_mb,dynamic_mem_mb\n"), Err(PartitionError::Parse { .. })));
        assert!(matches!(parse_problem("# subclusters = 2\n# colour = red\n"), Err(PartitionError::Parse { line: 2, .. })));
    }

    #[test]
    fn round_trip() {
        let p = exponential_instance(&InstanceShape::new(12, 3), 4);
        let mut buf = Vec::new();
        write_problem(&p, &mut buf).unwrap();
        let q = parse_problem(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(p, q);
    }
}
