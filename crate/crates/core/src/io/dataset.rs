//! Long-format CSV dataset interchange.
//!
//! Columns: `id, time, y, z`, then covariate columns in header order. One
//! row per measurement occasion; empty `y`/`z` cells mark missing outcomes;
//! covariates must repeat identically on every row of an id.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mixture::Individual;
use crate::spline::Schedule;

/// Parsed header: covariate column names after the four fixed columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSchema {
    pub covariates: Vec<String>,
}

/// Reads a dataset file. See the module docs for the format.
pub fn ingest(path: &Path) -> Result<(Vec<Individual>, DatasetSchema)> {
    let text = std::fs::read_to_string(path)?;
    read_dataset(&text)
}

/// Parses dataset CSV text. Groups rows by id (rows of one id must be
/// contiguous), validates strictly increasing times and constant
/// covariates, and rejects ids with zero observed outcomes.
pub fn read_dataset(text: &str) -> Result<(Vec<Individual>, DatasetSchema)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::invalid("dataset file is empty"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < 4 || columns[0] != "id" || columns[1] != "time" || columns[2] != "y"
        || columns[3] != "z"
    {
        return Err(Error::invalid(
            "dataset header must start with: id,time,y,z",
        ));
    }
    let schema = DatasetSchema {
        covariates: columns[4..].iter().map(|c| c.to_string()).collect(),
    };
    let p = schema.covariates.len();

    struct Pending {
        id: String,
        first_line: usize,
        times: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        oy: Vec<bool>,
        oz: Vec<bool>,
        x: Vec<f64>,
    }

    let mut individuals = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    let mut pending: Option<Pending> = None;

    let flush = |p: Pending, out: &mut Vec<Individual>| -> Result<()> {
        if !p.oy.iter().chain(p.oz.iter()).any(|&o| o) {
            return Err(Error::Ingestion {
                id: p.id,
                line: p.first_line,
                message: "no observed outcomes for this id".into(),
            });
        }
        let schedule = Schedule::new(p.times, p.oy, p.oz).map_err(|e| Error::Ingestion {
            id: p.id.clone(),
            line: p.first_line,
            message: e.to_string(),
        })?;
        out.push(
            Individual::new(p.id.clone(), schedule, p.y, p.z, p.x).map_err(|e| {
                Error::Ingestion {
                    id: p.id,
                    line: p.first_line,
                    message: e.to_string(),
                }
            })?,
        );
        Ok(())
    };

    for (line_index, line) in lines {
        let line_no = line_index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 + p {
            return Err(Error::Ingestion {
                id: fields.first().unwrap_or(&"?").to_string(),
                line: line_no,
                message: format!("expected {} fields, found {}", 4 + p, fields.len()),
            });
        }
        let id = fields[0].to_string();
        let parse_num = |field: &str, name: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| Error::Ingestion {
                id: id.clone(),
                line: line_no,
                message: format!("cannot parse {name} value '{field}'"),
            })
        };
        let time = parse_num(fields[1], "time")?;
        let (y, oy) = if fields[2].is_empty() {
            (f64::NAN, false)
        } else {
            (parse_num(fields[2], "y")?, true)
        };
        let (z, oz) = if fields[3].is_empty() {
            (f64::NAN, false)
        } else {
            (parse_num(fields[3], "z")?, true)
        };
        if !oy && !oz {
            return Err(Error::Ingestion {
                id,
                line: line_no,
                message: "row has neither y nor z observed".into(),
            });
        }
        let x: Vec<f64> = fields[4..]
            .iter()
            .enumerate()
            .map(|(i, f)| parse_num(f, &schema.covariates[i]))
            .collect::<Result<_>>()?;

        match pending.as_mut() {
            Some(block) if block.id == id => {
                if time <= *block.times.last().unwrap() {
                    return Err(Error::Ingestion {
                        id,
                        line: line_no,
                        message: format!(
                            "times must be strictly increasing within an id (got {time} after {})",
                            block.times.last().unwrap()
                        ),
                    });
                }
                if block.x != x {
                    return Err(Error::Ingestion {
                        id,
                        line: line_no,
                        message: "covariates differ across rows of one id".into(),
                    });
                }
                block.times.push(time);
                block.y.push(y);
                block.z.push(z);
                block.oy.push(oy);
                block.oz.push(oz);
            }
            _ => {
                if let Some(done) = pending.take() {
                    flush(done, &mut individuals)?;
                }
                if !seen_ids.insert(id.clone()) {
                    return Err(Error::Ingestion {
                        id,
                        line: line_no,
                        message: "rows of one id must be contiguous".into(),
                    });
                }
                pending = Some(Pending {
                    id,
                    first_line: line_no,
                    times: vec![time],
                    y: vec![y],
                    z: vec![z],
                    oy: vec![oy],
                    oz: vec![oz],
                    x,
                });
            }
        }
    }
    if let Some(done) = pending.take() {
        flush(done, &mut individuals)?;
    }
    if individuals.is_empty() {
        return Err(Error::invalid("dataset contains no individuals"));
    }
    Ok((individuals, schema))
}

/// Serializes individuals back to the interchange format; the exact inverse
/// of [`read_dataset`] for data it produced.
pub fn write_dataset(individuals: &[Individual], covariates: &[String]) -> String {
    let mut out = String::from("id,time,y,z");
    for c in covariates {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for ind in individuals {
        let oy = ind.schedule.observed(crate::spline::Outcome::Y);
        let oz = ind.schedule.observed(crate::spline::Outcome::Z);
        for (j, &t) in ind.schedule.times().iter().enumerate() {
            let _ = write!(out, "{},{}", ind.id, fmt_f64(t));
            if oy[j] {
                let _ = write!(out, ",{}", fmt_f64(ind.y[j]));
            } else {
                out.push(',');
            }
            if oz[j] {
                let _ = write!(out, ",{}", fmt_f64(ind.z[j]));
            } else {
                out.push(',');
            }
            for v in &ind.x {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            out.push('\n');
        }
    }
    out
}

/// Shortest representation that parses back to the same f64.
fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if s.parse::<f64>() != Ok(v) {
        s = format!("{v:?}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_complete_individuals_parse() {
        let text = "id,time,y,z,w\n\
                    a,0,1.5,2.5,0.1\n\
                    a,1,1.6,2.6,0.1\n\
                    a,2,1.7,2.7,0.1\n\
                    b,0,3.5,4.5,-0.2\n\
                    b,1,3.6,4.6,-0.2\n\
                    b,2,3.7,4.7,-0.2\n";
        let (individuals, schema) = read_dataset(text).unwrap();
        assert_eq!(individuals.len(), 2);
        assert_eq!(schema.covariates, vec!["w"]);
        assert_eq!(individuals[0].schedule.len(), 3);
        assert_eq!(individuals[1].x, vec![-0.2]);
    }

    #[test]
    fn empty_z_cell_sets_the_mask() {
        let text = "id,time,y,z\na,0,1.0,\na,1,2.0,3.0\n";
        let (individuals, _) = read_dataset(text).unwrap();
        let oz = individuals[0].schedule.observed(crate::spline::Outcome::Z);
        assert_eq!(oz, &[false, true]);
    }

    #[test]
    fn non_monotone_times_name_the_id_and_line() {
        let text = "id,time,y,z\na,1,1.0,1.0\na,1,2.0,2.0\n";
        match read_dataset(text) {
            Err(Error::Ingestion { id, line, .. }) => {
                assert_eq!(id, "a");
                assert_eq!(line, 3);
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_covariates_are_rejected() {
        let text = "id,time,y,z,w\na,0,1,1,5\na,1,2,2,6\n";
        assert!(matches!(read_dataset(text), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn fully_empty_row_is_rejected() {
        let text = "id,time,y,z\na,0,,\n";
        assert!(matches!(read_dataset(text), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn roundtrip_preserves_structure() {
        let text = "id,time,y,z,w1,w2\n\
                    a,0.5,1.25,,0.1,2\n\
                    a,1.5,,3.5,0.1,2\n\
                    b,0,7,8,-1,0\n";
        let (individuals, schema) = read_dataset(text).unwrap();
        let written = write_dataset(&individuals, &schema.covariates);
        let (again, schema2) = read_dataset(&written).unwrap();
        assert_eq!(schema, schema2);
        assert_eq!(individuals.len(), again.len());
        for (a, b) in individuals.iter().zip(&again) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.schedule, b.schedule);
            assert_eq!(a.x, b.x);
            for (ya, yb) in a.y.iter().zip(&b.y) {
                assert!(ya == yb || (ya.is_nan() && yb.is_nan()));
            }
        }
    }
}
