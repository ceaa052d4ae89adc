//! Instance datasets and per-date proportion tables, with their CSV formats.
//!
//! Dataset file:
//!
//! ```text
//! D_in,K,count
//! date_label,true_class,v_1,...,v_D_in
//! ```
//!
//! `true_class` is 1-based, or `-1` when unknown. Proportion table file:
//! one `date_label,p_1,...,p_K` row per date, in schedule order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ordinal::ProportionVector;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Instance<T> {
    pub date: String,
    /// Hidden 0-based class; only metrics may look at it.
    pub class: Option<usize>,
    pub input: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub input_dim: usize,
    pub classes: usize,
    pub instances: Vec<Instance<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Date labels in order of first appearance.
    pub fn dates(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for inst in &self.instances {
            if !out.iter().any(|d| d == &inst.date) {
                out.push(inst.date.clone());
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},{},{}", self.input_dim, self.classes, self.instances.len())?;
        let mut line = String::new();
        for inst in &self.instances {
            use std::fmt::Write as _;
            line.clear();
            let class = inst.class.map_or(-1, |c| c as i64 + 1);
            let _ = write!(line, "{},{}", inst.date, class);
            for v in &inst.input {
                let _ = write!(line, ",{v}");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
        let head: Vec<&str> = header.split(',').map(str::trim).collect();
        if head.len() != 3 {
            return Err(Error::parse(origin, 1, "header must be `D_in,K,count`"));
        }
        let field = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::parse(origin, 1, format!("bad {what} `{s}`")))
        };
        let input_dim = field(head[0], "D_in")?;
        let classes = field(head[1], "K")?;
        let declared = field(head[2], "count")?;
        let mut instances = Vec::with_capacity(declared);
        for (i, line) in lines {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != input_dim + 2 {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("expected {} columns, found {}", input_dim + 2, cols.len()),
                ));
            }
            if cols[0].is_empty() {
                return Err(Error::parse(origin, lineno, "empty date label"));
            }
            let class_raw: i64 = cols[1]
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("bad class `{}`", cols[1])))?;
            let class = match class_raw {
                -1 => None,
                c if c >= 1 && (c as usize) <= classes => Some(c as usize - 1),
                c => {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!("class {c} outside 1..={classes} (or -1)"),
                    ))
                }
            };
            let input = cols[2..]
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(T::of)
                        .ok_or_else(|| Error::parse(origin, lineno, format!("bad value `{s}`")))
                })
                .collect::<Result<Vec<T>>>()?;
            instances.push(Instance {
                date: cols[0].to_string(),
                class,
                input,
            });
        }
        if instances.len() != declared {
            return Err(Error::parse(
                origin,
                1,
                format!("header declares {declared} rows, found {}", instances.len()),
            ));
        }
        Ok(Dataset {
            input_dim,
            classes,
            instances,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Class proportions for each date label, in schedule order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProportionTable<T> {
    rows: Vec<(String, ProportionVector<T>)>,
}

impl<T: Scalar> ProportionTable<T> {
    pub fn new(rows: Vec<(String, ProportionVector<T>)>) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("proportion table"))?;
        let k = first.1.classes();
        for (i, (date, p)) in rows.iter().enumerate() {
            if p.classes() != k {
                return Err(Error::LengthMismatch {
                    expected: k,
                    actual: p.classes(),
                });
            }
            if rows[..i].iter().any(|(d, _)| d == date) {
                return Err(Error::InvalidParameter(format!("duplicate date `{date}`")));
            }
        }
        Ok(ProportionTable { rows })
    }

    pub fn classes(&self) -> usize {
        self.rows[0].1.classes()
    }

    pub fn dates(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|(d, _)| d.as_str())
    }

    pub fn rows(&self) -> &[(String, ProportionVector<T>)] {
        &self.rows
    }

    pub fn get(&self, date: &str) -> Result<&ProportionVector<T>> {
        self.rows
            .iter()
            .find(|(d, _)| d == date)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::UnknownDate(date.to_string()))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (date, p) in &self.rows {
            write!(w, "{date}")?;
            for v in p.as_slice() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 3 {
                return Err(Error::parse(origin, lineno, "expected `date,p_1,...,p_K` with K >= 2"));
            }
            let p = cols[1..]
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map(T::of)
                        .map_err(|_| Error::parse(origin, lineno, format!("bad proportion `{s}`")))
                })
                .collect::<Result<Vec<T>>>()?;
            let p = ProportionVector::new(p).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
            rows.push((cols[0].to_string(), p));
        }
        Self::new(rows).map_err(|e| Error::parse(origin, 1, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_roundtrip() {
        let ds = Dataset {
            input_dim: 2,
            classes: 3,
            instances: vec![
                Instance {
                    date: "day0".into(),
                    class: Some(0),
                    input: vec![0.5, -1.25],
                },
                Instance {
                    date: "day3".into(),
                    class: None,
                    input: vec![1e-17, 3.0],
                },
            ],
        };
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "2,3,2\nday0,1,0.5,-1.25\nday3,-1,0.00000000000000001,3\n");
        assert_eq!(Dataset::<f64>::parse(&text, "mem").unwrap(), ds);
        assert_eq!(ds.dates(), vec!["day0", "day3"]);
    }

    #[test]
    fn malformed_row_names_line() {
        let text = "2,3,2\nday0,1,0.5,1\nday0,1,oops,1\n";
        match Dataset::<f64>::parse(text, "d.csv") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "d.csv");
            }
            other => panic!("{other:?}"),
        }
        assert!(Dataset::<f64>::parse("2,3,1\nday0,4,0,0\n", "d").is_err());
        assert!(Dataset::<f64>::parse("2,3,2\nday0,1,0,0\n", "d").is_err());
    }

    #[test]
    fn table_roundtrip_and_lookup() {
        let text = "day0,1,0,0\nday3,0.25,0.5,0.25\n";
        let t = ProportionTable::<f64>::parse(text, "p").unwrap();
        assert_eq!(t.classes(), 3);
        assert_eq!(t.get("day3").unwrap().as_slice(), &[0.25, 0.5, 0.25]);
        assert!(matches!(t.get("day9"), Err(Error::UnknownDate(_))));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
        assert!(ProportionTable::<f64>::parse("day0,0.5,0.6\n", "p").is_err());
        assert!(ProportionTable::<f64>::parse("day0,1,0\nday0,0,1\n", "p").is_err());
    }
}
