//! Ramsey curves and their CSV form `(t_us, signal[, stderr])`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    MonteCarlo,
    External,
}

/// Sampled `S(t)`.
///
/// Monte Carlo curves always carry a standard error, analytic curves never
/// do, and external data may.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RamseyCurve {
    pub times: Vec<f64>,
    pub signal: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<Vec<f64>>,
    pub provenance: Provenance,
}

impl RamseyCurve {
    pub fn new(
        times: Vec<f64>,
        signal: Vec<f64>,
        stderr: Option<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if times.len() != signal.len() {
            return Err(invalid("signal", "length differs from times"));
        }
        if let Some(se) = &stderr {
            if se.len() != times.len() {
                return Err(invalid("stderr", "length differs from times"));
            }
            if se.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(invalid("stderr", "must be finite and >= 0"));
            }
        }
        match (provenance, stderr.is_some()) {
            (Provenance::MonteCarlo, false) => {
                return Err(invalid("stderr", "required for Monte Carlo curves"))
            }
            (Provenance::Analytic, true) => {
                return Err(invalid("stderr", "not allowed on analytic curves"))
            }
            _ => {}
        }
        if times.iter().chain(&signal).any(|x| !x.is_finite()) {
            return Err(invalid("signal", "times and signal must be finite"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("times", "must be strictly increasing"));
        }
        Ok(RamseyCurve {
            times,
            signal,
            stderr,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Every `stride`-th point starting at `offset`.
    pub fn subsample(&self, offset: usize, stride: usize) -> RamseyCurve {
        let stride = stride.max(1);
        let pick = |v: &Vec<f64>| v.iter().skip(offset).step_by(stride).copied().collect::<Vec<_>>();
        RamseyCurve {
            times: pick(&self.times),
            signal: pick(&self.signal),
            stderr: self.stderr.as_ref().map(pick),
            provenance: self.provenance,
        }
    }

    /// Divides signal (and stderr) by the curve maximum, as done for
    /// readout-normalized measurements. The result is marked external.
    pub fn normalized_to_max(&self) -> Result<RamseyCurve> {
        let m = self.signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(m > 0.0) {
            return Err(invalid("signal", "maximum must be positive to normalize"));
        }
        RamseyCurve::new(
            self.times.clone(),
            self.signal.iter().map(|s| s / m).collect(),
            self.stderr.as_ref().map(|se| se.iter().map(|s| s / m).collect()),
            Provenance::External,
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        match &self.stderr {
            Some(se) => {
                writeln!(w, "t_us,signal,stderr")?;
                for i in 0..self.len() {
                    writeln!(w, "{},{},{}", self.times[i], self.signal[i], se[i])?;
                }
            }
            None => {
                writeln!(w, "t_us,signal")?;
                for i in 0..self.len() {
                    writeln!(w, "{},{}", self.times[i], self.signal[i])?;
                }
            }
        }
        Ok(())
    }

    /// Reads external data. A first line that does not parse as numbers is
    /// treated as a header; any other malformed row is an error naming its
    /// line.
    pub fn read_csv<R: Read>(r: R) -> Result<RamseyCurve> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(r);
        let mut times = Vec::new();
        let mut signal = Vec::new();
        let mut stderr: Vec<f64> = Vec::new();
        let mut width: Option<usize> = None;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                reason: e.to_string(),
            })?;
            let line = rec.position().map_or(i + 1, |p| p.line() as usize);
            let parsed: std::result::Result<Vec<f64>, _> =
                rec.iter().map(|f| f.parse::<f64>()).collect();
            let vals = match parsed {
                Ok(v) => v,
                Err(_) if i == 0 => continue,
                Err(e) => {
                    return Err(Error::Parse {
                        line,
                        reason: format!("not a number ({e})"),
                    })
                }
            };
            if !(vals.len() == 2 || vals.len() == 3) {
                return Err(Error::Parse {
                    line,
                    reason: format!("expected 2 or 3 columns, found {}", vals.len()),
                });
            }
            if *width.get_or_insert(vals.len()) != vals.len() {
                return Err(Error::Parse {
                    line,
                    reason: "column count differs from earlier rows".into(),
                });
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line,
                    reason: "non-finite value".into(),
                });
            }
            if let Some(&prev) = times.last() {
                if vals[0] <= prev {
                    return Err(Error::Parse {
                        line,
                        reason: "times must be strictly increasing".into(),
                    });
                }
            }
            if vals.len() == 3 && vals[2] < 0.0 {
                return Err(Error::Parse {
                    line,
                    reason: "negative stderr".into(),
                });
            }
            times.push(vals[0]);
            signal.push(vals[1]);
            if vals.len() == 3 {
                stderr.push(vals[2]);
            }
        }
        if times.is_empty() {
            return Err(Error::Parse {
                line: 0,
                reason: "no data rows".into(),
            });
        }
        let se = if width == Some(3) { Some(stderr) } else { None };
        RamseyCurve::new(times, signal, se, Provenance::External)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_rules() {
        let t = vec![0.0, 1.0];
        let s = vec![1.0, 0.5];
        assert!(RamseyCurve::new(t.clone(), s.clone(), None, Provenance::MonteCarlo).is_err());
        assert!(RamseyCurve::new(t.clone(), s.clone(), Some(vec![0.0, 0.1]), Provenance::Analytic).is_err());
        assert!(RamseyCurve::new(t.clone(), s.clone(), Some(vec![0.0, 0.1]), Provenance::External).is_ok());
        assert!(RamseyCurve::new(t, vec![1.0], None, Provenance::External).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = RamseyCurve::new(
            vec![0.025, 0.05, 0.075],
            vec![0.99, 0.9731, 0.95],
            Some(vec![0.001, 0.002, 0.003]),
            Provenance::External,
        )
        .unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let back = RamseyCurve::read_csv(&buf[..]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn csv_errors_name_lines() {
        let bad = "t_us,signal\n0.1,0.9\n0.2,abc\n";
        match RamseyCurve::read_csv(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let ragged = "0.1,0.9\n0.2,0.8,0.01\n";
        match RamseyCurve::read_csv(ragged.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let unordered = "0.1,0.9\n0.1,0.8\n";
        assert!(matches!(
            RamseyCurve::read_csv(unordered.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn normalization() {
        let c = RamseyCurve::new(vec![0.0, 1.0], vec![0.34, 0.17], None, Provenance::External).unwrap();
        let n = c.normalized_to_max().unwrap();
        assert_eq!(n.signal, vec![1.0, 0.5]);
    }
}
