//! Input-output records and their CSV representation.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::Series;

/// A sampled input-output record.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Series,
    pub outputs: Series,
    /// Sampling period in seconds.
    pub sample_period: f64,
}

impl Dataset {
    pub fn new(inputs: Series, outputs: Series, sample_period: f64) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::Dimension(format!(
                "input length {} != output length {}",
                inputs.len(),
                outputs.len()
            )));
        }
        if sample_period <= 0.0 {
            return Err(Error::InvalidConfig("sample period must be positive".into()));
        }
        Ok(Dataset {
            inputs,
            outputs,
            sample_period,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.width()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.width()
    }

    /// Serialize as CSV with header `t,u1,...,uq,y1,...,yp`, one row per sample.
    /// `meta` entries are written first as `# key = value` comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W, meta: &[(String, String)]) -> Result<()> {
        writeln!(w, "# sample_period = {}", self.sample_period)?;
        for (k, v) in meta {
            writeln!(w, "# {} = {}", k, v)?;
        }
        let q = self.n_inputs();
        let p = self.n_outputs();
        write!(w, "t")?;
        for i in 1..=q {
            write!(w, ",u{}", i)?;
        }
        for i in 1..=p {
            write!(w, ",y{}", i)?;
        }
        writeln!(w)?;
        for t in 0..self.len() {
            write!(w, "{}", t as f64 * self.sample_period)?;
            for v in self.inputs.sample(t) {
                write!(w, ",{}", v)?;
            }
            for v in self.outputs.sample(t) {
                write!(w, ",{}", v)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P, meta: &[(String, String)]) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), meta)
    }

    pub fn to_csv_string(&self, meta: &[(String, String)]) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, meta)?;
        Ok(String::from_utf8(buf).expect("csv output is utf8"))
    }

    /// Parse the CSV format written by [`Dataset::write_csv`]. Leading `#`
    /// comment lines are scanned for `sample_period`; the header row defines
    /// the input/output widths.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut sample_period = 1.0;
        let mut header: Option<Vec<String>> = None;
        let mut inputs: Vec<f64> = Vec::new();
        let mut outputs: Vec<f64> = Vec::new();
        let mut q = 0usize;
        let mut p = 0usize;
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.split_once('=') {
                    if k.trim() == "sample_period" {
                        sample_period = v
                            .trim()
                            .parse()
                            .map_err(|_| Error::Csv("bad sample_period".into()))?;
                    }
                }
                continue;
            }
            if header.is_none() {
                let cols: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
                if cols.first().map(|c| c.as_str()) != Some("t") {
                    return Err(Error::Csv("expected header starting with `t`".into()));
                }
                q = cols.iter().filter(|c| c.starts_with('u')).count();
                p = cols.iter().filter(|c| c.starts_with('y')).count();
                if p == 0 || cols.len() != 1 + q + p {
                    return Err(Error::Csv("header must be t,u1..uq,y1..yp".into()));
                }
                header = Some(cols);
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Csv(format!("bad number: {}", e)))?;
            if vals.len() != 1 + q + p {
                return Err(Error::Csv(format!(
                    "row has {} fields, expected {}",
                    vals.len(),
                    1 + q + p
                )));
            }
            inputs.extend_from_slice(&vals[1..1 + q]);
            outputs.extend_from_slice(&vals[1 + q..]);
        }
        if header.is_none() {
            return Err(Error::Csv("empty file".into()));
        }
        Dataset::new(
            if q == 0 {
                // Input-free records are stored with a single zero input channel.
                Series::zeros(outputs.len() / p, 1)
            } else {
                Series::from_flat(inputs, q)?
            },
            Series::from_flat(outputs, p)?,
            sample_period,
        )
    }

    pub fn read_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Dataset::read_csv(f)
    }

    /// Per-channel standardization: returns the scaled dataset and the scaler
    /// needed to map simulations back to original units.
    pub fn standardize(&self) -> (Dataset, Scaler) {
        let scaler = Scaler {
            u_mean: self.inputs.channel_means(),
            u_std: sanitize_stds(self.inputs.channel_stds()),
            y_mean: self.outputs.channel_means(),
            y_std: sanitize_stds(self.outputs.channel_stds()),
        };
        (scaler.apply(self), scaler)
    }
}

fn sanitize_stds(stds: Vec<f64>) -> Vec<f64> {
    stds.into_iter()
        .map(|s| if s > 0.0 { s } else { 1.0 })
        .collect()
}

/// Affine per-channel transform produced by [`Dataset::standardize`].
#[derive(Clone, Debug)]
pub struct Scaler {
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

impl Scaler {
    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut inputs = ds.inputs.clone();
        let mut outputs = ds.outputs.clone();
        scale_series(&mut inputs, &self.u_mean, &self.u_std);
        scale_series(&mut outputs, &self.y_mean, &self.y_std);
        Dataset {
            inputs,
            outputs,
            sample_period: ds.sample_period,
        }
    }

    /// Map a simulated output series back to original units.
    pub fn unscale_outputs(&self, sim: &Series) -> Series {
        let mut out = sim.clone();
        for t in 0..out.len() {
            let s = out.sample_mut(t);
            for (i, v) in s.iter_mut().enumerate() {
                *v = *v * self.y_std[i] + self.y_mean[i];
            }
        }
        out
    }

    pub fn scale_outputs(&self, raw: &Series) -> Series {
        let mut out = raw.clone();
        scale_series(&mut out, &self.y_mean, &self.y_std);
        out
    }

    pub fn scale_inputs(&self, raw: &Series) -> Series {
        let mut out = raw.clone();
        scale_series(&mut out, &self.u_mean, &self.u_std);
        out
    }
}

fn scale_series(s: &mut Series, mean: &[f64], std: &[f64]) {
    for t in 0..s.len() {
        let row = s.sample_mut(t);
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[i]) / std[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_is_exact() {
        let ds = Dataset::new(
            Series::from_rows(&[vec![0.1, -2.0], vec![3.5e-7, 1.0]]).unwrap(),
            Series::from_scalars(&[1.000000000000001, -4.25]),
            0.01,
        )
        .unwrap();
        let text = ds.to_csv_string(&[("seed".into(), "7".into())]).unwrap();
        let back = Dataset::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.inputs, ds.inputs);
        assert_eq!(back.outputs, ds.outputs);
        assert_eq!(back.sample_period, ds.sample_period);
    }

    #[test]
    fn standardize_roundtrip() {
        let ds = Dataset::new(
            Series::from_scalars(&[1.0, 2.0, 3.0, 4.0]),
            Series::from_scalars(&[10.0, 20.0, 30.0, 40.0]),
            1.0,
        )
        .unwrap();
        let (scaled, scaler) = ds.standardize();
        let means = scaled.outputs.channel_means();
        assert!(means[0].abs() < 1e-12);
        let back = scaler.unscale_outputs(&scaled.outputs);
        for t in 0..ds.len() {
            assert!((back.sample(t)[0] - ds.outputs.sample(t)[0]).abs() < 1e-12);
        }
    }
}
