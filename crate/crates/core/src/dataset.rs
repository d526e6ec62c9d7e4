//! DFPC-DATA v1 file format: a textual header followed by a binary payload
//! of little-endian f64 values and signed sign bytes.
//!
//! Header lines: `magic=DFPC-DATA`, `version=1`, `n=`, `m=`, `k=`, `l=`,
//! `seed=`, then one blank line. Payload: Phi row-major (M*N), X column-major
//! (N*L), pre_quant column-major (M*L), signs as i8 (M*L).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{DfpcError, Result};
use crate::model_core::{measure, generate_signals, MeasurementBatch, SensingMatrix, SparseSignal};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub l: usize,
    pub seed: u64,
    pub phi: SensingMatrix,
    pub signals: Vec<SparseSignal>,
    pub measurements: MeasurementBatch,
}

impl Dataset {
    /// Generates a full problem instance: Phi, L signals, measurements.
    /// Phi uses substream 0 of the seed, signals use substreams 1..=L.
    pub fn generate(n: usize, m: usize, k: usize, l: usize, seed: u64) -> Result<Self> {
        let phi = SensingMatrix::random(m, n, seed)?;
        let signals = generate_signals(n, k, l, seed)?;
        let measurements = measure(&phi, &signals)?;
        Ok(Dataset {
            n,
            m,
            k,
            l,
            seed,
            phi,
            signals,
            measurements,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(
            w,
            "magic=DFPC-DATA\nversion=1\nn={}\nm={}\nk={}\nl={}\nseed={}\n\n",
            self.n, self.m, self.k, self.l, self.seed
        )?;
        for v in self.phi.entries.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        // X column-major: one signal after another
        for s in &self.signals {
            for v in s.values.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        let pre = self.measurements.pre_quant.as_ref().ok_or_else(|| {
            DfpcError::InvalidState("dataset measurements lack pre-quantization values".into())
        })?;
        for col in pre.columns() {
            for v in col.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for col in self.measurements.signs.columns() {
            for v in col.iter() {
                w.write_all(&[if *v >= 0.0 { 1i8 as u8 } else { -1i8 as u8 }])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let header = read_header(&mut r)?;
        let get = |key: &str| -> Result<u64> {
            header
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.parse::<u64>())
                .ok_or_else(|| DfpcError::Format(format!("missing header key `{key}`")))?
                .map_err(|e| DfpcError::Format(format!("bad value for `{key}`: {e}")))
        };
        let magic = header
            .iter()
            .find(|(k, _)| k == "magic")
            .map(|(_, v)| v.clone())
            .unwrap_or_default();
        if magic != "DFPC-DATA" {
            return Err(DfpcError::Format(format!("bad magic `{magic}`")));
        }
        if get("version")? != 1 {
            return Err(DfpcError::Format("unsupported DFPC-DATA version".into()));
        }
        let n = get("n")? as usize;
        let m = get("m")? as usize;
        let k = get("k")? as usize;
        let l = get("l")? as usize;
        let seed = get("seed")?;

        let phi_entries = read_f64s(&mut r, m * n)?;
        let phi = SensingMatrix {
            entries: Array2::from_shape_vec((m, n), phi_entries)
                .map_err(|e| DfpcError::Format(e.to_string()))?,
        };
        let x_vals = read_f64s(&mut r, n * l)?;
        let mut signals = Vec::with_capacity(l);
        for col in 0..l {
            let values = Array1::from_vec(x_vals[col * n..(col + 1) * n].to_vec());
            let support: Vec<usize> = values
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, _)| i)
                .collect();
            signals.push(SparseSignal { values, support });
        }
        let pq_vals = read_f64s(&mut r, m * l)?;
        let mut pre_quant = Array2::zeros((m, l));
        for col in 0..l {
            for row in 0..m {
                pre_quant[(row, col)] = pq_vals[col * m + row];
            }
        }
        let mut sign_bytes = vec![0u8; m * l];
        r.read_exact(&mut sign_bytes)?;
        let mut signs = Array2::zeros((m, l));
        for col in 0..l {
            for row in 0..m {
                signs[(row, col)] = match sign_bytes[col * m + row] as i8 {
                    1 => 1.0,
                    -1 => -1.0,
                    b => return Err(DfpcError::Format(format!("bad sign byte {b}"))),
                };
            }
        }
        Ok(Dataset {
            n,
            m,
            k,
            l,
            seed,
            phi,
            signals,
            measurements: MeasurementBatch {
                signs,
                pre_quant: Some(pre_quant),
            },
        })
    }
}

fn read_header<R: Read>(r: &mut R) -> Result<Vec<(String, String)>> {
    // read byte-by-byte so the binary payload stays untouched
    let mut lines = Vec::new();
    let mut line = Vec::new();
    loop {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            if line.is_empty() {
                break;
            }
            let text = String::from_utf8(std::mem::take(&mut line))
                .map_err(|e| DfpcError::Format(e.to_string()))?;
            let (key, value) = text
                .split_once('=')
                .ok_or_else(|| DfpcError::Format(format!("bad header line `{text}`")))?;
            lines.push((key.to_string(), value.to_string()));
        } else {
            line.push(byte[0]);
        }
    }
    Ok(lines)
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
