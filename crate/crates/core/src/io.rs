//! Little-endian binary formats for networks and datasets.
//!
//! Network: `m, p, t` as `u64`, `m` sign bytes (`0x01` or `0xFF`), then
//! `W` row-major as `f64`.
//!
//! Dataset: `n, p` as `u64`, `X` row-major as `f64`, then `n` label bytes,
//! `n` noisy-flag bytes, `n` cluster bytes, and finally `μ₁, μ₂` as `f64`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::datagen::{cluster_counts, ClusterId, Dataset};
use crate::error::{Error, Result};
use crate::network::Network;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    out.reserve(vs.len() * 8);
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size overflow".into()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

fn sign_byte(s: i8) -> u8 {
    s as u8
}

fn byte_sign(b: u8) -> Result<i8> {
    match b as i8 {
        1 => Ok(1),
        -1 => Ok(-1),
        other => Err(Error::Format(format!("bad sign byte {other}"))),
    }
}

pub fn encode_network(net: &Network) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + net.m() + 8 * net.m() * net.p());
    put_u64(&mut out, net.m() as u64);
    put_u64(&mut out, net.p() as u64);
    put_u64(&mut out, net.step_index);
    out.extend(net.sign.iter().map(|&s| sign_byte(s)));
    put_f64s(&mut out, net.w_flat());
    out
}

pub fn decode_network(buf: &[u8]) -> Result<Network> {
    let mut c = Cursor { buf, pos: 0 };
    let m = c.usize()?;
    let p = c.usize()?;
    let t = c.u64()?;
    let sign = c.take(m)?.iter().map(|&b| byte_sign(b)).collect::<Result<Vec<_>>>()?;
    let w = c.f64s(m * p)?;
    c.finish()?;
    let w = Array2::from_shape_vec((m, p), w).map_err(|e| Error::Format(e.to_string()))?;
    let mut net = Network::new(w, sign)?;
    net.step_index = t;
    Ok(net)
}

pub fn write_network(path: &Path, net: &Network) -> Result<()> {
    write_bytes(path, &encode_network(net))
}

pub fn read_network(path: &Path) -> Result<Network> {
    decode_network(&read_bytes(path)?)
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let (n, p) = (ds.n(), ds.p());
    let mut out = Vec::with_capacity(16 + 8 * n * p + 3 * n + 16 * p);
    put_u64(&mut out, n as u64);
    put_u64(&mut out, p as u64);
    put_f64s(&mut out, ds.x_flat());
    out.extend(ds.y.iter().map(|&s| sign_byte(s)));
    out.extend((0..n).map(|i| u8::from(ds.is_noisy(i))));
    out.extend(ds.cluster.iter().map(|c| c.index() as u8));
    put_f64s(&mut out, &ds.mu1);
    put_f64s(&mut out, &ds.mu2);
    out
}

/// Decodes a dataset; `eta` is not part of the format and must be supplied.
pub fn decode_dataset(buf: &[u8], eta: f64) -> Result<Dataset> {
    let mut c = Cursor { buf, pos: 0 };
    let n = c.usize()?;
    let p = c.usize()?;
    let x = c.f64s(n * p)?;
    let y = c.take(n)?.iter().map(|&b| byte_sign(b)).collect::<Result<Vec<_>>>()?;
    let noisy = c.take(n)?.to_vec();
    let cluster = c
        .take(n)?
        .iter()
        .map(|&b| ClusterId::from_index(usize::from(b)).ok_or_else(|| Error::Format(format!("bad cluster byte {b}"))))
        .collect::<Result<Vec<_>>>()?;
    let mu1 = c.f64s(p)?;
    let mu2 = c.f64s(p)?;
    c.finish()?;
    let x = Array2::from_shape_vec((n, p), x).map_err(|e| Error::Format(e.to_string()))?;
    let ds = Dataset::from_parts(x, y, cluster, mu1, mu2, eta)?;
    for (i, &f) in noisy.iter().enumerate() {
        if (f != 0) != ds.is_noisy(i) {
            return Err(Error::Format(format!("noisy flag of sample {i} disagrees with labels")));
        }
    }
    Ok(ds)
}

#[derive(Serialize)]
struct Sidecar {
    n: usize,
    p: usize,
    eta: f64,
    mu_norm: f64,
    clean: [usize; 4],
    noisy: [usize; 4],
    centers: [&'static str; 4],
}

/// Human-readable summary written next to a dataset file.
pub fn dataset_sidecar(ds: &Dataset) -> String {
    let c = cluster_counts(ds);
    let s = Sidecar {
        n: ds.n(),
        p: ds.p(),
        eta: ds.eta,
        mu_norm: ds.mu_norm(),
        clean: c.clean,
        noisy: c.noisy,
        centers: ClusterId::ALL.map(|v| v.name()),
    };
    serde_json::to_string_pretty(&s).expect("plain data serializes")
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_bytes(path, &encode_dataset(ds))?;
    write_bytes(&path.with_extension("json"), dataset_sidecar(ds).as_bytes())
}

pub fn read_dataset(path: &Path, eta: f64) -> Result<Dataset> {
    decode_dataset(&read_bytes(path)?, eta)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}
