//! Binary dataset files: a fixed header (magic, version, row count, row
//! width) followed by row-major little-endian f64 observations.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use mcvae::models::LinearHvae;
use mcvae::numerics::RngStream;

use crate::{CliError, Result};

const MAGIC: &[u8; 8] = b"MCVAEDS1";
const VERSION: u32 = 1;

/// Writes `n x dx` observations.
pub fn write_dataset(path: &Path, dx: usize, rows: &[Vec<f64>]) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + rows.len() * dx * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(dx as u64).to_le_bytes());
    for row in rows {
        debug_assert_eq!(row.len(), dx);
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], reproducing the tensors
/// exactly.
pub fn read_dataset(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path)?;
    let bad =
        |msg: &str| CliError::Runtime(format!("dataset {}: {msg}", path.display()));
    if bytes.len() < 28 {
        return Err(bad("truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("wrong magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let dx = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let expected = 28 + n * dx * 8;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "body length {} does not match {n} x {dx} rows",
            bytes.len() - 28
        )));
    }
    let mut rows = Vec::with_capacity(n);
    let mut pos = 28;
    for _ in 0..n {
        let mut row = Vec::with_capacity(dx);
        for _ in 0..dx {
            row.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
            pos += 8;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Samples a ground-truth linear model and `n` observations from it.
/// Weight entries are `N(0, 1/sqrt(fan_in))`, prior conditional scales are
/// one, and the observation noise is `obs_sigma`.
pub fn generate_linear_data(
    n1: usize,
    n2: usize,
    dx: usize,
    n: usize,
    obs_sigma: f64,
    gen_seed: u64,
) -> (LinearHvae, Vec<Vec<f64>>) {
    let mut rng = RngStream::new(gen_seed, 0);
    let truth = LinearHvae::random(n1, n2, dx, obs_sigma, &mut rng);
    let mut data_rng = RngStream::new(gen_seed, 1);
    let data = (0..n)
        .map(|_| truth.sample_observation(&mut data_rng).1)
        .collect();
    (truth, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_exact_and_empty_file_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let rows = vec![vec![1.5, -2.25, 1e-300], vec![0.0, f64::MIN_POSITIVE, 3.0]];
        write_dataset(&path, 3, &rows).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, rows);

        let empty = dir.path().join("e.bin");
        write_dataset(&empty, 4, &[]).unwrap();
        assert!(read_dataset(&empty).unwrap().is_empty());
    }

    #[test]
    fn same_seed_generates_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (_, d1) = generate_linear_data(2, 3, 5, 50, 0.5, 9);
        let (_, d2) = generate_linear_data(2, 3, 5, 50, 0.5, 9);
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        write_dataset(&p1, 5, &d1).unwrap();
        write_dataset(&p2, 5, &d2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn generated_covariance_matches_truth_marginal() {
        let (truth, data) = generate_linear_data(2, 2, 3, 100_000, 0.5, 4);
        let (mu, cov) = truth.marginal_moments();
        let n = data.len() as f64;
        for i in 0..3 {
            let mean: f64 = data.iter().map(|x| x[i]).sum::<f64>() / n;
            let se = (cov[(i, i)] / n).sqrt();
            assert!((mean - mu[i]).abs() <= 3.0 * se, "mean[{i}]");
            for j in 0..3 {
                let mut cent = 0.0;
                let mut cent_sq = 0.0;
                for x in &data {
                    let c = (x[i] - mu[i]) * (x[j] - mu[j]);
                    cent += c;
                    cent_sq += c * c;
                }
                let mp = cent / n;
                let vp = cent_sq / n - mp * mp;
                let se = (vp / n).sqrt();
                assert!(
                    (mp - cov[(i, j)]).abs() <= 3.0 * se,
                    "cov[{i},{j}] {mp} vs {}",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTMAGIC____").unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
