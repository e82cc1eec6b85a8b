//! On-disk reuse of process tensors. Tensors depend only on the bath, the
//! step, the memory depth, the unique coupling eigenvalues, the horizon and
//! the truncation settings; within a parameter sweep at fixed bath every
//! point shares one tensor, so construction cost is paid once.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::bath::BathParams;
use crate::ptensor::{CouplingSpec, ProcessTensor, PtOptions};

/// Content key of a process tensor; all floats hashed at full precision.
pub fn pt_cache_key(
    bath: &BathParams,
    dt: f64,
    depth: usize,
    n: usize,
    cs: &CouplingSpec,
    opts: &PtOptions,
) -> String {
    let mut h = Sha256::new();
    let mut push = |label: &str, v: f64| {
        h.update(label.as_bytes());
        h.update(v.to_bits().to_le_bytes());
    };
    push("de", bath.deformation_e);
    push("dh", bath.deformation_h);
    push("rho", bath.mass_density);
    push("cs", bath.sound_speed);
    push("ae", bath.radius_e);
    push("ah", bath.radius_h);
    push("t", bath.temperature);
    push("dt", dt);
    push("svd", opts.svd_tol);
    push("drop", opts.drop_tol);
    for (i, lam) in cs.unique.iter().enumerate() {
        push(&format!("l{i}"), *lam);
    }
    h.update(depth.to_le_bytes());
    h.update(n.to_le_bytes());
    h.update(opts.chi_max.to_le_bytes());
    let digest = h.finalize();
    hex::encode(&digest[..16])
}

pub fn pt_cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("pt-{key}.bin"))
}

/// Load a cached tensor if present, otherwise build it with `build` and
/// store the result. Returns the tensor and whether it was a cache hit.
pub fn load_or_build<F>(
    dir: Option<&Path>,
    key: &str,
    build: F,
) -> Result<(ProcessTensor, bool), crate::ptensor::TensorError>
where
    F: FnOnce() -> Result<ProcessTensor, crate::ptensor::TensorError>,
{
    if let Some(dir) = dir {
        let path = pt_cache_path(dir, key);
        if path.is_file() {
            match ProcessTensor::load_file(&path) {
                Ok(pt) => return Ok((pt, true)),
                Err(e) => {
                    log::warn!("ignoring unreadable process-tensor cache {path:?}: {e}");
                }
            }
        }
        let pt = build()?;
        std::fs::create_dir_all(dir)?;
        pt.save_file(&path)?;
        return Ok((pt, false));
    }
    Ok((build()?, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_sensitivity() {
        let bath = BathParams::gaas(10.0);
        let cs = CouplingSpec::grouped(vec![0.0, 1.0, 2.0]);
        let opts = PtOptions::default();
        let a = pt_cache_key(&bath, 0.05, 160, 1000, &cs, &opts);
        let b = pt_cache_key(&bath, 0.05, 160, 1001, &cs, &opts);
        let c = pt_cache_key(&BathParams::gaas(10.1), 0.05, 160, 1000, &cs, &opts);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, pt_cache_key(&bath, 0.05, 160, 1000, &cs, &opts));
    }
}
