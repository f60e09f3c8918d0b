//! Model and kernel persistence through the flat tensor checkpoint.
//!
//! The kernel's adaptable state rides along in the same container under
//! `kernel.*` names so an evaluation run can reconstruct the adapted
//! preconditioner.

use std::collections::BTreeMap;
use std::path::Path;

use mcvae::autodiff::{ParamStore, Tensor};
use mcvae::kernels::{KernelKind, KernelParams, Preconditioner};
use mcvae::models::{
    load_checkpoint, save_checkpoint, AnyModel, HvaeStack, LatentModel, Likelihood, LinearHvae,
    MlpVae,
};
use mcvae::numerics::{LowerTriangularFactor, RngStream};

use crate::config::ModelSpec;
use crate::{CliError, Result};

/// Builds a freshly initialized model from its spec.
pub fn build_model(spec: &ModelSpec, dx: usize, init_rng: &mut RngStream) -> AnyModel {
    match spec {
        ModelSpec::LinearHvae {
            n1,
            n2,
            obs_sigma_init,
        } => AnyModel::Linear(LinearHvae::random(*n1, *n2, dx, *obs_sigma_init, init_rng)),
        ModelSpec::HvaeStack {
            n1,
            n2,
            hidden,
            bernoulli,
            obs_sigma,
        } => {
            let likelihood = if *bernoulli {
                Likelihood::Bernoulli
            } else {
                Likelihood::Gaussian {
                    log_sigma: vec![obs_sigma.ln(); dx],
                }
            };
            AnyModel::Stack(HvaeStack::new(*n1, *n2, dx, *hidden, likelihood, init_rng))
        }
        ModelSpec::MlpVae {
            dz,
            hidden,
            bernoulli,
            obs_sigma,
        } => {
            let likelihood = if *bernoulli {
                Likelihood::Bernoulli
            } else {
                Likelihood::Gaussian {
                    log_sigma: vec![obs_sigma.ln(); dx],
                }
            };
            AnyModel::Mlp(MlpVae::new(*dz, dx, *hidden, likelihood, init_rng))
        }
    }
}

/// Writes model parameters plus (optionally) the adapted kernel state.
pub fn save_model(path: &Path, model: &dyn LatentModel, kernel: Option<&KernelParams>) -> Result<()> {
    let mut store = model.params().clone();
    if let Some(k) = kernel {
        store.insert("kernel.log_h", Tensor::vector(vec![k.log_h]));
        store.insert("kernel.beta", Tensor::vector(vec![k.beta]));
        store.insert(
            "kernel.leapfrog",
            Tensor::vector(vec![k.leapfrog as f64]),
        );
        store.insert(
            "kernel.kind",
            Tensor::vector(vec![match k.kind {
                KernelKind::Mala => 0.0,
                KernelKind::Hmc => 1.0,
            }]),
        );
        store.insert(
            "kernel.target_accept",
            Tensor::vector(vec![k.target_accept]),
        );
        match &k.precond {
            Preconditioner::Diagonal(s) => {
                store.insert("kernel.precond_diag", Tensor::vector(s.clone()));
            }
            Preconditioner::LowerTriangular(l) => {
                store.insert(
                    "kernel.precond_log_diag",
                    Tensor::vector(l.log_diag().to_vec()),
                );
                store.insert(
                    "kernel.precond_strict",
                    Tensor::vector(l.strict().to_vec()),
                );
            }
        }
    }
    save_checkpoint(path, &model.checkpoint_meta(), &store)?;
    Ok(())
}

fn meta_fields(meta: &str) -> BTreeMap<String, String> {
    meta.split_whitespace()
        .filter_map(|pair| pair.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn meta_usize(fields: &BTreeMap<String, String>, key: &str, meta: &str) -> Result<usize> {
    fields
        .get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Runtime(format!("checkpoint meta `{meta}` lacks `{key}`")))
}

/// Reads a checkpoint back into a model (and the kernel state if stored).
pub fn load_model(path: &Path) -> Result<(AnyModel, Option<KernelParams>)> {
    let data = load_checkpoint(path)?;
    let fields = meta_fields(&data.meta);
    let kind = fields
        .get("kind")
        .cloned()
        .ok_or_else(|| CliError::Runtime(format!("checkpoint meta `{}` lacks `kind`", data.meta)))?;

    let mut model_tensors: Vec<(String, Tensor)> = Vec::new();
    let mut kernel_tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for (name, t) in data.tensors {
        if let Some(stripped) = name.strip_prefix("kernel.") {
            kernel_tensors.insert(stripped.to_string(), t);
        } else {
            model_tensors.push((name, t));
        }
    }

    let model = match kind.as_str() {
        "linear-hvae" => {
            let n1 = meta_usize(&fields, "n1", &data.meta)?;
            let n2 = meta_usize(&fields, "n2", &data.meta)?;
            let dx = meta_usize(&fields, "dx", &data.meta)?;
            AnyModel::Linear(LinearHvae::from_parts(n1, n2, dx, model_tensors))
        }
        "hvae-stack" => {
            let n1 = meta_usize(&fields, "n1", &data.meta)?;
            let n2 = meta_usize(&fields, "n2", &data.meta)?;
            let dx = meta_usize(&fields, "dx", &data.meta)?;
            let hidden = meta_usize(&fields, "hidden", &data.meta)?;
            let likelihood = likelihood_from_meta(&fields, dx)?;
            let mut rng = RngStream::new(0, 0);
            let mut m = HvaeStack::new(n1, n2, dx, hidden, likelihood, &mut rng);
            restore(m.params_mut(), model_tensors)?;
            AnyModel::Stack(m)
        }
        "mlp-vae" => {
            let dz = meta_usize(&fields, "dz", &data.meta)?;
            let dx = meta_usize(&fields, "dx", &data.meta)?;
            let hidden = meta_usize(&fields, "hidden", &data.meta)?;
            let likelihood = likelihood_from_meta(&fields, dx)?;
            let mut rng = RngStream::new(0, 0);
            let mut m = MlpVae::new(dz, dx, hidden, likelihood, &mut rng);
            restore(m.params_mut(), model_tensors)?;
            AnyModel::Mlp(m)
        }
        other => {
            return Err(CliError::Runtime(format!(
                "unsupported checkpoint kind `{other}`"
            )))
        }
    };

    let kernel = if kernel_tensors.is_empty() {
        None
    } else {
        let scalar = |name: &str| -> Result<f64> {
            kernel_tensors
                .get(name)
                .and_then(|t| t.data.first().copied())
                .ok_or_else(|| CliError::Runtime(format!("checkpoint lacks kernel.{name}")))
        };
        let kind = if scalar("kind")? > 0.5 {
            KernelKind::Hmc
        } else {
            KernelKind::Mala
        };
        let precond = if let Some(diag) = kernel_tensors.get("precond_diag") {
            Preconditioner::Diagonal(diag.data.clone())
        } else {
            let log_diag = kernel_tensors
                .get("precond_log_diag")
                .ok_or_else(|| CliError::Runtime("checkpoint lacks preconditioner".into()))?;
            let strict = kernel_tensors
                .get("precond_strict")
                .ok_or_else(|| CliError::Runtime("checkpoint lacks preconditioner".into()))?;
            Preconditioner::LowerTriangular(LowerTriangularFactor::from_parts(
                log_diag.data.len(),
                log_diag.data.clone(),
                strict.data.clone(),
            ))
        };
        Some(KernelParams {
            kind,
            log_h: scalar("log_h")?,
            precond,
            leapfrog: scalar("leapfrog")? as usize,
            beta: scalar("beta")?,
            target_accept: scalar("target_accept")?,
        })
    };

    Ok((model, kernel))
}


fn likelihood_from_meta(fields: &BTreeMap<String, String>, dx: usize) -> Result<Likelihood> {
    match fields.get("likelihood").map(String::as_str) {
        Some("bernoulli") => Ok(Likelihood::Bernoulli),
        _ => {
            let sigma: f64 = fields
                .get("obs_sigma")
                .and_then(|v| v.parse().ok())
                .unwrap_or(0.5);
            Ok(Likelihood::Gaussian {
                log_sigma: vec![sigma.ln(); dx],
            })
        }
    }
}

fn restore(store: &mut ParamStore, tensors: Vec<(String, Tensor)>) -> Result<()> {
    for (name, t) in tensors {
        if !store.contains(&name) {
            return Err(CliError::Runtime(format!(
                "checkpoint tensor `{name}` not in model"
            )));
        }
        *store.value_mut(&name) = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_and_kernel_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut rng = RngStream::new(11, 0);
        let model = LinearHvae::random(2, 3, 5, 0.5, &mut rng);
        let kernel = KernelParams::mala(5).with_lower_triangular();
        save_model(&path, &model, Some(&kernel)).unwrap();
        let (loaded, k2) = load_model(&path).unwrap();
        let lin = loaded.as_linear().unwrap();
        for name in model.params().names() {
            assert_eq!(
                model.params().value(name).data,
                lin.params().value(name).data,
                "{name}"
            );
        }
        let k2 = k2.unwrap();
        assert_eq!(k2.kind, KernelKind::Mala);
        assert_eq!(k2.log_h, kernel.log_h);
    }
}
