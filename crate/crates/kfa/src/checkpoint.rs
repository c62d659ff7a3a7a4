//! Model checkpoint: a single self-describing archive with a JSON metadata
//! document followed by dense float64 arrays in little-endian order with
//! explicit shape headers.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{KfaError, Result};
use crate::kernels::CenteringStats;
use crate::model::{
    DualCov, DualPosterior, FactorPosterior, GammaPosterior, Hyperparams, ModelState, ViewData,
    ViewSpec, ViewState,
};

const MAGIC: &[u8; 8] = b"KFACKPT1";
const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ViewMeta {
    spec: ViewSpec,
    observed: Vec<bool>,
    active_rvs: Vec<usize>,
    centering: Option<CenteringStats>,
    has_kernel_matrix: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    schema_version: u32,
    seed: u64,
    hyper: Hyperparams,
    active_factors: Vec<usize>,
    z_group: Vec<usize>,
    n_z_groups: usize,
    views: Vec<ViewMeta>,
}

struct Archive {
    arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl Archive {
    fn new() -> Self {
        Archive { arrays: BTreeMap::new() }
    }

    fn put1(&mut self, name: &str, a: &Array1<f64>) {
        self.arrays.insert(name.into(), (vec![a.len()], a.to_vec()));
    }

    fn put2(&mut self, name: &str, a: &Array2<f64>) {
        self.arrays.insert(
            name.into(),
            (vec![a.nrows(), a.ncols()], a.iter().cloned().collect()),
        );
    }

    fn get1(&self, name: &str) -> Result<Array1<f64>> {
        let (shape, data) = self
            .arrays
            .get(name)
            .ok_or_else(|| KfaError::Checkpoint(format!("missing array '{name}'")))?;
        if shape.len() != 1 {
            return Err(KfaError::Checkpoint(format!("array '{name}' is not 1-D")));
        }
        Ok(Array1::from_vec(data.clone()))
    }

    fn get2(&self, name: &str) -> Result<Array2<f64>> {
        let (shape, data) = self
            .arrays
            .get(name)
            .ok_or_else(|| KfaError::Checkpoint(format!("missing array '{name}'")))?;
        if shape.len() != 2 {
            return Err(KfaError::Checkpoint(format!("array '{name}' is not 2-D")));
        }
        Array2::from_shape_vec((shape[0], shape[1]), data.clone())
            .map_err(|e| KfaError::Checkpoint(format!("array '{name}': {e}")))
    }
}

fn dual_arrays(archive: &mut Archive, prefix: &str, dual: &DualPosterior) {
    archive.put2(&format!("{prefix}.mean"), &dual.mean);
    match &dual.cov {
        DualCov::Shared(c) => archive.put2(&format!("{prefix}.cov"), c),
        DualCov::PerRow(covs) => {
            for (r, c) in covs.iter().enumerate() {
                archive.put2(&format!("{prefix}.cov.{r}"), c);
            }
        }
    }
}

fn gamma_arrays(archive: &mut Archive, prefix: &str, g: &GammaPosterior) {
    archive.put1(&format!("{prefix}.a"), &g.a);
    archive.put1(&format!("{prefix}.b"), &g.b);
}

fn load_gamma(archive: &Archive, prefix: &str) -> Result<GammaPosterior> {
    Ok(GammaPosterior {
        a: archive.get1(&format!("{prefix}.a"))?,
        b: archive.get1(&format!("{prefix}.b"))?,
    })
}

/// Save a model state to a checkpoint file.
pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    let meta = Metadata {
        schema_version: SCHEMA_VERSION,
        seed: state.seed,
        hyper: state.hyper.clone(),
        active_factors: state.active_factors.clone(),
        z_group: state.z.group.clone(),
        n_z_groups: state.z.covs.len(),
        views: state
            .views
            .iter()
            .map(|v| ViewMeta {
                spec: v.spec.clone(),
                observed: v.data.observed.clone(),
                active_rvs: v.active_rvs.clone(),
                centering: v.centering.clone(),
                has_kernel_matrix: v.kernel_matrix.is_some(),
            })
            .collect(),
    };

    let mut archive = Archive::new();
    archive.put1("elbo_history", &Array1::from_vec(state.elbo_history.clone()));
    archive.put2("z.mean", &state.z.mean);
    for (g, c) in state.z.covs.iter().enumerate() {
        archive.put2(&format!("z.cov.{g}"), c);
    }
    for (i, v) in state.views.iter().enumerate() {
        archive.put2(&format!("view.{i}.x"), &v.data.x);
        if let Some(km) = &v.kernel_matrix {
            archive.put2(&format!("view.{i}.kernel"), km);
        }
        dual_arrays(&mut archive, &format!("view.{i}.dual"), &v.dual);
        gamma_arrays(&mut archive, &format!("view.{i}.alpha"), &v.alpha);
        gamma_arrays(&mut archive, &format!("view.{i}.tau"), &v.tau);
        if let Some(g) = &v.gamma {
            gamma_arrays(&mut archive, &format!("view.{i}.gamma"), g);
        }
    }

    let json = serde_json::to_vec(&meta)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u64::<LittleEndian>(json.len() as u64)?;
    w.write_all(&json)?;
    w.write_u64::<LittleEndian>(archive.arrays.len() as u64)?;
    for (name, (shape, data)) in &archive.arrays {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(shape.len() as u8)?;
        for d in shape {
            w.write_u64::<LittleEndian>(*d as u64)?;
        }
        for v in data {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a model state from a checkpoint file.
pub fn load(path: &Path) -> Result<ModelState> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(KfaError::Checkpoint("bad magic bytes".into()));
    }
    let json_len = r.read_u64::<LittleEndian>()? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let meta: Metadata = serde_json::from_slice(&json)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(KfaError::Checkpoint(format!(
            "schema version {} unsupported (expected {SCHEMA_VERSION})",
            meta.schema_version
        )));
    }

    let n_arrays = r.read_u64::<LittleEndian>()? as usize;
    let mut archive = Archive::new();
    for _ in 0..n_arrays {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| KfaError::Checkpoint("invalid array name".into()))?;
        let ndim = r.read_u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.read_f64::<LittleEndian>()?);
        }
        archive.arrays.insert(name, (shape, data));
    }

    let z = FactorPosterior {
        mean: archive.get2("z.mean")?,
        covs: (0..meta.n_z_groups)
            .map(|g| archive.get2(&format!("z.cov.{g}")))
            .collect::<Result<Vec<_>>>()?,
        group: meta.z_group,
    };

    let mut views = Vec::with_capacity(meta.views.len());
    for (i, vm) in meta.views.into_iter().enumerate() {
        let dual_mean = archive.get2(&format!("view.{i}.dual.mean"))?;
        let cov = if vm.spec.double_ard {
            let covs = (0..dual_mean.nrows())
                .map(|row| archive.get2(&format!("view.{i}.dual.cov.{row}")))
                .collect::<Result<Vec<_>>>()?;
            DualCov::PerRow(covs)
        } else {
            DualCov::Shared(archive.get2(&format!("view.{i}.dual.cov"))?)
        };
        let gamma = if vm.spec.double_ard {
            Some(load_gamma(&archive, &format!("view.{i}.gamma"))?)
        } else {
            None
        };
        views.push(ViewState {
            data: ViewData {
                x: archive.get2(&format!("view.{i}.x"))?,
                observed: vm.observed,
            },
            kernel_matrix: if vm.has_kernel_matrix {
                Some(archive.get2(&format!("view.{i}.kernel"))?)
            } else {
                None
            },
            centering: vm.centering,
            active_rvs: vm.active_rvs,
            dual: DualPosterior { mean: dual_mean, cov },
            alpha: load_gamma(&archive, &format!("view.{i}.alpha"))?,
            tau: load_gamma(&archive, &format!("view.{i}.tau"))?,
            gamma,
            spec: vm.spec,
        });
    }

    Ok(ModelState {
        views,
        z,
        active_factors: meta.active_factors,
        elbo_history: archive.get1("elbo_history")?.to_vec(),
        seed: meta.seed,
        hyper: meta.hyper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{fit, FitConfig};
    use crate::kernels::{KernelConfig, KernelKind};
    use crate::model::{Representation, ViewRole};
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((10, 3), |_| rng.gen::<f64>());
        let y = Array2::from_shape_fn((10, 2), |_| rng.gen::<f64>());
        let views = vec![
            (
                ViewSpec {
                    name: "x".into(),
                    role: ViewRole::Input,
                    representation: Representation::Kernelized,
                    kernel: Some(KernelConfig { kind: KernelKind::Rbf { gamma: 0.5 }, center: true }),
                    double_ard: true,
                    learn_lambda: false,
                },
                ViewData::fully_observed(x),
            ),
            (
                ViewSpec {
                    name: "y".into(),
                    role: ViewRole::Output,
                    representation: Representation::Primal,
                    kernel: None,
                    double_ard: false,
                    learn_lambda: false,
                },
                ViewData::fully_observed(y),
            ),
        ];
        let hyper = Hyperparams { k_init: 3, ..Default::default() };
        let cfg = FitConfig { max_iters: 12, window: 5, restarts: 1, ..Default::default() };
        let state = fit(&views, &hyper, &cfg, None, 1).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.kfa");
        save(&state, &path).unwrap();
        let loaded = load(&path).unwrap();

        assert_eq!(state.z.mean, loaded.z.mean);
        assert_eq!(state.z.covs, loaded.z.covs);
        assert_eq!(state.elbo_history, loaded.elbo_history);
        assert_eq!(state.active_factors, loaded.active_factors);
        for (a, b) in state.views.iter().zip(loaded.views.iter()) {
            assert_eq!(a.dual.mean, b.dual.mean);
            assert_eq!(a.alpha.a, b.alpha.a);
            assert_eq!(a.alpha.b, b.alpha.b);
            assert_eq!(a.tau.b, b.tau.b);
            assert_eq!(a.active_rvs, b.active_rvs);
            assert_eq!(a.kernel_matrix, b.kernel_matrix);
            match (&a.dual.cov, &b.dual.cov) {
                (DualCov::Shared(x), DualCov::Shared(y)) => assert_eq!(x, y),
                (DualCov::PerRow(x), DualCov::PerRow(y)) => assert_eq!(x, y),
                _ => panic!("covariance layout changed in roundtrip"),
            }
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.kfa");
        std::fs::write(&path, b"NOTAKFA0morebytes").unwrap();
        assert!(load(&path).is_err());
    }
}
