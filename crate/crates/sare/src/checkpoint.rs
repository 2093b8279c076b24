//! JSON model checkpoints. Floats are written in shortest round-trip form
//! and parsed back exactly, so save then load is bit-exact.

use std::fs;
use std::path::Path;

use sare_core::model::{Model, ModelSpec, ParamStore};
use sare_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "sare-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub seed: u64,
    /// Field vocabularies, D and the activation bank order all live here.
    pub spec: ModelSpec,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(model: &Model, seed: u64, train: Option<TrainConfig>, best_epoch: Option<usize>) -> Self {
        Self {
            format: FORMAT.to_string(),
            seed,
            spec: model.spec().clone(),
            train,
            best_epoch,
            params: model.params().clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        fs::write(path, self.to_json()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if ck.format != FORMAT {
            return Err(Error::Data(format!(
                "{}: unsupported checkpoint format `{}`",
                path.display(),
                ck.format
            )));
        }
        Ok(ck)
    }

    /// Rebuilds the model and installs the stored weights.
    pub fn model(&self) -> Result<Model> {
        let mut model = Model::new(self.spec.clone(), self.seed)?;
        model.load_values(&self.params)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sare_core::data::{generate_synthetic, GeneratorConfig};
    use sare_core::model::{Ablation, BackboneConfig, BackboneKind, SituationMode};
    use sare_core::numeric::ActivationBank;

    #[test]
    fn save_load_is_bit_exact() {
        let d = generate_synthetic(&GeneratorConfig {
            n_users: 15,
            n_items: 30,
            n_lists: 20,
            list_len: 4,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let backbone = BackboneConfig {
            kind: BackboneKind::Fm,
            use_history: false,
            situation_mode: SituationMode::Sare,
        };
        let spec = ModelSpec::from_dataset(&d, backbone, 6, &ActivationBank::standard(), Ablation::default()).unwrap();
        let mut model = Model::new(spec, 3).unwrap();
        // values with long decimal expansions
        for p in model.params_mut().iter_mut() {
            for (i, v) in p.value.values_mut().iter_mut().enumerate() {
                *v = (*v + 1e-17 * i as f64) / 3.0 + f64::EPSILON;
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        Checkpoint::new(&model, 3, None, Some(2)).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let back = loaded.model().unwrap();
        for (a, b) in model.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.owner, b.owner);
            let bits = |p: &sare_core::model::Param| p.value.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b), "{}", a.name);
        }
        assert_eq!(back.spec(), model.spec());
        assert_eq!(fs::read_to_string(&path).unwrap(), loaded.to_json());
    }

    #[test]
    fn wrong_format_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        fs::write(&path, "{\"format\":\"other\"}").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Data(_))));
    }
}
