//! JSON checkpoints for trained model banks.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::neural::detector::{DetectorConfig, FeatureMap, ModelBank};
use crate::neural::lstm::{Layout, LstmParams, GATES};
use crate::neural::optim::TrainConfig;
use crate::neural::train::TrainingHistory;
use crate::ofdm::OfdmConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub ofdm: OfdmConfig,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    /// Training SNR in dB; `None` for mixed-SNR training.
    pub train_snr_db: Option<f64>,
}

/// Row-major matrices of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArrays {
    pub w_f: Vec<Vec<f64>>,
    pub w_i: Vec<Vec<f64>>,
    pub w_c: Vec<Vec<f64>>,
    pub w_o: Vec<Vec<f64>>,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
    pub w_out: Vec<Vec<f64>>,
    pub b_out: Vec<f64>,
}

fn rows(m: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(invalid("ragged matrix in checkpoint"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), cols), flat).map_err(|e| invalid(e.to_string()))
}

impl From<&LstmParams> for ModelArrays {
    fn from(p: &LstmParams) -> Self {
        let [f, i, c, o] = GATES.map(|g| rows(p.gate_weights(g)));
        let [bf, bi, bc, bo] = GATES.map(|g| p.gate_bias(g).to_vec());
        Self {
            w_f: f,
            w_i: i,
            w_c: c,
            w_o: o,
            b_f: bf,
            b_i: bi,
            b_c: bc,
            b_o: bo,
            w_out: rows(p.readout_weights()),
            b_out: p.readout_bias().to_vec(),
        }
    }
}

impl ModelArrays {
    pub fn to_params(&self) -> Result<LstmParams> {
        LstmParams::from_parts(
            [matrix(&self.w_f)?, matrix(&self.w_i)?, matrix(&self.w_c)?, matrix(&self.w_o)?],
            [
                Array1::from(self.b_f.clone()),
                Array1::from(self.b_i.clone()),
                Array1::from(self.b_c.clone()),
                Array1::from(self.b_o.clone()),
            ],
            matrix(&self.w_out)?,
            Array1::from(self.b_out.clone()),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: CheckpointConfig,
    pub layout: Layout,
    pub models: Vec<ModelArrays>,
    pub history: Vec<TrainingHistory>,
}

/// A trained bank with the settings that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedDetector {
    pub bank: ModelBank,
    pub train: TrainConfig,
    pub train_snr_db: Option<f64>,
    pub history: Vec<TrainingHistory>,
}

impl TrainedDetector {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let map = self.bank.map();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: CheckpointConfig {
                ofdm: map.ofdm().clone(),
                detector: map.detector().clone(),
                train: self.train.clone(),
                train_snr_db: self.train_snr_db,
            },
            layout: map.layout(),
            models: self.bank.models().iter().map(ModelArrays::from).collect(),
            history: self.history.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(invalid(format!("unsupported checkpoint version {}", ck.version)));
        }
        if ck.layout != ck.config.detector.layout {
            return Err(invalid("checkpoint layout disagrees with its detector config"));
        }
        let map = FeatureMap::new(&ck.config.ofdm, &ck.config.detector)?;
        let models = ck.models.iter().map(ModelArrays::to_params).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bank: ModelBank::new(map, models)?,
            train: ck.config.train.clone(),
            train_snr_db: ck.config.train_snr_db,
            history: ck.history.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(&serde_json::from_str(s)?)
    }

    /// Write via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn detector(seed: u64) -> TrainedDetector {
        let map = FeatureMap::new(&OfdmConfig::default(), &DetectorConfig::default()).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let m = LstmParams::init(16, 128, 2, &mut rng);
        TrainedDetector {
            bank: ModelBank::new(map, vec![m]).unwrap(),
            train: TrainConfig::default(),
            train_snr_db: Some(20.0),
            history: vec![TrainingHistory {
                val_psi: vec![0.1 + 1e-17, 1.0 / 3.0],
                ..TrainingHistory::default()
            }],
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let d = detector(3);
        let back = TrainedDetector::from_json(&d.to_json().unwrap()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.bank.fingerprint(), d.bank.fingerprint());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let d = detector(4);
        d.save(&path).unwrap();
        assert_eq!(TrainedDetector::load(&path).unwrap(), d);
        assert!(!dir.path().join("model.json.tmp").exists());
    }

    #[test]
    fn rejects_tampered_checkpoints() {
        let d = detector(5);
        let mut ck = d.to_checkpoint();
        ck.version = 99;
        assert!(TrainedDetector::from_checkpoint(&ck).is_err());

        let mut ck = d.to_checkpoint();
        ck.models[0].w_f[0].pop();
        assert!(TrainedDetector::from_checkpoint(&ck).is_err());

        let mut ck = d.to_checkpoint();
        ck.models.push(ck.models[0].clone());
        assert!(TrainedDetector::from_checkpoint(&ck).is_err());

        let json = d.to_json().unwrap().replacen("\"version\"", "\"extra\":1,\"version\"", 1);
        assert!(TrainedDetector::from_json(&json).is_err());
    }

    #[test]
    fn gate_blocks_keep_their_names() {
        let d = detector(6);
        let ck = d.to_checkpoint();
        let m = &d.bank.models()[0];
        assert_eq!(ck.models[0].w_c[3], m.gate_weights(crate::neural::Gate::Candidate).row(3).to_vec());
        assert_eq!(ck.models[0].b_f, vec![1.0; 16]);
    }
}
