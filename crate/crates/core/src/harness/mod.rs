//! Training harness: run directories, checkpoints, the training loop,
//! evaluation, ablations, and the count-estimation demo.

mod ablate;
mod count_demo;
mod eval;
mod metrics;
mod train;

pub use ablate::{ablate, AblateReport, AblationMode, AblationRow};
pub use count_demo::{count_demo, zipf_counts, CountDemoReport, StateCountRow};
pub use eval::{evaluate, mean_at_k, pass_at_k, write_eval_csv, EvalReport, EvalRow};
pub use metrics::{read_metrics, MetricsWriter, StepRecord};
pub use train::{
    initial_policy, pretrain_cfn, train, train_observed, PretrainReport, RunArtifacts, TrainPhase,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cfn::CfnModel;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::net::NetParams;

pub const POLICY_CHECKPOINT: &str = "policy.json";
pub const POLICY_INIT_CHECKPOINT: &str = "policy_init.json";
pub const CFN_CHECKPOINT: &str = "cfn.json";
pub const CFN_PRETRAINED_CHECKPOINT: &str = "cfn_pretrained.json";

const NET_FORMAT: &str = "merci-net-v1";
const CFN_FORMAT: &str = "merci-cfn-v1";

/// Creates the run directory tree and drops the fully resolved config into
/// it. Re-running into the same directory overwrites previous outputs.
pub fn prepare_run_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.train.output_dir);
    let checkpoints = dir.join("checkpoints");
    std::fs::create_dir_all(&checkpoints)
        .map_err(|e| Error::io(checkpoints.display().to_string(), e))?;
    let resolved = dir.join("config.resolved.json");
    std::fs::write(&resolved, cfg.to_pretty_json()?)
        .map_err(|e| Error::io(resolved.display().to_string(), e))?;
    Ok(dir)
}

/// JSON checkpoint with an explicit shape header so a reader can sanity-check
/// the payload before deserializing weights into the wrong architecture.
#[derive(Serialize, Deserialize)]
struct NetCheckpoint {
    format: String,
    shape: Vec<usize>,
    params: NetParams,
}

pub fn save_net(path: &Path, params: &NetParams) -> Result<()> {
    let file = NetCheckpoint {
        format: NET_FORMAT.to_string(),
        shape: params.shape(),
        params: params.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_net(path: &Path) -> Result<NetParams> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: NetCheckpoint = serde_json::from_str(&text)?;
    if file.format != NET_FORMAT {
        return Err(Error::config(format!(
            "{} is not a net checkpoint (format {})",
            path.display(),
            file.format
        )));
    }
    if file.shape != file.params.shape() {
        return Err(Error::config(format!(
            "{}: shape header {:?} disagrees with payload {:?}",
            path.display(),
            file.shape,
            file.params.shape()
        )));
    }
    Ok(file.params)
}

#[derive(Serialize, Deserialize)]
struct CfnCheckpoint {
    format: String,
    shape: Vec<usize>,
    d: usize,
    model: CfnModel,
}

pub fn save_cfn(path: &Path, model: &CfnModel) -> Result<()> {
    let file = CfnCheckpoint {
        format: CFN_FORMAT.to_string(),
        shape: model.net.shape(),
        d: model.d,
        model: model.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_cfn(path: &Path) -> Result<CfnModel> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: CfnCheckpoint = serde_json::from_str(&text)?;
    if file.format != CFN_FORMAT {
        return Err(Error::config(format!(
            "{} is not a cfn checkpoint (format {})",
            path.display(),
            file.format
        )));
    }
    if file.shape != file.model.net.shape() || file.d != file.model.d {
        return Err(Error::config(format!(
            "{}: checkpoint header disagrees with payload",
            path.display()
        )));
    }
    Ok(file.model)
}
