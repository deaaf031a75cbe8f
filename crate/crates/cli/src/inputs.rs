//! Dataset and model loading.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hob::datagen::{read_csv, read_jsonl};
use hob::landscape::{LinearParamModel, WinModel};
use hob::simulate::Impression;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// JSONL unless the extension says CSV.
pub fn load_dataset(path: &Path) -> Result<Vec<Impression>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let data = if is_csv(path) {
        read_csv(BufReader::new(file))?
    } else {
        read_jsonl(BufReader::new(file))?
    };
    if data.is_empty() {
        return Err(CliError::Usage(format!("{}: dataset is empty", path.display())));
    }
    Ok(data)
}

pub fn save_dataset(path: &Path, data: &[Impression]) -> Result<()> {
    crate::output::write_atomic(path, |w| {
        if is_csv(path) {
            hob::datagen::write_csv(data, w)?;
        } else {
            hob::datagen::write_jsonl(data, w)?;
        }
        Ok(())
    })
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub fn load_model(path: &Path) -> Result<LinearParamModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(LinearParamModel::from_text(&text)?)
}

/// One prediction per impression, in dataset order.
pub fn predict_all(model: &LinearParamModel, data: &[Impression]) -> Result<Vec<WinModel>> {
    Ok(data
        .iter()
        .map(|imp| model.predict(&imp.features))
        .collect::<std::result::Result<_, _>>()?)
}
