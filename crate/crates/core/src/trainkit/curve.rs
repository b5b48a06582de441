use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Zero-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub records: Vec<EpochRecord>,
}

impl LossCurve {
    pub fn push(&mut self, r: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if r.epoch <= last.epoch {
                return Err(Error::contract(format!(
                    "epoch {} recorded after epoch {}",
                    r.epoch, last.epoch
                )));
            }
        }
        self.records.push(r);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn train(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_mse).collect()
    }

    /// Validation series, falling back to training MSE where absent.
    pub fn val(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.val_mse.unwrap_or(r.train_mse))
            .collect()
    }

    /// `epoch,train_mse,val_mse` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for r in &self.records {
            let val = r.val_mse.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, val));
        }
        out
    }
}

/// First epoch `e` at which the mean validation MSE over `[e, e+w)` falls by
/// a relative amount below `tol` over the following window `[e+w, e+2w)`.
/// `None` if no such `e` has both windows inside the curve, or if `window < 2`.
pub fn plateau_epoch(curve: &LossCurve, window: usize, tol: f64) -> Option<usize> {
    if window < 2 {
        return None;
    }
    let v = curve.val();
    let mean = |s: usize| v[s..s + window].iter().sum::<f64>() / window as f64;
    (0..=v.len().checked_sub(2 * window)?)
        .find(|&e| {
            let (now, next) = (mean(e), mean(e + window));
            let drop = if now > 0.0 { (now - next) / now } else { 0.0 };
            drop < tol
        })
        .map(|e| curve.records[e].epoch)
}
