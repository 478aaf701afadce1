//! α-sweep: one full joint training per interpolation weight, all with a
//! shared seed, reporting overall PER (oracle-head and switched-head) and
//! AID accuracy on the held-out set.

use crate::corpus::Corpus;
use crate::error::Result;
use crate::model::{check_alpha, AmConfig, ModelKind};
use crate::train::{evaluate, heldout_split_for, run_training, HeadSelection, TrainingConfig};

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub alpha: f64,
    pub per_oracle: Option<f64>,
    pub per_switched: Option<f64>,
    pub aid_acc: Option<f64>,
    /// Training failure recorded for this α; the sweep continues.
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str = "alpha,per_oracle,per_switched,aid_acc,error";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.alpha,
            opt(self.per_oracle),
            opt(self.per_switched),
            opt(self.aid_acc),
            self.error.as_deref().unwrap_or_default()
        )
    }
}

pub fn alpha_sweep(
    corpus: &Corpus,
    am: &AmConfig,
    tc: &TrainingConfig,
    alphas: &[f64],
) -> Result<Vec<SweepRow>> {
    for &alpha in alphas {
        check_alpha(alpha)?;
    }
    let heldout = heldout_split_for(corpus, ModelKind::Joint, tc)?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let tc_alpha = TrainingConfig {
            alpha,
            ..tc.clone()
        };
        let row = match run_training(corpus, ModelKind::Joint, am, &tc_alpha) {
            Ok(outcome) => {
                let store = &outcome.checkpoint.params;
                let oracle =
                    evaluate(store, am, ModelKind::Joint, &heldout, &HeadSelection::Oracle)?;
                let switched =
                    evaluate(store, am, ModelKind::Joint, &heldout, &HeadSelection::OwnAid)?;
                SweepRow {
                    alpha,
                    per_oracle: oracle.overall_per(),
                    per_switched: switched.overall_per(),
                    aid_acc: switched.aid.map(|a| a.accuracy),
                    error: outcome.diverged_at.map(|e| format!("diverged at epoch {e}")),
                }
            }
            Err(err) => SweepRow {
                alpha,
                per_oracle: None,
                per_switched: None,
                aid_acc: None,
                error: Some(err.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(rows)
}
