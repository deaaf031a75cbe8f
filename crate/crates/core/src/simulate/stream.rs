use serde::{Deserialize, Serialize};

use super::{Replay, Result, Strategy};
use crate::control::{pid_step, roi, Campaign, ControlConfig, ControlState, TraceRow};
use crate::mca::{ChannelEtas, Eta3Aligner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub trace: Vec<TraceRow>,
    pub spend: f64,
    pub value: f64,
    pub final_state: ControlState,
}

/// Replays the dataset as a stream of `config.periods` equal, contiguous
/// control periods. Each period bids with the current multipliers, then a
/// PID step updates `eta`. Aligned strategies refit `eta3` from the recent
/// uniform first-price history before every period.
pub fn run_streaming(
    replay: &Replay<'_>,
    strategy: Strategy,
    campaign: &Campaign,
    config: &ControlConfig,
    eta0: f64,
) -> Result<StreamReport> {
    config.validate()?;
    campaign.validate()?;
    let n = replay.dataset().len();
    let periods = config.periods;
    let mut state = ControlState::new(eta0, config);
    let mut aligner = Eta3Aligner::default();
    // Fallback eta3 / eta before the history supports a fit (b = 1).
    let mut ratio = 0.5;
    let mut trace = Vec::with_capacity(periods);
    for p in 0..periods {
        let range = p * n / periods..(p + 1) * n / periods;
        let eta = state.eta;
        let eta3 = if strategy.aligns() {
            let e3 = aligner
                .align(eta, eta * ratio)
                .clamp(config.eta_min, eta);
            ratio = e3 / eta;
            e3
        } else {
            eta
        };
        let etas = ChannelEtas { eta, eta3 };
        let (value, spend, uniform_value) = replay.period_totals(strategy, &etas, range)?;
        if strategy.aligns() && uniform_value > 0.0 {
            aligner.observe(eta3, uniform_value);
        }
        state = pid_step(&state, (spend, value), campaign, config);
        trace.push(TraceRow {
            period: p + 1,
            eta,
            eta3,
            spend,
            value,
            roi: roi(value, spend),
            error: state.last_error,
        });
    }
    Ok(StreamReport {
        trace,
        spend: state.spend_so_far,
        value: state.value_so_far,
        final_state: state,
    })
}
