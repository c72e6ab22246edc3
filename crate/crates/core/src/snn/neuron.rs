//! Integrate-and-fire layer state.

use crate::coding::BurstState;

/// Membrane update after a spike.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResetMode {
    /// `v ← v + z − V_th(t)`: the residual above threshold is kept.
    #[default]
    Subtract,
    /// `v ← 0`: hard reset to the resting potential. Loses the residual;
    /// kept only for comparison.
    ToRest,
}

/// Non-finite input current at `neuron`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonFiniteInput {
    pub neuron: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronLayerState {
    pub v_mem: Vec<f64>,
    pub spiked: Vec<bool>,
    /// Present for burst-coded layers.
    pub burst: Option<BurstState>,
    /// Threshold carried by the spike emitted this step, `0.0` where silent.
    /// This is the weighted spike vector seen by the next layer.
    pub emitted_weight: Vec<f64>,
}

impl NeuronLayerState {
    pub fn new(n: usize, burst: bool) -> Self {
        NeuronLayerState {
            v_mem: vec![0.0; n],
            spiked: vec![false; n],
            burst: burst.then(|| BurstState::new(n)),
            emitted_weight: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v_mem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_mem.is_empty()
    }

    /// One integrate-and-fire step. A neuron spikes iff
    /// `v_mem + z − V_th(t) ≥ 0`. Returns the number of spikes.
    pub fn fire(
        &mut self,
        z: &[f64],
        thresholds: &[f64],
        reset: ResetMode,
    ) -> Result<usize, NonFiniteInput> {
        debug_assert_eq!(z.len(), self.len());
        debug_assert_eq!(thresholds.len(), self.len());
        let mut count = 0;
        for (neuron, (((v, s), e), (&zj, &th))) in self
            .v_mem
            .iter_mut()
            .zip(self.spiked.iter_mut())
            .zip(self.emitted_weight.iter_mut())
            .zip(z.iter().zip(thresholds))
            .enumerate()
        {
            if !zj.is_finite() {
                return Err(NonFiniteInput { neuron, value: zj });
            }
            let potential = *v + zj;
            if potential - th >= 0.0 {
                *v = match reset {
                    ResetMode::Subtract => potential - th,
                    ResetMode::ToRest => 0.0,
                };
                *s = true;
                *e = th;
                count += 1;
            } else {
                *v = potential;
                *s = false;
                *e = 0.0;
            }
        }
        Ok(count)
    }
}

/// Functional form of [`NeuronLayerState::fire`].
pub fn fire_step(
    state: &NeuronLayerState,
    z: &[f64],
    thresholds: &[f64],
    reset: ResetMode,
) -> Result<NeuronLayerState, NonFiniteInput> {
    let mut next = state.clone();
    next.fire(z, thresholds, reset)?;
    Ok(next)
}
