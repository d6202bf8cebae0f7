//! Shared fixtures for the benchmarks.

use dwlight::lattice::{move_schedule, presets};
use dwlight::{CorrelationTensor, CouplingSchedule, GaussianMoments, InitialState, Result};

/// One wall move on the transport lattice with a squeezed input at the wall.
pub fn transport_fixture() -> Result<(CouplingSchedule, GaussianMoments, CorrelationTensor)> {
    let spec = presets::transport();
    let sched = move_schedule(&spec, 0, dwlight::Direction::Right, &presets::bend())?;
    let (m, t) = InitialState::Squeezed { sites: vec![15], r: 1f64.asinh(), phase: 0.0 }.prepare(spec.n_sites)?;
    Ok((sched, m, t))
}
