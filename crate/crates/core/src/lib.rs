//! Desk-scale model of a loop-permuting side-channel-resistant RISC-V core.

pub mod isa;
pub mod lig;
pub mod rng;
pub mod cpu;
pub mod transform;
pub mod sidechannel;

pub type TraceSet = sidechannel::TraceSet<f64>;
pub type TraceSet32 = sidechannel::TraceSet<f32>;
pub type Campaign = sidechannel::Campaign<f64>;
pub type Campaign32 = sidechannel::Campaign<f32>;
pub type LeakageModel = sidechannel::LeakageModel<f64>;
pub type LeakageModel32 = sidechannel::LeakageModel<f32>;
pub type CpaAccumulator = sidechannel::CpaAccumulator<f64>;
pub type CpaAccumulator32 = sidechannel::CpaAccumulator<f32>;
pub type Ranking = sidechannel::Ranking<f64>;
pub type Ranking32 = sidechannel::Ranking<f32>;
