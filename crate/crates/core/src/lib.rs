//! Anticipatory navigation of a unicycle robot through crowds.
//!
//! Pedestrian futures are modelled as continuous-time stochastic processes
//! ([`trajectory`]) predicted by a small neural network ([`predictor`]). The
//! controller ([`control`]) picks constant controls that minimise distance to
//! goal plus an inverse time-to-collision penalty, where collisions are
//! chance-constrained checks against the predicted pedestrians and an
//! occupancy map ([`collision`], [`occupancy`]). The non-smooth control
//! problem is solved with a derivative-free trust-region method ([`dfo`]).
//! [`crowd`] provides simulated and replayed pedestrians, and [`harness`]
//! ties everything into reproducible episodes with metrics.

pub mod collision;
pub mod control;
pub mod crowd;
pub mod dfo;
pub mod harness;
pub mod occupancy;
pub mod predictor;
pub mod trajectory;

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/trajectories.md")]
    mod trajectories {}
    #[doc = include_str!("../../../book/src/collision.md")]
    mod collision {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/logs.md")]
    mod logs {}
}

/// 2-D point or vector, metres.
pub type Vec2 = nalgebra::Vector2<f64>;
