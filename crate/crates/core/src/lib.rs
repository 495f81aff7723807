//! Staged recommendation experiments with new-item fairness.
//!
//! A corpus is split into a training period and test stages ([`corpus`]). A
//! factorization backbone ranks candidates ([`backbone`]), and a Q-learning
//! agent can re-rank them ([`agent`]). The feedback simulator
//! ([`envsim`]) scores both methods stage by stage ([`metrics`]).
//! [`experiment`] ties the pieces together the same way the command-line
//! tool does.

pub mod agent;
pub mod backbone;
pub mod corpus;
pub mod envsim;
pub mod experiment;
pub mod ids;
pub mod metrics;
pub mod qnet;
pub mod seeding;
pub mod timeline;

pub use ids::{ItemId, Registry, UserId};
pub use timeline::{ItemTimeline, Novelty};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub struct $name;
        };
    }
    chapter!(Data, "data.md");
    chapter!(Metrics, "metrics.md");
    chapter!(Agent, "agent.md");
    chapter!(Library, "library.md");
    chapter!(Configuration, "configuration.md");
    chapter!(Reproducibility, "reproducibility.md");
}
