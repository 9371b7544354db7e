//! Profiled vehicle routing: instance generation, a parallel-construction
//! MDP, reference solvers, a small reverse-mode autodiff core, the
//! collaborative attention policy, and its REINFORCE trainer.

pub mod camp;
pub mod env;
pub mod eval;
pub mod instance;
pub mod nd;
pub mod oracle;
pub mod trainer;
pub mod validator;

// The guide in book/ is compiled here so its snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/instances.md")]
    mod instances {}
    #[doc = include_str!("../../../book/src/environment.md")]
    mod environment {}
    #[doc = include_str!("../../../book/src/oracles.md")]
    mod oracles {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
