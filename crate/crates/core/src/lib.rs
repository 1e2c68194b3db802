//! Executable knowledge-graph memory for GUI agents.
//!
//! Exploration trajectories are merged into an alternating state/action
//! graph ([`kg`]), frequent action chains are mined into reusable groups
//! ([`groups`]), and executable plans are extracted with Q-guided Monte Carlo
//! tree search ([`mcts`]) over the finite-horizon MDP the graph induces
//! ([`mdp`]). The Q-model ([`scorer`]) is warmed up on preference pairs and
//! refined on Bellman targets harvested from its own search trees
//! ([`pipeline`]). [`sim`] provides seeded synthetic environments and
//! [`bench`] the ablation harness. [`verify`] checks a graph against the
//! greedy-optimality and rollout-agreement properties.

pub mod bench;
pub mod fixtures;
pub mod groups;
pub mod hashing;
pub mod io;
pub mod kg;
pub mod mcts;
pub mod mdp;
pub mod pipeline;
pub mod scorer;
pub mod sim;
pub mod verify;
