//! Poisson network autoregression with node clusters.
//!
//! Counts `y[i, t]` on the nodes of an undirected network are modelled as
//! conditionally Poisson with mean
//! `theta1 * v[i] + theta2 * x[i, t-1] + theta3 * y[i, t-1]`, where `x` is a
//! neighbour average and the coefficient triple is shared by the nodes of a
//! cluster. The partition gets either a distance-dependent prior driven by
//! shortest-path hops or a finite Dirichlet mixture, and is sampled together
//! with the coefficients by Gibbs and random-walk Metropolis updates.

pub mod cli;
pub mod error;
pub mod eval;
pub mod graph;
pub mod mcmc;
pub mod model;
pub mod poisson;
pub mod posterior;
pub mod prior;
pub mod sim;

pub use error::{Error, Result};
pub use graph::{ddp_weights, shortest_path_matrix, DistanceMatrix, Network, WeightMatrix};
pub use mcmc::{run_chain, run_multichain, Draw, McmcConfig, PosteriorSamples, Sampler};
pub use model::{build_predictors, ClusterParams, CountSeries, ModelData, PredictorMode, Predictors, TimeWindow};
pub use posterior::{cocluster_matrix, least_squares_partition, predictive_pmf, PoissonMixture, PredictiveDistribution};
pub use prior::{CoefficientPrior, DdpHyper, PartitionPrior, PartitionState};
