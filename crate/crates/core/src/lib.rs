//! Open-world query processing over a biased sample.
//!
//! A sample of a population is debiased with population `COUNT(*)`
//! aggregates in two complementary ways: per-tuple weights (uniform,
//! regression or iterative proportional fitting) and a Bayesian network whose
//! parameters are constrained to reproduce the aggregates. A hybrid
//! evaluator answers point and GROUP BY queries from the weighted sample when
//! it can and falls back to the network for values the sample never saw.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregates;
pub mod bayesnet;
pub mod bench;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod prune;
pub mod reweight;
pub mod schema;

pub use aggregates::{
    build_incidence, compute_aggregate, compute_aggregate_set, AggregateManifest, AggregateQuery, AggregateSet, Group,
    IncidenceSystem,
};
pub use bayesnet::{
    forward_sample, joint_prob, learn_parameters, learn_structure, marginal_prob, BayesNet, Cpt, Edge, ParamMode,
    ParamOptions, Structure, StructureOptions,
};
pub use error::{Error, Result};
pub use evaluator::{
    bn_groupby, bn_point, exec_weighted, parse_query, AggFn, Filter, HybridModel, Provenance, Query, QueryAnswer,
    QueryKind,
};
pub use model::{build_model, load_model, save_model, BnMode, BuildDiagnostics, BuildOptions, ModelManifest, WeightMethod};
pub use prune::{prune_aggregates, PruneOutcome};
pub use reweight::{ipf_weights, linreg_weights, uniform_weights, IpfOptions, WeightVector};
pub use schema::{load_relation, AttributeKind, Domain, IngestSpec, Relation, Schema};
