//! The prototxt-style net and solver description language: lexer, parser,
//! typed net model, canonical serializer, deploy derivation and editor
//! completion.

mod complete;
mod deploy;
mod diagnostic;
mod lexer;
mod net;
mod serialize;
mod solver;
pub mod tree;

pub use complete::{completion_context, is_scope_key, offset_of};
pub use deploy::{derive_deploy, DeployError};
pub use diagnostic::{Diagnostic, Diagnostics, Pos, Severity, Span, Stage};
pub use lexer::{lex, lex_tolerant, Lexed, Token, TokenKind};
pub use net::{
    kind_param_keys, parse_net, parse_net_with_warnings, ConvParams, DataParams, InnerProductParams, LayerKind,
    LayerParams, LayerSpans, LayerSpec, NetSpec, PoolMethod, PoolParams, SourceSpans,
};
pub use serialize::{quote, serialize_net};
pub use solver::{format_real, parse_solver, parse_solver_with_warnings, serialize_solver, LrPolicy, SolverConfig};
