//! Interval hashing and the DH-PSI exchange.

mod group;
mod hash;
mod psi;

use thiserror::Error;

pub use group::{
    blind, element_u64, encode_elements_b64, jacobi, keygen, to_group, GroupElement, GroupParams, PrivateExponent,
    MODP_2048_NAME, TOY64_NAME,
};
pub use hash::{hash_interval, sha256, HashedInterval};
pub use psi::{blind_carrier_set, client_intersect, respond_to_client, server_respond, MatchResult, Mode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PsiError {
    #[error("exchange of {got} elements exceeds the limit of {max}")]
    TooManyElements { got: usize, max: usize },
    #[error("value is not a member of the order-q subgroup")]
    NotInGroup,
    #[error("private exponent outside [1, q - 1]")]
    ExponentRange,
    #[error("bad element encoding: {0}")]
    Encoding(String),
    #[error("bad group parameters: {0}")]
    Params(String),
}
