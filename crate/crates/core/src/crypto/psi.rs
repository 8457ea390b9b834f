//! Diffie-Hellman private set intersection.
//!
//! ```text
//! client                                   server
//!   H(P_U)^a            ------------->
//!                       <-------------     H(P_I)^b  (shuffled)
//!                       <-------------     H(P_U)^ab (ordered or shuffled)
//!   (H(P_I)^b)^a, compare with H(P_U)^ab
//! ```
//!
//! In ordered mode the client learns which of its elements matched; in
//! shuffled mode only how many.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::group::{blind, GroupElement, GroupParams, PrivateExponent};
use super::PsiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ordered,
    Shuffled,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ordered" => Ok(Mode::Ordered),
            "shuffled" => Ok(Mode::Shuffled),
            other => Err(format!("unknown mode {other:?} (expected ordered|shuffled)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Ordered => "ordered",
            Mode::Shuffled => "shuffled",
        })
    }
}

/// What the client learns from one exchange. A shuffled exchange carries no
/// index information at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchResult {
    Ordered { matched_indices: Vec<usize> },
    Shuffled { match_count: usize },
}

impl MatchResult {
    pub fn mode(&self) -> Mode {
        match self {
            MatchResult::Ordered { .. } => Mode::Ordered,
            MatchResult::Shuffled { .. } => Mode::Shuffled,
        }
    }

    pub fn match_count(&self) -> usize {
        match self {
            MatchResult::Ordered { matched_indices } => matched_indices.len(),
            MatchResult::Shuffled { match_count } => *match_count,
        }
    }

    pub fn matched_indices(&self) -> Option<&[usize]> {
        match self {
            MatchResult::Ordered { matched_indices } => Some(matched_indices),
            MatchResult::Shuffled { .. } => None,
        }
    }
}

/// Server step 2: blind the carrier set and hide its storage order.
pub fn blind_carrier_set<R: Rng + ?Sized>(
    carrier_elems: &[GroupElement],
    server_key: &PrivateExponent,
    params: &GroupParams,
    rng: &mut R,
) -> Vec<GroupElement> {
    let mut out = blind(carrier_elems, server_key, params);
    out.shuffle(rng);
    out
}

/// Server step 3: blind the client's already-blinded elements a second time.
pub fn respond_to_client<R: Rng + ?Sized>(
    client_blinded: &[GroupElement],
    server_key: &PrivateExponent,
    mode: Mode,
    params: &GroupParams,
    max_elems: usize,
    rng: &mut R,
) -> Result<Vec<GroupElement>, PsiError> {
    if client_blinded.len() > max_elems {
        return Err(PsiError::TooManyElements {
            got: client_blinded.len(),
            max: max_elems,
        });
    }
    let mut out = blind(client_blinded, server_key, params);
    if mode == Mode::Shuffled {
        out.shuffle(rng);
    }
    Ok(out)
}

/// Both server steps at once: `(H(P_U)^ab, H(P_I)^b)`.
pub fn server_respond<R: Rng + ?Sized>(
    client_blinded: &[GroupElement],
    server_key: &PrivateExponent,
    carrier_elems: &[GroupElement],
    mode: Mode,
    params: &GroupParams,
    max_elems: usize,
    rng: &mut R,
) -> Result<(Vec<GroupElement>, Vec<GroupElement>), PsiError> {
    let double = respond_to_client(client_blinded, server_key, mode, params, max_elems, rng)?;
    let carrier = blind_carrier_set(carrier_elems, server_key, params, rng);
    Ok((double, carrier))
}

/// Client steps 4-5: finish blinding the carrier set and intersect.
pub fn client_intersect(
    double_blinded_client: &[GroupElement],
    carrier_blinded: &[GroupElement],
    client_key: &PrivateExponent,
    mode: Mode,
    params: &GroupParams,
) -> MatchResult {
    let carrier: HashSet<GroupElement> = blind(carrier_blinded, client_key, params).into_iter().collect();
    let hits = double_blinded_client
        .iter()
        .enumerate()
        .filter(|(_, e)| carrier.contains(*e));
    match mode {
        Mode::Ordered => MatchResult::Ordered {
            matched_indices: hits.map(|(i, _)| i).collect(),
        },
        Mode::Shuffled => MatchResult::Shuffled {
            match_count: hits.count(),
        },
    }
}
