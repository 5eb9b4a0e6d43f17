use super::{CanError, CanFrame, Level};

/// Winner of bitwise arbitration among frames that start SOF together.
///
/// The identifier is sent MSB first followed by RTR, and a dominant (0) bit
/// overrides a recessive one, so the lowest identifier wins and a data frame
/// beats a remote frame. Two contenders with the same identifier are a
/// configuration fault.
pub fn arbitration_winner(contenders: &[CanFrame]) -> Result<usize, CanError> {
    let mut seen = std::collections::BTreeSet::new();
    for f in contenders {
        if !seen.insert(f.id()) {
            return Err(CanError::DuplicateId(f.id()));
        }
    }
    contenders
        .iter()
        .enumerate()
        .min_by_key(|(_, f)| (f.id(), f.is_remote()))
        .map(|(i, _)| i)
        .ok_or(CanError::NoContenders)
}

/// Index of the first bit where two transmitted sequences differ.
pub fn first_divergence(a: &[Level], b: &[Level]) -> Option<usize> {
    a.iter().zip(b).position(|(x, y)| x != y)
}
