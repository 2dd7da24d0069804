use std::collections::BTreeSet;

use crate::model::{Comparison, Dataset, VenueId};

use super::{fit_springrank, rescale_if_identifiable, ComparisonMatrix, RankConfig, RankError, RankScores};

/// Comparisons made by respondents of `field`, optionally without one respondent.
pub fn field_comparisons<'a>(ds: &'a Dataset, field: &str, exclude: Option<&str>) -> Vec<&'a Comparison> {
    ds.comparisons
        .iter()
        .filter(|c| Some(c.respondent_id.as_str()) != exclude)
        .filter(|c| ds.respondents.get(&c.respondent_id).is_some_and(|r| r.field == field))
        .collect()
}

/// Fits over the union of compared venues, ordered by id, and rescales when
/// the inverse temperature is identifiable.
pub(crate) fn fit_pool(comparisons: &[&Comparison], config: &RankConfig, label: &str) -> Result<RankScores, RankError> {
    if comparisons.is_empty() {
        return Err(RankError::EmptyField(label.to_string()));
    }
    let items: BTreeSet<&VenueId> = comparisons.iter().flat_map(|c| [&c.first, &c.second]).collect();
    let matrix = ComparisonMatrix::build(comparisons.iter().copied(), items.into_iter().cloned().collect())?;
    Ok(rescale_if_identifiable(&matrix, fit_springrank(&matrix, config)?))
}

/// One respondent's own ranking over the venues they compared.
pub fn individual_scores(ds: &Dataset, respondent: &str, config: &RankConfig) -> Result<RankScores, RankError> {
    if !ds.respondents.contains_key(respondent) {
        return Err(RankError::UnknownRespondent(respondent.to_string()));
    }
    let own: Vec<&Comparison> = ds.comparisons_of(respondent).collect();
    fit_pool(&own, config, respondent)
}

/// Field consensus fit with the held-out respondent's comparisons removed.
/// Items are the venues compared by the remaining respondents.
pub fn leave_one_out_field_scores(
    ds: &Dataset,
    field: &str,
    held_out: &str,
    config: &RankConfig,
) -> Result<RankScores, RankError> {
    let pool = field_comparisons(ds, field, Some(held_out));
    fit_pool(&pool, config, field)
}

/// Field consensus fit on every comparison of the field.
pub fn field_scores(ds: &Dataset, field: &str, config: &RankConfig) -> Result<RankScores, RankError> {
    let pool = field_comparisons(ds, field, None);
    fit_pool(&pool, config, field)
}

/// Consensus over all fields, optionally leaving one respondent out.
pub fn global_scores(ds: &Dataset, held_out: Option<&str>, config: &RankConfig) -> Result<RankScores, RankError> {
    let pool: Vec<&Comparison> = ds
        .comparisons
        .iter()
        .filter(|c| Some(c.respondent_id.as_str()) != held_out)
        .collect();
    fit_pool(&pool, config, "all fields")
}
