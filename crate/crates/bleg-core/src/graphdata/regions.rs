//! Packaged 90-region AAL name table. Synthetic datasets reuse it so that
//! prompts carry realistic region names.

const AAL90: &str = include_str!("data/aal90.txt");

/// The 90 AAL region names, in atlas order.
pub fn aal90_regions() -> Vec<String> {
    AAL90.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect()
}

/// First `n` region names, padded with synthetic names when `n` exceeds the
/// atlas (only used by reduced-size test datasets).
pub fn region_names(n: usize) -> Vec<String> {
    let base = aal90_regions();
    (0..n)
        .map(|i| {
            base.get(i)
                .cloned()
                .unwrap_or_else(|| format!("Region_{i}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn atlas_has_90_unique_names() {
        let regions = aal90_regions();
        assert_eq!(regions.len(), 90);
        let unique: HashSet<_> = regions.iter().collect();
        assert_eq!(unique.len(), 90);
        assert_eq!(regions[0], "Precentral_L");
        assert_eq!(regions[66], "Precuneus_L");
        assert_eq!(regions[89], "Temporal_Inf_R");
    }
}
