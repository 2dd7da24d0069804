mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use proptest::prelude::*;
use rand::Rng;

use venuerank::discovery::{CitationIndex, DiscoveryQuestion, DiscoveryState, Source};
use venuerank::model::VenueId;

fn random_index(seed: u64, n: usize) -> (CitationIndex, Vec<(VenueId, u64)>) {
    let mut r = rng(seed);
    let venues: Vec<VenueId> = (0..n).map(|i| vid(&format!("d{i:02}"))).collect();
    let mut counts = Vec::new();
    for a in &venues {
        for b in &venues {
            if a != b && r.random::<f64>() < 0.3 {
                counts.push(((a.clone(), b.clone()), r.random_range(1..20) as f64));
            }
        }
    }
    let works: BTreeMap<VenueId, u64> = venues.iter().map(|v| (v.clone(), r.random_range(1..500))).collect();
    let history = venues.iter().filter(|_| r.random::<f64>() < 0.3).map(|v| (v.clone(), works[v])).collect();
    (CitationIndex::from_counts(counts, works), history)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn venues_are_asked_once_and_the_target_is_met(seed in any::<u64>(), n in 3usize..40, target in 1u32..30, like in 0.0f64..1.0) {
        let (index, history) = random_index(seed, n);
        let mut s = DiscoveryState::new(history, target);
        let mut r = rng(seed ^ 1);
        let mut asked = BTreeSet::new();
        let exhausted;
        loop {
            match s.next_question(&index) {
                DiscoveryQuestion::Ask { venue, source } => {
                    prop_assert!(asked.insert(venue.clone()), "{} asked twice", venue);
                    prop_assert_eq!(s.next_question(&index), DiscoveryQuestion::Ask { venue: venue.clone(), source });
                    s.record(&venue, r.random::<f64>() < like).unwrap();
                }
                DiscoveryQuestion::StageDone => {
                    exhausted = asked.len() < target as usize;
                    break;
                }
            }
            s.check_invariants().map_err(TestCaseError::fail)?;
        }
        prop_assert!(asked.len() <= target as usize);
        if exhausted {
            // nothing left: neither history nor a positive recommendation
            let mut excluded: BTreeSet<VenueId> = asked.clone();
            excluded.extend(s.liked.iter().cloned());
            prop_assert!(index.recommend(&s.liked, &excluded).is_err() || s.history_pool.iter().all(|(v, _)| asked.contains(v)) );
        }
    }

    #[test]
    fn recommendation_ignores_uniform_scaling(seed in any::<u64>(), n in 3usize..30, scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let venues: Vec<VenueId> = (0..n).map(|i| vid(&format!("d{i:02}"))).collect();
        let counts: Vec<((VenueId, VenueId), f64)> = venues
            .iter()
            .flat_map(|a| venues.iter().map(move |b| (a.clone(), b.clone())))
            .filter(|(a, b)| a != b)
            .map(|k| (k, r.random_range(0..10) as f64))
            .collect();
        let works: BTreeMap<VenueId, u64> = venues.iter().map(|v| (v.clone(), 1)).collect();
        let plain = CitationIndex::from_counts(counts.clone(), works.clone());
        let scaled = CitationIndex::from_counts(counts.into_iter().map(|(k, c)| (k, c * scale)), works);
        let liked: Vec<VenueId> = venues.iter().take(3).cloned().collect();
        let excluded: BTreeSet<VenueId> = liked.iter().cloned().collect();
        prop_assert_eq!(plain.recommend(&liked, &excluded), scaled.recommend(&liked, &excluded));
    }
}

#[test]
fn scripted_transcript_matches_hand_derivation() {
    let counts = vec![
        ((vid("h1"), vid("a")), 3.0),
        ((vid("h1"), vid("b")), 1.0),
        ((vid("h2"), vid("c")), 2.0),
    ];
    let works = [("h1", 100), ("h2", 50), ("a", 10), ("b", 10), ("c", 10)].map(|(v, w)| (vid(v), w)).into_iter().collect();
    let index = CitationIndex::from_counts(counts, works);
    let mut s = DiscoveryState::new(vec![(vid("h2"), 50), (vid("h1"), 100)], 5);
    let script = [("h1", Source::History, true), ("h2", Source::History, false), ("a", Source::Recommender, true), ("b", Source::Recommender, false)];
    for (venue, source, liked) in script {
        assert_eq!(s.next_question(&index), DiscoveryQuestion::Ask { venue: vid(venue), source });
        s.record(&vid(venue), liked).unwrap();
    }
    // c is only cited by a rejected venue, so nothing is left to recommend
    assert_eq!(s.next_question(&index), DiscoveryQuestion::StageDone);
    assert_eq!(s.liked, vec![vid("h1"), vid("a")]);
    assert_eq!(s.questions_asked, 4);
}
