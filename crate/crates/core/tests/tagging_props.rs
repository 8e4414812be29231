use fmim_core::tagging::{
    convert_scheme, extract_spans, spans_to_tags, validate_sequence, LabelMap, Span, TagScheme,
};
use proptest::prelude::*;

const SENTIMENTS: [&str; 3] = ["POS", "NEU", "NEG"];
const NER: [&str; 4] = ["PER", "ORG", "LOC", "MISC"];

/// Lays out `(gap, len, label)` segments left to right. With `separate`,
/// touching spans that share a label get a one-token gap.
fn layout(segments: &[(usize, usize, usize)], labels: &[&str], separate: bool) -> (Vec<Span>, usize) {
    let mut spans: Vec<Span> = Vec::new();
    let mut at = 0;
    for &(gap, len, label) in segments {
        let label = labels[label % labels.len()];
        let mut gap = gap;
        if separate && gap == 0 && spans.last().is_some_and(|s| s.label == label) {
            gap = 1;
        }
        at += gap;
        spans.push(Span::new(at, at + len, label));
        at += len;
    }
    (spans, at + 2)
}

fn segments() -> impl Strategy<Value = Vec<(usize, usize, usize)>> {
    prop::collection::vec((0usize..3, 1usize..4, 0usize..4), 0..8)
}

proptest! {
    #[test]
    fn unified_round_trip(segs in segments()) {
        let s = TagScheme::unified();
        let (spans, len) = layout(&segs, &SENTIMENTS, true);
        let tags = spans_to_tags(&spans, len, &s).unwrap();
        prop_assert_eq!(extract_spans(&tags, &s).unwrap(), spans);
        prop_assert!(validate_sequence(&tags, &s).is_clean());
    }

    #[test]
    fn bio_round_trip(segs in segments()) {
        let s = TagScheme::bio_ner();
        let (spans, len) = layout(&segs, &NER, false);
        let tags = spans_to_tags(&spans, len, &s).unwrap();
        prop_assert_eq!(extract_spans(&tags, &s).unwrap(), spans);
    }

    #[test]
    fn extracted_spans_sorted_and_disjoint(
        tags in prop::collection::vec(0usize..9, 0..30),
        unified in any::<bool>(),
    ) {
        let s = if unified { TagScheme::unified() } else { TagScheme::bio_ner() };
        let tags: Vec<usize> = tags.into_iter().map(|t| t % s.num_tags()).collect();
        let spans = extract_spans(&tags, &s).unwrap();
        for w in spans.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        prop_assert!(spans.iter().all(|sp| sp.start < sp.end && sp.end <= tags.len()));
    }

    #[test]
    fn conversion_keeps_boundaries(segs in segments()) {
        let uni = TagScheme::unified();
        let ate = TagScheme::ate_bio();
        let (spans, len) = layout(&segs, &SENTIMENTS, true);
        let tags = spans_to_tags(&spans, len, &uni).unwrap();
        let converted = convert_scheme(&tags, &uni, &ate, &LabelMap::aspect()).unwrap();
        let after = extract_spans(&converted, &ate).unwrap();
        prop_assert_eq!(after.len(), spans.len());
        for (a, b) in after.iter().zip(&spans) {
            prop_assert_eq!((a.start, a.end), (b.start, b.end));
            prop_assert_eq!(a.label.as_str(), "ASP");
        }
    }

    #[test]
    fn encode_decode_inverse(tags in prop::collection::vec(0usize..9, 0..20)) {
        let s = TagScheme::bio_ner();
        let names = s.decode(&tags);
        prop_assert_eq!(s.encode(&names).unwrap(), tags);
    }
}
