use proptest::prelude::*;
use simulst::segmentation::{fixed_plan, oracle_word_plan, random_plan, SegmentationPlan, WordSpan};

fn covers(plan: &SegmentationPlan, t: usize) -> Result<(), TestCaseError> {
    let b = plan.boundaries();
    prop_assert_eq!(b.last().copied(), Some(t));
    prop_assert!(b.windows(2).all(|w| w[0] < w[1]), "{:?}", b);
    prop_assert_eq!(plan.segments().iter().sum::<usize>(), t);
    prop_assert!(plan.segments().iter().all(|&n| n > 0));
    Ok(())
}

/// Contiguous words of the given lengths, optionally followed by silence.
fn words(lens: &[usize], tail: usize) -> (Vec<WordSpan>, usize) {
    let mut at = 0;
    let spans = lens
        .iter()
        .map(|&n| {
            let w = WordSpan { start: at, end: at + n };
            at += n;
            w
        })
        .collect();
    (spans, at + tail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fixed_plans_read_k_then_strides(t in 1usize..3000, k in 0usize..300, s in 1usize..64) {
        let plan = fixed_plan(t, k, s).unwrap();
        covers(&plan, t)?;
        let segs = plan.segments();
        prop_assert_eq!(segs[0], if k == 0 { s } else { k }.min(t));
        let rest = &segs[1..];
        if let Some((last, middle)) = rest.split_last() {
            prop_assert!(middle.iter().all(|&n| n == s));
            prop_assert!(*last <= s);
        }
    }

    #[test]
    fn random_plans_stay_within_bounds(t in 1usize..3000, low in 1usize..40, extra in 0usize..60, seed in any::<u64>()) {
        let high = low + extra;
        let plan = random_plan(t, low, high, seed).unwrap();
        covers(&plan, t)?;
        let segs = plan.segments();
        let (last, body) = segs.split_last().unwrap();
        prop_assert!(body.iter().all(|&n| (low..=high).contains(&n)));
        prop_assert!(*last <= high);
        prop_assert_eq!(random_plan(t, low, high, seed).unwrap(), plan);
    }

    #[test]
    fn oracle_plans_cut_at_word_ends(
        lens in prop::collection::vec(1usize..60, 1..20),
        tail in 0usize..20,
        k in 0usize..300,
    ) {
        let (spans, t) = words(&lens, tail);
        let (plan, gaps) = oracle_word_plan(t, &spans, k).unwrap();
        prop_assert_eq!(gaps, 0);
        covers(&plan, t)?;
        let ends: Vec<usize> = spans.iter().map(|w| w.end).collect();
        let b = plan.boundaries();
        let (last, inner) = b.split_last().unwrap();
        prop_assert_eq!(*last, t);
        prop_assert!(inner.iter().all(|e| ends.contains(e)));
        // the first read is the first word end reaching k, or everything
        let first = ends.iter().copied().find(|&e| e >= k);
        match first {
            Some(e) if e != *ends.last().unwrap() => prop_assert_eq!(b[0], e),
            _ => prop_assert_eq!(b, &[t][..]),
        }
        // afterwards exactly one word per read
        let from = ends.iter().position(|&e| Some(e) == first).unwrap_or(ends.len() - 1);
        prop_assert_eq!(b.len(), ends.len() - from);
    }
}
