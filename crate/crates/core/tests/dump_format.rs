use proptest::prelude::*;

use stochastic_disparity::dump::{DistributionDump, DumpKind, HEADER_LEN};
use stochastic_disparity::model::Region;
use stochastic_disparity::reference::PixelClass;

fn dump_strategy() -> impl Strategy<Value = DistributionDump> {
    (0usize..5, 0usize..5, 1usize..9, 1usize..5, 0usize..4, 1u32..=65535, any::<bool>()).prop_flat_map(
        |(x, y, w, h, d_max, n_max, reference)| {
            let region = Region::new(x, y, w, h);
            let valid = region.coords().filter(|&(px, _)| px >= d_max).count();
            let classes = proptest::collection::vec(0u8..4, valid);
            let counts = proptest::collection::vec(proptest::collection::vec(any::<u16>(), d_max + 2), valid);
            (classes, counts).prop_map(move |(tags, mut counts)| {
                let mut tags = tags.into_iter();
                let mut valid_index = 0;
                let classes = region
                    .coords()
                    .map(|(px, _)| {
                        if px < d_max {
                            return PixelClass::Invalid;
                        }
                        let c = &mut counts[valid_index];
                        valid_index += 1;
                        match tags.next().unwrap() {
                            0 => PixelClass::NoMatch,
                            1 => PixelClass::Timeout,
                            _ => {
                                // the reader recovers the matched index from the counts
                                let top = *c[..d_max + 1].iter().max().unwrap();
                                let d = c[..d_max + 1].iter().position(|&v| v == top).unwrap();
                                c[d] = u16::MAX;
                                PixelClass::Matched(d)
                            }
                        }
                    })
                    .collect();
                DistributionDump {
                    kind: if reference { DumpKind::Reference } else { DumpKind::Stochastic },
                    region,
                    d_max,
                    n_max,
                    classes,
                    counts,
                }
            })
        },
    )
}

proptest! {
    #[test]
    fn dumps_round_trip(dump in dump_strategy()) {
        let bytes = dump.to_bytes();
        prop_assert_eq!(&bytes[..4], b"SDDP");
        prop_assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize, dump.region.width);
        prop_assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), dump.n_max);
        prop_assert!(bytes.len() > HEADER_LEN);
        let back = DistributionDump::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back, dump);
    }

    #[test]
    fn truncated_dumps_are_rejected(dump in dump_strategy(), cut in 1usize..8) {
        let bytes = dump.to_bytes();
        let cut = cut.min(bytes.len());
        prop_assert!(DistributionDump::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }
}
