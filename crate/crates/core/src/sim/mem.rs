//! Memory access cost models: coalesced transaction accounting for global
//! memory, bank-conflict counting for shared memory, and the barrier-
//! interval race detector.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::MachineParams;

/// Cost of one warp-level global access, given each lane's byte range.
///
/// Lanes are coalesced into the set of distinct `transaction_bytes`-aligned
/// segments they touch. A fully coalesced access costs one transaction no
/// matter its size; every segment beyond the minimum `ceil(bytes/segment)`
/// needed for the data adds one more. Returns (cost, segments, minimum).
pub fn transaction_cost(lane_ranges: &[(i64, i64)], transaction_bytes: i64) -> (u64, u64, u64) {
    let mut segments = BTreeSet::new();
    let mut total = 0i64;
    for (start, len) in lane_ranges {
        total += len;
        let mut seg = start / transaction_bytes;
        let last = (start + len - 1) / transaction_bytes;
        while seg <= last {
            segments.insert(seg);
            seg += 1;
        }
    }
    let minimal = ((total + transaction_bytes - 1) / transaction_bytes).max(1) as u64;
    let segs = segments.len() as u64;
    let cost = 1 + segs.saturating_sub(minimal);
    (cost, segs, minimal)
}

/// One warp-wide shared-memory access: which elements (for the race
/// detector) and which 4-byte words (for the bank model) it touches.
#[derive(Debug, Clone)]
pub struct SharedAccessEvent {
    pub warp: u32,
    pub interval: u32,
    pub buffer: String,
    pub write: bool,
    /// Buffer-relative element offsets.
    pub elems: Vec<i64>,
    /// Shared-address-space word offsets (byte address / bank width).
    pub words: Vec<i64>,
}

/// Extra shared-memory cycles: for each access, the maximum number of
/// distinct words requested from one bank, minus one. Lanes hitting the
/// same word broadcast for free.
pub fn count_bank_conflicts(trace: &[SharedAccessEvent], params: &MachineParams) -> u64 {
    trace.iter().map(|e| access_conflicts(&e.words, params)).sum()
}

pub(crate) fn access_conflicts(words: &[i64], params: &MachineParams) -> u64 {
    let mut per_bank: HashMap<i64, HashSet<i64>> = HashMap::new();
    for w in words {
        per_bank.entry(w.rem_euclid(params.banks)).or_default().insert(*w);
    }
    let worst = per_bank.values().map(|s| s.len() as u64).max().unwrap_or(1);
    worst.saturating_sub(1)
}

/// A write/read or write/write pair on the same shared element from two
/// different warps inside one barrier interval. Warps are numbered
/// globally (block * warps_per_block + warp index).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Race {
    pub buffer: String,
    pub elem: i64,
    pub writer_warp: u32,
    pub other_warp: u32,
}

/// Scan a trace (one block) for same-interval conflicts.
pub fn race_check(trace: &[SharedAccessEvent]) -> Vec<Race> {
    // (buffer, elem) -> per-interval writer/reader masks.
    #[derive(Default, Clone)]
    struct ElemState {
        interval: u32,
        writers: u64,
        readers: u64,
    }
    let mut state: HashMap<(String, i64), ElemState> = HashMap::new();
    let mut races = BTreeSet::new();
    for e in trace {
        for elem in &e.elems {
            let key = (e.buffer.clone(), *elem);
            let s = state.entry(key).or_default();
            if s.interval != e.interval {
                s.interval = e.interval;
                s.writers = 0;
                s.readers = 0;
            }
            let bit = 1u64 << (e.warp % 64);
            let others_w = s.writers & !bit;
            let others_r = s.readers & !bit;
            if e.write {
                for w in mask_warps(others_w | others_r) {
                    races.insert(Race {
                        buffer: e.buffer.clone(),
                        elem: *elem,
                        writer_warp: e.warp,
                        other_warp: w,
                    });
                }
                s.writers |= bit;
            } else {
                for w in mask_warps(others_w) {
                    races.insert(Race {
                        buffer: e.buffer.clone(),
                        elem: *elem,
                        writer_warp: w,
                        other_warp: e.warp,
                    });
                }
                s.readers |= bit;
            }
        }
    }
    races.into_iter().collect()
}

fn mask_warps(mask: u64) -> Vec<u32> {
    (0..64).filter(|b| mask & (1 << b) != 0).collect()
}

/// Offset each block-shared buffer within one shared address space so bank
/// positions reflect a real allocation. Offsets are 128-byte aligned.
pub(crate) fn shared_base_offsets(
    globals: &[crate::ir::GlobalBuffer],
) -> BTreeMap<String, i64> {
    let mut out = BTreeMap::new();
    let mut base = 0i64;
    for g in globals {
        out.insert(g.name.clone(), base);
        let bytes = g.ty.alloc_bytes();
        base += (bytes + 127) / 128 * 128;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(warp: u32, interval: u32, write: bool, elems: Vec<i64>) -> SharedAccessEvent {
        SharedAccessEvent {
            warp,
            interval,
            buffer: "s".into(),
            write,
            words: elems.clone(),
            elems,
        }
    }

    #[test]
    fn consecutive_words_are_conflict_free() {
        let p = MachineParams::default();
        let words: Vec<i64> = (0..32).collect();
        assert_eq!(access_conflicts(&words, &p), 0);
    }

    #[test]
    fn stride_32_words_serialize_fully() {
        let p = MachineParams::default();
        let words: Vec<i64> = (0..32).map(|i| i * 32).collect();
        assert_eq!(access_conflicts(&words, &p), 31);
    }

    #[test]
    fn broadcast_is_free() {
        let p = MachineParams::default();
        let words = vec![7i64; 32];
        assert_eq!(access_conflicts(&words, &p), 0);
    }

    #[test]
    fn coalesced_transactions_cost_one() {
        // 32 lanes x 4 contiguous bytes = 128 bytes in one segment.
        let ranges: Vec<(i64, i64)> = (0..32).map(|i| (i * 4, 4)).collect();
        let (cost, segs, minimal) = transaction_cost(&ranges, 128);
        assert_eq!((cost, segs, minimal), (1, 1, 1));
        // A large contiguous vector access still costs one.
        let ranges: Vec<(i64, i64)> = (0..32).map(|i| (i * 16, 16)).collect();
        let (cost, segs, minimal) = transaction_cost(&ranges, 128);
        assert_eq!((cost, segs, minimal), (1, 4, 4));
    }

    #[test]
    fn scattered_lanes_pay_per_segment() {
        let ranges: Vec<(i64, i64)> = (0..32).map(|i| (i * 128, 4)).collect();
        let (cost, segs, _) = transaction_cost(&ranges, 128);
        assert_eq!(segs, 32);
        assert_eq!(cost, 32);
    }

    #[test]
    fn race_needs_two_warps_one_interval() {
        // Write then read in the same interval, different warps.
        let races = race_check(&[ev(0, 1, true, vec![5]), ev(1, 1, false, vec![5])]);
        assert_eq!(races.len(), 1);
        assert_eq!(races[0].writer_warp, 0);
        assert_eq!(races[0].other_warp, 1);
        // Barrier between them: no race.
        let races = race_check(&[ev(0, 1, true, vec![5]), ev(1, 2, false, vec![5])]);
        assert!(races.is_empty());
        // Same warp: no race.
        let races = race_check(&[ev(0, 1, true, vec![5]), ev(0, 1, false, vec![5])]);
        assert!(races.is_empty());
        // Read before write in round-robin order still races.
        let races = race_check(&[ev(0, 1, false, vec![5]), ev(1, 1, true, vec![5])]);
        assert_eq!(races.len(), 1);
        assert_eq!(races[0].writer_warp, 1);
    }
}
