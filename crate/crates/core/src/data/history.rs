use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::ImpressionList;

/// Clicked items per user, ordered by time, from a set of training lists.
#[derive(Debug, Clone, Default)]
pub struct HistoryIndex {
    clicks: BTreeMap<u32, Vec<(i64, u32)>>,
}

impl HistoryIndex {
    pub fn build<'a>(lists: impl IntoIterator<Item = &'a ImpressionList>) -> Self {
        let mut clicks: BTreeMap<u32, Vec<(i64, u32)>> = BTreeMap::new();
        for list in lists {
            let entry = clicks.entry(list.user_id).or_default();
            entry.extend(
                list.candidates
                    .iter()
                    .filter(|c| c.is_positive())
                    .map(|c| (list.timestamp, c.item_id)),
            );
        }
        for events in clicks.values_mut() {
            events.sort_unstable();
        }
        Self { clicks }
    }

    /// Items the user clicked strictly before `timestamp`.
    pub fn before(&self, user: u32, timestamp: i64) -> impl Iterator<Item = u32> + '_ {
        let events = self.clicks.get(&user).map(Vec::as_slice).unwrap_or(&[]);
        let end = events.partition_point(|&(t, _)| t < timestamp);
        events[..end].iter().map(|&(_, item)| item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Candidate;
    use alloc::vec;

    fn list(user: u32, ts: i64, items: &[(u32, u8)]) -> ImpressionList {
        ImpressionList {
            list_id: ts as u64,
            user_id: user,
            timestamp: ts,
            candidates: items
                .iter()
                .map(|&(item_id, label)| Candidate { item_id, label })
                .collect(),
            situations: vec![],
        }
    }

    #[test]
    fn strictly_earlier_clicks_only() {
        let lists = [
            list(1, 10, &[(5, 1), (6, 0)]),
            list(1, 20, &[(7, 1), (8, 1), (9, 0)]),
            list(2, 5, &[(1, 1), (2, 0)]),
        ];
        let h = HistoryIndex::build(&lists);
        assert_eq!(h.before(1, 10).count(), 0);
        assert_eq!(h.before(1, 11).collect::<Vec<_>>(), vec![5]);
        assert_eq!(h.before(1, 99).collect::<Vec<_>>(), vec![5, 7, 8]);
        assert_eq!(h.before(3, 99).count(), 0);
    }
}
