//! Random frames whose cell values are easy to spot in prompt text.

use nl2vis_core::ingest::{Cell, ColumnData, TableFrame};
use proptest::prelude::*;

#[derive(Debug, Clone, Copy)]
pub enum ColumnKind {
    Integer,
    Real,
    /// Text with this many distinct values.
    Text(usize),
}

fn column_kind() -> impl Strategy<Value = ColumnKind> {
    prop_oneof![
        Just(ColumnKind::Integer),
        Just(ColumnKind::Real),
        (1usize..=40).prop_map(ColumnKind::Text),
    ]
}

/// Values are prefixed with their column index so no two columns share one.
fn column(index: usize, kind: ColumnKind, rows: usize, seed: u64) -> ColumnData {
    let mut state = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let cells = match kind {
        ColumnKind::Integer => (0..rows)
            .map(|_| Cell::Integer(1_000_000 + (next() % 9_000_000) as i64))
            .collect(),
        ColumnKind::Real => (0..rows)
            .map(|_| Cell::Real(10_000.0 + (next() % 90_000_000) as f64 / 1000.0 + 0.0001))
            .collect(),
        ColumnKind::Text(distinct) => {
            let pool: Vec<String> = (0..distinct)
                .map(|i| format!("c{index}v{i}x{:08x}", next() as u32))
                .collect();
            (0..rows.max(distinct))
                .map(|r| {
                    if r % 11 == 10 {
                        Cell::Null
                    } else {
                        Cell::Text(pool[r % distinct].clone())
                    }
                })
                .collect()
        }
    };
    ColumnData::new(format!("col_{index}"), cells)
}

/// Up to six columns; enough rows for the largest text pool.
pub fn frame() -> impl Strategy<Value = TableFrame> {
    (
        prop::collection::vec(column_kind(), 1..=6),
        1usize..60,
        any::<u64>(),
    )
        .prop_map(|(kinds, rows, seed)| {
            // Text pools need room for every value plus the null slots.
            let rows = kinds
                .iter()
                .map(|k| match k {
                    ColumnKind::Text(d) => d + d / 10 + 1,
                    _ => 0,
                })
                .max()
                .unwrap_or(0)
                .max(rows);
            let columns = kinds
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    let mut c = column(i, k, rows, seed);
                    c.cells.truncate(rows);
                    c
                })
                .collect();
            TableFrame::new("random", columns).expect("equal lengths")
        })
}

/// Text form of a cell as it would be spelled in a prompt.
pub fn spelled(cell: &Cell) -> Option<String> {
    match cell {
        Cell::Null => None,
        other => Some(other.to_string()),
    }
}
