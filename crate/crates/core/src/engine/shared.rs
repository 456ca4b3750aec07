//! Shared phase-variable cells in packed or cache-line-padded layout.

use std::sync::atomic::{AtomicU64, Ordering};

use super::EngineError;

pub const DEFAULT_LINE_SIZE: usize = 64;
const CELL_BYTES: usize = std::mem::size_of::<AtomicU64>();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// Cells are contiguous 8-byte words.
    Packed,
    /// Each cell starts its own cache line.
    Padded,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Packed => "packed",
            Layout::Padded => "padded",
        }
    }
}

/// Slots for the `2s` phase variables. Each slot holds the bit pattern of
/// one `f64`, so reads and writes are indivisible.
///
/// The backing buffer is over-allocated and the first cell is placed at a
/// line-aligned offset inside it.
pub struct SharedPhase {
    buf: Vec<AtomicU64>,
    base: usize,
    stride: usize,
    nvars: usize,
    layout: Layout,
    line_size: usize,
    owners: Option<Vec<usize>>,
    owner_violations: AtomicU64,
}

impl std::fmt::Debug for SharedPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SharedPhase")
            .field("layout", &self.layout)
            .field("line_size", &self.line_size)
            .field("values", &self.snapshot())
            .finish()
    }
}

pub fn validate_line_size(line_size: usize) -> Result<(), EngineError> {
    if line_size >= CELL_BYTES && line_size.is_power_of_two() {
        Ok(())
    } else {
        Err(EngineError::InvalidLineSize(line_size))
    }
}

impl SharedPhase {
    pub fn new(layout: Layout, nvars: usize, line_size: usize) -> Result<Self, EngineError> {
        validate_line_size(line_size)?;
        if nvars < 2 {
            return Err(EngineError::TooFewVariables(nvars));
        }
        let words_per_line = line_size / CELL_BYTES;
        let stride = match layout {
            Layout::Packed => 1,
            Layout::Padded => words_per_line,
        };
        let len = (nvars - 1) * stride + 1 + words_per_line;
        let buf: Vec<AtomicU64> = (0..len).map(|_| AtomicU64::new(0)).collect();
        let base = (0..words_per_line)
            .find(|&i| (&buf[i] as *const AtomicU64 as usize).is_multiple_of(line_size))
            .expect("an 8-byte-aligned buffer has a line boundary within one line");
        Ok(Self {
            buf,
            base,
            stride,
            nvars,
            layout,
            line_size,
            owners: None,
            owner_violations: AtomicU64::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.nvars
    }

    pub fn is_empty(&self) -> bool {
        self.nvars == 0
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn line_size(&self) -> usize {
        self.line_size
    }

    #[inline]
    fn cell(&self, index: usize) -> &AtomicU64 {
        &self.buf[self.base + index * self.stride]
    }

    /// Address of cell `index`, for layout checks.
    pub fn cell_address(&self, index: usize) -> usize {
        self.cell(index) as *const AtomicU64 as usize
    }

    #[inline]
    pub fn load(&self, index: usize) -> f64 {
        f64::from_bits(self.cell(index).load(Ordering::Acquire))
    }

    /// Copies every cell into `out`.
    #[inline]
    pub fn snapshot_into(&self, out: &mut [f64]) {
        for (i, slot) in out.iter_mut().enumerate().take(self.nvars) {
            *slot = self.load(i);
        }
    }

    pub fn snapshot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.nvars];
        self.snapshot_into(&mut v);
        v
    }

    pub fn publish(&self, index: usize, value: f64) -> Result<(), EngineError> {
        if index >= self.nvars {
            return Err(EngineError::IndexOutOfRange {
                index,
                len: self.nvars,
            });
        }
        self.cell(index).store(value.to_bits(), Ordering::Release);
        Ok(())
    }

    /// Records which worker owns each cell; see [`SharedPhase::publish_as`].
    pub fn set_owners(&mut self, owners: Vec<usize>) {
        assert_eq!(owners.len(), self.nvars);
        self.owners = Some(owners);
    }

    /// Engine-side publish. In debug builds a write from a worker that does
    /// not own the cell is counted as a violation.
    #[inline]
    pub fn publish_as(&self, worker: usize, index: usize, value: f64) {
        if cfg!(debug_assertions) {
            if let Some(owners) = &self.owners {
                if owners[index] != worker {
                    self.owner_violations.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        self.cell(index).store(value.to_bits(), Ordering::Release);
    }

    pub fn owner_violations(&self) -> u64 {
        self.owner_violations.load(Ordering::Relaxed)
    }

    /// Checks the address invariants of this allocation's layout.
    pub fn layout_holds(&self) -> bool {
        let line = self.line_size;
        let addrs: Vec<usize> = (0..self.nvars).map(|i| self.cell_address(i)).collect();
        match self.layout {
            Layout::Padded => {
                addrs.iter().all(|a| a % line == 0)
                    && addrs.windows(2).all(|w| w[1] - w[0] >= line)
            }
            Layout::Packed => {
                let first_line = addrs[0] / line;
                let last_line = (addrs[self.nvars - 1] + CELL_BYTES - 1) / line;
                let lines = (self.nvars * CELL_BYTES).div_ceil(line);
                addrs.windows(2).all(|w| w[1] - w[0] == CELL_BYTES)
                    && last_line - first_line < lines
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn padded_cells_are_on_separate_lines() {
        let s = SharedPhase::new(Layout::Padded, 4, 64).unwrap();
        assert_eq!(s.len(), 4);
        for i in 0..4 {
            assert_eq!(s.cell_address(i) % 64, 0);
            for j in 0..i {
                assert!(s.cell_address(i).abs_diff(s.cell_address(j)) >= 64);
            }
        }
        assert!(s.layout_holds());
    }

    #[test]
    fn packed_cells_share_one_line() {
        let s = SharedPhase::new(Layout::Packed, 4, 64).unwrap();
        let first = s.cell_address(0);
        assert_eq!(first % 64, 0);
        for i in 0..4 {
            assert_eq!(s.cell_address(i), first + 8 * i);
            assert_eq!(s.cell_address(i) / 64, first / 64);
        }
        assert!(s.layout_holds());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(
            SharedPhase::new(Layout::Padded, 4, 7).unwrap_err(),
            EngineError::InvalidLineSize(7)
        );
        assert!(SharedPhase::new(Layout::Padded, 4, 4).is_err());
        assert!(SharedPhase::new(Layout::Padded, 4, 96).is_err());
        assert!(SharedPhase::new(Layout::Packed, 1, 64).is_err());
    }

    #[test]
    fn publish_and_snapshot() {
        let s = SharedPhase::new(Layout::Padded, 4, 64).unwrap();
        assert_eq!(s.snapshot(), vec![0.0; 4]);
        for (i, v) in [1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
            s.publish(i, v).unwrap();
        }
        assert_eq!(s.snapshot(), vec![1.0, 2.0, 3.0, 4.0]);
        s.publish(2, 7.5).unwrap();
        assert_eq!(s.load(2), 7.5);
        assert_eq!(
            s.publish(9, 1.0),
            Err(EngineError::IndexOutOfRange { index: 9, len: 4 })
        );
        s.publish(0, -0.0).unwrap();
        assert_eq!(s.load(0).to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn owner_check_counts_foreign_writes() {
        let mut s = SharedPhase::new(Layout::Packed, 2, 64).unwrap();
        s.set_owners(vec![0, 1]);
        s.publish_as(0, 0, 1.0);
        s.publish_as(1, 1, 1.0);
        assert_eq!(s.owner_violations(), 0);
        s.publish_as(0, 1, 1.0);
        if cfg!(debug_assertions) {
            assert_eq!(s.owner_violations(), 1);
        }
    }

    #[test]
    fn concurrent_disjoint_publishers_lose_nothing() {
        for layout in [Layout::Packed, Layout::Padded] {
            let s = Arc::new(SharedPhase::new(layout, 4, 64).unwrap());
            let barrier = Arc::new(std::sync::Barrier::new(2));
            let handles: Vec<_> = (0..2)
                .map(|w| {
                    let s = Arc::clone(&s);
                    let barrier = Arc::clone(&barrier);
                    std::thread::spawn(move || {
                        let mut lost = 0;
                        for it in 0..100_000u64 {
                            s.publish(w, (it * 2 + w as u64) as f64).unwrap();
                            barrier.wait();
                            let snap = s.snapshot();
                            if snap[0] != (it * 2) as f64 || snap[1] != (it * 2 + 1) as f64 {
                                lost += 1;
                            }
                            barrier.wait();
                        }
                        lost
                    })
                })
                .collect();
            for h in handles {
                assert_eq!(h.join().unwrap(), 0);
            }
        }
    }
}
