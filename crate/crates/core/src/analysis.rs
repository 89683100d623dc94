//! Post-processing of run output: histogram free-energy surfaces, exchange
//! acceptance statistics and round-trip counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exchange::{apply_swaps, ExchangeRecord};
use crate::model::{ReplicaGrid, BOLTZMANN_KCAL};

/// Contour spacing suggested for exported surfaces, kcal/mol.
pub const CONTOUR_LEVEL: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinAxis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl BinAxis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidCount(format!("need at least 2 bins, got {bins}")));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidRange(format!("bad bin range [{lo}, {hi})")));
        }
        Ok(BinAxis { lo, hi, bins })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.width()
    }

    /// Bin of `x`; the upper edge belongs to the last bin.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let b = ((x - self.lo) / self.width()) as usize;
        Some(b.min(self.bins - 1))
    }
}

/// Free energy per bin, shifted so the lowest occupied bin is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct FreeEnergySurface {
    pub axes: Vec<BinAxis>,
    pub temperature: f64,
    /// Row-major over `axes`; `None` marks an unoccupied bin.
    pub free_energy: Vec<Option<f64>>,
    pub counts: Vec<u64>,
}

impl FreeEnergySurface {
    fn flat_index(axes: &[BinAxis], sample: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (axis, &x) in axes.iter().zip(sample) {
            idx = idx * axis.bins + axis.bin_of(x)?;
        }
        Some(idx)
    }

    pub fn bin_centers(&self, flat: usize) -> Vec<f64> {
        let mut rest = flat;
        let mut centers = vec![0.0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            centers[k] = axis.center(rest % axis.bins);
            rest /= axis.bins;
        }
        centers
    }

    /// CSV with one row per occupied bin: bin centers, F, count.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for k in 0..self.axes.len() {
            out.push_str(&format!("x{k},"));
        }
        out.push_str("free_energy,count\n");
        for (i, f) in self.free_energy.iter().enumerate() {
            let Some(f) = f else { continue };
            for c in self.bin_centers(i) {
                out.push_str(&format!("{c},"));
            }
            out.push_str(&format!("{f},{}\n", self.counts[i]));
        }
        out
    }
}

/// Direct histogram estimate `F_b = -k_B T ln p_b`. Samples outside the axes
/// are ignored.
pub fn free_energy_histogram(
    samples: &[Vec<f64>],
    axes: &[BinAxis],
    temperature: f64,
) -> Result<FreeEnergySurface> {
    if axes.is_empty() {
        return Err(Error::InvalidConfig("no histogram axes".into()));
    }
    for a in axes {
        BinAxis::new(a.lo, a.hi, a.bins)?;
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidRange(format!("temperature {temperature} must be positive")));
    }
    let total_bins: usize = axes.iter().map(|a| a.bins).product();
    let mut counts = vec![0u64; total_bins];
    let mut n = 0u64;
    for s in samples {
        if s.len() < axes.len() {
            return Err(Error::InvalidConfig(format!(
                "sample has {} coordinates, histogram needs {}",
                s.len(),
                axes.len()
            )));
        }
        if let Some(i) = FreeEnergySurface::flat_index(axes, s) {
            counts[i] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoData("no samples inside the histogram range".into()));
    }
    let kt = BOLTZMANN_KCAL * temperature;
    let raw: Vec<Option<f64>> = counts
        .iter()
        .map(|&c| (c > 0).then(|| -kt * (c as f64 / n as f64).ln()))
        .collect();
    let min = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    Ok(FreeEnergySurface {
        axes: axes.to_vec(),
        temperature,
        free_energy: raw.into_iter().map(|f| f.map(|f| f - min)).collect(),
        counts,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub attempted: u64,
    pub accepted: u64,
}

impl Tally {
    /// `None` when nothing was attempted.
    pub fn ratio(&self) -> Option<f64> {
        (self.attempted > 0).then(|| self.accepted as f64 / self.attempted as f64)
    }

    fn add(&mut self, accepted: bool) {
        self.attempted += 1;
        self.accepted += accepted as u64;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcceptanceStats {
    pub dim: usize,
    pub overall: Tally,
    /// Entry `k` counts attempts between ladder slots `k` and `k + 1`.
    pub per_pair: Vec<Tally>,
}

fn replay<F>(records: &[ExchangeRecord], initial: &ReplicaGrid, mut visit: F) -> Result<()>
where
    F: FnMut(&ReplicaGrid, &ExchangeRecord),
{
    let mut grid = initial.clone();
    for rec in records {
        visit(&grid, rec);
        apply_swaps(&mut grid, rec)?;
    }
    Ok(())
}

/// Accepted/attempted in `dim`, overall and per adjacent ladder pair. Slot
/// assignments are reconstructed by replaying every record from `initial`.
pub fn acceptance_stats(
    records: &[ExchangeRecord],
    initial: &ReplicaGrid,
    dim: usize,
) -> Result<AcceptanceStats> {
    if records.is_empty() {
        return Err(Error::NoData("no exchange records".into()));
    }
    let len = initial
        .dimensions()
        .get(dim)
        .ok_or_else(|| Error::InvalidConfig(format!("dimension {dim} out of range")))?
        .len();
    let mut stats = AcceptanceStats {
        dim,
        overall: Tally::default(),
        per_pair: vec![Tally::default(); len.saturating_sub(1)],
    };
    replay(records, initial, |grid, rec| {
        if rec.dim != dim {
            return;
        }
        for p in &rec.pairs {
            let (a, b) = (grid.replicas[p.i].coords[dim], grid.replicas[p.j].coords[dim]);
            stats.overall.add(p.accepted);
            if a.abs_diff(b) == 1 {
                stats.per_pair[a.min(b)].add(p.accepted);
            }
        }
    })?;
    Ok(stats)
}

/// Per-replica count of bottom → top → bottom traversals of the ladder in `dim`.
pub fn round_trips(
    records: &[ExchangeRecord],
    initial: &ReplicaGrid,
    dim: usize,
) -> Result<Vec<u32>> {
    let len = initial
        .dimensions()
        .get(dim)
        .ok_or_else(|| Error::InvalidConfig(format!("dimension {dim} out of range")))?
        .len();
    let mut counts = vec![0u32; initial.len()];
    if len < 2 {
        return Ok(counts);
    }
    let top = len - 1;
    #[derive(Clone, Copy, PartialEq)]
    enum Leg {
        Unanchored,
        Ascending,
        Descending,
    }
    let leg_at = |slot: usize| match slot {
        0 => Leg::Ascending,
        _ => Leg::Unanchored,
    };
    let mut legs: Vec<Leg> = initial.replicas.iter().map(|r| leg_at(r.coords[dim])).collect();
    let mut grid = initial.clone();
    for rec in records {
        apply_swaps(&mut grid, rec)?;
        if rec.dim != dim {
            continue;
        }
        for p in rec.pairs.iter().filter(|p| p.accepted) {
            for id in [p.i, p.j] {
                let slot = grid.replicas[id].coords[dim];
                legs[id] = match (legs[id], slot) {
                    (_, 0) if legs[id] == Leg::Descending => {
                        counts[id] += 1;
                        Leg::Ascending
                    }
                    (_, 0) => Leg::Ascending,
                    (Leg::Ascending, s) if s == top => Leg::Descending,
                    (leg, _) => leg,
                };
            }
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exchange::PairAttempt;
    use crate::model::{build_grid, DimensionKind, DimensionSpec};
    use proptest::prelude::*;

    fn ladder_grid(n: usize) -> ReplicaGrid {
        let values = (0..n).map(|i| 300.0 + i as f64).collect();
        build_grid(vec![DimensionSpec::new(DimensionKind::Temperature, values).unwrap()], 0).unwrap()
    }

    fn rec(pairs: &[(usize, usize, bool)]) -> ExchangeRecord {
        ExchangeRecord {
            cycle: 0,
            dim: 0,
            pairs: pairs
                .iter()
                .map(|&(i, j, accepted)| PairAttempt { i, j, delta: 0.0, u: 0.0, accepted })
                .collect(),
        }
    }

    #[test]
    fn flat_samples_give_flat_surface() {
        let axis = BinAxis::new(0.0, 10.0, 10).unwrap();
        let samples: Vec<Vec<f64>> = (0..1000).map(|i| vec![(i % 10) as f64 + 0.5]).collect();
        let s = free_energy_histogram(&samples, &[axis], 300.0).unwrap();
        assert!(s.free_energy.iter().all(|f| f.unwrap().abs() < 1e-12));
    }

    #[test]
    fn two_equal_bins() {
        let axis = BinAxis::new(0.0, 2.0, 2).unwrap();
        let samples = vec![vec![0.5], vec![1.5], vec![0.2], vec![1.9]];
        let s = free_energy_histogram(&samples, &[axis], 300.0).unwrap();
        assert_eq!(s.free_energy, vec![Some(0.0), Some(0.0)]);
    }

    #[test]
    fn unoccupied_bins_are_flagged() {
        let axis = BinAxis::new(0.0, 3.0, 3).unwrap();
        let samples = vec![vec![0.5], vec![0.5], vec![2.5]];
        let s = free_energy_histogram(&samples, &[axis], 300.0).unwrap();
        assert_eq!(s.free_energy[1], None);
        assert_eq!(s.free_energy[0], Some(0.0));
        let expect = BOLTZMANN_KCAL * 300.0 * 2f64.ln();
        assert!((s.free_energy[2].unwrap() - expect).abs() < 1e-12);
        assert_eq!(s.to_csv().lines().count(), 3);
    }

    #[test]
    fn histogram_errors() {
        let axis = BinAxis { lo: 0.0, hi: 1.0, bins: 4 };
        assert!(matches!(free_energy_histogram(&[], &[axis], 300.0), Err(Error::NoData(_))));
        assert!(matches!(
            free_energy_histogram(&[vec![5.0]], &[axis], 300.0),
            Err(Error::NoData(_))
        ));
        assert!(BinAxis::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn two_dimensional_surface() {
        let axes = [BinAxis::new(0.0, 360.0, 4).unwrap(), BinAxis::new(0.0, 360.0, 4).unwrap()];
        let samples = vec![vec![10.0, 100.0], vec![10.0, 100.0], vec![300.0, 359.0]];
        let s = free_energy_histogram(&samples, &axes, 300.0).unwrap();
        assert_eq!(s.counts[1], 2);
        assert_eq!(s.counts[15], 1);
        assert_eq!(s.bin_centers(1), vec![45.0, 135.0]);
    }

    #[test]
    fn acceptance_examples() {
        let g = ladder_grid(2);
        let all = vec![rec(&[(0, 1, true)]); 5];
        assert_eq!(acceptance_stats(&all, &g, 0).unwrap().overall.ratio(), Some(1.0));

        let g = ladder_grid(2);
        let mut records = Vec::new();
        for k in 0..100 {
            records.push(rec(&[(0, 1, k < 25)]));
        }
        let s = acceptance_stats(&records, &g, 0).unwrap();
        assert_eq!(s.overall.ratio(), Some(0.25));
        assert_eq!(s.per_pair[0].ratio(), Some(0.25));

        let g = ladder_grid(4);
        let s = acceptance_stats(&[rec(&[(0, 1, false)])], &g, 0).unwrap();
        assert_eq!(s.per_pair[1].ratio(), None);
        assert!(matches!(acceptance_stats(&[], &g, 0), Err(Error::NoData(_))));
    }

    #[test]
    fn per_pair_follows_slots_after_swaps() {
        let g = ladder_grid(3);
        // after the first swap replica 1 sits at slot 0, so (1, 2) spans slots 0 and 2
        // and (0, 2) spans slots 1 and 2
        let records = vec![rec(&[(0, 1, true)]), rec(&[(0, 2, false)])];
        let s = acceptance_stats(&records, &g, 0).unwrap();
        assert_eq!(s.per_pair[0], Tally { attempted: 1, accepted: 1 });
        assert_eq!(s.per_pair[1], Tally { attempted: 1, accepted: 0 });
    }

    #[test]
    fn round_trip_examples() {
        let g = ladder_grid(1);
        assert_eq!(round_trips(&[], &g, 0).unwrap(), vec![0]);

        let g = ladder_grid(2);
        let trace = vec![rec(&[(0, 1, true)]), rec(&[(0, 1, true)])];
        assert_eq!(round_trips(&trace, &g, 0).unwrap(), vec![1, 0]);
    }

    #[test]
    fn hand_walked_three_rung_trace() {
        // Replicas a=0, b=1, c=2 start at slots 0, 1, 2; only a starts anchored at the bottom.
        let g = ladder_grid(3);
        let trace = vec![
            rec(&[(0, 1, true)]), // a:1 b:0 c:2  b anchored
            rec(&[(0, 2, true)]), // a:2 b:0 c:1  a at top
            rec(&[(1, 2, true)]), // a:2 b:1 c:0  c anchored
            rec(&[(1, 0, true)]), // a:1 b:2 c:0  b at top
            rec(&[(0, 2, true)]), // a:0 b:2 c:1  a home, trip 1 for a
            rec(&[(2, 1, true)]), // a:0 b:1 c:2  c at top
            rec(&[(0, 1, true)]), // a:1 b:0 c:2  b home, trip 1 for b
            rec(&[(0, 2, true)]), // a:2 b:0 c:1  a at top
            rec(&[(2, 1, true)]), // a:2 b:1 c:0  c home, trip 1 for c
            rec(&[(0, 1, true)]), // a:1 b:2 c:0  b at top
        ];
        let counts = round_trips(&trace, &g, 0).unwrap();
        assert_eq!(counts, vec![1, 1, 1]);
        // check the final slots of the walk-through
        let mut end = g.clone();
        for r in &trace {
            apply_swaps(&mut end, r).unwrap();
        }
        let slots: Vec<usize> = end.replicas.iter().map(|r| r.coords[0]).collect();
        assert_eq!(slots, vec![1, 2, 0]);
    }

    proptest! {
        #[test]
        fn histogram_invariant_under_reorder_and_duplication(
            xs in proptest::collection::vec(-3.0f64..3.0, 1..300),
            rot in 0usize..300,
        ) {
            let axis = BinAxis::new(-3.0, 3.0, 20).unwrap();
            let samples: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
            let base = free_energy_histogram(&samples, &[axis], 310.0).unwrap();
            let mut rotated = samples.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            let r = free_energy_histogram(&rotated, &[axis], 310.0).unwrap();
            prop_assert_eq!(&base.free_energy, &r.free_energy);
            let mut doubled = samples.clone();
            doubled.extend(samples.iter().cloned());
            let d = free_energy_histogram(&doubled, &[axis], 310.0).unwrap();
            for (a, b) in base.free_energy.iter().zip(&d.free_energy) {
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                    (None, None) => {}
                    _ => prop_assert!(false),
                }
            }
        }

        #[test]
        fn merged_acceptance_is_attempt_weighted(
            outcomes in proptest::collection::vec(any::<bool>(), 2..80),
            split in 1usize..79,
        ) {
            let split = split.min(outcomes.len() - 1);
            let g = ladder_grid(2);
            let records: Vec<_> = outcomes.iter().map(|&a| rec(&[(0, 1, a)])).collect();
            let (left, right) = records.split_at(split);
            let all = acceptance_stats(&records, &g, 0).unwrap().overall;
            let l = acceptance_stats(left, &g, 0).unwrap().overall;
            // the right half starts from the grid the left half leaves behind
            let mut mid = g.clone();
            for r in left {
                apply_swaps(&mut mid, r).unwrap();
            }
            let r = acceptance_stats(right, &mid, 0).unwrap().overall;
            let weighted = (l.ratio().unwrap() * l.attempted as f64 + r.ratio().unwrap() * r.attempted as f64)
                / (l.attempted + r.attempted) as f64;
            prop_assert!((all.ratio().unwrap() - weighted).abs() < 1e-12);
        }
    }
}
