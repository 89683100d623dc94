//! Built-in oracle suite: sampling fidelity, detailed balance of exchange,
//! analytic forces and scheduler invariants, each checked against an
//! independent reference computation.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::BinAxis;
use crate::engine::{run_md_segment, total_energy, EngineRequest, MdSettings, PotentialSystem, RequestKind};
use crate::error::Result;
use crate::exchange::{
    acceptance_delta, apply_swaps, decide_with, exchange_rng, group_by_inactive, local_energies,
    pair_neighbors, pairing_phase, DeltaFn,
};
use crate::model::{beta, build_grid, build_ladder, DimensionKind, DimensionSpec, ParamKind, Progression, Restraint, ScaledTerm, ThermoParams};
use crate::pilot::{
    max_concurrency_trace, run_async, run_sync, simulate_schedule, AsyncCriterion, Backend, Dist,
    DurationModel, EventKind, FaultPolicy, PilotSpec, Recovery, Resume, RunSetup, TaskKind, WorkloadTask,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }
}

/// Bin probabilities of `exp(-βU)` on `axis` by composite Simpson quadrature.
pub fn boltzmann_bins(system: &PotentialSystem, temperature: f64, axis: &BinAxis) -> Vec<f64> {
    let b = beta(temperature);
    let params = ThermoParams::at_temperature(temperature);
    let density = |x: f64| (-b * total_energy(system, &[x], &params).unwrap_or(f64::INFINITY)).exp();
    let sub = 64;
    let mut p: Vec<f64> = (0..axis.bins)
        .map(|k| {
            let lo = axis.lo + k as f64 * axis.width();
            let h = axis.width() / sub as f64;
            let mut s = density(lo) + density(lo + axis.width());
            for i in 1..sub {
                s += density(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

fn histogram(xs: impl IntoIterator<Item = f64>, axis: &BinAxis) -> Vec<f64> {
    let mut h = vec![0.0; axis.bins];
    let mut n: f64 = 0.0;
    for x in xs {
        n += 1.0;
        if let Some(k) = axis.bin_of(x) {
            h[k] += 1.0;
        }
    }
    h.iter_mut().for_each(|v| *v /= n.max(1.0));
    h
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// L1 distance between a Langevin trajectory histogram and the quadrature
/// distribution for the double well at `temperature`.
pub fn boltzmann_fidelity(temperature: f64, steps: u64, md: MdSettings, seed: u64) -> Result<f64> {
    let system = PotentialSystem::double_well(1.0, 2.0)?;
    let axis = BinAxis::new(-3.0, 3.0, 50)?;
    let req = EngineRequest {
        positions: system.initial_positions(),
        velocities: vec![0.0],
        seed,
        params: ThermoParams::at_temperature(temperature),
        kind: RequestKind::MdSegment(MdSettings { steps, ..md }),
    };
    let out = run_md_segment(&system, &req)?;
    let sampled = histogram(out.trajectory.iter().map(|f| f[0]), &axis);
    Ok(l1(&sampled, &boltzmann_bins(&system, temperature, &axis)))
}

/// Inverse-CDF sampler of `exp(-βU)` for a one-dimensional system.
pub struct DirectSampler {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl DirectSampler {
    pub fn new(system: &PotentialSystem, temperature: f64, lo: f64, hi: f64, points: usize) -> Self {
        let b = beta(temperature);
        let params = ThermoParams::at_temperature(temperature);
        let xs: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
        let w: Vec<f64> = xs
            .iter()
            .map(|&x| (-b * total_energy(system, &[x], &params).unwrap_or(f64::INFINITY)).exp())
            .collect();
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * (w[i] + w[i - 1]) * (xs[i] - xs[i - 1]);
        }
        let z = cdf[points - 1];
        cdf.iter_mut().for_each(|c| *c /= z);
        DirectSampler { xs, cdf }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.xs.len() - 1);
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.xs[k - 1] + t * (self.xs[k] - self.xs[k - 1])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetailedBalanceReport {
    pub temperatures: Vec<f64>,
    /// Post-exchange L1 distance per ladder slot.
    pub slot_l1: Vec<f64>,
    /// Chi-square goodness of fit per slot, as a Wilson–Hilferty z-score.
    pub slot_chi2_z: Vec<f64>,
    /// Per neighbor pair `(k, k+1)`: empirical and expected acceptance.
    pub acceptance: Vec<(f64, f64)>,
}

/// `E[min(1, e^-Δ)]` for configurations drawn from the two temperatures,
/// by tensor-product quadrature.
pub fn expected_temperature_acceptance(system: &PotentialSystem, t_i: f64, t_j: f64) -> f64 {
    let n = 600;
    let (lo, hi) = (-3.0, 3.0);
    let dx = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..n).map(|k| lo + (k as f64 + 0.5) * dx).collect();
    let u: Vec<f64> = xs.iter().map(|&x| system.base_energy(&[x])).collect();
    let weights = |t: f64| {
        let w: Vec<f64> = u.iter().map(|e| (-beta(t) * e).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect::<Vec<_>>()
    };
    let (wi, wj) = (weights(t_i), weights(t_j));
    let db = beta(t_i) - beta(t_j);
    let mut acc = 0.0;
    for a in 0..n {
        for b in 0..n {
            let delta = db * (u[b] - u[a]);
            acc += wi[a] * wj[b] * if delta <= 0.0 { 1.0 } else { (-delta).exp() };
        }
    }
    acc
}

/// Exchange on a 273–373 K geometric ladder with exact Boltzmann draws in
/// place of MD between attempts.
pub fn detailed_balance(attempts: u64, seed: u64, delta_fn: DeltaFn) -> Result<DetailedBalanceReport> {
    let system = PotentialSystem::double_well(1.0, 2.0)?;
    let temps = build_ladder(ParamKind::Temperature, 273.0, 373.0, 4, Progression::Geometric)?;
    let mut grid = build_grid(vec![DimensionSpec::new(DimensionKind::Temperature, temps.clone())?], seed)?;
    let samplers: Vec<DirectSampler> = temps.iter().map(|&t| DirectSampler::new(&system, t, -3.0, 3.0, 20_001)).collect();
    let axis = BinAxis::new(-3.0, 3.0, 50)?;
    let mut counts = vec![vec![0.0; axis.bins]; temps.len()];
    let mut totals = vec![0.0; temps.len()];
    let mut tally = vec![(0u64, 0u64); temps.len() - 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 0..attempts {
        for r in &mut grid.replicas {
            r.positions = vec![samplers[r.coords[0]].draw(&mut rng)];
        }
        let groups = group_by_inactive(&grid, 0);
        let pairs: Vec<(usize, usize)> = groups.iter().flat_map(|g| pair_neighbors(g, pairing_phase(attempt, 1))).collect();
        let energies = local_energies(&grid, &system, &pairs)?;
        let record = decide_with(&grid, attempt, 0, &pairs, &energies, &mut exchange_rng(seed, attempt, 0), delta_fn)?;
        for p in &record.pairs {
            let k = grid.replicas[p.i].coords[0].min(grid.replicas[p.j].coords[0]);
            tally[k].0 += 1;
            tally[k].1 += p.accepted as u64;
        }
        apply_swaps(&mut grid, &record)?;
        for r in &grid.replicas {
            let slot = r.coords[0];
            totals[slot] += 1.0;
            if let Some(b) = axis.bin_of(r.positions[0]) {
                counts[slot][b] += 1.0;
            }
        }
    }
    let slot_l1 = temps
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let h: Vec<f64> = counts[k].iter().map(|c| c / totals[k]).collect();
            l1(&h, &boltzmann_bins(&system, t, &axis))
        })
        .collect();
    let slot_chi2_z = temps
        .iter()
        .enumerate()
        .map(|(k, &t)| chi_square_z(&counts[k], &boltzmann_bins(&system, t, &axis)))
        .collect();
    let acceptance = (0..temps.len() - 1)
        .map(|k| {
            let (n, a) = tally[k];
            (a as f64 / n.max(1) as f64, expected_temperature_acceptance(&system, temps[k], temps[k + 1]))
        })
        .collect();
    Ok(DetailedBalanceReport { temperatures: temps, slot_l1, slot_chi2_z, acceptance })
}

/// Pearson chi-square of `counts` against bin probabilities `p`, mapped to a
/// standard normal score. Bins expecting fewer than five counts are pooled.
pub fn chi_square_z(counts: &[f64], p: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    let (mut chi2, mut dof): (f64, f64) = (0.0, -1.0);
    let (mut pool_obs, mut pool_exp) = (0.0, 0.0);
    for (&o, &q) in counts.iter().zip(p) {
        let e = n * q;
        if e < 5.0 {
            pool_obs += o;
            pool_exp += e;
        } else {
            chi2 += (o - e).powi(2) / e;
            dof += 1.0;
        }
    }
    if pool_exp >= 5.0 {
        chi2 += (pool_obs - pool_exp).powi(2) / pool_exp;
        dof += 1.0;
    } else if pool_obs > pool_exp + 10.0 {
        return f64::INFINITY;
    }
    let k: f64 = dof.max(1.0);
    let c = 2.0 / (9.0 * k);
    ((chi2 / k).cbrt() - (1.0 - c)) / c.sqrt()
}

/// Largest relative error between analytic and central-difference gradients
/// over `points` random configurations, restraints and λ values.
pub fn gradient_check(points: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let systems = [PotentialSystem::double_well(1.0, 2.0)?, PotentialSystem::default_torsion()];
    let mut worst: f64 = 0.0;
    for s in &systems {
        for _ in 0..points {
            let periodic = s.is_periodic();
            let draw = |rng: &mut ChaCha8Rng| if periodic { rng.random_range(-180.0..180.0) } else { rng.random_range(-2.5..2.5) };
            let x: Vec<f64> = (0..s.dims()).map(|_| draw(&mut rng)).collect();
            let mut p = ThermoParams::at_temperature(300.0);
            p.lambda = rng.random_range(0.0..=1.0);
            for c in 0..s.dims() {
                let mut center = draw(&mut rng);
                // keep clear of the minimum-image seam where the force jumps
                if periodic && (x[c] - center).abs() > 170.0 && (x[c] - center).abs() < 190.0 {
                    center = x[c] + 90.0;
                }
                p.restraints.push(Restraint { center, force_constant: rng.random_range(0.0..0.05), coordinate: c });
            }
            let g = s.gradient(&x, &p)?;
            let h = if periodic { 1e-4 } else { 1e-5 };
            for i in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += h;
                xm[i] -= h;
                let fd = (total_energy(s, &xp, &p)? - total_energy(s, &xm, &p)?) / (2.0 * h);
                worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3));
            }
        }
    }
    Ok(worst)
}

fn virtual_pilot(cores: u32, durations: DurationModel) -> PilotSpec {
    PilotSpec { total_cores: cores, cores_per_replica: 1, walltime: None, backend: Backend::VirtualClock, durations }
}

fn temperature_grid(n: usize, seed: u64) -> Result<crate::model::ReplicaGrid> {
    let t = build_ladder(ParamKind::Temperature, 280.0, 380.0, n, Progression::Geometric)?;
    build_grid(vec![DimensionSpec::new(DimensionKind::Temperature, t)?], seed)
}

fn setup<'a>(system: &'a PotentialSystem, pilot: &'a PilotSpec, cycles: u64, seed: u64) -> RunSetup<'a> {
    RunSetup {
        system,
        md: MdSettings::new(10, 0.1),
        pilot,
        faults: FaultPolicy::default(),
        seed,
        target_cycles: cycles,
        record_samples: false,
        resume: Resume::default(),
    }
}

fn scheduler_checks() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let (d, o) = (10.0, 0.5);
    let workload: Vec<WorkloadTask> =
        (0..512).map(|i| WorkloadTask { replica: Some(i), kind: TaskKind::Md, cores: 1 }).collect();
    let s = simulate_schedule(&workload, &virtual_pilot(128, DurationModel::constant(d, o)), 1)?;
    let peak = max_concurrency_trace(&s.events);
    out.push(Check::new(
        "wave law (512 replicas / 128 cores)",
        s.makespan == 4.0 * (d + o) && peak <= 128,
        format!("makespan {} (expected {}), peak cores {peak}", s.makespan, 4.0 * (d + o)),
    ));

    let system = PotentialSystem::double_well(1.0, 2.0)?;
    let mut violations = 0;
    let mut overcommit = 0;
    for seed in 0..5u64 {
        let model = DurationModel { md: Dist::log_normal_with_mean(10.0, 0.75), ..DurationModel::default() };
        let pilot = virtual_pilot(3 + seed as u32, model);
        let lam = DimensionSpec::new(DimensionKind::HamiltonianScale { term: ScaledTerm::Potential }, vec![0.5, 1.0])?;
        let t = build_ladder(ParamKind::Temperature, 280.0, 380.0, 4, Progression::Geometric)?;
        let mut grid = build_grid(vec![DimensionSpec::new(DimensionKind::Temperature, t)?, lam], seed)?;
        let log = run_sync(&mut grid, &setup(&system, &pilot, 4, seed))?;
        overcommit += (max_concurrency_trace(&log.events) > pilot.total_cores) as usize;
        for c in 0..3u64 {
            let ex = log
                .events
                .iter()
                .filter(|e| e.event == EventKind::Exchange && e.cycle == Some(c))
                .map(|e| e.t)
                .fold(f64::NEG_INFINITY, f64::max);
            violations += log
                .events
                .iter()
                .filter(|e| e.event == EventKind::Start && e.kind == Some(TaskKind::Md) && e.cycle == Some(c + 1))
                .filter(|e| e.t < ex)
                .count();
        }
    }
    out.push(Check::new("sync barrier", violations == 0, format!("{violations} early MD starts")));
    out.push(Check::new("core conservation", overcommit == 0, format!("{overcommit} over-committed traces")));

    for (name, faults) in [
        ("async liveness (p = 0)", FaultPolicy::default()),
        ("async liveness (p = 0.3, relaunch)", FaultPolicy { probability: 0.3, recovery: Recovery::Relaunch { max_retries: 5 } }),
        ("async liveness (p = 0.3, continue)", FaultPolicy { probability: 0.3, recovery: Recovery::Continue }),
    ] {
        let model = DurationModel { md: Dist::log_normal_with_mean(10.0, 0.75), ..DurationModel::default() };
        let pilot = virtual_pilot(8, model);
        let mut grid = temperature_grid(16, 3)?;
        let mut s = setup(&system, &pilot, 5, 3);
        s.faults = faults;
        let result = run_async(&mut grid, &s, AsyncCriterion::FifoN { n: 4 });
        let survivors: BTreeSet<usize> = grid.replicas.iter().filter(|r| r.cycle == 5).map(|r| r.id).collect();
        let failed = grid.replicas.iter().filter(|r| r.status == crate::model::ReplicaStatus::Failed).count();
        let ok = result.is_ok() && survivors.len() + failed == grid.len();
        let must_all = faults.probability == 0.0 || matches!(faults.recovery, Recovery::Relaunch { .. });
        out.push(Check::new(
            name,
            ok && (!must_all || survivors.len() == grid.len()),
            format!("{} of {} replicas at target, {failed} failed", survivors.len(), grid.len()),
        ));
    }
    Ok(out)
}

/// One-sided normal score above which a slot histogram is rejected; about
/// 3e-6 false alarms per slot.
pub const CHI2_Z_LIMIT: f64 = 4.5;

/// Runs every check. `delta_fn` is the acceptance exponent under test.
pub fn run_suite_with(delta_fn: DeltaFn) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let md = MdSettings { friction: 1.0, stride: 100, ..MdSettings::new(0, 0.1) };
    for (i, t) in [280.0, 300.0, 330.0].into_iter().enumerate() {
        let d = boltzmann_fidelity(t, 1_000_000, md, 17 + i as u64)?;
        out.push(Check::new(&format!("Boltzmann fidelity {t} K"), d <= 0.05, format!("L1 = {d:.4} (limit 0.05)")));
    }
    let report = detailed_balance(100_000, 5, delta_fn)?;
    let worst_slot = report.slot_l1.iter().cloned().fold(0.0, f64::max);
    out.push(Check::new(
        "detailed balance: slot distributions",
        worst_slot <= 0.05,
        format!("max L1 = {worst_slot:.4} (limit 0.05)"),
    ));
    let worst_z = report.slot_chi2_z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    out.push(Check::new(
        "detailed balance: slot goodness of fit",
        worst_z <= CHI2_Z_LIMIT,
        format!("max chi-square z = {worst_z:.2} (limit {CHI2_Z_LIMIT})"),
    ));
    let worst_acc = report.acceptance.iter().map(|(e, x)| (e - x).abs()).fold(0.0, f64::max);
    out.push(Check::new(
        "detailed balance: pair acceptance",
        worst_acc <= 0.02,
        format!("max |empirical - expected| = {worst_acc:.4} (limit 0.02)"),
    ));
    let g = gradient_check(100, 11)?;
    out.push(Check::new("analytic gradients", g <= 1e-6, format!("max relative error {g:.2e} (limit 1e-6)")));
    out.extend(scheduler_checks()?);
    Ok(out)
}

pub fn run_suite() -> Result<Vec<Check>> {
    run_suite_with(acceptance_delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::exchange::SwapEnergies;

    #[test]
    fn direct_sampler_matches_quadrature() {
        let system = PotentialSystem::double_well(1.0, 2.0).unwrap();
        let s = DirectSampler::new(&system, 300.0, -3.0, 3.0, 20_001);
        let axis = BinAxis::new(-3.0, 3.0, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = histogram((0..200_000).map(|_| s.draw(&mut rng)), &axis);
        assert!(l1(&h, &boltzmann_bins(&system, 300.0, &axis)) < 0.03);
    }

    #[test]
    fn bins_are_symmetric_and_normalized() {
        let system = PotentialSystem::double_well(1.0, 2.0).unwrap();
        let axis = BinAxis::new(-3.0, 3.0, 50).unwrap();
        let p = boltzmann_bins(&system, 300.0, &axis);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..25 {
            assert!((p[k] - p[49 - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_acceptance_bounds() {
        let system = PotentialSystem::double_well(1.0, 2.0).unwrap();
        let same = expected_temperature_acceptance(&system, 300.0, 300.0);
        assert!((same - 1.0).abs() < 1e-12);
        let a = expected_temperature_acceptance(&system, 273.0, 373.0);
        let b = expected_temperature_acceptance(&system, 273.0, 300.0);
        assert!(a < b && b < 1.0 && a > 0.0);
    }

    fn flipped(kind: ParamKind, e: &SwapEnergies) -> Result<f64, Error> {
        acceptance_delta(kind, e).map(|d| -d)
    }

    #[test]
    fn sign_flip_breaks_detailed_balance() {
        let good = detailed_balance(100_000, 9, acceptance_delta).unwrap();
        let bad = detailed_balance(100_000, 9, flipped).unwrap();
        let worst = |r: &DetailedBalanceReport| r.slot_chi2_z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(worst(&good) <= CHI2_Z_LIMIT, "{good:?}");
        assert!(worst(&bad) > CHI2_Z_LIMIT, "{bad:?}");
    }

    #[test]
    fn chi_square_z_calibration() {
        // exact multinomial draws: z should look standard normal
        let p = vec![0.1; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zs: Vec<f64> = (0..200)
            .map(|_| {
                let mut c = vec![0.0; 10];
                for _ in 0..5000 {
                    c[rng.random_range(0..10)] += 1.0;
                }
                chi_square_z(&c, &p)
            })
            .collect();
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        assert!(mean.abs() < 0.3, "{mean}");
        assert!(zs.iter().all(|z| *z < CHI2_Z_LIMIT));
        let skewed = vec![700.0, 300.0, 500.0, 500.0, 500.0, 500.0, 500.0, 500.0, 500.0, 500.0];
        assert!(chi_square_z(&skewed, &p) > 10.0);
    }

    #[test]
    fn gradients_pass() {
        assert!(gradient_check(50, 3).unwrap() <= 1e-6);
    }

    #[test]
    fn scheduler_checks_pass() {
        for c in scheduler_checks().unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }
}
