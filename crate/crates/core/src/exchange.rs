//! Exchange phase: grouping by inactive coordinates, neighbor pairing,
//! Metropolis acceptance and parameter swaps in one active dimension.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{total_energy, PotentialSystem};
use crate::error::{Error, Result};
use crate::model::{derive_seed, ParamKind, ReplicaGrid, ReplicaStatus};

/// Round-robin dimension selection: exchanges happen in one dimension at a time.
pub fn active_dimension(cycle: u64, num_dims: usize) -> Result<usize> {
    if num_dims == 0 {
        return Err(Error::InvalidConfig("no exchange dimensions".into()));
    }
    Ok((cycle % num_dims as u64) as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Even,
    Odd,
}

/// Pairing phase for the `attempt`-th exchange overall. Each dimension
/// alternates even/odd across its own consecutive attempts.
pub fn pairing_phase(attempt: u64, num_dims: usize) -> Phase {
    if (attempt / num_dims.max(1) as u64) % 2 == 0 {
        Phase::Even
    } else {
        Phase::Odd
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupMember {
    pub replica: usize,
    /// Ladder index in the active dimension.
    pub slot: usize,
}

/// Partitions the non-failed replicas by their coordinates outside the
/// active dimension. Groups are ordered by those coordinates; members by slot.
pub fn group_by_inactive(grid: &ReplicaGrid, active: usize) -> Vec<Vec<GroupMember>> {
    let members: Vec<usize> = grid
        .replicas
        .iter()
        .filter(|r| r.status != ReplicaStatus::Failed)
        .map(|r| r.id)
        .collect();
    group_subset(grid, active, &members)
}

/// Same as [`group_by_inactive`] restricted to `members`.
pub fn group_subset(grid: &ReplicaGrid, active: usize, members: &[usize]) -> Vec<Vec<GroupMember>> {
    let mut groups: BTreeMap<Vec<usize>, Vec<GroupMember>> = BTreeMap::new();
    for &id in members {
        let coords = &grid.replicas[id].coords;
        let key: Vec<usize> = coords
            .iter()
            .enumerate()
            .filter(|&(d, _)| d != active)
            .map(|(_, &c)| c)
            .collect();
        groups.entry(key).or_default().push(GroupMember {
            replica: id,
            slot: coords[active],
        });
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|m| (m.slot, m.replica));
            g
        })
        .collect()
}

/// Nearest-neighbor pairs `(slot k, slot k+1)` with `k` even (Even phase) or
/// odd (Odd phase). A pair is formed only when both slots are present, so
/// missing replicas leave their neighbors unpaired.
pub fn pair_neighbors(group: &[GroupMember], phase: Phase) -> Vec<(usize, usize)> {
    let parity = match phase {
        Phase::Even => 0,
        Phase::Odd => 1,
    };
    let by_slot: HashMap<usize, usize> = group.iter().map(|m| (m.slot, m.replica)).collect();
    let mut pairs = Vec::new();
    for m in group {
        if m.slot % 2 != parity {
            continue;
        }
        if let Some(&partner) = by_slot.get(&(m.slot + 1)) {
            if by_slot.get(&m.slot) == Some(&m.replica) {
                pairs.push((m.replica, partner));
            }
        }
    }
    pairs
}

/// Energies entering one swap attempt; `e_ab` is `U_a(x_b)`, the
/// Hamiltonian of replica `a` evaluated at the configuration of `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwapEnergies {
    pub beta_i: f64,
    pub beta_j: f64,
    pub e_ii: f64,
    pub e_jj: f64,
    pub e_ij: f64,
    pub e_ji: f64,
}

/// Dimensionless exponent of the swap criterion; acceptance is `min(1, e^-Δ)`.
///
/// Temperature exchange between ensembles sharing one Hamiltonian uses the
/// reduced form `(β_i - β_j)(U(x_j) - U(x_i))`; the other kinds use the
/// cross energies.
pub fn acceptance_delta(kind: ParamKind, e: &SwapEnergies) -> Result<f64> {
    let inputs = [e.beta_i, e.beta_j, e.e_ii, e.e_jj, e.e_ij, e.e_ji];
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidEnergy(format!("non-finite swap input {e:?}")));
    }
    if e.beta_i <= 0.0 || e.beta_j <= 0.0 {
        return Err(Error::InvalidEnergy("inverse temperatures must be positive".into()));
    }
    let delta = match kind {
        ParamKind::Temperature => (e.beta_i - e.beta_j) * (e.e_jj - e.e_ii),
        ParamKind::Umbrella | ParamKind::HamiltonianScale => {
            e.beta_i * (e.e_ij - e.e_ii) + e.beta_j * (e.e_ji - e.e_jj)
        }
    };
    Ok(delta)
}

pub fn acceptance_probability(delta: f64) -> f64 {
    if delta <= 0.0 {
        1.0
    } else {
        (-delta).exp()
    }
}

pub type DeltaFn = fn(ParamKind, &SwapEnergies) -> Result<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairAttempt {
    pub i: usize,
    pub j: usize,
    pub delta: f64,
    pub u: f64,
    pub accepted: bool,
}

/// One exchange phase in one dimension.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub cycle: u64,
    pub dim: usize,
    pub pairs: Vec<PairAttempt>,
}

impl ExchangeRecord {
    pub fn accepted_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.accepted).count()
    }
}

/// RNG stream for the exchange phase `(cycle, dim)`.
pub fn exchange_rng(seed: u64, cycle: u64, dim: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xE4C4, cycle, dim as u64]))
}

/// `U_a(x_b)` values keyed by `(a, b)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CrossEnergies(HashMap<(usize, usize), f64>);

impl CrossEnergies {
    pub fn insert(&mut self, hamiltonian_of: usize, config_of: usize, energy: f64) {
        self.0.insert((hamiltonian_of, config_of), energy);
    }

    pub fn get(&self, hamiltonian_of: usize, config_of: usize) -> Result<f64> {
        self.0
            .get(&(hamiltonian_of, config_of))
            .copied()
            .ok_or_else(|| {
                Error::InvalidEnergy(format!(
                    "missing energy of replica {config_of} under replica {hamiltonian_of}"
                ))
            })
    }
}

/// Evaluates all four energies of every pair directly on the grid.
pub fn local_energies(
    grid: &ReplicaGrid,
    system: &PotentialSystem,
    pairs: &[(usize, usize)],
) -> Result<CrossEnergies> {
    let mut out = CrossEnergies::default();
    for &(i, j) in pairs {
        let (pi, pj) = (grid.params_of(i), grid.params_of(j));
        let (xi, xj) = (&grid.replicas[i].positions, &grid.replicas[j].positions);
        out.insert(i, i, total_energy(system, xi, &pi)?);
        out.insert(j, j, total_energy(system, xj, &pj)?);
        out.insert(i, j, total_energy(system, xj, &pi)?);
        out.insert(j, i, total_energy(system, xi, &pj)?);
    }
    Ok(out)
}

/// Draws one uniform per pair, in pair order, and decides each swap.
pub fn decide<R: Rng>(
    grid: &ReplicaGrid,
    cycle: u64,
    dim: usize,
    pairs: &[(usize, usize)],
    energies: &CrossEnergies,
    rng: &mut R,
) -> Result<ExchangeRecord> {
    decide_with(grid, cycle, dim, pairs, energies, rng, acceptance_delta)
}

pub fn decide_with<R: Rng>(
    grid: &ReplicaGrid,
    cycle: u64,
    dim: usize,
    pairs: &[(usize, usize)],
    energies: &CrossEnergies,
    rng: &mut R,
    delta_fn: DeltaFn,
) -> Result<ExchangeRecord> {
    let kind = grid
        .dimensions()
        .get(dim)
        .ok_or_else(|| Error::InvalidRecord(format!("dimension {dim} out of range")))?
        .kind()
        .param_kind();
    let mut attempts = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let e = SwapEnergies {
            beta_i: grid.params_of(i).beta(),
            beta_j: grid.params_of(j).beta(),
            e_ii: energies.get(i, i)?,
            e_jj: energies.get(j, j)?,
            e_ij: energies.get(i, j)?,
            e_ji: energies.get(j, i)?,
        };
        let delta = delta_fn(kind, &e)?;
        let u: f64 = rng.random();
        attempts.push(PairAttempt {
            i,
            j,
            delta,
            u,
            accepted: u < acceptance_probability(delta),
        });
    }
    Ok(ExchangeRecord {
        cycle,
        dim,
        pairs: attempts,
    })
}

fn check_pairs(grid: &ReplicaGrid, record: &ExchangeRecord) -> Result<()> {
    if record.dim >= grid.dimensions().len() {
        return Err(Error::InvalidRecord(format!("dimension {} out of range", record.dim)));
    }
    let mut seen = HashSet::new();
    for p in &record.pairs {
        if p.i >= grid.len() || p.j >= grid.len() {
            return Err(Error::InvalidRecord(format!("pair ({}, {}) out of range", p.i, p.j)));
        }
        if p.i == p.j || !seen.insert(p.i) || !seen.insert(p.j) {
            return Err(Error::InvalidRecord(format!(
                "replica appears in more than one pair: ({}, {})",
                p.i, p.j
            )));
        }
    }
    Ok(())
}

/// Swaps the active-dimension ladder indices of every accepted pair.
/// Configurations stay with their replica.
pub fn apply_swaps(grid: &mut ReplicaGrid, record: &ExchangeRecord) -> Result<()> {
    check_pairs(grid, record)?;
    let d = record.dim;
    for p in record.pairs.iter().filter(|p| p.accepted) {
        let a = grid.replicas[p.i].coords[d];
        let b = grid.replicas[p.j].coords[d];
        grid.replicas[p.i].coords[d] = b;
        grid.replicas[p.j].coords[d] = a;
    }
    Ok(())
}

/// True when every pair in `record` differs in exactly the record's dimension
/// (evaluated on the grid state before the swaps are applied).
pub fn pairs_isolated(grid: &ReplicaGrid, record: &ExchangeRecord) -> bool {
    record.pairs.iter().all(|p| {
        let (a, b) = (&grid.replicas[p.i].coords, &grid.replicas[p.j].coords);
        a.iter()
            .zip(b)
            .enumerate()
            .all(|(d, (x, y))| (d == record.dim) != (x == y))
    })
}
