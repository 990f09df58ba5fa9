//! Causal demand-fetching over fast fading.
//!
//! With `j` slots left and `ρ` bits remaining, the optimal slot allocation is
//! `b = ρ g^(1/(m-1)) / (g^(1/(m-1)) + (1/ξ_{j-1})^(1/(m-1)))` and the
//! expected cost-to-go is `λ ξ_j ρ^m`, where
//! `ξ_1 = E[1/g]` and `ξ_j = E[(g^(1/(m-1)) + (1/ξ_{j-1})^(1/(m-1)))^(-(m-1))]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{slot_energy, ChannelModel, MonomialOrder};

/// Demand-fetching cost coefficients indexed by remaining-slot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiTable {
    /// `coeffs[0]` is the infinite sentinel.
    coeffs: Vec<f64>,
    /// `(1/ξ_j)^(1/(m-1))`; zero at `j = 0`.
    inv_roots: Vec<f64>,
    channel: ChannelModel,
    order: MonomialOrder,
}

impl XiTable {
    pub fn build(channel: ChannelModel, order: MonomialOrder, horizon: usize) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(horizon + 1);
        let mut inv_roots = Vec::with_capacity(horizon + 1);
        coeffs.push(f64::INFINITY);
        inv_roots.push(0.0);
        for j in 1..=horizon {
            let c = inv_roots[j - 1];
            if let (ChannelModel::Slow { gain }, true) = (channel, j > 1) {
                // point mass: the inverse roots add up exactly
                let next = order.root(gain) + c;
                coeffs.push(order.inv_pow(next));
                inv_roots.push(next);
                continue;
            }
            let xi = if j == 1 {
                channel.mean_inverse_gain()
            } else {
                channel.expect(|g| order.inv_pow(order.root(g) + c))?
            };
            coeffs.push(xi);
            inv_roots.push(order.root(1.0 / xi));
        }
        Ok(Self {
            coeffs,
            inv_roots,
            channel,
            order,
        })
    }

    /// `ξ_j`; `j = 0` returns `+inf`.
    pub fn get(&self, j: usize) -> f64 {
        self.coeffs[j]
    }

    /// `(1/ξ_j)^(1/(m-1))`, exactly zero for the `j = 0` sentinel.
    pub fn inv_root(&self, j: usize) -> f64 {
        self.inv_roots[j]
    }

    pub fn horizon(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn channel(&self) -> ChannelModel {
        self.channel
    }

    pub fn order(&self) -> MonomialOrder {
        self.order
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }
}

/// Optimal bits for the current slot with `slots_remaining` slots left (this one included).
pub fn demand_bits(rho: f64, gain: f64, slots_remaining: usize, table: &XiTable) -> f64 {
    debug_assert!(slots_remaining >= 1);
    if slots_remaining == 1 || rho == 0.0 {
        return rho;
    }
    let gr = table.order.root(gain);
    rho * gr / (gr + table.inv_root(slots_remaining - 1))
}

/// Expected optimal energy `λ ξ_D β^m` of demand-fetching `beta` bits over `duration` slots.
pub fn expected_demand_energy(beta: f64, table: &XiTable, duration: usize, lambda: f64) -> Result<f64> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Domain(format!(
            "bit count {beta} must be finite and nonnegative"
        )));
    }
    if beta == 0.0 {
        return Ok(0.0);
    }
    if duration == 0 {
        return Err(Error::Infeasible(format!("{beta} bits with no demand slots")));
    }
    if duration > table.horizon() {
        return Err(Error::Domain(format!(
            "duration {duration} exceeds table horizon {}",
            table.horizon()
        )));
    }
    Ok(lambda * table.get(duration) * table.order.pow(beta))
}

/// Lower and upper bounds on the expected demand energy from `E[g]` and `E[1/g]`.
pub fn demand_energy_bounds(
    beta: f64,
    channel: ChannelModel,
    order: MonomialOrder,
    duration: usize,
    lambda: f64,
) -> Result<(f64, f64)> {
    if duration == 0 {
        return Err(Error::Infeasible("no demand slots".into()));
    }
    let scale = lambda * order.pow(beta) / order.pow_m1(duration as f64);
    Ok((scale / channel.mean_gain(), scale * channel.mean_inverse_gain()))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DemandTrace {
    pub bits: Vec<f64>,
    pub energy: Vec<f64>,
}

impl DemandTrace {
    pub fn total_energy(&self) -> f64 {
        self.energy.iter().sum()
    }

    pub fn total_bits(&self) -> f64 {
        self.bits.iter().sum()
    }
}

/// Runs the optimal causal demand-fetcher on a realised gain sequence.
///
/// The last slot carries whatever is left, so the bits always sum to `beta`.
pub fn simulate_demand_episode(beta: f64, gains: &[f64], table: &XiTable, lambda: f64) -> Result<DemandTrace> {
    if gains.is_empty() {
        if beta > 0.0 {
            return Err(Error::Infeasible(format!("{beta} bits with no demand slots")));
        }
        return Ok(DemandTrace::default());
    }
    if gains.len() > table.horizon() + 1 {
        return Err(Error::Domain("gain sequence longer than the table horizon".into()));
    }
    if let Some(g) = gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
        return Err(Error::Domain(format!("channel gain {g} must be positive")));
    }
    let duration = gains.len();
    let mut rho = beta;
    let mut trace = DemandTrace {
        bits: Vec::with_capacity(duration),
        energy: Vec::with_capacity(duration),
    };
    for (n, &g) in gains.iter().enumerate() {
        let remaining = duration - n;
        let b = if remaining == 1 {
            rho
        } else {
            demand_bits(rho, g, remaining, table).min(rho)
        };
        rho -= b;
        trace.bits.push(b);
        trace.energy.push(slot_energy(lambda, table.order, b, g));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2() -> MonomialOrder {
        MonomialOrder::new(2).unwrap()
    }

    #[test]
    fn slow_unit_table_is_harmonic() {
        let t = XiTable::build(ChannelModel::slow(1.0).unwrap(), m2(), 20).unwrap();
        assert!(t.get(0).is_infinite());
        assert_eq!(t.inv_root(0), 0.0);
        for j in 1..=20 {
            assert_eq!(t.get(j), 1.0 / j as f64, "{j}");
        }
    }

    #[test]
    fn gamma_table_first_entries() {
        let t = XiTable::build(ChannelModel::fast_gamma(2).unwrap(), m2(), 3).unwrap();
        assert_eq!(t.get(1), 2.0);
        // E[1/(g + 1/2)] for Gamma(2, 2) equals 2 - 2e E1(1)
        assert!((t.get(2) - 0.807_305_275_353_610_7).abs() < 1e-9);
        assert!(t.get(2) >= 0.5 && t.get(2) <= 1.0);
    }

    #[test]
    fn demand_bits_examples() {
        let t = XiTable::build(ChannelModel::fast_gamma(2).unwrap(), m2(), 4).unwrap();
        assert_eq!(demand_bits(7.3, 0.2, 1, &t), 7.3);
        assert_eq!(demand_bits(0.0, 3.0, 3, &t), 0.0);
        assert!((demand_bits(10.0, 1.0, 2, &t) - 10.0 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn demand_energy_examples() {
        let ch = ChannelModel::fast_gamma(2).unwrap();
        let t = XiTable::build(ch, m2(), 5).unwrap();
        assert_eq!(expected_demand_energy(0.0, &t, 1, 1.0).unwrap(), 0.0);
        assert_eq!(expected_demand_energy(4.0, &t, 1, 1.0).unwrap(), 32.0);
        assert!(expected_demand_energy(4.0, &t, 0, 1.0).is_err());
        assert_eq!(expected_demand_energy(0.0, &t, 0, 1.0).unwrap(), 0.0);

        let (lo, hi) = demand_energy_bounds(4.0, ch, m2(), 2, 1.0).unwrap();
        assert_eq!((lo, hi), (8.0, 16.0));
        let (_, hi1) = demand_energy_bounds(4.0, ch, m2(), 1, 1.0).unwrap();
        assert_eq!(hi1, expected_demand_energy(4.0, &t, 1, 1.0).unwrap());

        let slow = ChannelModel::slow(0.4).unwrap();
        let (lo, hi) = demand_energy_bounds(3.0, slow, MonomialOrder::new(3).unwrap(), 4, 1.0).unwrap();
        assert!((lo - hi).abs() < 1e-12);
    }

    #[test]
    fn single_slot_episode_carries_everything() {
        let t = XiTable::build(ChannelModel::fast_gamma(3).unwrap(), m2(), 1).unwrap();
        let tr = simulate_demand_episode(5.5, &[0.3], &t, 1.0).unwrap();
        assert_eq!(tr.bits, vec![5.5]);
        assert!((tr.energy[0] - 5.5 * 5.5 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn slow_episode_splits_evenly() {
        for m in 2..=5 {
            let order = MonomialOrder::new(m).unwrap();
            let t = XiTable::build(ChannelModel::slow(0.6).unwrap(), order, 6).unwrap();
            let tr = simulate_demand_episode(9.0, &[0.6; 6], &t, 1.0).unwrap();
            for b in &tr.bits {
                assert!((b - 1.5).abs() < 1e-9, "m={m}: {:?}", tr.bits);
            }
        }
    }

    #[test]
    fn empty_episode_requires_zero_bits() {
        let t = XiTable::build(ChannelModel::fast_gamma(2).unwrap(), m2(), 2).unwrap();
        assert!(simulate_demand_episode(1.0, &[], &t, 1.0).is_err());
        assert!(simulate_demand_episode(0.0, &[], &t, 1.0).unwrap().bits.is_empty());
        assert!(simulate_demand_episode(1.0, &[1.0, 0.0], &t, 1.0).is_err());
    }
}
