//! Exhaustive-search oracles for small instances.

use crate::error::{Error, Result};
use crate::net_model::NetworkInstance;

/// Best sum rate of a SISO single-tone interference channel with at most two
/// users (user `i` served by its home BS), by a `grid x grid` search over
/// transmit amplitudes in `[0, sqrt(P_q)]`.
pub fn brute_force_sumrate(instance: &NetworkInstance, grid: usize) -> Result<f64> {
    let d = instance.dims();
    if d.num_users > 2 || d.tx_antennas != 1 || d.rx_antennas != 1 || d.tones != 1 || d.slots != 1 {
        return Err(Error::Config("brute force needs at most 2 SISO users on one tone and slot".into()));
    }
    if grid < 2 {
        return Err(Error::Config("grid resolution must be at least 2".into()));
    }
    let ni = d.num_users;
    let home: Vec<usize> = (0..ni).map(|i| instance.home_bs(i)).collect();
    let gain = |q: usize, i: usize| instance.channel(q, i, 0, 0)[(0, 0)].norm_sqr();
    let levels = |q: usize| -> Vec<f64> {
        let amax = instance.power_budget(q).sqrt();
        (0..grid).map(|k| (amax * k as f64 / (grid - 1) as f64).powi(2)).collect()
    };
    let l0 = levels(home[0]);
    let l1 = if ni == 2 { levels(home[1]) } else { vec![0.0] };
    let mut best = 0.0f64;
    for &p0 in &l0 {
        for &p1 in &l1 {
            let p = [p0, p1];
            let mut sum = 0.0;
            for i in 0..ni {
                let mut interf = instance.noise_power(i);
                for j in 0..ni {
                    if j != i {
                        interf += gain(home[j], i) * p[j];
                    }
                }
                sum += (1.0 + gain(home[i], i) * p[i] / interf).ln();
            }
            best = best.max(sum);
        }
    }
    Ok(best)
}

/// Best schedule by exhaustive search: every `alpha in {0,1}^{I x T}` on the
/// home association is solved by masked WMMSE with utility reweighting
/// (best of `inits` starts). Returns `(alpha, utility)` of the best schedule;
/// earlier schedules in enumeration order win ties.
pub fn brute_force_schedule(
    instance: &NetworkInstance,
    utility: &crate::utility::UtilityConfig,
    slots: usize,
    inits: usize,
    stop: crate::wmmse::StopRule,
) -> Result<(Vec<Vec<bool>>, f64)> {
    use crate::wmmse::{home_links, solve, Problem, SolveOptions};
    let inst = instance.replicate_slots(slots)?;
    let ni = inst.num_users();
    let bits = ni * slots;
    if bits > 16 {
        return Err(Error::Config("too many (user, slot) pairs for exhaustive scheduling".into()));
    }
    let mut best: Option<(Vec<Vec<bool>>, f64)> = None;
    for code in 0u32..(1 << bits) {
        let alpha: Vec<Vec<bool>> = (0..ni)
            .map(|i| (0..slots).map(|t| code >> (i * slots + t) & 1 == 1).collect())
            .collect();
        let mut problem = Problem::new(&inst, home_links(&inst))?;
        let mask = crate::scheduler::schedule_mask(&problem, &alpha);
        problem.set_active(Some(mask))?;
        let mut value = f64::NEG_INFINITY;
        for k in 0..inits.max(1) {
            let opts = SolveOptions { stop, utility: *utility, seed: k as u64, ..Default::default() };
            let sol = solve(&mut problem, None, &opts)?;
            value = value.max(utility.evaluate(&sol.report.user_rates)?);
        }
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((alpha, value));
        }
    }
    Ok(best.expect("at least one schedule"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, CMat};
    use crate::net_model::{Dims, InstanceParts};

    fn siso(cross: f64, users: usize) -> NetworkInstance {
        let channels = (0..users * users)
            .map(|k| CMat::from_element(1, 1, c64(if k / users == k % users { 1.0 } else { cross }, 0.0)))
            .collect();
        NetworkInstance::new(InstanceParts {
            dims: Dims { num_bs: users, num_users: users, tx_antennas: 1, rx_antennas: 1, tones: 1, slots: 1 },
            channels,
            noise_power: vec![1.0; users],
            power_budget: vec![1.0; users],
            link_gain: vec![],
            home_bs: vec![],
            bs_positions: vec![],
            user_positions: vec![],
        })
        .unwrap()
    }

    #[test]
    fn interference_free_pair() {
        let v = brute_force_sumrate(&siso(0.0, 2), 50).unwrap();
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn strong_symmetric_interference_is_on_off() {
        // h_ij = h_ii = 2: both on gives 2 log(1 + 4/5), one on gives log 5
        let inst = NetworkInstance::new(InstanceParts {
            channels: vec![CMat::from_element(1, 1, c64(2.0, 0.0)); 4],
            ..siso(1.0, 2).parts()
        })
        .unwrap();
        let v = brute_force_sumrate(&inst, 101).unwrap();
        assert!((v - 5f64.ln()).abs() < 1e-12);
        assert!(5f64.ln() > 2.0 * 1.8f64.ln());
    }

    #[test]
    fn large_instances_are_refused() {
        assert!(matches!(brute_force_sumrate(&siso(0.1, 3), 10), Err(Error::Config(_))));
        assert!(brute_force_sumrate(&siso(0.1, 2), 1).is_err());
    }
}
