//! The verification suite: oracle invariants on small lattices plus the
//! agreement between network contractions and brute force.

use serde::{Deserialize, Serialize};

use crate::gauge::{minimal_model, random_gauge_tensor, GaugeSiteTensor, MinimalModelParams};
use crate::geometry::{count_contributing_corners, Bipartition, FluxSector, Lattice, Region, Shape};
use crate::oracle::{
    build_confined_state, build_deconfined_state, check_gauss, confined_sr_entropy_check, contract_state,
    decomposition_identity_check, entropies, rdm_blocks, renyi_sum_rule, schmidt_symmetry_gap, wilson_expectation,
    OracleError, REGION_LINK_CAP,
};
use crate::transfer::{finite_purity, wilson_loop_links, Backend, TransferError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn push(&mut self, name: impl Into<String>, value: f64, tolerance: f64) {
        let pass = value.is_finite() && value.abs() <= tolerance;
        self.checks.push(VerifyCheck { name: name.into(), value, tolerance, pass });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &VerifyCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
}

/// Models exercised by the suite: the minimal model, the toric-code point
/// and seeded random tensors at bond dimensions 2 and 4.
pub fn verify_models() -> Vec<(String, GaugeSiteTensor)> {
    let mut out = vec![
        ("minimal".to_string(), minimal_model(MinimalModelParams::new(1.0, 0.3, 1.0, 0.9).expect("valid"))),
        ("toric".to_string(), minimal_model(MinimalModelParams::toric_code())),
        ("random-d2-s1".to_string(), random_gauge_tensor(2, 1.0, 0.4, 1).expect("valid")),
    ];
    for seed in 0..5 {
        out.push((format!("random-d4-s{seed}"), random_gauge_tensor(4, 1.0, 0.4, seed).expect("valid")));
    }
    out
}

/// Every rectangle in the lattice under every bipartition whose region and
/// complement are both small enough for a dense reduced density matrix.
pub fn verify_regions(lat: &Lattice) -> Vec<Region> {
    let mut out = Vec::new();
    for b in [Bipartition::SiteOwned, Bipartition::Closed, Bipartition::Open, Bipartition::AllOdd] {
        for h in 1..=lat.ly {
            for w in 1..=lat.lx {
                for y in 0..=lat.ly - h {
                    for x in 0..=lat.lx - w {
                        let Ok(reg) = Region::new(Shape::Rectangle { width: w, height: h }, (x, y), b) else {
                            continue;
                        };
                        let Ok(member) = reg.link_membership(lat) else { continue };
                        let n = member.iter().filter(|&&m| m).count();
                        if n > 0 && n < member.len() && n <= REGION_LINK_CAP && member.len() - n <= REGION_LINK_CAP {
                            out.push(reg);
                        }
                    }
                }
            }
        }
    }
    out
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Runs every check on one lattice; the worst value over regions is
/// reported per model and check.
pub fn verify_lattice(lat: &Lattice, report: &mut VerifyReport) -> Result<(), VerifyError> {
    verify_lattice_with(lat, &verify_models(), report)
}

pub fn verify_lattice_with(
    lat: &Lattice,
    models: &[(String, GaugeSiteTensor)],
    report: &mut VerifyReport,
) -> Result<(), VerifyError> {
    let tag = format!("{}x{}", lat.lx, lat.ly);
    let regions = verify_regions(lat);
    for (name, site) in models {
        let psi = contract_state(site, lat)?;
        report.push(format!("{tag}/{name}/gauss"), check_gauss(&psi), 1e-12);
        let mut worst = [0.0f64; 8];
        for reg in &regions {
            let rdm = rdm_blocks(&psi, reg)?;
            let ent = entropies(&rdm, 2.0);
            worst[0] = worst[0].max((rdm.total_probability() - 1.0).abs());
            worst[1] = worst[1].max(rdm.max_odd_probability());
            worst[2] = worst[2].max(renyi_sum_rule(&rdm, 2.0));
            worst[3] = worst[3].max(decomposition_identity_check(&rdm));
            worst[4] = worst[4].max(schmidt_symmetry_gap(&psi, reg)?);
            let full = finite_purity(site, lat, reg, None, &Backend::dense())?;
            worst[5] = worst[5].max(relative(full.purity, ent.purity));
            let vac = FluxSector::vacuum(&rdm.parts);
            if let Some((b, s)) = rdm.blocks.iter().zip(&ent.sectors).find(|(b, _)| b.sector == vac) {
                if b.probability > 1e-12 {
                    let fp = finite_purity(site, lat, reg, Some(&vac.charges), &Backend::dense())?;
                    worst[6] = worst[6].max(relative(fp.purity, s.purity_bar));
                }
            }
            if site.extent() == 2 {
                let bound = 1usize << count_contributing_corners(&rdm.parts);
                let excess = ent.sectors.iter().map(|s| s.rank.saturating_sub(bound)).max().unwrap_or(0);
                worst[7] = worst[7].max(excess as f64);
            }
        }
        let names = [
            ("probability_sum", 1e-10),
            ("odd_sector_probability", 1e-12),
            ("renyi2_sum_rule", 1e-10),
            ("decomposition_identity", 1e-10),
            ("schmidt_symmetry", 1e-10),
            ("purity_vs_transfer", 1e-9),
            ("vacuum_purity_vs_transfer", 1e-9),
        ];
        for ((check, tol), v) in names.iter().zip(worst) {
            report.push(format!("{tag}/{name}/{check}"), v, *tol);
        }
        if site.extent() == 2 {
            report.push(format!("{tag}/{name}/rank_excess_over_corner_bound"), worst[7], 0.0);
        }
    }
    Ok(())
}

/// Checks of the closed-form appendix states, independent of lattice size.
pub fn verify_appendix(report: &mut VerifyReport) -> Result<(), VerifyError> {
    let kappa = 0.5;
    let v = 2.0 * kappa / (1.0 + kappa * kappa);
    let lat = Lattice::new(3, 3).map_err(OracleError::from)?;
    let psi = build_confined_state(kappa, &lat)?;
    report.push("appendix/confined/gauss", check_gauss(&psi), 1e-12);
    let mut worst = 0.0f64;
    for (w, h) in [(1, 1), (2, 1), (1, 2), (2, 2)] {
        let got = wilson_expectation(&psi, &wilson_loop_links((0, 0), w, h));
        worst = worst.max((got - v.powi((w * h) as i32)).abs());
    }
    report.push("appendix/confined/wilson_area_law", worst, 1e-10);
    let sr = confined_sr_entropy_check(kappa, 2, 2)?;
    report.push("appendix/confined/block_spectrum", sr.spectrum_gap, 1e-10);
    let lat = Lattice::new(4, 3).map_err(OracleError::from)?;
    let psi = build_deconfined_state(0.3, &lat)?;
    report.push("appendix/deconfined/gauss", check_gauss(&psi), 1e-12);
    let mut worst = 0.0f64;
    for reg in verify_regions(&lat) {
        let e = entropies(&rdm_blocks(&psi, &reg)?, 1.0);
        worst = e.sectors.iter().map(|s| s.s_bar_vn).fold(worst, f64::max);
    }
    report.push("appendix/deconfined/max_sector_entropy", worst, 1e-10);
    Ok(())
}

pub fn run_verification(sizes: &[(usize, usize)]) -> Result<VerifyReport, VerifyError> {
    let mut report = VerifyReport::default();
    for &(w, h) in sizes {
        verify_lattice(&Lattice::new(w, h).map_err(OracleError::from)?, &mut report)?;
    }
    verify_appendix(&mut report)?;
    Ok(report)
}
