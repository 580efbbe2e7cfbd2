//! The layered-network contractions against brute-force state vectors.

use gipeps::gauge::{minimal_model, random_gauge_tensor, GaugeSiteTensor, LinkRule, MinimalModelParams};
use gipeps::geometry::{count_contributing_corners, Bipartition, Lattice, Region, Shape};
use gipeps::oracle::{check_gauss, contract_state, entropies, rdm_blocks, wilson_expectation};
use gipeps::transfer::{
    contract_lattice, finite_purity, lattice_rows, wilson_expectation_finite, wilson_loop_links, Backend,
};

fn models() -> Vec<(&'static str, GaugeSiteTensor)> {
    vec![
        ("minimal", minimal_model(MinimalModelParams::new(1.0, 0.4, 0.7, 0.3).unwrap())),
        ("toric", minimal_model(MinimalModelParams::toric_code())),
        ("random-d2", random_gauge_tensor(2, 1.0, 0.6, 11).unwrap()),
        ("random-d4", random_gauge_tensor(4, 1.0, 0.6, 5).unwrap()),
    ]
}

const BIPARTITIONS: [Bipartition; 4] =
    [Bipartition::SiteOwned, Bipartition::Closed, Bipartition::Open, Bipartition::AllOdd];

fn rect(w: usize, h: usize, x: usize, y: usize, b: Bipartition) -> Region {
    Region::new(Shape::Rectangle { width: w, height: h }, (x, y), b).unwrap()
}

fn regions() -> Vec<(Lattice, Region)> {
    let mut out = Vec::new();
    for b in BIPARTITIONS {
        out.push((Lattice::new(3, 3).unwrap(), rect(1, 1, 1, 1, b)));
        out.push((Lattice::new(3, 3).unwrap(), rect(2, 2, 0, 0, b)));
        out.push((Lattice::new(4, 3).unwrap(), rect(2, 1, 1, 1, b)));
    }
    out.push((
        Lattice::new(4, 4).unwrap(),
        Region::new(Shape::Stairs { l: 2, c: 1 }, (1, 1), Bipartition::SiteOwned).unwrap(),
    ));
    out
}

/// Bond dimension 4 doubles the layered leg extents; keep one lattice
/// direction short so the swap network stays cheap.
fn small_regions() -> Vec<(Lattice, Region)> {
    let lat = Lattice::new(3, 2).unwrap();
    BIPARTITIONS.into_iter().flat_map(|b| [(lat, rect(1, 1, 1, 0, b)), (lat, rect(2, 1, 0, 1, b))]).collect()
}

#[test]
fn purity_matches_oracle_in_every_sector() {
    for (name, site) in models() {
        let cases = if site.extent() == 4 { small_regions() } else { regions() };
        for (lat, reg) in cases {
            let psi = contract_state(&site, &lat).unwrap();
            let Ok(rdm) = rdm_blocks(&psi, &reg) else { continue };
            let ent = entropies(&rdm, 2.0);
            let full = finite_purity(&site, &lat, &reg, None, &Backend::dense()).unwrap();
            assert!(
                (full.purity - ent.purity).abs() <= 1e-10 * ent.purity.max(1.0),
                "{name} {reg:?}: {} vs {}",
                full.purity,
                ent.purity
            );
            let budget = if site.extent() == 4 { 2 } else { usize::MAX };
            let checked = rdm.blocks.iter().zip(&ent.sectors).filter(|(b, _)| b.sector.is_admissible() && b.probability > 1e-12);
            for (block, se) in checked.take(budget) {
                let fp = finite_purity(&site, &lat, &reg, Some(&block.sector.charges), &Backend::dense()).unwrap();
                assert!((fp.probability - block.probability).abs() < 1e-10, "{name} {reg:?} {}", se.label);
                assert!(
                    (fp.purity - se.purity_bar).abs() < 1e-9,
                    "{name} {reg:?} {}: {} vs {}",
                    se.label,
                    fp.purity,
                    se.purity_bar
                );
            }
        }
    }
}

#[test]
fn block_rank_bounded_by_corners() {
    for (name, site) in models().into_iter().filter(|(_, s)| s.extent() == 2) {
        for (lat, reg) in regions() {
            let psi = contract_state(&site, &lat).unwrap();
            let rdm = rdm_blocks(&psi, &reg).unwrap();
            let bound = 1usize << count_contributing_corners(&rdm.parts);
            for s in entropies(&rdm, 2.0).sectors {
                assert!(s.rank <= bound, "{name} {reg:?} {}: rank {} > {bound}", s.label, s.rank);
            }
        }
    }
}

#[test]
fn wilson_loop_matches_oracle() {
    let lat = Lattice::new(4, 4).unwrap();
    for (name, site) in models().into_iter().filter(|(_, s)| s.extent() == 2) {
        let psi = contract_state(&site, &lat).unwrap();
        for (w, h) in [(1, 1), (2, 1), (2, 2)] {
            let links = wilson_loop_links((1, 1), w, h);
            let exact = wilson_expectation(&psi, &links);
            let net = wilson_expectation_finite(&site, &lat, (1, 1), w, h, &Backend::dense()).unwrap();
            assert!((exact - net).abs() < 1e-10, "{name} {w}x{h}: {exact} vs {net}");
        }
    }
}

#[test]
fn doubled_network_norm_matches_state() {
    let lat = Lattice::new(3, 2).unwrap();
    for (name, site) in models() {
        let psi = contract_state(&site, &lat).unwrap();
        assert!(check_gauss(&psi) <= 1e-12, "{name}");
        let rows = lattice_rows(&site, &lat, 2, |_| LinkRule::PAIRED, &[]).unwrap();
        let (z, _) = contract_lattice(&rows, &Backend::dense()).unwrap();
        let exact = psi.norm().powi(2);
        assert!((z.to_f64() - exact).abs() <= 1e-10 * exact, "{name}: {} vs {exact}", z.to_f64());
    }
}
