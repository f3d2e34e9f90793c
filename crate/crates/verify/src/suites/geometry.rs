use caxial::lattice::{permutations, Boundary, Lattice, LatticeSpec, LatticeSymmetry, Path, Site};
use serde_json::json;

use super::Builder;
use crate::config::Instance;
use crate::report::Bound;
use crate::runner::{Check, Measured};

/// Lattice of the geometry and calculus suites: `L^N` sites per side, spacing `L^{-1}`.
pub(crate) fn suite_lattice(inst: &Instance, boundary: Boundary) -> LatticeSpec {
    let n = inst.levels as i32;
    match boundary {
        Boundary::Torus => LatticeSpec::torus(inst.dim, inst.block_side, 1, n - 1),
        Boundary::OpenCube => LatticeSpec { boundary, ..LatticeSpec::torus(inst.dim, inst.block_side, 1, n - 2) },
    }
}

fn expected_counts(spec: &LatticeSpec) -> [usize; 3] {
    let n = spec.sites_per_side();
    let d = spec.dim as u32;
    let pairs = spec.dim * (spec.dim - 1) / 2;
    match spec.boundary {
        Boundary::Torus => [n.pow(d), spec.dim * n.pow(d), pairs * n.pow(d)],
        Boundary::OpenCube => [n.pow(d), spec.dim * (n - 1) * n.pow(d - 1), pairs * (n - 1).pow(2) * n.pow(d - 2)],
    }
}

fn path_key(p: &Path) -> Vec<(usize, i8)> {
    let mut v = p.steps.clone();
    v.sort();
    v
}

pub(crate) fn checks(b: &mut Builder, inst: &Instance) {
    let label = inst.label();
    let spec = suite_lattice(inst, b.cfg.boundary);
    let (dim, l) = (inst.dim, inst.block_side);

    b.push(Check::new("geometry.counts", "site, bond and plaquette counts", &label, Bound::AtMost, 0.0, 0, move |_| {
        let lat = Lattice::new(spec)?;
        let got = [lat.num_sites(), lat.num_bonds(), lat.num_plaquettes()];
        let want = expected_counts(&spec);
        let bad = got.iter().zip(&want).filter(|(a, b)| a != b).count();
        Ok(Measured::with(bad as f64, json!({ "counts": got, "expected": want })))
    }));

    if spec.boundary == Boundary::Torus {
        let levels = inst.levels;
        b.push(Check::new("geometry.block_partition", "blocks partition the lattice", &label, Bound::AtMost, 0.0, 0, move |_| {
            let lat = Lattice::new(spec)?;
            let mut bad = 0usize;
            for n in 0..=levels {
                let mut seen = vec![0u32; lat.num_sites()];
                let size = l.pow((dim * n) as u32);
                for y in lat.block_centers(n)? {
                    let members = lat.block_members(&lat.site(y), n)?;
                    if members.len() != size {
                        bad += 1;
                    }
                    for s in members {
                        seen[s] += 1;
                    }
                }
                bad += seen.iter().filter(|&&c| c != 1).count();
            }
            Ok(Measured::new(bad as f64))
        }));
    }

    let cube = LatticeSpec::unit_cube(dim, l);
    b.push(Check::new("geometry.path_family", "rectilinear path family from the block centre", &label, Bound::AtMost, 0.0, 0, move |_| {
        let lat = Lattice::new(cube)?;
        let fact = permutations(dim).len();
        let origin = lat.site_index(&Site::origin()).expect("origin is a site");
        let mut bad = 0usize;
        for x in lat.sites() {
            let fam = lat.path_family(&Site::origin(), &x)?;
            let xi = lat.site_index(&x).expect("site of the lattice");
            let l1: i64 = x.coords[..dim].iter().map(|c| c.abs()).sum();
            if fam.len() != fact {
                bad += 1;
            }
            for p in &fam {
                let chained = p.steps.iter().try_fold(origin, |at, &(bond, sign)| {
                    let (u, v) = lat.bond_endpoints(bond);
                    match sign {
                        1 if u == at => Some(v),
                        -1 if v == at => Some(u),
                        _ => None,
                    }
                });
                if p.start != origin || p.end != xi || p.len() as i64 != l1 || chained != Some(xi) {
                    bad += 1;
                }
            }
        }
        Ok(Measured::new(bad as f64))
    }));

    b.push(Check::new("geometry.symmetry_group", "hyperoctahedral group of lattice symmetries", &label, Bound::AtMost, 0.0, 0, move |_| {
        let g = LatticeSymmetry::all(dim);
        let order = (1usize << dim) * permutations(dim).len();
        let mut bad = usize::from(g.len() != order);
        let id = LatticeSymmetry::identity(dim);
        for r in &g {
            if r.compose(&r.inverse()) != id {
                bad += 1;
            }
            for s in &g {
                if !g.contains(&r.compose(s)) {
                    bad += 1;
                }
            }
        }
        Ok(Measured::with(bad as f64, json!({ "order": g.len() })))
    }));

    b.push(Check::new("geometry.path_covariance", "path families are carried into each other by symmetries", &label, Bound::AtMost, 0.0, 0, move |_| {
        let lat = Lattice::new(cube)?;
        let mut bad = 0usize;
        for r in LatticeSymmetry::all(dim) {
            for x in lat.sites() {
                let mut a: Vec<_> = lat.path_family(&Site::origin(), &x)?.iter().map(|p| path_key(&r.apply_path(&lat, p))).collect();
                let mut t: Vec<_> = lat.path_family(&Site::origin(), &r.apply_site(&x))?.iter().map(path_key).collect();
                a.sort();
                t.sort();
                if a != t {
                    bad += 1;
                }
            }
        }
        Ok(Measured::new(bad as f64))
    }));

    b.push(Check::new("geometry.axial_tree", "axial gauge tree spans the block", &label, Bound::AtMost, 0.0, 0, move |_| {
        let lat = Lattice::new(cube)?;
        let tree = lat.axial_tree()?;
        let mut parent: Vec<usize> = (0..lat.num_sites()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut bad = usize::from(tree.len() + 1 != lat.num_sites());
        for &bond in &tree {
            let (u, v) = lat.bond_endpoints(bond);
            let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
            if ru == rv {
                bad += 1;
            } else {
                parent[ru] = rv;
            }
        }
        Ok(Measured::new(bad as f64))
    }));

    if inst.levels >= 2 {
        let torus = LatticeSpec::torus(dim, l, 1, inst.levels as i32 - 1);
        b.push(Check::new("geometry.linking_partition", "in-block and linking bonds partition the bonds", &label, Bound::AtMost, 0.0, 0, move |_| {
            let lat = Lattice::new(torus)?;
            let mut count = vec![0u32; lat.num_bonds()];
            let mut block_of = vec![usize::MAX; lat.num_sites()];
            let centers = lat.block_centers(1)?;
            for (i, &y) in centers.iter().enumerate() {
                for s in lat.block_members(&lat.site(y), 1)? {
                    block_of[s] = i;
                }
            }
            for bi in 0..lat.num_bonds() {
                let (u, v) = lat.bond_endpoints(bi);
                if block_of[u] == block_of[v] {
                    count[bi] += 1;
                }
            }
            let mut bad = 0usize;
            for &y in &centers {
                for axis in 0..dim {
                    let lb = lat.forward_linking_bonds(&lat.site(y), axis)?;
                    if lb.bonds.len() != l.pow(dim as u32 - 1) || !lb.bonds.contains(&lb.central) {
                        bad += 1;
                    }
                    for bond in lb.bonds {
                        count[bond] += 1;
                    }
                }
            }
            bad += count.iter().filter(|&&c| c != 1).count();
            Ok(Measured::new(bad as f64))
        }));
    }
}
