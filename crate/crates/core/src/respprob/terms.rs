//! Decomposition of each endpoint into disjoint rectangle terms.

use super::{EndpointKind, EndpointSpec, IntermediateBound};

/// One rectangle over the leading `lower.len()` visits, with the number of
/// no-new-lesion factors it carries and the trimming region per visit.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// The survival product runs over visits `1..=factors`.
    pub factors: usize,
    /// Region `φ_t` for visits `1..=factors` used when trimming imputed hazards.
    pub phi: Vec<(f64, f64)>,
}

impl Term {
    pub fn dims(&self) -> usize {
        self.lower.len()
    }
}

pub fn terms(spec: &EndpointSpec) -> Vec<Term> {
    let (c, g) = (spec.response, spec.growth);
    let ninf = f64::NEG_INFINITY;
    let t_max = spec.horizon;
    let stable = (c, g);
    let respond = (ninf, c);
    match spec.kind {
        EndpointKind::FixedTime => {
            let ub = match spec.intermediate {
                IntermediateBound::Unbounded => f64::INFINITY,
                IntermediateBound::GrowthBound => g,
            };
            let mut upper = vec![ub; t_max];
            upper[t_max - 1] = c;
            let mut phi = vec![(ninf, g); t_max];
            phi[t_max - 1] = respond;
            vec![Term {
                lower: vec![ninf; t_max],
                upper,
                factors: t_max,
                phi,
            }]
        }
        EndpointKind::BorUnconfirmed => (1..=t_max)
            .map(|h| {
                let mut region = vec![stable; h];
                region[h - 1] = respond;
                build(region, h)
            })
            .collect(),
        EndpointKind::BorConfirmed => (1..t_max)
            .map(|h| {
                let mut region = vec![stable; h + 1];
                region[h - 1] = respond;
                region[h] = respond;
                build(region, h + 1)
            })
            .collect(),
    }
}

fn build(region: Vec<(f64, f64)>, factors: usize) -> Term {
    Term {
        lower: region.iter().map(|r| r.0).collect(),
        upper: region.iter().map(|r| r.1).collect(),
        factors,
        phi: region,
    }
}
