//! Vacancy-weighted event-geometry energy.
//!
//! `Σ_{e<e'} P_e P_e' Π_{u: k_e<k_u<k_e'} (1-P_u) c(e,e')` over events sorted
//! by onset (ties by atom). Events sharing an onset never sit between each
//! other. The fast path groups events by onset and folds the vacancy
//! product into a suffix recursion, which also yields the gradient without
//! dividing by `1 - P_u`.

use super::events::{extract_events, pair_cost, pair_cost_grad, Event, GeoParams, Surrogate};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::primdict::EffectiveDict;

/// Brute-force evaluation refuses more events than this.
pub const BRUTEFORCE_EVENT_LIMIT: usize = 12;

/// Gradient of the energy with respect to one event's inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventGrad {
    pub d_prob: f64,
    pub d_start: Vec<f64>,
    pub d_end: Vec<f64>,
    pub d_width_value: f64,
    pub d_soft_width: f64,
}

pub fn psi_geo(r: &Tensor, dict: &EffectiveDict, params: &GeoParams, surrogate: Surrogate) -> f64 {
    psi_geo_events(&extract_events(r, dict), params, surrogate)
}

pub fn psi_geo_events(events: &[Event], params: &GeoParams, surrogate: Surrogate) -> f64 {
    geo_impl(events, params, surrogate, false).0
}

pub fn psi_geo_with_grad(
    events: &[Event],
    params: &GeoParams,
    surrogate: Surrogate,
) -> (f64, Vec<EventGrad>) {
    geo_impl(events, params, surrogate, true)
}

fn onset_groups(events: &[Event]) -> Vec<(usize, usize)> {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let mut j = i + 1;
        while j < events.len() && events[j].onset == events[i].onset {
            j += 1;
        }
        groups.push((i, j));
        i = j;
    }
    groups
}

fn add_pair_grad(
    grads: &mut [EventGrad],
    e: usize,
    f: usize,
    weight: f64,
    pg: &super::events::PairGrad,
) {
    for (d, g) in grads[e].d_end.iter_mut().zip(&pg.d_end_first) {
        *d += weight * g;
    }
    for (d, g) in grads[f].d_start.iter_mut().zip(&pg.d_start_second) {
        *d += weight * g;
    }
    grads[e].d_width_value += weight * pg.d_width_value_first;
    grads[e].d_soft_width += weight * pg.d_soft_width_first;
    grads[f].d_soft_width += weight * pg.d_soft_width_second;
}

fn geo_impl(
    events: &[Event],
    params: &GeoParams,
    surrogate: Surrogate,
    want_grad: bool,
) -> (f64, Vec<EventGrad>) {
    let n = events.len();
    let c = events.first().map(|e| e.start.len()).unwrap_or(0);
    let mut grads = if want_grad {
        vec![
            EventGrad {
                d_start: vec![0.0; c],
                d_end: vec![0.0; c],
                ..Default::default()
            };
            n
        ]
    } else {
        Vec::new()
    };
    let groups = onset_groups(events);
    let group_of: Vec<usize> = {
        let mut v = vec![0; n];
        for (gi, &(a, b)) in groups.iter().enumerate() {
            v[a..b].iter_mut().for_each(|x| *x = gi);
        }
        v
    };
    let vacancy: Vec<f64> = groups
        .iter()
        .map(|&(a, b)| events[a..b].iter().map(|e| 1.0 - e.prob).product())
        .collect();

    let mut total = 0.0;
    // scratch per outer event: pair cost and grad for every later event
    let mut costs: Vec<(f64, super::events::PairGrad)> = Vec::with_capacity(n);
    for (ei, e) in events.iter().enumerate() {
        let ga = group_of[ei];
        costs.clear();
        for f in &events[ei + 1..] {
            costs.push(pair_cost_grad(e, f, params, surrogate, want_grad));
        }
        let cost = |fi: usize| &costs[fi - ei - 1];

        // partners sharing the onset: empty vacancy product
        let (_, ga_end) = groups[ga];
        for fi in ei + 1..ga_end {
            let (c_ef, ref pg) = *cost(fi);
            let p = e.prob * events[fi].prob;
            total += p * c_ef;
            if want_grad {
                grads[ei].d_prob += events[fi].prob * c_ef;
                grads[fi].d_prob += e.prob * c_ef;
                add_pair_grad(&mut grads, ei, fi, p, pg);
            }
        }

        // later groups: A_b = Π_{ga<i<b} V_i, B_b = Σ_{f∈b} P_f c(e,f)
        let later = &groups[ga + 1..];
        let mut a_b = Vec::with_capacity(later.len());
        let mut b_b = Vec::with_capacity(later.len());
        let mut acc = 1.0;
        for (off, &(a, b)) in later.iter().enumerate() {
            a_b.push(acc);
            b_b.push((a..b).map(|fi| events[fi].prob * cost(fi).0).sum::<f64>());
            acc *= vacancy[ga + 1 + off];
        }
        let contrib: f64 = a_b.iter().zip(&b_b).map(|(x, y)| x * y).sum();
        total += e.prob * contrib;
        if !want_grad || later.is_empty() {
            continue;
        }
        grads[ei].d_prob += contrib;
        // suffix R_b = B_b + V_b R_{b+1}; ∂/∂V_b = P_e A_b R_{b+1}
        let mut suffix = 0.0;
        for off in (0..later.len()).rev() {
            let (a, b) = later[off];
            let d_v = e.prob * a_b[off] * suffix;
            if d_v != 0.0 {
                for u in a..b {
                    let others: f64 = (a..b)
                        .filter(|&v| v != u)
                        .map(|v| 1.0 - events[v].prob)
                        .product();
                    grads[u].d_prob -= d_v * others;
                }
            }
            let w = e.prob * a_b[off];
            for fi in a..b {
                let (c_ef, ref pg) = *cost(fi);
                grads[fi].d_prob += w * c_ef;
                add_pair_grad(&mut grads, ei, fi, w * events[fi].prob, pg);
            }
            suffix = b_b[off] + vacancy[ga + 1 + off] * suffix;
        }
    }
    (total, grads)
}

/// Literal triple loop over pairs and in-between events. Reference for the
/// grouped evaluation; refuses more than [`BRUTEFORCE_EVENT_LIMIT`] events.
pub fn psi_geo_bruteforce(
    r: &Tensor,
    dict: &EffectiveDict,
    params: &GeoParams,
    surrogate: Surrogate,
) -> Result<f64> {
    let events = extract_events(r, dict);
    psi_geo_bruteforce_events(&events, params, surrogate)
}

pub fn psi_geo_bruteforce_events(
    events: &[Event],
    params: &GeoParams,
    surrogate: Surrogate,
) -> Result<f64> {
    if events.len() > BRUTEFORCE_EVENT_LIMIT {
        return Err(Error::TooManyEvents {
            events: events.len(),
            limit: BRUTEFORCE_EVENT_LIMIT,
        });
    }
    let mut total = 0.0;
    for i in 0..events.len() {
        for j in i + 1..events.len() {
            let (e, f) = (&events[i], &events[j]);
            let mut vacancy = 1.0;
            for u in events {
                if e.onset < u.onset && u.onset < f.onset {
                    vacancy *= 1.0 - u.prob;
                }
            }
            total += e.prob * f.prob * vacancy * pair_cost(e, f, params, surrogate);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legality::events::pair_cost;

    fn ev(onset: usize, width: usize, p: f64, start: f64, end: f64) -> Event {
        Event {
            atom: 0,
            onset,
            prob: p,
            width_value: width as f64,
            width,
            soft_width: width as f64,
            start: vec![start],
            end: vec![end],
        }
    }

    #[test]
    fn contiguous_matched_pair_is_free() {
        let evs = [ev(0, 3, 1.0, 0.0, 0.5), ev(3, 2, 1.0, 0.5, 0.0)];
        assert_eq!(psi_geo_events(&evs, &GeoParams::default(), Surrogate::Exact), 0.0);
    }

    #[test]
    fn intermediate_event_kills_far_pair() {
        let p = GeoParams::default();
        let evs = [
            ev(1, 2, 1.0, 0.0, 0.3),
            ev(3, 2, 1.0, 0.1, 0.2),
            ev(5, 2, 1.0, -0.4, 0.0),
        ];
        let c12 = pair_cost(&evs[0], &evs[1], &p, Surrogate::Exact);
        let c23 = pair_cost(&evs[1], &evs[2], &p, Surrogate::Exact);
        let c13 = pair_cost(&evs[0], &evs[2], &p, Surrogate::Exact);
        let got = psi_geo_events(&evs, &p, Surrogate::Exact);
        assert!((got - (c12 + c23)).abs() < 1e-12);

        let mut half = evs.clone();
        half[1].prob = 0.5;
        let want = 0.5 * c12 + 0.5 * c23 + 0.5 * c13;
        let got = psi_geo_events(&half, &p, Surrogate::Exact);
        assert!((got - want).abs() < 1e-12);
        let brute = psi_geo_bruteforce_events(&half, &p, Surrogate::Exact).unwrap();
        assert!((brute - want).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let p = GeoParams::default();
        assert_eq!(psi_geo_bruteforce_events(&[ev(1, 2, 1.0, 0.0, 1.0)], &p, Surrogate::Exact).unwrap(), 0.0);
        let zeros = [ev(0, 2, 0.0, 0.0, 1.0), ev(4, 2, 0.0, 3.0, 1.0)];
        assert_eq!(psi_geo_bruteforce_events(&zeros, &p, Surrogate::Exact).unwrap(), 0.0);
        assert_eq!(psi_geo_events(&[], &p, Surrogate::Smooth), 0.0);
    }

    #[test]
    fn bruteforce_guard() {
        let evs: Vec<Event> = (0..13).map(|k| ev(k, 1, 0.5, 0.0, 0.0)).collect();
        assert!(matches!(
            psi_geo_bruteforce_events(&evs, &GeoParams::default(), Surrogate::Exact),
            Err(Error::TooManyEvents { events: 13, .. })
        ));
    }
}
