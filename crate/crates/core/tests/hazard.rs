mod common;

use std::collections::BTreeMap;

use common::rel;
use mortsynth_core::hazard::{
    conditional_shares, expected_deaths, implied_hazard_ratio, recombine, split_rates,
    HazardRatioSpec, HazardScope, RateTable,
};
use mortsynth_core::{ContingencyTable, DimensionSpec, Error, TableKind};
use proptest::prelude::*;

fn ages(n: usize) -> DimensionSpec {
    DimensionSpec::new("age", (0..n).map(|i| (20 + i).to_string())).unwrap()
}

fn smoker() -> DimensionSpec {
    DimensionSpec::new("smoker", ["yes", "no"]).unwrap()
}

fn base(rates: Vec<f64>, exposure: Vec<f64>) -> RateTable {
    let d = vec![ages(rates.len())];
    RateTable::new(
        ContingencyTable::new(d.clone(), rates, TableKind::Rate).unwrap(),
        ContingencyTable::new(d, exposure, TableKind::Count).unwrap(),
    )
    .unwrap()
}

/// Shares per age: `p[i]` smokers.
fn shares(p: &[f64]) -> ContingencyTable {
    let joint = ContingencyTable::from_fn(vec![ages(p.len()), smoker()], TableKind::Count, |l| {
        let i: usize = l[0].parse::<usize>().unwrap() - 20;
        if l[1] == "yes" { p[i] } else { 1.0 - p[i] }
    })
    .unwrap();
    conditional_shares(&joint, "smoker").unwrap()
}

fn spec(h: f64) -> HazardRatioSpec {
    HazardRatioSpec::binary("smoker", "no", "yes", h).unwrap()
}

fn rate(t: &RateTable, age: &str, s: &str) -> f64 {
    t.rates().get(&[("age", age), ("smoker", s)]).unwrap()
}

#[test]
fn unit_ratio_keeps_rates() {
    let b = base(vec![0.001, 0.002], vec![100.0, 100.0]);
    let out = split_rates(&b, &shares(&[0.3, 0.6]), &spec(1.0)).unwrap();
    for a in ["20", "21"] {
        assert_eq!(rate(&out, a, "yes"), rate(&out, a, "no"));
    }
    assert_eq!(rate(&out, "21", "no"), 0.002);
}

#[test]
fn closed_form_example() {
    let b = base(vec![0.0015], vec![1.0]);
    let out = split_rates(&b, &shares(&[0.5]), &spec(2.0)).unwrap();
    assert!((rate(&out, "20", "no") - 0.001).abs() < 1e-15);
    assert!((rate(&out, "20", "yes") - 0.002).abs() < 1e-15);
}

#[test]
fn italian_age_twenty_male() {
    let b = base(vec![0.000532], vec![1.0]);
    let out = split_rates(&b, &shares(&[0.497]), &spec(1.4)).unwrap();
    let yes = rate(&out, "20", "yes");
    let no = rate(&out, "20", "no");
    assert_eq!(format!("{yes:.2e}"), "6.21e-4");
    assert_eq!(format!("{no:.2e}"), "4.44e-4");
}

#[test]
fn implied_ratios() {
    assert!((implied_hazard_ratio(0.014, 0.010).unwrap() - 1.4).abs() < 1e-12);
    assert_eq!(implied_hazard_ratio(0.3, 0.3).unwrap(), 1.0);
    let r = implied_hazard_ratio(0.000621, 0.000444).unwrap();
    assert!((r - 1.398_648_648_648_648_6).abs() < 1e-12);
    assert!(matches!(implied_hazard_ratio(1.0, 0.0), Err(Error::DivisionDegenerate)));
}

#[test]
fn expected_deaths_examples() {
    let t = base(vec![0.01, 0.5], vec![100_000.0, 0.0]);
    let d = expected_deaths(&t);
    assert!((d.values()[0] - 1000.0).abs() < 1e-9);
    assert_eq!(d.values()[1], 0.0);
}

#[test]
fn split_errors() {
    let b = base(vec![0.8], vec![1.0]);
    assert!(matches!(
        split_rates(&b, &shares(&[0.5]), &spec(3.0)),
        Err(Error::RateOverflow { .. })
    ));
    let zero = HazardRatioSpec::new(
        "smoker",
        "no",
        HazardScope::Global(BTreeMap::from([("no".into(), 1.0), ("yes".into(), 0.0)])),
    )
    .unwrap();
    let b = base(vec![0.01], vec![1.0]);
    assert!(matches!(
        split_rates(&b, &shares(&[1.0]), &zero),
        Err(Error::InfeasibleSplit { .. })
    ));
    assert!(HazardRatioSpec::binary("smoker", "no", "no", 2.0).is_err());
}

#[test]
fn cellwise_ratios() {
    let h = ContingencyTable::new(vec![ages(2), smoker()], vec![2.0, 1.0, 3.0, 1.0], TableKind::Count).unwrap();
    let spec = HazardRatioSpec::new("smoker", "no", HazardScope::Cellwise(h)).unwrap();
    let b = base(vec![0.01, 0.01], vec![1.0, 1.0]);
    let out = split_rates(&b, &shares(&[0.5, 0.5]), &spec).unwrap();
    assert!(rel(rate(&out, "20", "yes") / rate(&out, "20", "no"), 2.0) < 1e-12);
    assert!(rel(rate(&out, "21", "yes") / rate(&out, "21", "no"), 3.0) < 1e-12);
}

proptest! {
    #[test]
    fn conservation_ratio_and_round_trip(
        cells in prop::collection::vec((1e-5f64..0.3, 0.01f64..0.99, 1.0f64..1e6), 1..20),
        h in 0.5f64..3.0,
    ) {
        let rates: Vec<f64> = cells.iter().map(|c| c.0).collect();
        let p: Vec<f64> = cells.iter().map(|c| c.1).collect();
        let e: Vec<f64> = cells.iter().map(|c| c.2).collect();
        let b = base(rates.clone(), e.clone());
        let w = shares(&p);
        let out = split_rates(&b, &w, &spec(h)).unwrap();
        for i in 0..rates.len() {
            let a = (20 + i).to_string();
            let (y, n) = (rate(&out, &a, "yes"), rate(&out, &a, "no"));
            prop_assert!(rel(y / n, h) <= 1e-12);
            let deaths = p[i] * y * e[i] + (1.0 - p[i]) * n * e[i];
            prop_assert!(rel(deaths, rates[i] * e[i]) <= 1e-12);
        }
        let back = recombine(&out, &w, "smoker").unwrap();
        for (x, y) in back.rates().values().iter().zip(&rates) {
            prop_assert!(rel(*x, *y) <= 1e-12);
        }
        for (x, y) in back.exposure().values().iter().zip(&e) {
            prop_assert!(rel(*x, *y) <= 1e-12);
        }
    }

    #[test]
    fn raising_the_ratio_lowers_the_reference(
        m in 1e-5f64..0.2, p in 0.01f64..0.99, h in 1.0f64..3.0, dh in 0.01f64..1.0,
    ) {
        let b = base(vec![m], vec![1.0]);
        let lo = split_rates(&b, &shares(&[p]), &spec(h)).unwrap();
        let hi = split_rates(&b, &shares(&[p]), &spec(h + dh)).unwrap();
        prop_assert!(rate(&hi, "20", "no") < rate(&lo, "20", "no"));
        prop_assert!(rate(&hi, "20", "yes") > rate(&lo, "20", "yes"));
    }
}
