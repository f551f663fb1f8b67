use dritc_core::data::{
    read_ipd, target_from_ipd, write_csv, BalanceSpec, BalanceTerm, ColumnMap, Dataset,
    SubjectRecord,
};
use proptest::prelude::*;

fn record() -> impl Strategy<Value = SubjectRecord> {
    (0u8..2, prop::collection::vec(-100.0f64..100.0, 3), 0u8..2).prop_map(|(s, x, y)| {
        SubjectRecord {
            source: s,
            treatment: s,
            covariates: x,
            outcome: Some(y),
        }
    })
}

fn names() -> Vec<String> {
    vec!["age".into(), "ecog".into(), "x3".into()]
}

fn is_stacked(d: &Dataset) -> bool {
    (0..d.n()).all(|i| (i < d.n1()) == (d.source(i) == 1))
}

proptest! {
    #[test]
    fn csv_round_trip_preserves_records(rows in prop::collection::vec(record(), 1..30)) {
        let d = Dataset::from_records(rows, false).unwrap();
        prop_assert!(is_stacked(&d));
        let mut buf = Vec::new();
        write_csv(&d, &names(), &mut buf).unwrap();
        let back = read_ipd(buf.as_slice(), "mem.csv", &ColumnMap::new(names()), false).unwrap();
        prop_assert!(is_stacked(&back));
        prop_assert_eq!(back, d);
    }

    #[test]
    fn target_equals_brute_force_control_average(
        rows in prop::collection::vec(record(), 2..20),
        e in 1u32..4,
    ) {
        prop_assume!(rows.iter().any(|r| r.source == 0));
        let d = Dataset::from_records(rows.clone(), false).unwrap();
        let spec = BalanceSpec::new(vec![
            BalanceTerm::power(0, 1),
            BalanceTerm::power(1, e + 1),
            BalanceTerm::product(0, 2),
        ])
        .unwrap();
        let got = target_from_ipd(&spec, &d).unwrap();
        let controls: Vec<&SubjectRecord> = rows.iter().filter(|r| r.source == 0).collect();
        for (k, term) in spec.terms().iter().enumerate() {
            let want = controls.iter().map(|r| term.eval(&r.covariates)).sum::<f64>()
                / controls.len() as f64;
            prop_assert!((got[k] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn selection_keeps_the_stacked_layout(rows in prop::collection::vec(record(), 2..30)) {
        let d = Dataset::from_records(rows, false).unwrap();
        prop_assume!(d.n1() > 0 && d.n0() > 0);
        let trial: Vec<usize> = (0..d.n1()).rev().collect();
        let control: Vec<usize> = (d.n1()..d.n()).collect();
        let s = d.select(&trial, &control).unwrap();
        prop_assert!(is_stacked(&s));
        prop_assert_eq!((s.n1(), s.n0()), (d.n1(), d.n0()));
    }
}

#[test]
fn applied_example_layout() {
    let mut text = String::from("source,treatment,outcome,age,sex,ecog,smoker\n");
    for i in 0..500 {
        text.push_str(&format!("1,1,{},{},{},{},{}\n", u8::from(i % 9 != 0), 40 + i % 20, i % 2, i % 3 % 2, i % 5 % 2));
    }
    let cols: Vec<String> = ["age", "sex", "ecog", "smoker"].iter().map(|s| s.to_string()).collect();
    let d = read_ipd(text.as_bytes(), "sat.csv", &ColumnMap::new(cols), true).unwrap();
    assert_eq!((d.n1(), d.n0(), d.p()), (500, 0, 4));
    let spec = BalanceSpec::new(vec![
        BalanceTerm::power(0, 1),
        BalanceTerm::power(0, 2),
        BalanceTerm::power(1, 1),
        BalanceTerm::power(2, 1),
        BalanceTerm::power(3, 1),
    ])
    .unwrap();
    assert_eq!(spec.eval(&[45.0, 1.0, 0.0, 1.0])[..2], [45.0, 2025.0]);
}

#[test]
fn reading_reports_file_line_and_column() {
    let text = "source,treatment,outcome,age\n1,1,1,50\n0,0,1,abc\n";
    let err = read_ipd(text.as_bytes(), "in.csv", &ColumnMap::new(vec!["age".into()]), false)
        .unwrap_err()
        .to_string();
    assert!(err.contains("in.csv") && err.contains('3') && err.contains("age"), "{err}");
    let missing = "source,treatment,outcome\n1,1,1\n";
    assert!(read_ipd(missing.as_bytes(), "m.csv", &ColumnMap::new(vec!["age".into()]), false).is_err());
}
