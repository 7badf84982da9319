//! CSV and SVG views over a results store.
//!
//! Scores are AUROC × 100 with one decimal, shown as `mean ± std` over
//! seeds (sample standard deviation). `**` marks the best mean of a row
//! within one setting; `*` marks a significant difference from ST under a
//! two-sided Welch test at p < 0.05, and `(n/a)` marks a comparison with
//! fewer than two seeds on a side. Every file starts with a provenance line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::store::{ResultRecord, Subgroup};
use crate::metrics::{mean, negative_transfer_matrix, std_dev, t_test, SeedScores, TTestKind, TransferCell};
use crate::tasks::Category;
use crate::train::Regime;

/// Provenance line shared by every artifact built from `records`.
pub fn provenance(records: &[ResultRecord]) -> String {
    let join = |v: BTreeSet<String>| v.into_iter().collect::<Vec<_>>().join(";");
    let hashes = join(records.iter().map(|r| r.config_hash.clone()).collect());
    let versions = join(records.iter().map(|r| r.code_version.clone()).collect());
    let seeds = join(records.iter().map(|r| r.master_seed.to_string()).collect());
    format!("config_hash={hashes} code_version={versions} master_seed={seeds}")
}

fn pct(x: f64) -> String {
    let v = 100.0 * x;
    // Avoid "-0.0".
    if v.abs() < 0.05 {
        "0.0".into()
    } else {
        format!("{v:.1}")
    }
}

/// Per-seed scores of one regime family in one setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Family {
    St,
    Mt,
    Ftd,
    Ftf,
}

impl Family {
    fn of(r: Regime) -> Option<Self> {
        match r {
            Regime::St(_) => Some(Family::St),
            Regime::Mt => Some(Family::Mt),
            Regime::Ftd(_) => Some(Family::Ftd),
            Regime::Ftf(_) => Some(Family::Ftf),
            Regime::PretrainOmit(_) => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Family::St => "ST",
            Family::Mt => "MT",
            Family::Ftd => "FTD",
            Family::Ftf => "FTF",
        }
    }
}

/// `(family, category) -> seed -> score` for records matching the setting.
fn collect(
    records: &[ResultRecord],
    fraction: f64,
    female_removal: Option<f64>,
    subgroup: Subgroup,
) -> BTreeMap<(Family, Category), BTreeMap<u64, f64>> {
    let mut out: BTreeMap<(Family, Category), BTreeMap<u64, f64>> = BTreeMap::new();
    for r in records {
        if r.subgroup != subgroup || r.fraction != fraction || r.female_removal != female_removal {
            continue;
        }
        let (Some(f), Some(v)) = (Family::of(r.regime), r.macro_auroc) else { continue };
        out.entry((f, r.category)).or_default().entry(r.seed).or_insert(v);
    }
    out
}

fn values(m: &BTreeMap<(Family, Category), BTreeMap<u64, f64>>, f: Family, c: Category) -> Vec<f64> {
    m.get(&(f, c)).map(|s| s.values().copied().collect()).unwrap_or_default()
}

fn cell(vals: &[f64], best: bool, versus_st: Option<&[f64]>) -> String {
    if vals.is_empty() {
        return "missing".into();
    }
    let sd = if vals.len() >= 2 { pct(std_dev(vals)) } else { "n/a".into() };
    let mut s = format!("{} ± {sd}", pct(mean(vals)));
    if best {
        s = format!("**{s}**");
    }
    if let Some(st) = versus_st {
        match t_test(vals, st, TTestKind::Welch) {
            Some(t) if t.significant() => s.push('*'),
            Some(_) => {}
            None => s.push_str(" (n/a)"),
        }
    }
    s
}

/// Writes one row block: families in `fams`, bold on the best mean.
fn row_cells(m: &BTreeMap<(Family, Category), BTreeMap<u64, f64>>, fams: &[Family], c: Category) -> Vec<String> {
    let means: Vec<Option<f64>> = fams
        .iter()
        .map(|&f| {
            let v = values(m, f, c);
            (!v.is_empty()).then(|| mean(&v))
        })
        .collect();
    // Compare at display precision so visually tied cells are both bold.
    let best = means.iter().flatten().map(|&x| (1000.0 * x).round()).fold(None, |a: Option<f64>, x| Some(a.map_or(x, |a| a.max(x))));
    let st = values(m, Family::St, c);
    fams.iter()
        .zip(&means)
        .map(|(&f, mu)| {
            let v = values(m, f, c);
            let is_best = matches!((mu, best), (Some(x), Some(b)) if (1000.0 * x).round() == b);
            let vs = (f != Family::St && !st.is_empty()).then_some(st.as_slice());
            cell(&v, is_best, vs)
        })
        .collect()
}

/// Regime comparison: full-data ST/MT/FTD/FTF and few-shot ST/FTD/FTF at
/// `few_fraction`.
pub fn table2(records: &[ResultRecord], few_fraction: f64) -> String {
    let full = collect(records, 1.0, None, Subgroup::All);
    let few = collect(records, few_fraction, None, Subgroup::All);
    let mut s = format!("# {}\n", provenance(records));
    let pct_label = format!("{}%", 100.0 * few_fraction);
    writeln!(
        s,
        "task,full ST,full MT,full FTD,full FTF,few-shot {p} ST,few-shot {p} FTD,few-shot {p} FTF",
        p = pct_label
    )
    .unwrap();
    for c in Category::REPORTED {
        let mut row = vec![c.abbr().to_string()];
        row.extend(row_cells(&full, &[Family::St, Family::Mt, Family::Ftd, Family::Ftf], c));
        row.extend(row_cells(&few, &[Family::St, Family::Ftd, Family::Ftf], c));
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    s
}

fn transfer_inputs(records: &[ResultRecord]) -> (SeedScores, BTreeMap<Category, SeedScores>) {
    let mut full: SeedScores = BTreeMap::new();
    let mut omitted: BTreeMap<Category, SeedScores> = BTreeMap::new();
    for r in records {
        if r.subgroup != Subgroup::All || r.fraction != 1.0 || r.female_removal.is_some() {
            continue;
        }
        let Some(v) = r.macro_auroc else { continue };
        match r.regime {
            Regime::Mt => {
                full.entry(r.seed).or_default().entry(r.category).or_insert(v);
            }
            Regime::PretrainOmit(t) => {
                omitted.entry(t).or_default().entry(r.seed).or_default().entry(r.category).or_insert(v);
            }
            _ => {}
        }
    }
    (full, omitted)
}

/// Δ(t, r) = omit-t score on r minus the full multi-task score on r, mean
/// over seeds; rows are the omitted task, columns the reported task. The
/// second block is the transposed benefit view M(r) − M_¬t(r).
pub fn negative_transfer(records: &[ResultRecord]) -> String {
    let (full, omitted) = transfer_inputs(records);
    let cats = Category::REPORTED;
    let m = negative_transfer_matrix(&full, &omitted, &cats);
    let mut s = format!("# {}\n", provenance(records));
    for (title, sign, transpose) in [("omission delta", 1.0, false), ("transfer benefit", -1.0, true)] {
        writeln!(s, "# {title}").unwrap();
        let head: Vec<&str> = cats.iter().map(|c| c.abbr()).collect();
        writeln!(s, "{},{}", if transpose { "reported\\omitted" } else { "omitted\\reported" }, head.join(",")).unwrap();
        for &a in &cats {
            let mut row = vec![a.abbr().to_string()];
            for &b in &cats {
                let key = if transpose { (b, a) } else { (a, b) };
                row.push(match m.get(&key) {
                    Some(TransferCell::Delta { mean, .. }) => pct(sign * mean),
                    Some(TransferCell::Diagonal) => "diag".into(),
                    _ => "missing".into(),
                });
            }
            writeln!(s, "{}", row.join(",")).unwrap();
        }
    }
    s
}

/// Few-shot points: `(category, family) -> [(fraction, seed scores)]`.
fn curves(records: &[ResultRecord]) -> BTreeMap<(Category, Family), Vec<(f64, Vec<f64>)>> {
    let mut acc: BTreeMap<(Category, Family, u64), BTreeMap<u64, f64>> = BTreeMap::new();
    for r in records {
        if r.subgroup != Subgroup::All || r.female_removal.is_some() {
            continue;
        }
        let (Some(f), Some(v)) = (Family::of(r.regime), r.macro_auroc) else { continue };
        if f == Family::Mt {
            continue;
        }
        acc.entry((r.category, f, r.fraction.to_bits())).or_default().entry(r.seed).or_insert(v);
    }
    let mut out: BTreeMap<(Category, Family), Vec<(f64, Vec<f64>)>> = BTreeMap::new();
    for ((c, f, bits), seeds) in acc {
        out.entry((c, f)).or_default().push((f64::from_bits(bits), seeds.into_values().collect()));
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

pub fn fewshot_csv(records: &[ResultRecord]) -> String {
    let mut s = format!("# {}\n", provenance(records));
    writeln!(s, "task,regime,fraction_percent,mean,std,seeds").unwrap();
    for ((c, f), pts) in curves(records) {
        for (frac, v) in pts {
            let sd = if v.len() >= 2 { pct(std_dev(&v)) } else { "n/a".into() };
            writeln!(s, "{},{},{},{},{sd},{}", c.abbr(), f.name(), 100.0 * frac, pct(mean(&v)), v.len()).unwrap();
        }
    }
    s
}

/// AUROC against log training fraction for one category, one polyline per regime.
pub fn fewshot_svg(records: &[ResultRecord], category: Category) -> Option<String> {
    let all = curves(records);
    let lines: Vec<(Family, Vec<(f64, f64)>)> = all
        .iter()
        .filter(|((c, _), _)| *c == category)
        .map(|((_, f), pts)| (*f, pts.iter().map(|(x, v)| (*x, 100.0 * mean(v))).collect()))
        .collect();
    if lines.is_empty() {
        return None;
    }
    let (w, h, ml, mr, mt, mb) = (480.0, 320.0, 56.0, 96.0, 32.0, 44.0);
    let xs: Vec<f64> = lines.iter().flat_map(|(_, p)| p.iter().map(|q| q.0.log10())).collect();
    let ys: Vec<f64> = lines.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).collect();
    let (mut x0, mut x1) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if x1 - x0 < 1e-9 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let y0 = (ys.iter().copied().fold(f64::INFINITY, f64::min) / 5.0).floor() * 5.0;
    let y1 = ((ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) / 5.0).ceil() * 5.0).max(y0 + 5.0);
    let px = |x: f64| ml + (x.log10() - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(s, "<!-- {} -->", provenance(records)).unwrap();
    writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{} AUROC vs training fraction</text>"#, w / 2.0, category.abbr()).unwrap();
    writeln!(s, r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - mb, w - mr, h - mb).unwrap();
    writeln!(s, r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#, h - mb).unwrap();
    let mut e = x0.ceil() as i32;
    while f64::from(e) <= x1 + 1e-9 {
        let x = ml + (f64::from(e) - x0) / (x1 - x0) * (w - ml - mr);
        let label = (1e5 * 10f64.powi(e)).round() / 1e3;
        writeln!(s, r#"<line x1="{x:.1}" y1="{}" x2="{x:.1}" y2="{}" stroke="black"/><text x="{x:.1}" y="{}" text-anchor="middle">{label}%</text>"#, h - mb, h - mb + 4.0, h - mb + 16.0).unwrap();
        e += 1;
    }
    let mut y = y0;
    while y <= y1 + 1e-9 {
        writeln!(s, r#"<line x1="{}" y1="{:.1}" x2="{ml}" y2="{:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{y}</text>"#, ml - 4.0, py(y), py(y), ml - 6.0, py(y) + 4.0).unwrap();
        y += 5.0;
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">training fraction (log scale)</text>"#, (ml + w - mr) / 2.0, h - 8.0).unwrap();
    for (i, (f, pts)) in lines.iter().enumerate() {
        let dash = ["", "6,3", "2,2", "8,3,2,3"][i % 4];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.1},{:.1}", px(*x), py(*y))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="black" stroke-width="1.5" stroke-dasharray="{dash}" points="{}"/>"#, path.join(" ")).unwrap();
        let ly = mt + 14.0 * i as f64;
        writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="black" stroke-dasharray="{dash}"/><text x="{}" y="{}">{}</text>"#, w - mr + 8.0, w - mr + 36.0, w - mr + 40.0, ly + 4.0, f.name()).unwrap();
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Male − female AUROC × 100 under ST/FTD/FTF with `female_removal` of the
/// female training patients dropped. `**` marks the smallest discrepancy.
pub fn discrepancy(records: &[ResultRecord], female_removal: f64) -> String {
    let male = collect(records, 1.0, Some(female_removal), Subgroup::M);
    let female = collect(records, 1.0, Some(female_removal), Subgroup::F);
    let fams = [Family::St, Family::Ftd, Family::Ftf];
    let mut s = format!("# {}\n", provenance(records));
    writeln!(s, "task,ST,FTD,FTF").unwrap();
    for c in Category::REPORTED {
        let diffs: Vec<Option<f64>> = fams
            .iter()
            .map(|&f| {
                let (m, w) = (male.get(&(f, c)), female.get(&(f, c)));
                let d: Vec<f64> = match (m, w) {
                    (Some(m), Some(w)) => m.iter().filter_map(|(seed, a)| w.get(seed).map(|b| a - b)).collect(),
                    _ => Vec::new(),
                };
                (!d.is_empty()).then(|| mean(&d))
            })
            .collect();
        let best = diffs.iter().flatten().map(|&d| (1000.0 * d).round()).fold(None, |a: Option<f64>, x| Some(a.map_or(x, |a| a.min(x))));
        let mut row = vec![c.abbr().to_string()];
        for d in &diffs {
            row.push(match d {
                Some(d) if Some((1000.0 * d).round()) == best => format!("**{}**", pct(*d)),
                Some(d) => pct(*d),
                None => "missing".into(),
            });
        }
        writeln!(s, "{}", row.join(",")).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(regime: Regime, cat: Category, seed: u64, fraction: f64, v: f64) -> ResultRecord {
        ResultRecord {
            cell: format!("{regime}-{seed}-{fraction}"),
            config_hash: "cafe".into(),
            code_version: "0.1.0".into(),
            master_seed: 7,
            regime,
            seed,
            fraction,
            female_removal: None,
            category: cat,
            subgroup: Subgroup::All,
            macro_auroc: Some(v),
            per_label: vec![],
            n: 1,
            selected_epoch: 0,
        }
    }

    #[test]
    fn identical_regimes_get_no_stars() {
        let mut rs = Vec::new();
        for s in 0..5 {
            let v = 0.9 + 0.01 * s as f64;
            rs.push(rec(Regime::St(Category::Mor), Category::Mor, s, 1.0, v));
            rs.push(rec(Regime::Ftf(Category::Mor), Category::Mor, s, 1.0, v));
        }
        let t = table2(&rs, 0.01);
        let mor = t.lines().find(|l| l.starts_with("MOR")).unwrap();
        assert!(!mor.replace("**", "").contains('*'), "{mor}");
        assert!(t.starts_with("# config_hash=cafe code_version=0.1.0 master_seed=7\n"));
        assert_eq!(t.lines().count(), 12);
    }

    #[test]
    fn separated_regimes_get_a_star_and_bold() {
        let mut rs = Vec::new();
        for s in 0..5 {
            rs.push(rec(Regime::St(Category::Mor), Category::Mor, s, 0.01, 0.6 + 0.01 * s as f64));
            rs.push(rec(Regime::Ftf(Category::Mor), Category::Mor, s, 0.01, 0.9 + 0.01 * s as f64));
        }
        rs.push(rec(Regime::Ftd(Category::Mor), Category::Mor, 0, 0.01, 0.7));
        let t = table2(&rs, 0.01);
        let mor: Vec<&str> = t.lines().find(|l| l.starts_with("MOR")).unwrap().split(',').collect();
        assert_eq!(mor[5], "62.0 ± 1.6");
        assert_eq!(mor[6], "70.0 ± n/a (n/a)");
        assert_eq!(mor[7], "**92.0 ± 1.6***");
        assert_eq!(mor[1], "missing");
    }

    #[test]
    fn negative_transfer_has_ninety_off_diagonal_cells() {
        let mut rs = Vec::new();
        for c in Category::REPORTED {
            rs.push(rec(Regime::Mt, c, 0, 1.0, 0.8));
            for t in Category::REPORTED {
                if t != c {
                    rs.push(rec(Regime::PretrainOmit(t), c, 0, 1.0, 0.82));
                }
            }
        }
        let csv = negative_transfer(&rs);
        let first: Vec<&str> = csv.lines().skip(3).take(10).collect();
        let cells: Vec<&str> = first.iter().flat_map(|l| l.split(',').skip(1)).collect();
        assert_eq!(cells.iter().filter(|c| **c == "2.0").count(), 90);
        assert_eq!(cells.iter().filter(|c| **c == "diag").count(), 10);
        assert!(csv.contains("-2.0"));
    }

    #[test]
    fn reports_are_deterministic_and_svg_is_wellformed() {
        let mut rs = Vec::new();
        for (i, f) in [0.001, 0.01, 0.1, 1.0].into_iter().enumerate() {
            for s in 0..3 {
                rs.push(rec(Regime::St(Category::Los), Category::Los, s, f, 0.5 + 0.05 * i as f64));
                rs.push(rec(Regime::Ftf(Category::Los), Category::Los, s, f, 0.6 + 0.04 * i as f64));
            }
        }
        let a = fewshot_svg(&rs, Category::Los).unwrap();
        rs.reverse();
        assert_eq!(a, fewshot_svg(&rs, Category::Los).unwrap());
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(fewshot_svg(&rs, Category::Mor).is_none());
        assert!(fewshot_csv(&rs).contains("LOS,FTF,0.1,60.0,0.0,3"));
    }
}
