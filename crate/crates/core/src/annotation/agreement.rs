//! Inter-rater agreement: Fleiss' and Cohen's kappa, sufficiency rates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Serialize, Serializer};

use super::{AnnotationRow, Sufficiency};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgreementError {
    #[error("malformed agreement matrix: {0}")]
    MalformedMatrix(String),
    #[error("rating lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no items to compare")]
    Empty,
    #[error("annotators cover different items: {0}")]
    CoverageMismatch(String),
}

/// A kappa value, or `Undefined` when chance agreement is exactly 1
/// (every rating falls in one category).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    Value(f64),
    Undefined,
}

impl Kappa {
    pub fn value(self) -> Option<f64> {
        match self {
            Kappa::Value(v) => Some(v),
            Kappa::Undefined => None,
        }
    }

    /// Exact `num / den` from integer parts; `den == 0` is undefined.
    fn ratio(num: i128, den: i128) -> Kappa {
        if den == 0 {
            Kappa::Undefined
        } else {
            Kappa::Value(num as f64 / den as f64)
        }
    }
}

impl Serialize for Kappa {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Kappa::Value(v) => s.serialize_f64(*v),
            Kappa::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl std::fmt::Display for Kappa {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kappa::Value(v) => write!(f, "{v:.4}"),
            Kappa::Undefined => f.write_str("undefined"),
        }
    }
}

/// Items x categories counts; every row sums to the number of raters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AgreementMatrix {
    counts: Vec<Vec<u64>>,
    raters: u64,
}

impl AgreementMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self, AgreementError> {
        let malformed = |m: String| AgreementError::MalformedMatrix(m);
        let first = counts.first().ok_or_else(|| malformed("no items".into()))?;
        let categories = first.len();
        if categories < 2 {
            return Err(malformed("need at least two categories".into()));
        }
        let raters: u64 = first.iter().sum();
        if raters < 2 {
            return Err(malformed("need at least two raters".into()));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != categories {
                return Err(malformed(format!("row {i} has {} categories, expected {categories}", row.len())));
            }
            let sum: u64 = row.iter().sum();
            if sum != raters {
                return Err(malformed(format!("row {i} sums to {sum}, expected {raters}")));
            }
        }
        Ok(Self { counts, raters })
    }

    /// Builds the two-category matrix from per-rater judgments
    /// (`ratings[rater][item]`).
    pub fn from_ratings(ratings: &[Vec<Sufficiency>]) -> Result<Self, AgreementError> {
        let items = ratings.first().map_or(0, Vec::len);
        if ratings.iter().any(|r| r.len() != items) {
            return Err(AgreementError::MalformedMatrix("raters judged different numbers of items".into()));
        }
        let counts = (0..items)
            .map(|i| {
                Sufficiency::ALL
                    .iter()
                    .map(|c| ratings.iter().filter(|r| r[i] == *c).count() as u64)
                    .collect()
            })
            .collect();
        Self::new(counts)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn raters(&self) -> u64 {
        self.raters
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }
}

/// Fleiss' kappa, computed over integers with one final division.
pub fn fleiss_kappa(m: &AgreementMatrix) -> Kappa {
    let n_items = m.items() as i128;
    let n = m.raters as i128;
    let squares: i128 = m.counts.iter().flatten().map(|&x| (x as i128) * (x as i128)).sum();
    let categories = m.counts[0].len();
    let col_sq: i128 = (0..categories)
        .map(|j| {
            let c: i128 = m.counts.iter().map(|row| row[j] as i128).sum();
            c * c
        })
        .sum();
    // P_bar = a / d1, P_e = c / d2
    let a = squares - n_items * n;
    let d1 = n_items * n * (n - 1);
    let d2 = (n_items * n) * (n_items * n);
    Kappa::ratio(a * d2 - col_sq * d1, d1 * (d2 - col_sq))
}

/// Cohen's kappa for two raters over the same items.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<Kappa, AgreementError> {
    if a.len() != b.len() {
        return Err(AgreementError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(AgreementError::Empty);
    }
    let n = a.len() as i128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as i128;
    let mut marg_a: BTreeMap<&T, i128> = BTreeMap::new();
    let mut marg_b: BTreeMap<&T, i128> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *marg_a.entry(x).or_default() += 1;
        *marg_b.entry(y).or_default() += 1;
    }
    let chance: i128 = marg_a
        .iter()
        .map(|(c, ca)| ca * marg_b.get(c).copied().unwrap_or(0))
        .sum();
    Ok(Kappa::ratio(n * agree - chance, n * n - chance))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatorRate {
    pub annotator: String,
    pub sufficiency_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficiencyRates {
    pub per_annotator: Vec<AnnotatorRate>,
    pub at_least_one_sufficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaPair {
    pub a: String,
    pub b: String,
    pub kappa: Kappa,
}

/// Rows are the reviewer's judgment, columns the human majority; index 0 is
/// "sufficient".
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: [&'static str; 2],
    pub counts: [[u64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub items: usize,
    pub fleiss_kappa: Kappa,
    pub cohen_kappa_pairs: Vec<KappaPair>,
    pub sufficiency: SufficiencyRates,
    pub unanimity: f64,
    pub confusion_matrix: Option<ConfusionMatrix>,
}

type Sheet = BTreeMap<usize, Sufficiency>;

fn to_sheet(name: &str, rows: &[AnnotationRow]) -> Result<Sheet, AgreementError> {
    let mut sheet = BTreeMap::new();
    for r in rows {
        let j = r.human_annotated.ok_or_else(|| {
            AgreementError::CoverageMismatch(format!("{name} left row {} unannotated", r.nr))
        })?;
        if sheet.insert(r.nr, j).is_some() {
            return Err(AgreementError::CoverageMismatch(format!("{name} annotated row {} twice", r.nr)));
        }
    }
    Ok(sheet)
}

/// Human majority per item; an even split counts as not sufficient.
fn majority(judgments: &[Sufficiency]) -> Sufficiency {
    let yes = judgments.iter().filter(|&&j| j == Sufficiency::Sufficient).count();
    if 2 * yes > judgments.len() {
        Sufficiency::Sufficient
    } else {
        Sufficiency::NotSufficient
    }
}

fn index(s: Sufficiency) -> usize {
    match s {
        Sufficiency::Sufficient => 0,
        Sufficiency::NotSufficient => 1,
    }
}

/// Agreement statistics over human annotation sheets, plus an optional
/// automated reviewer compared against the human majority.
pub fn sufficiency_stats(
    humans: &[(String, Vec<AnnotationRow>)],
    reviewer: Option<&(String, Vec<AnnotationRow>)>,
) -> Result<AgreementReport, AgreementError> {
    if humans.is_empty() {
        return Err(AgreementError::Empty);
    }
    let sheets: Vec<(&str, Sheet)> = humans
        .iter()
        .map(|(name, rows)| Ok((name.as_str(), to_sheet(name, rows)?)))
        .collect::<Result<_, AgreementError>>()?;
    let items: BTreeSet<usize> = sheets[0].1.keys().copied().collect();
    if items.is_empty() {
        return Err(AgreementError::Empty);
    }
    let check = |name: &str, sheet: &Sheet| {
        let other: BTreeSet<usize> = sheet.keys().copied().collect();
        if other != items {
            return Err(AgreementError::CoverageMismatch(format!(
                "{name} covers {} items, {} covers {}; they share {}",
                other.len(),
                sheets[0].0,
                items.len(),
                other.intersection(&items).count()
            )));
        }
        Ok(())
    };
    for (name, sheet) in &sheets[1..] {
        check(name, sheet)?;
    }
    let reviewer_sheet = match reviewer {
        Some((name, rows)) => {
            let s = to_sheet(name, rows)?;
            check(name, &s)?;
            Some((name.as_str(), s))
        }
        None => None,
    };

    let n = items.len() as f64;
    let ratings: Vec<Vec<Sufficiency>> = sheets.iter().map(|(_, s)| s.values().copied().collect()).collect();
    let per_item: Vec<Vec<Sufficiency>> = (0..items.len())
        .map(|i| ratings.iter().map(|r| r[i]).collect())
        .collect();

    let per_annotator = sheets
        .iter()
        .zip(&ratings)
        .map(|((name, _), r)| AnnotatorRate {
            annotator: name.to_string(),
            sufficiency_rate: r.iter().filter(|&&j| j == Sufficiency::Sufficient).count() as f64 / n,
        })
        .collect();
    let at_least_one = per_item.iter().filter(|js| js.contains(&Sufficiency::Sufficient)).count() as f64 / n;
    let unanimity = per_item.iter().filter(|js| js.iter().all(|&j| j == js[0])).count() as f64 / n;

    let fleiss = if ratings.len() >= 2 {
        fleiss_kappa(&AgreementMatrix::from_ratings(&ratings)?)
    } else {
        Kappa::Undefined
    };

    let mut pairs = Vec::new();
    for i in 0..sheets.len() {
        for j in i + 1..sheets.len() {
            pairs.push(KappaPair {
                a: sheets[i].0.to_string(),
                b: sheets[j].0.to_string(),
                kappa: cohen_kappa(&ratings[i], &ratings[j])?,
            });
        }
    }

    let confusion_matrix = match &reviewer_sheet {
        Some((name, sheet)) => {
            let rv: Vec<Sufficiency> = sheet.values().copied().collect();
            for (h, r) in sheets.iter().zip(&ratings) {
                pairs.push(KappaPair {
                    a: name.to_string(),
                    b: h.0.to_string(),
                    kappa: cohen_kappa(&rv, r)?,
                });
            }
            let mut counts = [[0u64; 2]; 2];
            for (r, js) in rv.iter().zip(&per_item) {
                counts[index(*r)][index(majority(js))] += 1;
            }
            Some(ConfusionMatrix {
                labels: [Sufficiency::Sufficient.as_str(), Sufficiency::NotSufficient.as_str()],
                counts,
            })
        }
        None => None,
    };

    Ok(AgreementReport {
        items: items.len(),
        fleiss_kappa: fleiss,
        cohen_kappa_pairs: pairs,
        sufficiency: SufficiencyRates {
            per_annotator,
            at_least_one_sufficient: at_least_one,
        },
        unanimity,
        confusion_matrix,
    })
}
