//! Ground-truth labeling by differential execution, pair and triplet
//! construction, splits, class weights, corpus synthesis and the on-disk
//! formats.

pub mod io;
pub mod synth;

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::{extract_mut, invoked_methods, ExtractError, ExtractedMut, UnitTest};
use crate::minilang::{
    evaluate, parse_method_with, signature_of, EvalOutcome, RuntimeErrorKind, Signatures, SourceMethod,
};
use crate::mutator::{sample_mutants, Mutant};

pub use synth::{synth_corpus, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    P,
    F,
}

impl Label {
    /// Class index used by the classifier: P = 0, F = 1.
    pub fn index(self) -> usize {
        match self {
            Label::P => 0,
            Label::F => 1,
        }
    }

    pub fn from_index(i: usize) -> Label {
        if i == 0 {
            Label::P
        } else {
            Label::F
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::P => "P",
            Label::F => "F",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Original,
    Hom,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("reference program fails test `{test}` with {kind:?}")]
    Reference { test: String, kind: RuntimeErrorKind },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error("mutant of `{parent}` in family `{family}` does not compile: {message}")]
    BadMutant { family: String, parent: String, message: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("both classes must be present")]
    DegenerateClasses,
    #[error("corpus generation failed: {0}")]
    Generation(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    Format { path: String, line: usize, message: String },
}

/// A project family: its methods (the reference program) and its tests.
#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub name: String,
    pub methods: Vec<SourceMethod>,
    pub tests: Vec<UnitTest>,
}

impl Family {
    pub fn signatures(&self) -> Signatures {
        self.methods.iter().map(|m| (m.name.clone(), signature_of(&m.ast))).collect()
    }

    pub fn method(&self, name: &str) -> Option<&SourceMethod> {
        self.methods.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub families: Vec<Family>,
}

impl Corpus {
    pub fn family(&self, name: &str) -> Option<&Family> {
        self.families.iter().find(|f| f.name == name)
    }

    pub fn method_count(&self) -> usize {
        self.families.iter().map(|f| f.methods.len()).sum()
    }

    pub fn test_count(&self) -> usize {
        self.families.iter().map(|f| f.tests.len()).sum()
    }
}

/// A mutant tagged with the family of its parent method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutantRecord {
    pub family: String,
    #[serde(flatten)]
    pub mutant: Mutant,
}

/// ⟨test, MUT, label⟩ with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub id: String,
    pub family: String,
    pub test: UnitTest,
    pub mutated: ExtractedMut,
    pub label: Label,
    pub origin: Origin,
    pub mutant_order: usize,
    /// Statement ids (in the extraction) containing a mutated site.
    pub mutated_stmts: Vec<usize>,
}

impl LabeledPair {
    pub fn record(&self) -> PairRecord {
        PairRecord {
            id: self.id.clone(),
            family: self.family.clone(),
            test_id: self.test.id.clone(),
            test_text: self.test.source_text(),
            mut_text: self.mutated.concatenated_source.clone(),
            label: self.label,
            origin: self.origin,
            order: self.mutant_order,
            mutated_stmts: self.mutated_stmts.clone(),
        }
    }
}

/// Text form of a pair, one JSON object per line in `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub family: String,
    pub test_id: String,
    pub test_text: String,
    pub mut_text: String,
    pub label: Label,
    pub origin: Origin,
    pub order: usize,
    #[serde(default)]
    pub mutated_stmts: Vec<usize>,
}

/// ⟨t, m+, m−⟩ for one test.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub family: String,
    pub test: UnitTest,
    pub mut_pass: ExtractedMut,
    pub mut_fail: ExtractedMut,
}

impl Triplet {
    pub fn record(&self) -> TripletRecord {
        TripletRecord {
            family: self.family.clone(),
            test_text: self.test.source_text(),
            mut_pass_text: self.mut_pass.concatenated_source.clone(),
            mut_fail_text: self.mut_fail.concatenated_source.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub test_text: String,
    pub mut_pass_text: String,
    pub mut_fail_text: String,
    pub family: String,
}

/// Items that belong to a family, for stratified splits.
pub trait HasFamily {
    fn family(&self) -> &str;
}

impl HasFamily for LabeledPair {
    fn family(&self) -> &str {
        &self.family
    }
}

impl HasFamily for PairRecord {
    fn family(&self) -> &str {
        &self.family
    }
}

impl HasFamily for TripletRecord {
    fn family(&self) -> &str {
        &self.family
    }
}

impl HasFamily for Triplet {
    fn family(&self) -> &str {
        &self.family
    }
}

/// F iff the candidate's observable outcome differs from the reference's.
pub fn label_pair(
    test: &UnitTest,
    candidate: &[SourceMethod],
    reference: &[SourceMethod],
    step_limit: u64,
) -> Result<Label, LabelError> {
    let expected = evaluate(reference, &test.calls, step_limit);
    if let EvalOutcome::RuntimeError(kind @ (RuntimeErrorKind::AbsentMethod | RuntimeErrorKind::ArityMismatch)) =
        expected
    {
        return Err(LabelError::Reference { test: test.id.clone(), kind });
    }
    let actual = evaluate(candidate, &test.calls, step_limit);
    Ok(if actual.same_behavior(&expected) { Label::P } else { Label::F })
}

/// Seeded mutants for every method of every family, one generator shared
/// across the corpus in family then method order.
pub fn generate_mutants(corpus: &Corpus, max_order: usize, per_method: usize, seed: u64) -> Vec<MutantRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for family in &corpus.families {
        for method in &family.methods {
            for mutant in sample_mutants(method, max_order, per_method, &mut rng) {
                out.push(MutantRecord { family: family.name.clone(), mutant });
            }
        }
    }
    out
}

/// One pair per test for the original program, then one per mutant of each
/// method the test invokes. Order: family, test, invoked method, mutant.
pub fn build_pairs(
    corpus: &Corpus,
    mutants: &[MutantRecord],
    step_limit: u64,
) -> Result<Vec<LabeledPair>, DatasetError> {
    let mut pairs = Vec::new();
    for family in &corpus.families {
        let sigs = family.signatures();
        let mut by_parent: HashMap<&str, Vec<(usize, SourceMethod, &Mutant)>> = HashMap::new();
        for (idx, rec) in mutants.iter().enumerate().filter(|(_, r)| r.family == family.name) {
            let parsed = parse_method_with(&rec.mutant.source, &sigs).map_err(|e| DatasetError::BadMutant {
                family: family.name.clone(),
                parent: rec.mutant.parent.clone(),
                message: e.to_string(),
            })?;
            by_parent.entry(rec.mutant.parent.as_str()).or_default().push((idx, parsed, &rec.mutant));
        }
        let reference = &family.methods;
        for test in &family.tests {
            let ext = extract_mut(test, reference)?;
            label_pair(test, reference, reference, step_limit)?;
            pairs.push(LabeledPair {
                id: format!("{}:{}:orig", family.name, test.id),
                family: family.name.clone(),
                test: test.clone(),
                mutated: ext,
                label: Label::P,
                origin: Origin::Original,
                mutant_order: 0,
                mutated_stmts: Vec::new(),
            });
            for name in invoked_methods(test) {
                let Some(list) = by_parent.get(name.as_str()) else { continue };
                for (idx, parsed, mutant) in list {
                    let candidate: Vec<SourceMethod> = reference
                        .iter()
                        .map(|m| if m.name == name { parsed.clone() } else { m.clone() })
                        .collect();
                    let label = label_pair(test, &candidate, reference, step_limit)?;
                    let ext = extract_mut(test, &candidate)?;
                    let offset = ext.offset_of(&name).unwrap_or(0);
                    pairs.push(LabeledPair {
                        id: format!("{}:{}:m{}", family.name, test.id, idx),
                        family: family.name.clone(),
                        test: test.clone(),
                        mutated: ext,
                        label,
                        origin: Origin::Hom,
                        mutant_order: mutant.order,
                        mutated_stmts: mutant.mutated_statements().into_iter().map(|s| s + offset).collect(),
                    });
                }
            }
        }
    }
    Ok(pairs)
}

/// For each test key, every (pass index, fail index) combination, tests in
/// order of first appearance.
fn mn_index_pairs<T>(items: &[T], key: impl Fn(&T) -> (&str, &str), label: impl Fn(&T) -> Label) -> Vec<(usize, usize)> {
    let mut order: Vec<(&str, &str)> = Vec::new();
    let mut groups: HashMap<(&str, &str), (Vec<usize>, Vec<usize>)> = HashMap::new();
    for (i, it) in items.iter().enumerate() {
        let k = key(it);
        let g = groups.entry(k).or_insert_with(|| {
            order.push(k);
            (Vec::new(), Vec::new())
        });
        match label(it) {
            Label::P => g.0.push(i),
            Label::F => g.1.push(i),
        }
    }
    let mut out = Vec::new();
    for k in order {
        let (pass, fail) = &groups[&k];
        for &p in pass {
            for &f in fail {
                out.push((p, f));
            }
        }
    }
    out
}

/// All m·n ⟨t, m+, m−⟩ combinations per test.
pub fn build_triplets(pairs: &[LabeledPair]) -> Vec<Triplet> {
    mn_index_pairs(pairs, |p| (p.family.as_str(), p.test.id.as_str()), |p| p.label)
        .into_iter()
        .map(|(p, f)| Triplet {
            family: pairs[p].family.clone(),
            test: pairs[p].test.clone(),
            mut_pass: pairs[p].mutated.clone(),
            mut_fail: pairs[f].mutated.clone(),
        })
        .collect()
}

/// [`build_triplets`] over text records.
pub fn build_triplet_records(pairs: &[PairRecord]) -> Vec<TripletRecord> {
    mn_index_pairs(pairs, |p| (p.family.as_str(), p.test_id.as_str()), |p| p.label)
        .into_iter()
        .map(|(p, f)| TripletRecord {
            test_text: pairs[p].test_text.clone(),
            mut_pass_text: pairs[p].mut_text.clone(),
            mut_fail_text: pairs[f].mut_text.clone(),
            family: pairs[p].family.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.90, validation: 0.05, test: 0.05 }
    }
}

/// Index sets into the split collection, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn select<'a, T>(items: &'a [T], idx: &[usize]) -> Vec<&'a T> {
        idx.iter().map(|&i| &items[i]).collect()
    }
}

fn partition(n: usize, ratios: &SplitRatios, what: &str) -> Result<(usize, usize, usize), DatasetError> {
    let n_val = (ratios.validation * n as f64).round() as usize;
    let n_test = (ratios.test * n as f64).round() as usize;
    let n_train = n.checked_sub(n_val + n_test).unwrap_or(0);
    for (size, r, name) in [(n_train, ratios.train, "train"), (n_val, ratios.validation, "validation"), (n_test, ratios.test, "test")] {
        if r > 0.0 && size == 0 {
            return Err(DatasetError::InsufficientData(format!("{what}: {n} items leave the {name} split empty")));
        }
    }
    if n_val + n_test > n {
        return Err(DatasetError::InsufficientData(format!("{what}: {n} items are too few")));
    }
    Ok((n_train, n_val, n_test))
}

/// Seeded shuffle then partition into train/validation/test. With
/// `stratify_by_family` the ratios apply within every family.
pub fn split<T: HasFamily>(
    items: &[T],
    ratios: SplitRatios,
    seed: u64,
    stratify_by_family: bool,
) -> Result<DatasetSplit, DatasetError> {
    let sum = ratios.train + ratios.validation + ratios.test;
    if (sum - 1.0).abs() > 1e-9 || ratios.train < 0.0 || ratios.validation < 0.0 || ratios.test < 0.0 {
        return Err(DatasetError::InsufficientData(format!("ratios must be non-negative and sum to 1, got {sum}")));
    }
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    if stratify_by_family {
        for (i, it) in items.iter().enumerate() {
            match groups.iter_mut().find(|(f, _)| f == it.family()) {
                Some((_, v)) => v.push(i),
                None => groups.push((it.family().to_string(), vec![i])),
            }
        }
    } else {
        groups.push(("all".into(), (0..items.len()).collect()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DatasetSplit { train: vec![], validation: vec![], test: vec![], ratios, seed };
    for (name, mut idx) in groups {
        idx.shuffle(&mut rng);
        let (n_train, n_val, _) = partition(idx.len(), &ratios, &name)?;
        out.train.extend_from_slice(&idx[..n_train]);
        out.validation.extend_from_slice(&idx[n_train..n_train + n_val]);
        out.test.extend_from_slice(&idx[n_train + n_val..]);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_pass: f64,
    pub w_fail: f64,
}

impl ClassWeights {
    pub fn balanced() -> Self {
        ClassWeights { w_pass: 1.0, w_fail: 1.0 }
    }

    pub fn of(&self, label: Label) -> f64 {
        match label {
            Label::P => self.w_pass,
            Label::F => self.w_fail,
        }
    }
}

/// w_c = N / (2 N_c).
pub fn class_weights(labels: impl IntoIterator<Item = Label>) -> Result<ClassWeights, DatasetError> {
    let (mut n_pass, mut n_fail) = (0usize, 0usize);
    for l in labels {
        match l {
            Label::P => n_pass += 1,
            Label::F => n_fail += 1,
        }
    }
    if n_pass == 0 || n_fail == 0 {
        return Err(DatasetError::DegenerateClasses);
    }
    let n = (n_pass + n_fail) as f64;
    Ok(ClassWeights { w_pass: n / (2.0 * n_pass as f64), w_fail: n / (2.0 * n_fail as f64) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::{parse_method, Invocation, Value};
    use crate::mutator::{apply_mutable, enumerate_mutables, MutationOperator};

    fn fig2() -> (Vec<SourceMethod>, Vec<SourceMethod>) {
        let good = parse_method("num f(num x){ return abs(x)*(x+2.0)*(x-2.0); }").unwrap();
        let bad = parse_method("num f(num x){ return abs(x*(x+2.0)*(x-2.0)); }").unwrap();
        (vec![good], vec![bad])
    }

    fn t(id: &str, x: f64) -> UnitTest {
        UnitTest::new(id, "fig2", vec![Invocation::new("f", vec![Value::Num(x)])])
    }

    #[test]
    fn fig2_labels() {
        let (good, bad) = fig2();
        assert_eq!(label_pair(&t("a", 0.5), &bad, &good, 1000).unwrap(), Label::F);
        assert_eq!(label_pair(&t("b", 3.0), &bad, &good, 1000).unwrap(), Label::P);
        assert_eq!(label_pair(&t("c", 0.5), &good, &good, 1000).unwrap(), Label::P);
    }

    #[test]
    fn reference_defects_are_errors() {
        let (good, _) = fig2();
        let absent = UnitTest::new("x", "fig2", vec![Invocation::new("g", vec![])]);
        assert!(label_pair(&absent, &good, &good, 1000).is_err());
        let arity = UnitTest::new("y", "fig2", vec![Invocation::new("f", vec![Value::Int(1)])]);
        assert!(label_pair(&arity, &good, &good, 1000).is_err());
    }

    #[test]
    fn runtime_errors_are_observable() {
        let r = vec![parse_method("int d(int a){ return 10 / a; }").unwrap()];
        let m = vec![parse_method("int d(int a){ return 10 / (a - 1); }").unwrap()];
        let test = UnitTest::new("z", "d", vec![Invocation::new("d", vec![Value::Int(1)])]);
        assert_eq!(label_pair(&test, &m, &r, 1000).unwrap(), Label::F);
        let both = UnitTest::new("z0", "d", vec![Invocation::new("d", vec![Value::Int(0)])]);
        assert_eq!(label_pair(&both, &r, &r, 1000).unwrap(), Label::P);
    }

    fn small_corpus() -> (Corpus, Vec<MutantRecord>) {
        let f = parse_method("num f(num x){ return abs(x)*(x+2.0)*(x-2.0); }").unwrap();
        let fam = Family { name: "fig2".into(), methods: vec![f.clone()], tests: vec![t("t0", 0.5)] };
        let shift = enumerate_mutables(&f).into_iter().find(|m| m.op == MutationOperator::ParenShift).unwrap();
        let aor = enumerate_mutables(&f).into_iter().find(|m| m.op == MutationOperator::Aor).unwrap();
        let mk = |m| MutantRecord {
            family: "fig2".into(),
            mutant: Mutant { parent: "f".into(), source: apply_mutable(&f, &m).unwrap(), applied: vec![m], order: 1 },
        };
        (Corpus { families: vec![fam] }, vec![mk(shift), mk(aor)])
    }

    #[test]
    fn pair_counting() {
        let (corpus, mutants) = small_corpus();
        let pairs = build_pairs(&corpus, &mutants, 1000).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[0].origin, Origin::Original);
        assert_eq!(pairs[0].label, Label::P);
        assert_eq!(pairs[0].mutant_order, 0);
        assert_eq!(pairs[1].label, Label::F);
        assert_eq!(pairs[1].mutated_stmts, vec![0]);
        let trip = build_triplets(&pairs);
        let recs: Vec<PairRecord> = pairs.iter().map(LabeledPair::record).collect();
        assert_eq!(trip.len(), build_triplet_records(&recs).len());
    }

    #[test]
    fn triplets_are_m_times_n() {
        let mk = |test: &str, label| PairRecord {
            id: String::new(),
            family: "a".into(),
            test_id: test.into(),
            test_text: test.into(),
            mut_text: String::new(),
            label,
            origin: Origin::Hom,
            order: 1,
            mutated_stmts: vec![],
        };
        let mut pairs = vec![mk("t", Label::P), mk("t", Label::P)];
        pairs.extend((0..3).map(|_| mk("t", Label::F)));
        pairs.push(mk("u", Label::P));
        assert_eq!(build_triplet_records(&pairs).len(), 6);
    }

    struct Fam(&'static str);
    impl HasFamily for Fam {
        fn family(&self) -> &str {
            self.0
        }
    }

    #[test]
    fn split_sizes() {
        let items: Vec<Fam> = (0..100).map(|_| Fam("a")).collect();
        let s = split(&items, SplitRatios::default(), 7, false).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (90, 5, 5));
        assert_eq!(s, split(&items, SplitRatios::default(), 7, false).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_split() {
        let names = ["a", "b", "c"];
        let items: Vec<Fam> = (0..120).map(|i| Fam(names[i % 3])).collect();
        let s = split(&items, SplitRatios::default(), 3, true).unwrap();
        for f in names {
            let count = |idx: &[usize]| idx.iter().filter(|&&i| items[i].0 == f).count();
            assert_eq!((count(&s.train), count(&s.validation), count(&s.test)), (36, 2, 2));
        }
    }

    #[test]
    fn split_needs_data() {
        let items: Vec<Fam> = (0..5).map(|_| Fam("a")).collect();
        assert!(matches!(split(&items, SplitRatios::default(), 1, false), Err(DatasetError::InsufficientData(_))));
    }

    #[test]
    fn weights() {
        let w = class_weights([Label::P, Label::F].repeat(50)).unwrap();
        assert_eq!((w.w_pass, w.w_fail), (1.0, 1.0));
        let mut l = vec![Label::P; 25];
        l.extend(vec![Label::F; 75]);
        let w = class_weights(l).unwrap();
        assert_eq!(w.w_pass, 2.0);
        assert!((w.w_fail - 2.0 / 3.0).abs() < 1e-9);
        assert!((w.w_pass * 25.0 - w.w_fail * 75.0).abs() < 1e-9);
        assert!(matches!(class_weights(vec![Label::F; 4]), Err(DatasetError::DegenerateClasses)));
    }
}
