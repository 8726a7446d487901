//! Synthetic corpus generator.
//!
//! Families instantiate a fixed list of method templates with their own
//! identifiers and constants, so families share structure but not names.
//! A family can instead draw from a disjoint template set. Family 0 starts
//! with the `example_correct` fixture.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetError, Family};
use crate::extractor::UnitTest;
use crate::minilang::{evaluate, parse_method_with, print_method, EvalOutcome, Invocation, Signatures, Value};

pub const EXAMPLE_CORRECT: &str = "num example_correct(num x) { num y = abs(x) * (x + 2.0) * (x - 2.0); return y; }";

const FAMILY_NAMES: [&str; 8] = ["atlas", "birch", "cobalt", "dune", "ember", "fjord", "garnet", "harbor"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputGrid {
    pub num_min: f64,
    pub num_max: f64,
    pub num_step: f64,
    pub int_min: i64,
    pub int_max: i64,
}

impl Default for InputGrid {
    fn default() -> Self {
        InputGrid { num_min: -4.0, num_max: 4.0, num_step: 0.5, int_min: -6, int_max: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_families: usize,
    pub methods_per_family: usize,
    pub tests_per_method: usize,
    pub input_grid: InputGrid,
    pub seed: u64,
    /// The last `disjoint_families` families use the disjoint template set.
    pub disjoint_families: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_families: 4,
            methods_per_family: 12,
            tests_per_method: 8,
            input_grid: InputGrid::default(),
            seed: 7,
            disjoint_families: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Domain {
    Num,
    Int,
    /// Loop bounds.
    Small,
    Bool,
}

struct Template {
    stems: &'static [&'static str],
    params: &'static [Domain],
    text: &'static str,
}

// Placeholders: {N} method name, {A}/{B} locals, {R}/{S} num constants,
// {K}/{L} int constants.
const SHARED: &[Template] = &[
    Template {
        stems: &["cubic_abs", "shaped", "bump", "wave"],
        params: &[Domain::Num],
        text: "num {N}(num x) { num {A} = abs(x) * (x + {R}) * (x - {R}); return {A}; }",
    },
    Template {
        stems: &["clamp", "bound", "limit", "cap"],
        params: &[Domain::Num],
        text: "num {N}(num x) { if (x > {R}) { return {R}; } if (x < -{R}) { return -{R}; } return x; }",
    },
    Template {
        stems: &["step", "next_term", "advance", "hop"],
        params: &[Domain::Int],
        text: "int {N}(int k) { int {A} = 0; if (k % 2 == 0) { {A} = k / 2; } else { {A} = {K} * k + 1; } return {A}; }",
    },
    Template {
        stems: &["sum_scaled", "accumulate", "series", "total"],
        params: &[Domain::Small],
        text: "int {N}(int n) { int {A} = 0; int {B} = 0; while ({B} < n) { {A} = {A} + {B} * {K}; {B} = {B} + 1; } return {A}; }",
    },
    Template {
        stems: &["inside", "within_radius", "in_disc", "covered"],
        params: &[Domain::Num, Domain::Num],
        text: "bool {N}(num x, num y) { return x * x + y * y <= {R} * {R}; }",
    },
    Template {
        stems: &["sign", "direction", "polarity", "orient"],
        params: &[Domain::Num],
        text: "int {N}(num x) { if (x > {S}) { return 1; } else { if (x < -{S}) { return -1; } } return 0; }",
    },
    Template {
        stems: &["max_shift", "larger", "upper", "peak"],
        params: &[Domain::Num, Domain::Num],
        text: "num {N}(num a, num b) { num {A} = a; if (b > a) { {A} = b; } return {A} + {R}; }",
    },
    Template {
        stems: &["distance", "gap", "spread", "delta"],
        params: &[Domain::Int, Domain::Int],
        text: "int {N}(int a, int b) { int {A} = a - b; if ({A} < 0) { {A} = -{A}; } return {A} * {K}; }",
    },
    Template {
        stems: &["ratio", "quad", "parabola", "curve"],
        params: &[Domain::Num],
        text: "num {N}(num x) { return (x - {R}) * (x + {S}) / {R}; }",
    },
    Template {
        stems: &["in_range", "admissible", "valid", "accepted"],
        params: &[Domain::Int],
        text: "bool {N}(int k) { return k >= {K} && k <= {L} || k == 0; }",
    },
    Template {
        stems: &["halvings", "log_steps", "depth", "levels"],
        params: &[Domain::Int],
        text: "int {N}(int n) { int {A} = 0; while (n > 1) { n = n / 2; {A} = {A} + 1; } return {A}; }",
    },
    Template {
        stems: &["mean_abs", "midpoint", "centre", "average"],
        params: &[Domain::Int, Domain::Int],
        text: "num {N}(int a, int b) { num {A} = num(a + b); return abs({A}) / 2.0 + {R}; }",
    },
];

const DISJOINT: &[Template] = &[
    Template {
        stems: &["roundup", "align"],
        params: &[Domain::Int, Domain::Small],
        text: "int {N}(int a, int b) { int {A} = a % {K}; while ({A} < b) { {A} = {A} + {K}; } return {A}; }",
    },
    Template {
        stems: &["flagged", "toggled"],
        params: &[Domain::Bool, Domain::Int],
        text: "bool {N}(bool p, int k) { if (p) { return k != {K}; } return !(k == {L}); }",
    },
    Template {
        stems: &["shrink", "decay"],
        params: &[Domain::Num],
        text: "num {N}(num x) { num {A} = x; while ({A} > {R}) { {A} = {A} / 2.0; } return {A}; }",
    },
    Template {
        stems: &["square_adj", "tweak"],
        params: &[Domain::Int, Domain::Bool],
        text: "int {N}(int k, bool f) { int {A} = k * k; if (f || k < 0) { {A} = {A} - k; } return {A}; }",
    },
    Template {
        stems: &["weighted", "scaled_mod"],
        params: &[Domain::Num, Domain::Int],
        text: "num {N}(num x, int k) { return x * num(k) - num(k % {K}); }",
    },
    Template {
        stems: &["beyond", "outside"],
        params: &[Domain::Num],
        text: "bool {N}(num x) { return !(x < {R}) && x != 0.0; }",
    },
];

const LOCALS: &[(&str, &str)] = &[("y", "i"), ("acc", "idx"), ("res", "j"), ("out", "cnt")];
const DISJOINT_LOCALS: &[(&str, &str)] = &[("w", "q"), ("tmp", "z")];
const NUM_CONSTS: &[f64] = &[1.0, 1.5, 2.0, 2.5, 3.0];

fn num_literal(x: f64) -> String {
    Value::Num(x).literal()
}

fn instantiate(template: &Template, name: &str, locals: (&str, &str), rng: &mut ChaCha8Rng) -> String {
    let r = *NUM_CONSTS.choose(rng).expect("constants");
    let s = *NUM_CONSTS.choose(rng).expect("constants");
    let k: i64 = rng.random_range(2..=5);
    let l = k + rng.random_range(3..=6);
    template
        .text
        .replace("{N}", name)
        .replace("{A}", locals.0)
        .replace("{B}", locals.1)
        .replace("{R}", &num_literal(r))
        .replace("{S}", &num_literal(s))
        .replace("{K}", &k.to_string())
        .replace("{L}", &l.to_string())
}

fn sample_arg(d: Domain, grid: &InputGrid, rng: &mut ChaCha8Rng) -> Value {
    match d {
        Domain::Num => {
            let steps = ((grid.num_max - grid.num_min) / grid.num_step).round() as i64;
            let i = rng.random_range(0..=steps.max(0));
            Value::Num(grid.num_min + i as f64 * grid.num_step)
        }
        Domain::Int => Value::Int(rng.random_range(grid.int_min..=grid.int_max.max(grid.int_min))),
        Domain::Small => Value::Int(rng.random_range(0..=10)),
        Domain::Bool => Value::Bool(rng.random_bool(0.5)),
    }
}

/// Generates the corpus in memory. Deterministic per `config.seed`.
pub fn synth_corpus(config: &SynthConfig) -> Result<Corpus, DatasetError> {
    if config.n_families == 0 || config.methods_per_family == 0 || config.tests_per_method == 0 {
        return Err(DatasetError::Generation("counts must be positive".into()));
    }
    if config.n_families > FAMILY_NAMES.len() {
        return Err(DatasetError::Generation(format!("at most {} families", FAMILY_NAMES.len())));
    }
    let mut families = Vec::with_capacity(config.n_families);
    for f in 0..config.n_families {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(1_000_003).wrapping_add(f as u64));
        let disjoint = f + config.disjoint_families >= config.n_families;
        let (templates, locals) = if disjoint { (DISJOINT, DISJOINT_LOCALS) } else { (SHARED, LOCALS) };
        let style = f % locals.len();
        let fam_name = FAMILY_NAMES[f];
        let mut sources: Vec<String> = Vec::with_capacity(config.methods_per_family);
        for i in 0..config.methods_per_family {
            if f == 0 && i == 0 && !disjoint {
                sources.push(EXAMPLE_CORRECT.to_string());
                continue;
            }
            let t = &templates[i % templates.len()];
            let stem = t.stems[(style + i / templates.len()) % t.stems.len()];
            let name = if i < templates.len() { stem.to_string() } else { format!("{stem}{}", i / templates.len()) };
            sources.push(instantiate(t, &name, locals[style], &mut rng));
        }
        let mut sigs = Signatures::new();
        let mut parsed = Vec::with_capacity(sources.len());
        for src in &sources {
            let m = parse_method_with(src, &sigs)
                .map_err(|e| DatasetError::Generation(format!("{fam_name}: `{src}`: {e}")))?;
            sigs.insert(m.name.clone(), m.signature());
            parsed.push(m);
        }
        let methods = parsed
            .iter()
            .map(|m| parse_method_with(&print_method(&m.ast), &sigs))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DatasetError::Generation(e.to_string()))?;

        let mut tests = Vec::new();
        for (i, m) in methods.iter().enumerate() {
            let template_params: Vec<Domain> = if f == 0 && i == 0 && !disjoint {
                vec![Domain::Num]
            } else {
                templates[i % templates.len()].params.to_vec()
            };
            let mut seen: Vec<Vec<Value>> = Vec::new();
            let mut attempts = 0;
            while seen.len() < config.tests_per_method {
                attempts += 1;
                if attempts > 200 * config.tests_per_method {
                    return Err(DatasetError::Generation(format!(
                        "{fam_name}/{}: could not find {} valid inputs",
                        m.name, config.tests_per_method
                    )));
                }
                let args: Vec<Value> = template_params.iter().map(|d| sample_arg(*d, &config.input_grid, &mut rng)).collect();
                // Allow repeats only once the distinct inputs run out.
                if seen.contains(&args) && attempts < 50 * config.tests_per_method {
                    continue;
                }
                let call = Invocation::new(m.name.clone(), args.clone());
                if matches!(evaluate(&methods, std::slice::from_ref(&call), crate::minilang::DEFAULT_STEP_LIMIT), EvalOutcome::RuntimeError(_)) {
                    continue;
                }
                let id = format!("t{:02}_{}", i, seen.len());
                tests.push(UnitTest::new(id, fam_name, vec![call]));
                seen.push(args);
            }
        }
        families.push(Family { name: fam_name.to_string(), methods, tests });
    }
    Ok(Corpus { families })
}
