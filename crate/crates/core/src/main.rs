use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use oracleforge::dataset::io::{read_corpus, read_json, read_jsonl, write_corpus, write_json, write_jsonl};
use oracleforge::dataset::{
    build_pairs, build_triplet_records, generate_mutants, split, synth_corpus, DatasetSplit, Label, MutantRecord, PairRecord,
    SplitRatios, SynthConfig,
};
use oracleforge::harness::experiment::read_verdicts_csv;
use oracleforge::harness::{
    evaluate_pairs, metrics_by_family, compute_metrics, run_experiment, write_metrics_csv, write_verdicts_csv, ExperimentConfig,
    Metrics, Mode, PositiveClass,
};
use oracleforge::interpret::{
    attention_analysis, emit_heatmap, lda_project, lda_svg, localization_curve, mut_attention, parse_k_grid, PairAttention,
};
use oracleforge::minilang::{evaluate, parse_program, EvalOutcome, Invocation, MjType, Value, DEFAULT_STEP_LIMIT};
use oracleforge::neural::{encode, ModelCheckpoint, Role};
use oracleforge::trainer::{predict, predict_texts, train_two_phase, TrainConfig};

#[derive(Parser)]
#[command(name = "oracleforge", version, about = "Learned test oracle: corpus, mutants, labels, training, evaluation and interpretation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Copy)]
struct SeedArg {
    /// Seed for every random choice; falls back to ORACLEFORGE_SEED.
    #[arg(long, env = "ORACLEFORGE_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a corpus of method families with tests.
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        families: usize,
        #[arg(long, default_value_t = 12)]
        methods: usize,
        #[arg(long, default_value_t = 8)]
        tests: usize,
        /// Trailing families drawn from the disjoint template set.
        #[arg(long, default_value_t = 0)]
        disjoint: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Generate higher-order mutants for every corpus method.
    Mutate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        max_order: usize,
        #[arg(long, default_value_t = 6)]
        per_method: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Label every (test, MUT) pair by differential execution.
    Label {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        mutants: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u64,
    },
    /// Dataset assembly.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// Two-phase training on a built dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        freeze_encoders: bool,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Classify one corpus test against the reference program.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        family: String,
        #[arg(long)]
        test_id: String,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitName::Test)]
        split: SplitName,
        #[arg(long, value_enum, default_value_t = Positive::Pass)]
        positive_class: Positive,
    },
    /// Attended tokens and statements of one pair, with a heatmap.
    Explain {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        pair_id: String,
        #[arg(long, default_value_t = 20.0)]
        k: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// LDA projection of MUT embeddings, buggy against correct.
    EmbedViz {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localization curve over failing pairs.
    Localize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "5:50:5")]
        k_grid: String,
        /// CSV file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check or run MJ source files.
    Mj {
        #[command(subcommand)]
        cmd: MjCmd,
    },
    /// Run a configured experiment end to end.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Family withheld from training (repeatable).
        #[arg(long)]
        held_out: Vec<String>,
        #[arg(long, value_enum)]
        positive_class: Option<Positive>,
        #[command(flatten)]
        seed: SeedArg,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Label pairs, build triplets and a stratified split.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        mutants: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u64,
        #[command(flatten)]
        seed: SeedArg,
    },
}

#[derive(Subcommand)]
enum MjCmd {
    /// Parse and typecheck a file of methods.
    Check { file: PathBuf },
    /// Evaluate calls such as `f(1.5, 2)` against a file of methods.
    Run {
        file: PathBuf,
        #[arg(long = "call", required = true)]
        calls: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_STEP_LIMIT)]
        step_limit: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Positive {
    Pass,
    Fail,
}

impl From<Positive> for PositiveClass {
    fn from(p: Positive) -> Self {
        match p {
            Positive::Pass => PositiveClass::Pass,
            Positive::Fail => PositiveClass::Fail,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Within,
    Cross,
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

const DEFAULT_SEED: u64 = 7;

fn seed_of(s: SeedArg) -> u64 {
    s.seed.unwrap_or(DEFAULT_SEED)
}

fn mkdir(dir: &Path) -> Res<()> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()).into())
}

fn print_json<T: Serialize>(v: &T) -> Res<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load_model(path: &Path) -> Res<ModelCheckpoint> {
    Ok(ModelCheckpoint::load(path)?)
}

fn find_pair<'a>(pairs: &'a [PairRecord], id: &str) -> Res<&'a PairRecord> {
    pairs.iter().find(|p| p.id == id).ok_or_else(|| format!("no pair with id `{id}`").into())
}

fn parse_call(text: &str, program: &[oracleforge::minilang::SourceMethod]) -> Res<Invocation> {
    let text = text.trim();
    let open = text.find('(').ok_or("call must look like name(args)")?;
    let inner = text[open + 1..].strip_suffix(')').ok_or("call must end with `)`")?;
    let name = text[..open].trim();
    let method = program.iter().find(|m| m.name == name).ok_or_else(|| format!("no method `{name}`"))?;
    let raw: Vec<&str> = if inner.trim().is_empty() { vec![] } else { inner.split(',').map(str::trim).collect() };
    if raw.len() != method.params.len() {
        return Err(format!("`{name}` takes {} arguments", method.params.len()).into());
    }
    let args = raw
        .iter()
        .zip(&method.params)
        .map(|(r, (_, ty))| {
            Ok(match ty {
                MjType::Int => Value::Int(r.parse().map_err(|_| format!("`{r}` is not an int"))?),
                MjType::Num => Value::Num(r.parse().map_err(|_| format!("`{r}` is not a num"))?),
                MjType::Bool => Value::Bool(r.parse().map_err(|_| format!("`{r}` is not a bool"))?),
            })
        })
        .collect::<Res<Vec<Value>>>()?;
    Ok(Invocation::new(name, args))
}

fn metric_rows(scope: &str, all: &Metrics, per: &BTreeMap<String, Metrics>) -> Vec<(String, String, Metrics)> {
    let mut rows = vec![(scope.to_string(), "all".to_string(), all.clone())];
    rows.extend(per.iter().map(|(f, m)| (scope.to_string(), f.clone(), m.clone())));
    rows
}

fn run(cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::Corpus { out, families, methods, tests, disjoint, seed } => {
            let cfg = SynthConfig {
                n_families: families,
                methods_per_family: methods,
                tests_per_method: tests,
                disjoint_families: disjoint,
                seed: seed_of(seed),
                ..SynthConfig::default()
            };
            let corpus = synth_corpus(&cfg)?;
            write_corpus(&corpus, &out)?;
            eprintln!("{} families, {} methods, {} tests", corpus.families.len(), corpus.method_count(), corpus.test_count());
        }
        Cmd::Mutate { corpus, out, max_order, per_method, seed } => {
            let corpus = read_corpus(&corpus)?;
            let mutants = generate_mutants(&corpus, max_order, per_method, seed_of(seed));
            write_jsonl(&out.join("mutants.jsonl"), &mutants)?;
            eprintln!("{} mutants", mutants.len());
        }
        Cmd::Label { corpus, mutants, out, step_limit } => {
            let corpus = read_corpus(&corpus)?;
            let mutants: Vec<MutantRecord> = read_jsonl(&mutants)?;
            let pairs: Vec<PairRecord> = build_pairs(&corpus, &mutants, step_limit)?.iter().map(|p| p.record()).collect();
            write_jsonl(&out.join("pairs.jsonl"), &pairs)?;
            eprintln!("{} pairs", pairs.len());
        }
        Cmd::Dataset { cmd: DatasetCmd::Build { corpus, mutants, out, step_limit, seed } } => {
            let corpus = read_corpus(&corpus)?;
            let mutants: Vec<MutantRecord> = read_jsonl(&mutants)?;
            let pairs: Vec<PairRecord> = build_pairs(&corpus, &mutants, step_limit)?.iter().map(|p| p.record()).collect();
            let triplets = build_triplet_records(&pairs);
            let sp = split(&pairs, SplitRatios::default(), seed_of(seed), true)?;
            write_jsonl(&out.join("pairs.jsonl"), &pairs)?;
            write_jsonl(&out.join("triplets.jsonl"), &triplets)?;
            write_json(&out.join("split.json"), &sp)?;
            eprintln!("{} pairs, {} triplets", pairs.len(), triplets.len());
        }
        Cmd::Train { dataset, config, out, freeze_encoders, seed } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed.seed {
                cfg.seed = s;
            }
            cfg.freeze_encoders |= freeze_encoders;
            let pairs: Vec<PairRecord> = read_jsonl(&dataset.join("pairs.jsonl"))?;
            let sp: DatasetSplit = read_json(&dataset.join("split.json"))?;
            let train: Vec<&PairRecord> = sp.train.iter().map(|&i| &pairs[i]).collect();
            let val: Vec<&PairRecord> = sp.validation.iter().map(|&i| &pairs[i]).collect();
            let trained = train_two_phase(&train, &val, &cfg)?;
            mkdir(&out)?;
            trained.checkpoint.save(&out.join("model.ckpt"))?;
            #[derive(Serialize)]
            struct Summary<'a> {
                config: &'a TrainConfig,
                phase1: &'a oracleforge::trainer::TrainReport,
                phase2: &'a oracleforge::trainer::TrainReport,
                class_weights: oracleforge::dataset::ClassWeights,
                checkpoint_hash: String,
            }
            let summary = Summary {
                config: &cfg,
                phase1: &trained.phase1,
                phase2: &trained.phase2,
                class_weights: trained.class_weights,
                checkpoint_hash: trained.checkpoint.hash()?,
            };
            write_json(&out.join("train_report.json"), &summary)?;
            eprintln!("phase 1 stopped at epoch {}, phase 2 at epoch {}", trained.phase1.stop_epoch, trained.phase2.stop_epoch);
        }
        Cmd::Predict { ckpt, corpus, family, test_id } => {
            let ck = load_model(&ckpt)?;
            let corpus = read_corpus(&corpus)?;
            let fam = corpus.family(&family).ok_or_else(|| format!("no family `{family}`"))?;
            let test = fam.tests.iter().find(|t| t.id == test_id).ok_or_else(|| format!("no test `{test_id}` in `{family}`"))?;
            print_json(&predict(&ck.model, test, &fam.methods)?)?;
        }
        Cmd::Eval { ckpt, dataset, out, split: which, positive_class } => {
            let ck = load_model(&ckpt)?;
            let pairs: Vec<PairRecord> = read_jsonl(&dataset.join("pairs.jsonl"))?;
            let idx: Vec<usize> = match which {
                SplitName::All => (0..pairs.len()).collect(),
                other => {
                    let sp: DatasetSplit = read_json(&dataset.join("split.json"))?;
                    match other {
                        SplitName::Train => sp.train,
                        SplitName::Validation => sp.validation,
                        _ => sp.test,
                    }
                }
            };
            let chosen: Vec<&PairRecord> = idx.iter().map(|&i| &pairs[i]).collect();
            let rows = evaluate_pairs(&ck.model, &chosen, "eval")?;
            let positive = PositiveClass::from(positive_class).label();
            let pred: Vec<Label> = rows.iter().map(|r| r.predicted).collect();
            let gold: Vec<Label> = rows.iter().map(|r| r.gold).collect();
            let fams: Vec<&str> = rows.iter().map(|r| r.family.as_str()).collect();
            let all = compute_metrics(&pred, &gold, positive)?;
            let per = metrics_by_family(&pred, &gold, &fams, positive)?;
            mkdir(&out)?;
            write_verdicts_csv(&rows, &out.join("verdicts.csv"))?;
            write_metrics_csv(&metric_rows("eval", &all, &per), &out.join("metrics_per_family.csv"))?;
            let mean_ms = rows.iter().map(|r| r.latency_ms).sum::<f64>() / rows.len() as f64;
            write_json(&out.join("report.json"), &serde_json::json!({ "metrics": all, "per_family": per, "mean_inference_ms": mean_ms }))?;
            print_json(&all)?;
        }
        Cmd::Explain { ckpt, pairs, pair_id, k, out } => {
            let ck = load_model(&ckpt)?;
            let pairs: Vec<PairRecord> = read_jsonl(&pairs)?;
            let pair = find_pair(&pairs, &pair_id)?;
            let sa = mut_attention(&ck.model, &pair.mut_text)?;
            let report = attention_analysis(&sa, k)?;
            let verdict = predict_texts(&ck.model, &pair.test_text, &pair.mut_text)?;
            mkdir(&out)?;
            emit_heatmap(&sa, &out.join("heatmap.svg"))?;
            write_json(
                &out.join("report.json"),
                &serde_json::json!({
                    "pair_id": pair.id, "gold": pair.label, "predicted": verdict.label,
                    "pass_probability": verdict.pass_probability, "mutated_statements": pair.mutated_stmts,
                    "attention": report,
                }),
            )?;
            print_json(&report)?;
        }
        Cmd::EmbedViz { ckpt, pairs, out } => {
            let ck = load_model(&ckpt)?;
            let pairs: Vec<PairRecord> = read_jsonl(&pairs)?;
            let mut emb = Vec::with_capacity(pairs.len());
            for p in &pairs {
                emb.push(encode(&ck.model, Role::Phi, &ck.model.token_ids(&p.mut_text).0)?.0);
            }
            let labels: Vec<bool> = pairs.iter().map(|p| p.label == Label::F).collect();
            let proj = lda_project(&emb, &labels)?;
            mkdir(&out)?;
            fs::write(out.join("lda.svg"), lda_svg(&proj))?;
            let mut w = csv::Writer::from_path(out.join("lda.csv"))?;
            w.write_record(["bin_start", "bin_end", "correct_density", "buggy_density"])?;
            for i in 0..proj.hist_correct.len() {
                w.write_record([
                    proj.bin_edges[i].to_string(),
                    proj.bin_edges[i + 1].to_string(),
                    proj.hist_correct[i].to_string(),
                    proj.hist_buggy[i].to_string(),
                ])?;
            }
            w.flush()?;
            write_json(&out.join("lda.json"), &proj)?;
            println!("overlap {}", proj.overlap);
        }
        Cmd::Localize { ckpt, pairs, k_grid, out } => {
            let ck = load_model(&ckpt)?;
            let grid = parse_k_grid(&k_grid)?;
            let pairs: Vec<PairRecord> = read_jsonl(&pairs)?;
            let mut per_pair = Vec::new();
            for p in pairs.iter().filter(|p| p.label == Label::F && !p.mutated_stmts.is_empty()) {
                let sa = mut_attention(&ck.model, &p.mut_text)?;
                let reports = grid.iter().map(|&k| attention_analysis(&sa, k)).collect::<Result<Vec<_>, _>>()?;
                per_pair.push(PairAttention { pair_id: p.id.clone(), buggy_statements: p.mutated_stmts.clone(), reports });
            }
            let curve = localization_curve(&per_pair, &grid)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                mkdir(dir)?;
            }
            let mut w = csv::Writer::from_path(&out)?;
            for point in &curve {
                w.serialize(point)?;
            }
            w.flush()?;
            print_json(&curve)?;
        }
        Cmd::Mj { cmd: MjCmd::Check { file } } => {
            let src = fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let prog = parse_program(&src)?;
            for m in &prog {
                println!("{}: {} statements", m.name, m.stmt_count());
            }
        }
        Cmd::Mj { cmd: MjCmd::Run { file, calls, step_limit } } => {
            let src = fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let prog = parse_program(&src)?;
            let invs = calls.iter().map(|c| parse_call(c, &prog)).collect::<Res<Vec<_>>>()?;
            match evaluate(&prog, &invs, step_limit) {
                EvalOutcome::Values(vs) => vs.iter().for_each(|v| println!("{}", v.literal())),
                EvalOutcome::RuntimeError(k) => println!("runtime error: {k:?}"),
            }
        }
        Cmd::Experiment { config, out, mode, held_out, positive_class, seed } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed.seed {
                cfg = cfg.with_seed(s);
            }
            match mode {
                Some(ModeArg::Within) => cfg.mode = Mode::Within,
                Some(ModeArg::Cross) => cfg.mode = Mode::CrossFamily,
                None => {}
            }
            if !held_out.is_empty() {
                cfg.held_out = held_out;
            }
            if let Some(p) = positive_class {
                cfg.positive_class = p.into();
            }
            cfg.out = Some(out);
            let report = run_experiment(&cfg)?;
            let rows = read_verdicts_csv(&cfg.out.as_ref().expect("set above").join("verdicts.csv"))?;
            eprintln!("{} verdicts written", rows.len());
            print_json(&serde_json::json!({
                "metrics": report.metrics,
                "majority_baseline": report.majority_baseline,
                "cross_family": report.cross_family,
                "mean_inference_ms": report.timings.mean_inference_ms,
                "report_hash": report.report_hash,
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
