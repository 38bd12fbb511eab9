//! Command-line front end: vocabulary building, CNN training, calibration,
//! descriptor-model fitting, evaluation and single-image prediction.
//!
//! [`run`] is the whole program; `main` only forwards the process arguments and
//! exit code, which keeps the commands testable in-process.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use emofuse::bayes::{build_vocabulary, fit_mle, BayesModel, DescriptorVocabulary, EvidenceMode};
use emofuse::data_io::{
    format_config, load_dataset, load_model, read_config, read_descriptors, read_faces, save_model, sidecar_path,
    DatasetManifest, ModelBundle, RecordAnnotations, SampleRecord, FACES_EXT, LABELS_EXT,
};
use emofuse::eval::{descriptor_histogram, evaluate, histogram_csv, render_report, report_csv, Mode};
use emofuse::nn::NetworkSpec;
use emofuse::pipeline::{calibrate, face_dataset, predict, FusionModel, FusionRule};
use emofuse::train::{loss_trace_csv, train_cnn, OptimizerConfig};
use emofuse::{Emotion, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "emofuse", version, about = "Group emotion classification from faces and scene descriptors")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// key=value file; each entry overrides the flag of the same name.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Directory receiving reports, traces and the resolved configuration.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset root holding one directory per split.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collect the descriptor vocabulary of a split into <out>/vocab.txt.
    #[command(args_override_self = true)]
    BuildVocab {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "train")]
        split: String,
        /// Minimum number of images a descriptor must appear in.
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train the face CNN and store it in the model file.
    #[command(args_override_self = true)]
    TrainCnn {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1500)]
        iterations: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0.9)]
        decay: f64,
        #[arg(long, default_value_t = 1e-10)]
        epsilon: f64,
        /// Faces per class in each batch (batch size is three times this).
        #[arg(long, default_value_t = 21)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Score the CNN on a held-out split and store its evidence table.
    #[command(args_override_self = true)]
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        model: PathBuf,
        /// Pseudo-count added to every confusion cell.
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the descriptor model and store it in the model file.
    #[command(args_override_self = true)]
    FitBn {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        model: PathBuf,
        /// Pseudo-count for descriptor and prior estimates.
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        /// Vocabulary file from build-vocab; built from the split when absent.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// full: absent descriptors are evidence too; presence: only present ones.
        #[arg(long, default_value = "full")]
        evidence: EvidenceMode,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate every available mode on a split and write the report.
    #[command(args_override_self = true)]
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        model: PathBuf,
        /// Headline mode: bn, cnn or ensemble.
        #[arg(long, default_value = "ensemble")]
        mode: Mode,
        /// Ensemble rule: evidence (CNN as evidence node) or average.
        #[arg(long, default_value = "evidence")]
        fusion: FusionRule,
        #[command(flatten)]
        common: Common,
    },
    /// Classify one image using its .faces/.labels sidecars.
    #[command(args_override_self = true)]
    Predict {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Face boxes file; defaults to the image's .faces sidecar.
        #[arg(long)]
        faces: Option<PathBuf>,
        /// Descriptor file; defaults to the image's .labels sidecar.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value = "evidence")]
        fusion: FusionRule,
        #[command(flatten)]
        common: Common,
    },
    /// Per-class descriptor frequencies of a split as CSV.
    #[command(args_override_self = true)]
    ReportDescriptors {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "train")]
        split: String,
        /// Take the vocabulary from this model's descriptor model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Take the vocabulary from a build-vocab file.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::BuildVocab { common, .. }
            | Command::TrainCnn { common, .. }
            | Command::Calibrate { common, .. }
            | Command::FitBn { common, .. }
            | Command::Eval { common, .. }
            | Command::Predict { common, .. }
            | Command::ReportDescriptors { common, .. } => common,
        }
    }
}

/// Runs the program on `argv` (including the program name) and returns the exit code:
/// 0 on success, 2 for usage or configuration errors, 1 for everything else.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let (cli, matches) = match parse(&argv) {
        Ok(parsed) => parsed,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return e.exit_code();
        }
        Err(ParseFailure::Config(e)) => {
            report_error(&e);
            return 2;
        }
    };
    init_logging(cli.verbose);
    match execute(&cli.command, &matches) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e);
            match e.root() {
                Error::Usage(_) | Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

enum ParseFailure {
    Clap(clap::Error),
    Config(Error),
}

/// Parses the flags, then re-parses with the config file's entries appended so
/// that they take precedence.
fn parse(argv: &[OsString]) -> std::result::Result<(Cli, ArgMatches), ParseFailure> {
    let parse_once = |args: &[OsString]| -> std::result::Result<(Cli, ArgMatches), clap::Error> {
        let matches = Cli::command().try_get_matches_from(args)?;
        let cli = Cli::from_arg_matches(&matches)?;
        Ok((cli, matches))
    };
    let (cli, matches) = parse_once(argv).map_err(ParseFailure::Clap)?;
    let Some(path) = cli.command.common().config.clone() else {
        return Ok((cli, matches));
    };
    let entries = read_config(&path).map_err(ParseFailure::Config)?;
    if entries.contains_key("config") {
        return Err(ParseFailure::Config(Error::Config(format!(
            "{}: a config file cannot name another config file",
            path.display()
        ))));
    }
    let mut extended = argv.to_vec();
    extended.extend(entries.iter().map(|(k, v)| OsString::from(format!("--{k}={v}"))));
    parse_once(&extended).map_err(ParseFailure::Clap)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    log::set_max_level(level);
}

fn report_error(e: &Error) {
    let mut msg = format!("error: {e}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        if !msg.contains(&s.to_string()) {
            msg.push_str(&format!("\n  caused by: {s}"));
        }
        source = s.source();
    }
    eprintln!("{msg}");
}

/// Every argument of the chosen subcommand with its resolved value, as `key=value`
/// text that can be fed back through `--config`.
fn resolved_config(matches: &ArgMatches) -> (String, String) {
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let command = Cli::command();
    let args = command.find_subcommand(name).expect("parsed subcommand exists").get_arguments();
    let mut entries = BTreeMap::new();
    for arg in args {
        let id = arg.get_id().as_str();
        if matches!(id, "config" | "verbose") {
            continue;
        }
        if let Ok(Some(values)) = sub.try_get_raw(id) {
            let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
            entries.insert(id.replace('_', "-"), joined.join(","));
        }
    }
    (name.to_string(), format_config(&entries))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn prepare_out(out: &Path, matches: &ArgMatches) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let (name, text) = resolved_config(matches);
    write_file(&out.join(format!("{name}.config")), &text)
}

fn load_bundle_or_default(path: &Path) -> Result<ModelBundle> {
    if path.exists() {
        load_model(path)
    } else {
        Ok(ModelBundle::default())
    }
}

fn load_split(data: &DataArgs, split: &str) -> Result<DatasetManifest> {
    let m = load_dataset(&data.data, split)?;
    log::info!("split '{split}': {} images, class counts {:?}", m.len(), m.class_counts());
    Ok(m)
}

fn read_vocab(path: &Path) -> Result<DescriptorVocabulary> {
    let set = read_descriptors(path)?
        .ok_or_else(|| Error::Usage(format!("vocabulary file {} does not exist", path.display())))?;
    Ok(DescriptorVocabulary::from_descriptors(set))
}

fn vocab_text(vocab: &DescriptorVocabulary) -> String {
    vocab.names().iter().map(|n| format!("{n}\n")).collect()
}

fn execute(command: &Command, matches: &ArgMatches) -> Result<()> {
    prepare_out(&command.common().out, matches)?;
    match command {
        Command::BuildVocab {
            data,
            split,
            min_count,
            common,
        } => {
            let manifest = load_split(data, split)?;
            let vocab = build_vocabulary(&manifest.records, *min_count)?;
            write_file(&common.out.join("vocab.txt"), &vocab_text(&vocab))?;
            println!("vocabulary: {} descriptors", vocab.len());
        }
        Command::TrainCnn {
            data,
            split,
            model,
            iterations,
            learning_rate,
            decay,
            epsilon,
            per_class,
            seed,
            common,
        } => {
            let config = OptimizerConfig {
                learning_rate: *learning_rate,
                decay: *decay,
                epsilon: *epsilon,
                iterations: *iterations,
                batch_size: 0,
                per_class: 0,
                seed: *seed,
            }
            .with_per_class(*per_class);
            config.validate()?;
            let mut bundle = load_bundle_or_default(model)?;
            let manifest = load_split(data, split)?;
            let faces = face_dataset(&manifest, &RecordAnnotations)?;
            log::info!("training on {} faces, class counts {:?}", faces.len(), faces.class_counts());
            let outcome = train_cnn(&faces, NetworkSpec::canonical(), &config)?;
            write_file(&common.out.join("loss.csv"), &loss_trace_csv(&outcome.loss_trace))?;
            if bundle.cnn_cpt.take().is_some() {
                log::warn!("dropping the CNN evidence table of the previous network; run calibrate again");
            }
            bundle.network = Some(outcome.network);
            bundle.optimizer = Some(config);
            save_model(&bundle, model)?;
            match outcome.loss_trace.last() {
                Some(l) => println!("trained {} iterations on {} faces; final loss {l}", iterations, faces.len()),
                None => println!("initialized network (0 iterations)"),
            }
        }
        Command::Calibrate {
            data,
            split,
            model,
            smoothing,
            common,
        } => {
            let mut bundle = load_model(model)?;
            let network = bundle
                .network
                .as_ref()
                .ok_or_else(|| Error::Usage("model has no CNN; run train-cnn first".into()))?;
            let manifest = load_split(data, split)?;
            let (confusion, cpt) = calibrate(&manifest, network, &RecordAnnotations, *smoothing)?;
            let mut text = format!(
                "split: {split}\nimages scored: {}\ncnn accuracy: {}\n\nconfusion (rows = truth)\n",
                confusion.total(),
                confusion.accuracy().map_or("n/a".into(), |a| format!("{:.2}%", 100.0 * a))
            );
            for y in Emotion::ALL {
                let r = confusion.row(y);
                text.push_str(&format!("{:<9} {} {} {}\n", y.name(), r[0], r[1], r[2]));
            }
            text.push_str("\nevidence table P(cnn = column | truth = row)\n");
            for y in Emotion::ALL {
                let r = cpt.rows()[y.index()];
                text.push_str(&format!("{:<9} {} {} {}\n", y.name(), r[0], r[1], r[2]));
            }
            write_file(&common.out.join("calibration.txt"), &text)?;
            bundle.cnn_cpt = Some(cpt);
            save_model(&bundle, model)?;
            print!("{text}");
        }
        Command::FitBn {
            data,
            split,
            model,
            smoothing,
            min_count,
            vocab,
            evidence,
            ..
        } => {
            let mut bundle = load_bundle_or_default(model)?;
            let manifest = load_split(data, split)?;
            let labeled: Vec<SampleRecord> = manifest.records.iter().filter(|r| r.label.is_some()).cloned().collect();
            let vocab = match vocab {
                Some(path) => read_vocab(path)?,
                None => build_vocabulary(&labeled, *min_count)?,
            };
            if vocab.is_empty() {
                log::warn!("empty vocabulary: the descriptor model reduces to the class prior");
            }
            let fit = fit_mle(&labeled, &vocab, *smoothing)?;
            let prior = *fit.prior.0.probs();
            let d = vocab.len();
            bundle.bayes = Some(BayesModel::from_fit(vocab, fit, *evidence)?);
            save_model(&bundle, model)?;
            println!(
                "descriptor model: {d} descriptors, {} images, prior {:.4} {:.4} {:.4}",
                labeled.len(),
                prior[0],
                prior[1],
                prior[2]
            );
        }
        Command::Eval {
            data,
            split,
            model,
            mode,
            fusion,
            common,
        } => {
            let fusion_model = FusionModel::from_bundle(load_model(model)?, *fusion)?;
            let mut modes = vec![*mode];
            for m in Mode::ALL {
                let available = match m {
                    Mode::Bn => true,
                    Mode::Cnn => fusion_model.network.is_some(),
                    Mode::Ensemble => {
                        fusion_model.network.is_some()
                            && (fusion_model.cnn_cpt.is_some() || *fusion == FusionRule::Averaging)
                    }
                };
                if available && m != *mode {
                    modes.push(m);
                }
            }
            let manifest = load_split(data, split)?;
            let report = evaluate(&manifest, &fusion_model, &RecordAnnotations, &modes)?;
            let text = render_report(&report);
            write_file(&common.out.join(format!("eval-{split}.txt")), &text)?;
            write_file(&common.out.join(format!("eval-{split}.csv")), &report_csv(&report))?;
            print!("{text}");
        }
        Command::Predict {
            image,
            model,
            faces,
            labels,
            fusion,
            ..
        } => {
            let fusion_model = FusionModel::from_bundle(load_model(model)?, *fusion)?;
            let faces_path = faces.clone().unwrap_or_else(|| sidecar_path(image, FACES_EXT));
            let labels_path = labels.clone().unwrap_or_else(|| sidecar_path(image, LABELS_EXT));
            let face_boxes = read_faces(&faces_path)?.unwrap_or_else(|| {
                log::warn!("no face file {}", faces_path.display());
                Vec::new()
            });
            let descriptors: BTreeSet<String> = read_descriptors(&labels_path)?.unwrap_or_else(|| {
                log::warn!("no descriptor file {}", labels_path.display());
                BTreeSet::new()
            });
            let record = SampleRecord {
                image_id: image
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                image_path: image.clone(),
                face_boxes,
                descriptors,
                label: None,
            };
            let p = predict(&record, &fusion_model, &RecordAnnotations)?;
            let probs = p.posterior.probs();
            println!(
                "{} positive={:.4} neutral={:.4} negative={:.4} faces={} cnn={} unknown-descriptors={}",
                p.class,
                probs[0],
                probs[1],
                probs[2],
                p.face_count,
                p.cnn_class.map_or("none".to_string(), |c| c.to_string()),
                p.unknown_descriptor_count
            );
        }
        Command::ReportDescriptors {
            data,
            split,
            model,
            vocab,
            min_count,
            common,
        } => {
            let manifest = load_split(data, split)?;
            let vocab = match (model, vocab) {
                (Some(_), Some(_)) => return Err(Error::Usage("give either --model or --vocab, not both".into())),
                (Some(m), None) => load_model(m)?
                    .bayes
                    .ok_or_else(|| Error::Usage("model has no descriptor model".into()))?
                    .vocabulary()
                    .clone(),
                (None, Some(v)) => read_vocab(v)?,
                (None, None) => build_vocabulary(&manifest.records, *min_count)?,
            };
            let rows = descriptor_histogram(&manifest, &vocab);
            let path = common.out.join(format!("descriptors-{split}.csv"));
            write_file(&path, &histogram_csv(&rows))?;
            println!("{} descriptors written to {}", rows.len(), path.display());
        }
    }
    Ok(())
}
