use std::path::{Path, PathBuf};

use streamprompt::data::{
    compute_aer, parse_interactions, segment_stream, synth_stream, write_interactions, Format, Interactions,
};
use streamprompt::eval::{comparison_table, MetricsReport};
use streamprompt::train::{run_segments, EpochLoss, RunOptions, TrainConfig};
use streamprompt::Error;

use crate::{ReportArgs, RunArgs, SynthArgs};

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io { .. } | Failure::Core(Error::Io { .. }) => 1,
            Failure::Invalid(_)
            | Failure::Core(
                Error::Parse { .. }
                | Error::EmptyInput(_)
                | Error::DegenerateSegmentation { .. }
                | Error::InvalidInput(_)
                | Error::Sampling { .. }
                | Error::EmptyEval
                | Error::Report(_)
                | Error::Checkpoint(_),
            ) => 2,
            Failure::Core(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn invalid(e: Error) -> Failure {
    match e {
        Error::Contract(message) | Error::InvalidInput(message) => Failure::Invalid(message),
        other => Failure::Invalid(other.to_string()),
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |source| Failure::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let config = args.shape.synth_config(args.segments, args.seed);
    config.validate().map_err(invalid)?;
    let records = synth_stream(&config)?;
    write_interactions(&args.out, &records)?;
    let data = Interactions::from_records(records);
    println!("wrote {} interactions to {}", data.len(), args.out.display());
    if config.segments >= 2 {
        let aer = compute_aer(&segment_stream(&data.events(), config.segments)?)?;
        println!("AER over {} segments: {:.4}", config.segments, aer);
    }
    Ok(())
}

/// Defaults, then the config file, then explicit flags.
fn train_config(args: &RunArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io(path))?;
            serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    let set = |slot: &mut usize, flag: Option<usize>| {
        if let Some(v) = flag {
            *slot = v;
        }
    };
    set(&mut config.views, args.views);
    set(&mut config.node_prompts, args.prompts_node);
    set(&mut config.struct_prompts, args.prompts_struct);
    set(&mut config.codebook, args.prompts_view);
    set(&mut config.dim, args.dim);
    set(&mut config.layers, args.layers);
    set(&mut config.epochs, args.epochs);
    set(&mut config.batch_size, args.batch);
    set(&mut config.eval_k, args.topk);
    config.lr = args.lr.unwrap_or(config.lr);
    config.replay_fraction = args.replay_fraction.unwrap_or(config.replay_fraction);
    config.seed = args.seed.unwrap_or(config.seed);
    config.validate().map_err(invalid)?;
    Ok(config)
}

fn write_losses(path: &Path, trace: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::Io {
        path: path.to_owned(),
        source: e.into(),
    })?;
    for row in trace {
        w.serialize(row).map_err(|e| Failure::Io {
            path: path.to_owned(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(io(path))
}

pub fn run(args: &RunArgs) -> Result<()> {
    let base = train_config(args)?;
    if args.segments < 2 {
        return Err(Failure::Invalid(format!(
            "--segments must be at least 2, got {}",
            args.segments
        )));
    }
    let data = match &args.data {
        Some(path) => {
            let format = args.format.unwrap_or_else(|| Format::from_path(path));
            parse_interactions(path, format, !args.no_header)?
        }
        None => {
            let synth = args.shape.synth_config(args.segments, base.seed);
            synth.validate().map_err(invalid)?;
            Interactions::from_records(synth_stream(&synth)?)
        }
    };
    let segments = segment_stream(&data.events(), args.segments)?;

    std::fs::create_dir_all(&args.out).map_err(io(&args.out))?;
    data.users.save(&args.out.join("users.csv"))?;
    data.items.save(&args.out.join("items.csv"))?;

    let mut reports = Vec::with_capacity(args.mode.len());
    for &mode in &args.mode {
        let config = TrainConfig { mode, ..base.clone() };
        let opts = RunOptions {
            checkpoint_dir: Some(args.out.join(mode.as_str())),
        };
        let run = run_segments(&segments, &config, &opts)?;
        run.report.write(&args.out.join(format!("metrics_{mode}.json")))?;
        write_losses(&args.out.join(format!("loss_{mode}.csv")), &run.trace)?;
        println!(
            "{mode}: Recall@{k} avg {:.4}, NDCG@{k} avg {:.4}",
            run.report.avg_recall,
            run.report.avg_ndcg,
            k = config.eval_k
        );
        reports.push(run.report);
    }
    let table = comparison_table(&reports)?;
    let path = args.out.join("comparison.md");
    std::fs::write(&path, &table).map_err(io(&path))?;
    print!("\n{table}");
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| MetricsReport::read(p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let table = comparison_table(&reports)?;
    if let Some(path) = &args.out {
        std::fs::write(path, &table).map_err(io(path))?;
    }
    print!("{table}");
    Ok(())
}
