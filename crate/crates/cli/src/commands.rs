use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crossmax::crossmmd::crossmmd;
use crossmax::formats::{self, SkeletonRecord};
use crossmax::pipeline::{self, PipelineConfig, ScoreVariant};
use crossmax::report::{self, MetricsDocument, Outputs, RunSummary};
use crossmax::skeleton::{BoneTopology, Modality, ModalityTriple, PerturbationConfig};
use crossmax::splits::{self, SplitSpec};
use crossmax::synthetic::{self, SyntheticConfig};
use crossmax::{Checkpoint, Error, Result};

use crate::{Cli, Command, PerturbKind, SplitsCommand};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_config(cli: &Cli) -> Result<(PipelineConfig, PathBuf)> {
    match &cli.config {
        Some(p) => {
            let text = read(p).map_err(|e| Error::Config(e.to_string()))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((PipelineConfig::from_toml(&text)?, base))
        }
        None => Ok((PipelineConfig::default(), PathBuf::new())),
    }
}

fn topology_for(path: Option<&Path>, records: &[SkeletonRecord]) -> Result<BoneTopology> {
    match path {
        Some(p) => formats::parse_topology(&read(p)?),
        None => {
            let first = records
                .first()
                .ok_or_else(|| Error::InvalidInput("empty skeleton file".into()))?;
            BoneTopology::chain(first.sequence.points())
        }
    }
}

fn skeletons(path: &Path) -> Result<Vec<SkeletonRecord>> {
    formats::parse_skeletons(&read(path)?)
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: PipelineConfig,
    base: PathBuf,
    echo: Value,
    echo_line: String,
    outputs: Outputs,
}

impl Ctx<'_> {
    fn out(&self, name: &str) -> PathBuf {
        self.cli.out_dir.join(name)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.out(name);
        self.outputs.write(&path, text)
    }

    /// Writes a text format with the config echo after its magic line.
    fn write_echoed(&mut self, name: &str, text: &str) -> Result<()> {
        let text = formats::with_echo(text, &self.echo_line);
        self.write(name, &text)
    }

    fn train_seed(&self) -> u64 {
        self.cli.seed.unwrap_or(self.cfg.train.seed)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let (mut cfg, base) = load_config(cli)?;
    if let (Command::Train(_) | Command::Pipeline, Some(s)) = (&cli.command, cli.seed) {
        cfg.train.seed = s;
    }
    let echo = json!({ "command": &cli.command, "seed": cli.seed, "config": cfg.echo()? });
    let echo_line = serde_json::to_string(&echo)?;
    let mut ctx = Ctx {
        cli,
        cfg,
        base,
        echo,
        echo_line,
        outputs: Outputs::new(),
    };
    let result = dispatch(&mut ctx);
    if result.is_err() {
        ctx.outputs.discard();
    }
    result
}

fn dispatch(ctx: &mut Ctx<'_>) -> Result<()> {
    let cli = ctx.cli;
    match &cli.command {
        Command::Derive(a) => derive(ctx, &a.input, a.topology.as_deref()).map_err(|e| e.in_stage("derive")),
        Command::Perturb(a) => {
            let seed = cli.seed.unwrap_or(0);
            let p = match a.kind {
                PerturbKind::Gaussian => PerturbationConfig::gaussian(a.gamma, seed),
                PerturbKind::Occlusion => PerturbationConfig::occlusion(a.thetas.clone(), seed),
            };
            p.validate()?;
            let records = skeletons(&a.input).map_err(|e| e.in_stage("perturb"))?;
            let out = pipeline::perturb_records(&records, &p).map_err(|e| e.in_stage("perturb"))?;
            ctx.write_echoed("perturbed.txt", &formats::write_skeletons(&out)?)
        }
        Command::Splits(s) => split_command(ctx, s).map_err(|e| e.in_stage("splits")),
        Command::Synth => synth(ctx).map_err(|e| e.in_stage("synth")),
        Command::Train(a) => {
            let records = skeletons(&a.train).map_err(|e| e.in_stage("train"))?;
            let split = SplitSpec::from_json(&read(&a.split)?).map_err(|e| e.in_stage("train"))?;
            let topo = topology_for(a.topology.as_deref(), &records).map_err(|e| e.in_stage("train"))?;
            let mut tc = ctx.cfg.train_config();
            tc.seed = ctx.train_seed();
            let ckpt = pipeline::train_stage(&records, &topo, &split, &tc).map_err(|e| e.in_stage("train"))?;
            if let Some(last) = ckpt.loss_log.last() {
                println!("final loss {} (crossmmd {})", last.total, last.crossmmd);
            }
            let text = ckpt.to_json(Some(&ctx.echo))?;
            ctx.write("checkpoint.json", &text)
        }
        Command::Extract(a) => extract(ctx, a).map_err(|e| e.in_stage("extract")),
        Command::Mmd(a) => {
            let load = |p: &Path, m: Modality| -> Result<_> {
                let b = formats::parse_embeddings(&read(p)?)?;
                if b.modality() != m {
                    return Err(Error::InvalidInput(format!(
                        "{} holds {} embeddings, expected {m}",
                        p.display(),
                        b.modality()
                    )));
                }
                Ok(b)
            };
            let j = load(&a.joints, Modality::Joints)?;
            let b = load(&a.bones, Modality::Bones)?;
            let v = load(&a.velocities, Modality::Velocities)?;
            let value = crossmmd(&j, &b, &v, &ctx.cfg.kernel).map_err(|e| e.in_stage("mmd"))?;
            println!("{value}");
            Ok(())
        }
        Command::Score(a) => score(ctx, a).map_err(|e| e.in_stage("score")),
        Command::Eval(a) => eval(ctx, a, false).map_err(|e| e.in_stage("eval")),
        Command::Report(a) => eval(ctx, a, true).map_err(|e| e.in_stage("report")),
        Command::Pipeline => {
            let out = cli.out_dir.clone();
            let report = pipeline::run_pipeline_into(&ctx.cfg, &ctx.base, Some(&out), &mut ctx.outputs)?;
            let doc = report::emit_report(&report, &out, &mut ctx.outputs).map_err(|e| e.in_stage("report"))?;
            for r in &doc.runs {
                println!(
                    "{}: O-AUROC {} O-AUPR {} C-ACC {}",
                    r.name,
                    fmt_opt(r.o_auroc),
                    fmt_opt(r.o_aupr),
                    fmt_opt(r.c_acc)
                );
            }
            println!(
                "mean: O-AUROC {} O-AUPR {} C-ACC {}",
                fmt_opt(doc.mean.o_auroc),
                fmt_opt(doc.mean.o_aupr),
                fmt_opt(doc.mean.c_acc)
            );
            Ok(())
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn derive(ctx: &mut Ctx<'_>, input: &Path, topology: Option<&Path>) -> Result<()> {
    let records = skeletons(input)?;
    let topo = topology_for(topology, &records)?;
    let mut out: [Vec<SkeletonRecord>; 3] = Default::default();
    for r in &records {
        let t = ModalityTriple::derive(&r.sequence, &topo)?;
        for m in Modality::ALL {
            out[m.index()].push(SkeletonRecord {
                id: r.id.clone(),
                sequence: t.get(m).clone(),
            });
        }
    }
    for m in Modality::ALL {
        let text = formats::write_skeletons(&out[m.index()])?;
        ctx.write_echoed(&format!("{m}.txt"), &text)?;
    }
    Ok(())
}

fn split_command(ctx: &mut Ctx<'_>, cmd: &SplitsCommand) -> Result<()> {
    match cmd {
        SplitsCommand::Generate { classes, unseen } => {
            let s = splits::generate_split(*classes, *unseen, ctx.cli.seed.unwrap_or(0))?;
            let text = s.to_json(Some(&ctx.echo))?;
            ctx.write("split.json", &text)
        }
        SplitsCommand::Fixture {
            dataset,
            run,
            class_names,
        } => {
            let names: Option<Vec<String>> = match class_names {
                Some(p) => Some(
                    read(p)?
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(String::from)
                        .collect(),
                ),
                None => None,
            };
            let s = splits::load_fixture_split_with_names(dataset, *run, names.as_deref())?;
            let text = s.to_json(Some(&ctx.echo))?;
            ctx.write("split.json", &text)
        }
        SplitsCommand::Export => {
            for s in splits::all_fixture_splits()? {
                let name = format!("splits/{}-run{}.json", s.dataset_name, s.run_id);
                let text = s.to_json(Some(&ctx.echo))?;
                ctx.write(&name, &text)?;
            }
            Ok(())
        }
    }
}

fn synth(ctx: &mut Ctx<'_>) -> Result<()> {
    let mut cfg = match &ctx.cfg.data {
        pipeline::DataConfig::Synthetic { synthetic, seeds } => SyntheticConfig {
            seed: seeds.first().copied().unwrap_or(0),
            ..synthetic.clone()
        },
        pipeline::DataConfig::Files { .. } => SyntheticConfig::default(),
    };
    if let Some(s) = ctx.cli.seed {
        cfg.seed = s;
    }
    let d = synthetic::generate(&cfg)?;
    ctx.write_echoed("train.txt", &formats::write_skeletons(&d.train)?)?;
    ctx.write_echoed("test.txt", &formats::write_skeletons(&d.test)?)?;
    ctx.write_echoed("topology.txt", &formats::write_topology(&d.topology))?;
    let split = d.split.to_json(Some(&ctx.echo))?;
    ctx.write("split.json", &split)
}

fn extract(ctx: &mut Ctx<'_>, a: &crate::ExtractArgs) -> Result<()> {
    let ckpt = Checkpoint::from_json(&read(&a.checkpoint)?)?;
    let records = skeletons(&a.data)?;
    let ex = ckpt.extract(&records)?;
    for m in Modality::ALL {
        let text = formats::write_embeddings(&ex.embeddings[m.index()]);
        ctx.write_echoed(&format!("{}_{m}.txt", a.prefix), &text)?;
    }
    let gallery = match &a.gallery_data {
        Some(p) => {
            let train: Vec<SkeletonRecord> = skeletons(p)?
                .into_iter()
                .filter(|r| {
                    r.sequence
                        .label()
                        .is_some_and(|l| ckpt.seen_classes.binary_search(&l).is_ok())
                })
                .collect();
            if train.is_empty() {
                return Err(Error::InvalidInput("gallery data has no seen-class samples".into()));
            }
            let gx = ckpt.extract(&train)?;
            for m in Modality::ALL {
                let text = formats::write_embeddings(&gx.embeddings[m.index()]);
                ctx.write_echoed(&format!("gallery_{m}.txt"), &text)?;
            }
            let mut g = gx.gallery()?;
            if let Some(limit) = ctx.cfg.gallery_limit {
                g = g.subsample(limit, ctx.train_seed());
            }
            Some(g)
        }
        None => None,
    };
    let logits = pipeline::logits_file(&ckpt, &records, &ex, gallery.as_ref())?;
    let text = formats::write_logits(&logits)?;
    ctx.write_echoed(&format!("{}_logits.txt", a.prefix), &text)
}

fn score(ctx: &mut Ctx<'_>, a: &crate::ScoreArgs) -> Result<()> {
    let mut file = formats::parse_logits(&read(&a.logits)?)?;
    if let (Some(g), Some(e)) = (&a.gallery, &a.embeddings) {
        let load = |paths: &[PathBuf]| -> Result<[crossmax::EmbeddingBatch; 3]> {
            let v: Vec<_> = paths
                .iter()
                .map(|p| formats::parse_embeddings(&read(p)?))
                .collect::<Result<_>>()?;
            v.try_into()
                .map_err(|_| Error::InvalidInput("expected three embedding files".into()))
        };
        let gallery = pipeline::gallery_from(&load(g)?)?;
        let emb = load(e)?;
        for (m, b) in Modality::ALL.iter().zip(&emb) {
            if b.modality() != *m {
                return Err(Error::InvalidInput(format!(
                    "expected {m} embeddings, got {}",
                    b.modality()
                )));
            }
        }
        pipeline::attach_distances(&mut file, &gallery, &emb)?;
    }
    let variant: ScoreVariant = match &a.variant {
        Some(v) => v.parse()?,
        None => ctx.cfg.score_variant,
    };
    let rows = pipeline::score_logits(&file, variant, ctx.cfg.refinement_enabled)?;
    let text = formats::write_scores(&rows)?;
    ctx.write_echoed("scores.csv", &text)
}

fn eval(ctx: &mut Ctx<'_>, a: &crate::EvalArgs, plots: bool) -> Result<()> {
    let rows = formats::parse_scores(&read(&a.scores)?)?;
    if rows.is_empty() {
        return Err(Error::InvalidInput("score table is empty".into()));
    }
    let split = SplitSpec::from_json(&read(&a.split)?)?;
    let scores = pipeline::labeled_scores(&rows, &split)?;
    let name = a
        .scores
        .file_stem()
        .map_or_else(|| "scores".to_string(), |s| s.to_string_lossy().into_owned());
    let summary = RunSummary::from_scores(&name, &split.dataset_name, split.run_id, &scores)?;
    let doc = MetricsDocument::new(ctx.echo.clone(), ctx.cfg.score_variant.name(), vec![summary])?;
    let out = ctx.cli.out_dir.clone();
    report::emit_run(&out, &name, &scores, plots, &ctx.echo_line, &mut ctx.outputs)?;
    ctx.write("metrics.json", &doc.to_json()?)?;
    if plots {
        let radar = report::radar_svg(&doc.runs, &format!("Per-run metrics ({})", doc.variant));
        let radar = report::svg_with_echo(&radar, &ctx.echo_line);
        ctx.write("radar.svg", &radar)?;
    }
    let r = &doc.runs[0];
    println!(
        "O-AUROC {} O-AUPR {} C-ACC {}",
        fmt_opt(r.o_auroc),
        fmt_opt(r.o_aupr),
        fmt_opt(r.c_acc)
    );
    Ok(())
}
