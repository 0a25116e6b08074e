use std::fs::{self, File};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sechcal::dgp::{derive_seed, open01, rng, Exp1World};
use sechcal::estimate::{ce2_plugin_with, PolyPair, Recalibrator};
use sechcal::harness::config::RunConfig;
use sechcal::harness::output::{self, write_csv, Manifest};
use sechcal::harness::{exp1, exp2, exp3, exp4, properties};
use sechcal::io::{read_scores, read_snapshots, scores_csv};
use sechcal::oracle::{build_world_surface, ce2_pert, save_surface};
use sechcal::poly::{fit_ridge_targets, schedule, select_model, BasisSpec, SelectGrids, SelectMode, Target};
use sechcal::sech::{perturb_score, SechKernel};
use sechcal::Score2;

#[derive(Parser)]
#[command(name = "sechcal", version, about = "Second-order calibration under sech perturbation")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for experiment CSVs and manifests.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Perturbation bandwidth.
    #[arg(long, global = true)]
    h: Option<f64>,
    /// Sample size.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Crowd votes CSV for exp4.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Force the synthetic vote table in exp4.
    #[arg(long, global = true)]
    surrogate: bool,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
    Properties,
    /// Build and save the ground-truth surface of the rate-experiment world.
    OracleBuild,
    /// Perturb scores read from a CSV (`m,sigma2`).
    Perturb { input: Option<PathBuf> },
    /// Fit the moment regressions on snapshots (`m,sigma2,y1,y2`).
    Fit {
        input: PathBuf,
        /// Fixed tensor degree; otherwise the schedule is searched by 5-fold CV.
        #[arg(long)]
        degree: Option<usize>,
        #[arg(long, default_value_t = 1e-4)]
        ridge: f64,
    },
    /// Plug-in CE2 of a fitted model on snapshots.
    Estimate { model: PathBuf, input: PathBuf },
    /// Map scores through a fitted model.
    Recalibrate { model: PathBuf, input: Option<PathBuf> },
}

fn read_input(p: &Option<PathBuf>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    match p {
        Some(p) => buf = fs::read(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            io::stdin().read_to_end(&mut buf)?;
        }
    }
    Ok(buf)
}

fn emit(text: &str) -> Result<()> {
    io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn emit_scores(scores: &[Score2], fmt: Format) -> Result<()> {
    match fmt {
        Format::Csv => emit(&scores_csv(scores)),
        Format::Json => emit(&(serde_json::to_string_pretty(scores)? + "\n")),
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn finish(&self, mut m: Manifest, files: &[&str]) -> Result<()> {
        for f in files {
            m.record(&self.out, f)?;
        }
        let p = m.write(&self.out)?;
        eprintln!("wrote {}", p.display());
        Ok(())
    }

    fn csv(&self, name: &str, header: &str, rows: &[String]) -> Result<()> {
        write_csv(&self.out.join(name), header, rows)?;
        Ok(())
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.exp1.seeds = vec![s];
        cfg.exp2.seeds = vec![s];
        cfg.exp3.seed = s;
        cfg.exp4.seed = s;
        cfg.properties.seed = s;
    }
    if let Some(h) = cli.h {
        cfg.exp1.h = vec![h];
        cfg.exp2.h = h;
    }
    if let Some(n) = cli.n {
        cfg.exp1.n = vec![n];
    }
    if let Some(d) = &cli.dataset {
        cfg.exp4.dataset = Some(d.clone());
    }
    if cli.surrogate {
        cfg.exp4.surrogate = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_experiment(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&out)?;
    let ctx = Ctx { cfg, out };
    let hash = ctx.cfg.hash();
    let t0 = Instant::now();
    match cli.cmd {
        Cmd::Exp1 => {
            let r = exp1::run_exp1(&ctx.cfg.exp1)?;
            let rows: Vec<String> = r.rows.iter().map(|x| x.csv()).collect();
            let summ: Vec<String> = r.summary.iter().flat_map(|s| s.csv_rows()).collect();
            ctx.csv("exp1_runs.csv", output::EXP1_RUNS, &rows)?;
            ctx.csv("exp1_summary.csv", output::EXP1_SUMMARY, &summ)?;
            for s in &r.summary {
                eprintln!("{:>8} h={:<8} slope {:+.3}", s.method, s.h, s.slope);
            }
            ctx.finish(
                Manifest::new("exp1", &hash, ctx.cfg.exp1.seeds.clone()),
                &["exp1_runs.csv", "exp1_summary.csv"],
            )?;
        }
        Cmd::Exp2 => {
            let r = exp2::run_exp2(&ctx.cfg.exp2)?;
            let pts: Vec<String> = r.points.iter().map(|x| x.csv()).collect();
            let summ: Vec<String> = r.seeds.iter().map(|x| x.csv()).collect();
            ctx.csv("exp2_points.csv", output::EXP2_POINTS, &pts)?;
            ctx.csv("exp2_summary.csv", output::EXP2_SUMMARY, &summ)?;
            for s in &r.seeds {
                eprintln!("{}", s.csv());
            }
            ctx.finish(
                Manifest::new("exp2", &hash, ctx.cfg.exp2.seeds.clone()),
                &["exp2_points.csv", "exp2_summary.csv"],
            )?;
        }
        Cmd::Exp3 => {
            let r = exp3::run_exp3(&ctx.cfg.exp3)?;
            ctx.csv("exp3_gain.csv", output::EXP3_GAIN, &r.csv_rows())?;
            ctx.finish(Manifest::new("exp3", &hash, vec![ctx.cfg.exp3.seed]), &["exp3_gain.csv"])?;
        }
        Cmd::Exp4 => {
            let r = exp4::run_exp4(&ctx.cfg.exp4)?;
            let rows: Vec<String> = r.rows.iter().map(|x| x.csv()).collect();
            let summ: Vec<String> = r.summary.iter().map(|x| x.csv()).collect();
            let lift: Vec<String> = r.lifts.iter().map(|x| x.csv()).collect();
            ctx.csv("exp4_yield.csv", output::EXP4_YIELD, &rows)?;
            ctx.csv("exp4_summary.csv", output::EXP4_SUMMARY, &summ)?;
            ctx.csv("exp4_lift.csv", output::EXP4_LIFT, &lift)?;
            for l in &r.lifts {
                eprintln!("{}", l.csv());
            }
            ctx.finish(
                Manifest::new("exp4", &hash, vec![ctx.cfg.exp4.seed]),
                &["exp4_yield.csv", "exp4_summary.csv", "exp4_lift.csv"],
            )?;
        }
        Cmd::Properties => {
            let checks = properties::run_properties(&ctx.cfg.properties)?;
            for c in &checks {
                eprintln!(
                    "{} {:<28} worst {:.3e} tol {:.1e} ({} cases)",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.worst,
                    c.tolerance,
                    c.cases
                );
            }
            fs::write(ctx.out.join("properties.json"), serde_json::to_string_pretty(&checks)?)?;
            ctx.finish(
                Manifest::new("properties", &hash, vec![ctx.cfg.properties.seed]),
                &["properties.json"],
            )?;
            if checks.iter().any(|c| !c.passed) {
                bail!("property suite failed");
            }
        }
        _ => unreachable!(),
    }
    eprintln!("done in {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}

fn oracle_build(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let h = cli.h.unwrap_or(cfg.exp1.h[0]);
    let oc = &cfg.exp1.oracle;
    let world = Exp1World::new(&cfg.exp1.world, cfg.exp1.world_seed)?;
    let ts = build_world_surface(&world, h, oc.n_qmc, oc.grid, cli.seed.unwrap_or(oc.seed))?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("oracle.bin"));
    let side = save_surface(&ts, &out)?;
    let value = ce2_pert(&ts)?;
    match cli.format {
        Format::Csv => emit(&format!("h,n_qmc,ce2_pert,sha256\n{},{},{},{}\n", h, oc.n_qmc, value, side.checksum))?,
        Format::Json => emit(&(serde_json::to_string_pretty(&side)? + "\n"))?,
    }
    Ok(())
}

fn perturb(cli: &Cli, input: &Option<PathBuf>) -> Result<()> {
    let h = cli.h.context("--h is required")?;
    let scores = read_scores(read_input(input)?.as_slice())?;
    let km = SechKernel::mean_axis(h)?;
    let kv = SechKernel::variance_axis(h)?;
    let mut r = rng(derive_seed(cli.seed.unwrap_or(0), 0));
    let out: Vec<Score2> = scores
        .iter()
        .map(|&s| perturb_score(&km, &kv, s, open01(&mut r), open01(&mut r)))
        .collect::<sechcal::Result<_>>()?;
    emit_scores(&out, cli.format)
}

fn fit(cli: &Cli, input: &Path, degree: Option<usize>, ridge: f64) -> Result<()> {
    let batch = read_snapshots(File::open(input)?, cli.seed.unwrap_or(0))?;
    let pair = match degree {
        Some(l) => {
            let mut f = fit_ridge_targets(BasisSpec::square(l), &batch, &[Target::First, Target::Second], ridge)?;
            let fit2 = f.pop().expect("two fits");
            let fit1 = f.pop().expect("two fits");
            PolyPair { fit1, fit2 }
        }
        None => {
            let h = cli.h.context("--h is required without --degree")?;
            let cfg = load_config(cli)?;
            let sched = schedule(h, batch.len(), &cfg.exp1.caps)?;
            let grids = SelectGrids {
                degrees: sched.candidates,
                ridge_mults: cfg.exp1.ridge_mults.clone(),
            };
            let sel = select_model(&batch, None, SelectMode::Cv, &grids)?;
            PolyPair {
                fit1: sel.fit1,
                fit2: sel.fit2,
            }
        }
    };
    let text = serde_json::to_string_pretty(&pair)? + "\n";
    match &cli.out {
        Some(p) => fs::write(p, text)?,
        None => emit(&text)?,
    }
    Ok(())
}

fn load_model(p: &Path) -> Result<PolyPair> {
    Ok(serde_json::from_str(&fs::read_to_string(p)?)?)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Exp1 | Cmd::Exp2 | Cmd::Exp3 | Cmd::Exp4 | Cmd::Properties => run_experiment(&cli),
        Cmd::OracleBuild => oracle_build(&cli),
        Cmd::Perturb { input } => perturb(&cli, input),
        Cmd::Fit { input, degree, ridge } => fit(&cli, input, *degree, *ridge),
        Cmd::Estimate { model, input } => {
            let pair = load_model(model)?;
            let batch = read_snapshots(File::open(input)?, cli.seed.unwrap_or(0))?;
            let mut rep = ce2_plugin_with(&pair, &batch)?;
            rep.h = cli.h;
            rep.degree = Some(pair.fit1.basis.degree_m);
            match cli.format {
                Format::Csv => emit(&format!("{}\n{}\n", sechcal::estimate::CeReport::CSV_HEADER, rep.csv_row())),
                Format::Json => emit(&(serde_json::to_string_pretty(&rep)? + "\n")),
            }
        }
        Cmd::Recalibrate { model, input } => {
            let r = Recalibrator::new(load_model(model)?);
            let scores = read_scores(read_input(input)?.as_slice())?;
            let out: Vec<Score2> = scores.iter().map(|&s| r.recalibrate(s)).collect::<sechcal::Result<_>>()?;
            emit_scores(&out, cli.format)
        }
    }
}
