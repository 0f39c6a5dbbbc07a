use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use super::acceptance;
use super::config::{ExperimentConfig, InitMode, Subcommand};
use super::report::{Check, StatReport};
use crate::coalescent::{self, EntranceProxy, Engine, GeneticComposition, WarmGenes};
use crate::cpp::{self, MarkInit, MaximalConfig};
use crate::csbp;
use crate::error::{Error, Result};
use crate::mechanism::{BranchingMechanism, Mass};
use crate::rng::{replicate, Streams};
use crate::smoluchowski::{self, GridSpec, WeakSolutionSample};
use crate::stats::{ks_two_sample, mean_stderr};

pub(super) const BANK_FILE: &str = "upsilon_bank.csv";

/// Output directory plus the list of files written so far.
pub(super) struct Out {
    dir: PathBuf,
    written: Vec<String>,
}

impl Out {
    fn new(dir: &Path) -> Result<Out> {
        std::fs::create_dir_all(dir)?;
        Ok(Out { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub(super) fn write<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        f(&mut w)?;
        w.flush()?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// Runs one experiment, writes its artifacts and `<experiment>.json` into `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<StatReport> {
    let start = Instant::now();
    let mut out = Out::new(&cfg.out)?;
    out.write(&format!("{}.config", cfg.experiment.name()), |w| Ok(w.write_all(cfg.to_text().as_bytes())?))?;
    let streams = Streams::new(cfg.seed).derive(cfg.experiment.name());
    let mut report = StatReport::new(cfg);
    let (checks, summary) = match cfg.experiment {
        Subcommand::SimulateCoalescent => simulate_coalescent(cfg, &streams, &mut out)?,
        Subcommand::SolvePde => solve_pde(cfg, &mut out)?,
        Subcommand::McWeak => mc_weak(cfg, &streams, &mut out)?,
        Subcommand::CppMark => cpp_mark(cfg, &streams, &mut out)?,
        Subcommand::UpsilonBank => upsilon_bank(cfg, &streams, &mut out)?,
        Subcommand::ProfileOde => profile_ode(cfg, &mut out)?,
        Subcommand::Dust => dust(cfg, &streams, &mut out)?,
        Subcommand::SpeedCdi => speed_cdi(cfg, &streams, &mut out)?,
        Subcommand::Acceptance => acceptance::run(cfg.profile, &streams, &mut out)?,
    };
    let json_name = format!("{}.json", cfg.experiment.name());
    report.checks = checks;
    report.summary = summary;
    report.artifacts = out.written;
    report.artifacts.push(json_name.clone());
    report.timing.elapsed_seconds = start.elapsed().as_secs_f64();
    report.write_json(&cfg.out.join(json_name))?;
    Ok(report)
}

type Outcome = (Vec<Check>, serde_json::Value);

fn missing(dir: &Path, file: &str, producer: Subcommand) -> Error {
    Error::MissingArtifact { path: dir.join(file).display().to_string(), producer: producer.name().into() }
}

/// Reads the `Upsilon` bank and the mechanism it was produced for.
pub fn read_bank(dir: &Path) -> Result<(Vec<f64>, BranchingMechanism)> {
    let csv = std::fs::read_to_string(dir.join(BANK_FILE))
        .map_err(|_| missing(dir, BANK_FILE, Subcommand::UpsilonBank))?;
    let meta_name = format!("{}.json", Subcommand::UpsilonBank.name());
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join(&meta_name)).map_err(|_| missing(dir, &meta_name, Subcommand::UpsilonBank))?,
    )?;
    let rate = meta["summary"]["rate"].as_f64();
    let gamma = meta["summary"]["gamma"].as_f64();
    let (Some(rate), Some(gamma)) = (rate, gamma) else {
        return Err(Error::Config(format!("{meta_name} does not record the bank mechanism; rerun `upsilon-bank`")));
    };
    let mut lines = csv.lines();
    if lines.next() != Some("sample") {
        return Err(Error::Config(format!("{BANK_FILE} must start with the header `sample`")));
    }
    let bank = lines
        .map(|l| l.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad bank entry `{l}`"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((bank, BranchingMechanism::stable(rate, gamma)?))
}

fn simulate_coalescent(cfg: &ExperimentConfig, streams: &Streams, out: &mut Out) -> Result<Outcome> {
    let n = cfg.n;
    let reps = cfg.replicates_or(20, 50);
    let snaps: Vec<f64> = cfg.times.iter().map(|t| t / n as f64).collect();
    let (engine, genes) = match cfg.init {
        InitMode::Minimal => (Engine::EXACT_LAZY, 1),
        InitMode::Kcap => match EntranceProxy::maximal(n, cfg.gene_rate, cfg.times[0])? {
            EntranceProxy::Maximal { cap, .. } => (Engine::FAST_LAZY, cap),
            EntranceProxy::Minimal { .. } => unreachable!("maximal proxy"),
        },
    };
    let start = GeneticComposition::uniform(n, genes)?;
    let runs = replicate(streams, "simulate", reps, |_, rng| {
        coalescent::run(engine, &start, cfg.gene_rate, 0.0, &snaps, rng)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    out.write("coalescent.csv", |w| {
        writeln!(w, "replicate,t,species,genes")?;
        for (i, r) in runs.iter().enumerate() {
            for (s, t) in r.snapshots.iter().zip(&cfg.times) {
                writeln!(w, "{i},{t},{},{}", s.species, s.genes)?;
            }
        }
        Ok(())
    })?;
    let mut checks = Vec::new();
    for (j, &t) in cfg.times.iter().enumerate() {
        let sp: Vec<f64> = runs.iter().map(|r| r.snapshots[j].species as f64 / n as f64).collect();
        let genes: Vec<f64> = runs.iter().map(|r| r.snapshots[j].genes as f64 / (n as f64).powi(2)).collect();
        let e = mean_stderr(&sp)?;
        let target = 2.0 / (2.0 + t);
        checks.push(Check::within(&format!("species_curve t={t}"), e.mean, target, 0.05 * target, Some(e.stderr)));
        let g = mean_stderr(&genes)?;
        checks.push(Check::info(&format!("genes_per_n2 t={t}"), g.mean, Some(g.stderr)));
    }
    Ok((checks, json!({ "n": n, "init": cfg.init.name(), "genes_per_species": genes, "replicates": reps })))
}

fn grid_spec(lambdas: &[f64]) -> GridSpec {
    GridSpec { probes: lambdas.to_vec(), ..GridSpec::default() }
}

fn solve_pde(cfg: &ExperimentConfig, out: &mut Out) -> Result<Outcome> {
    let m = cfg.mechanism()?;
    if cfg.delta == 0.0 {
        return Err(Error::Config("solve-pde needs delta > 0".into()));
    }
    let law = cfg.initial;
    let (fine, probes) =
        smoluchowski::solve_with_error(&grid_spec(&cfg.lambdas), cfg.delta, 0.0, |l| law.laplace(l), &m, &cfg.times)?;
    out.write("pde.csv", |w| fine.write_csv(w))?;
    out.write("pde_probes.csv", |w| {
        writeln!(w, "t,lambda,u,error")?;
        for p in &probes {
            writeln!(w, "{},{},{},{}", p.t, p.lambda, p.u, p.error)?;
        }
        Ok(())
    })?;
    let mut checks = vec![
        Check::holds("mass_conservation", fine.mass_defect == 0.0, fine.mass_defect, "|u(t,0) - 1|"),
        Check::holds("monotone_in_lambda", fine.shape_violations.0 <= 0.0, fine.shape_violations.0, "largest increase"),
        Check::holds("convex_in_lambda", fine.shape_violations.1 <= 1e-8, fine.shape_violations.1, "largest concavity"),
    ];
    for p in &probes {
        checks.push(Check::info(&format!("u t={} lambda={}", p.t, p.lambda), p.u, None).with_detail(format!("grid error {:.2e}", p.error)));
    }
    Ok((checks, json!({ "dt": fine.dt, "steps": fine.steps, "nodes": fine.lambda.len() })))
}

fn mc_weak(cfg: &ExperimentConfig, streams: &Streams, out: &mut Out) -> Result<Outcome> {
    let m = cfg.mechanism()?;
    let reps = cfg.replicates_or(20_000, 100_000);
    let mut sols: Vec<WeakSolutionSample> = Vec::new();
    if cfg.delta == 0.0 {
        let (bank, bank_m) = read_bank(&cfg.out)?;
        if bank_m != m {
            return Err(Error::Config(format!(
                "the bank was produced for {bank_m:?}, not {m:?}; rerun `upsilon-bank` with this mechanism"
            )));
        }
        for &t in &cfg.times {
            sols.push(smoluchowski::infinite_pop_weak_solution(t, &m, &cfg.lambdas, &bank)?);
        }
    } else {
        for &t in &cfg.times {
            sols.push(smoluchowski::mc_weak_solution(t, cfg.delta, &cfg.initial, &m, &cfg.lambdas, reps, streams)?);
        }
    }
    out.write("mc_weak.csv", |w| {
        writeln!(w, "t,replicate,value")?;
        for s in &sols {
            for (i, x) in s.samples.iter().enumerate() {
                writeln!(w, "{},{i},{x}", s.horizon)?;
            }
        }
        Ok(())
    })?;
    out.write("mc_weak_laplace.csv", |w| {
        writeln!(w, "t,lambda,mean,stderr")?;
        for s in &sols {
            for (l, e) in &s.estimates {
                writeln!(w, "{},{l},{},{}", s.horizon, e.mean, e.stderr)?;
            }
        }
        Ok(())
    })?;
    let mut checks = Vec::new();
    let law = cfg.initial;
    let grid = if m.is_feller() && cfg.delta > 0.0 {
        Some(smoluchowski::solve_with_error(&grid_spec(&cfg.lambdas), cfg.delta, 0.0, |l| law.laplace(l), &m, &cfg.times)?.1)
    } else {
        None
    };
    for s in &sols {
        for (l, e) in &s.estimates {
            let name = format!("laplace t={} lambda={l}", s.horizon);
            let check = match grid.as_ref().and_then(|g| g.iter().find(|p| p.t == s.horizon && p.lambda == *l)) {
                Some(p) => Check::within(&name, e.mean, p.u, 3.0 * e.stderr + p.error, Some(e.stderr))
                    .with_detail(format!("grid error {:.2e}", p.error)),
                None => Check::info(&name, e.mean, Some(e.stderr)),
            };
            checks.push(check);
        }
    }
    Ok((checks, json!({ "replicates": reps, "delta": cfg.delta })))
}

fn cpp_mark(cfg: &ExperimentConfig, streams: &Streams, out: &mut Out) -> Result<Outcome> {
    let m = cfg.mechanism()?;
    if cfg.delta == 0.0 {
        return Err(Error::Config("cpp-mark needs delta > 0; use `upsilon-bank` for the maximal marking".into()));
    }
    let reps = cfg.replicates_or(2_000, 10_000);
    // MK-V time s is CPP time delta + s.
    let cpp_times: Vec<f64> = cfg.times.iter().map(|s| cfg.delta + s).collect();
    let rows = cpp::mark_replicates(cfg.delta, &MarkInit::Law(cfg.initial), &m, &cpp_times, reps, streams)?;
    out.write("cpp_mark.csv", |w| {
        writeln!(w, "replicate,t,m0")?;
        for (i, r) in rows.iter().enumerate() {
            for (t, x) in cfg.times.iter().zip(r) {
                writeln!(w, "{i},{t},{x}")?;
            }
        }
        Ok(())
    })?;
    let mut checks = Vec::new();
    for (j, &t) in cfg.times.iter().enumerate() {
        let xs: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let e = mean_stderr(&xs)?;
        checks.push(Check::info(&format!("mean_m0 t={t}"), e.mean, Some(e.stderr)));
    }
    let mut summary = json!({ "replicates": reps, "delta": cfg.delta });
    if cfg.iterations > 0 {
        let horizon = *cfg.times.last().expect("validated");
        let ens = cpp::picard_mkv(
            &cfg.initial,
            cfg.delta,
            &m,
            horizon,
            reps.max(cpp::MIN_ENSEMBLE),
            cfg.iterations,
            &streams.derive("picard"),
        )?;
        let marks: Vec<f64> = rows.iter().map(|r| r[r.len() - 1]).collect();
        let ks = ks_two_sample(&ens.marginal(horizon), &marks)?;
        checks.push(
            Check::holds(&format!("picard_vs_cpp_ks t={horizon}"), !ks.rejected_at(0.01), ks.p_value, "KS p-value, level 0.01")
                .with_detail(format!("D={:.4}", ks.statistic)),
        );
        summary["w1_history"] = json!(ens.w1_history);
    }
    Ok((checks, summary))
}

fn upsilon_bank(cfg: &ExperimentConfig, streams: &Streams, out: &mut Out) -> Result<Outcome> {
    let m = cfg.mechanism()?;
    let reps = cfg.replicates_or(2_000, 10_000);
    let mc = MaximalConfig { tol_rel: cfg.tol, ..MaximalConfig::default() };
    let mk = cpp::maximal_marking_upsilon(&m, &mc, &[1.0], reps, streams)?;
    let bank = mk.upsilon()?;
    out.write(BANK_FILE, |w| cpp::write_bank(w, &bank))?;
    let e = mean_stderr(&bank)?;
    let phi1 = m.flow().flow(Mass::Infinite, 1.0)?;
    let levels = mk.levels.iter().sum::<usize>() as f64 / mk.levels.len().max(1) as f64;
    let checks = vec![
        Check::info("mean_upsilon", e.mean, Some(e.stderr)),
        Check::holds("growth_condition", bank.iter().all(|&y| y >= phi1), phi1, "every sample >= phi(1)"),
        Check::holds("flagged_rate", mk.flagged_rate() <= 0.01, mk.flagged_rate(), "replicates not converged in max_levels")
            .flag_if(mk.flagged_rate() > 0.01),
    ];
    let summary = json!({
        "rate": m.rate(),
        "gamma": m.exponent(),
        "samples": bank.len(),
        "flagged": mk.flagged,
        "mean_level": levels,
        "tol_rel": cfg.tol,
    });
    Ok((checks, summary))
}

fn profile_ode(cfg: &ExperimentConfig, out: &mut Out) -> Result<Outcome> {
    let m = cfg.mechanism()?;
    let sol = csbp::profile_solve(&m, cfg.x_max, cfg.ode_tol)?;
    out.write("profile.csv", |w| sol.write_csv(w))?;
    let k = (m.beta() / m.rate()).powf(m.beta());
    let excess = sol.x.iter().zip(&sol.h).map(|(x, h)| h - (-x * k).exp()).fold(f64::NEG_INFINITY, f64::max);
    let residual = sol.residuals().iter().map(|r| r.1.abs()).fold(0.0, f64::max);
    let mut checks = vec![
        Check::info("e_upsilon", sol.e_upsilon, None),
        Check::holds("exponential_bound", excess <= 1e-12, excess, "max of h(x) - exp(-x (beta/c)^beta)"),
        Check::holds("ode_residual", residual < RESIDUAL_FLOOR.max(10.0 * cfg.ode_tol), residual, "central differences on the output grid"),
    ];
    match read_bank(&cfg.out) {
        Ok((bank, bank_m)) if bank_m == m => {
            let e = mean_stderr(&bank)?;
            checks.push(Check::within("profile_vs_bank", e.mean, sol.e_upsilon, 3.0 * e.stderr, Some(e.stderr)));
        }
        Ok(_) => checks.push(Check::info("profile_vs_bank", f64::NAN, None).with_detail("bank mechanism differs; skipped")),
        Err(e) => checks.push(Check::info("profile_vs_bank", f64::NAN, None).with_detail(format!("skipped: {e}"))),
    }
    Ok((checks, sol.summary_json()))
}

/// Central differences of `h'` on the output grid are accurate to about `dx^2`.
const RESIDUAL_FLOOR: f64 = 1e-4;

fn dust(cfg: &ExperimentConfig, streams: &Streams, out: &mut Out) -> Result<Outcome> {
    let m = cfg.mechanism()?;
    let reps = cfg.replicates_or(500, 2_000);
    let rep = cpp::dust_solution(&cfg.initial, &cfg.deltas, &m, &cfg.times, reps, cfg.threshold, streams)?;
    out.write("dust.csv", |w| rep.write_csv(w))?;
    let zeros: usize = rep.rows.iter().map(|r| r.zeros).sum();
    let exceed: Vec<f64> = rep.rows.iter().map(|r| r.exceed).collect();
    let monotone = exceed.windows(2).all(|w| w[0] <= w[1]);
    let (mean_env, rate_env) = rep.envelopes_holding();
    let mut checks = vec![
        Check::holds("no_exact_zeros", zeros == 0, zeros as f64, "samples with m0 = 0"),
        Check::holds("exceedance_monotone", monotone, exceed[0], format!("P(m0 > {}) over times {:?}", cfg.threshold, exceed)),
        Check::info("upper_envelope_mean_t_holds", f64::from(u8::from(mean_env)), None),
        Check::info("upper_envelope_rate_t_holds", f64::from(u8::from(rate_env)), None),
    ];
    for r in &rep.rows {
        checks.push(Check::info(&format!("mean_m0 t={}", r.t), r.mean.mean, Some(r.mean.stderr)));
    }
    Ok((checks, serde_json::to_value(&rep.rows)?))
}

fn speed_cdi(cfg: &ExperimentConfig, streams: &Streams, out: &mut Out) -> Result<Outcome> {
    let (bank, bank_m) = read_bank(&cfg.out)?;
    if !bank_m.is_feller() {
        return Err(Error::Config("the speed target needs a bank with gamma = 2".into()));
    }
    // E(Upsilon) scales as 1/rate in the Feller case.
    let target_m = cfg.coalescent_mechanism()?;
    let e_upsilon = mean_stderr(&bank)?.mean * bank_m.rate() / target_m.rate();
    let reps = cfg.replicates_or(20, 100);
    let proxies: Vec<(&str, EntranceProxy)> = match cfg.init {
        InitMode::Kcap => vec![("kcap", EntranceProxy::maximal(cfg.n, cfg.gene_rate, cfg.times[0])?)],
        InitMode::Minimal => vec![
            ("minimal_lossless", EntranceProxy::minimal(cfg.n, WarmGenes::Lossless)?),
            ("minimal_pooled", EntranceProxy::minimal(cfg.n, WarmGenes::Pooled)?),
        ],
    };
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (name, proxy) in &proxies {
        for &t in &cfg.times {
            let s = streams.derive(&format!("{name}/{t}"));
            let e = coalescent::cdi_speed_estimate(cfg.n, t, cfg.gene_rate, proxy, Engine::FAST_LAZY, reps, &s)?;
            let target = 2.0 * e_upsilon / (t * t);
            checks.push(Check::within(&format!("speed {name} t={t}"), e.mean, target, 0.1 * target, Some(e.stderr)));
            rows.push((name.to_string(), t, e, target));
        }
    }
    out.write("speed_cdi.csv", |w| {
        writeln!(w, "init,t,mean,stderr,target")?;
        for (name, t, e, target) in &rows {
            writeln!(w, "{name},{t},{},{},{target}", e.mean, e.stderr)?;
        }
        Ok(())
    })?;
    Ok((checks, json!({ "n": cfg.n, "gene_rate": cfg.gene_rate, "e_upsilon": e_upsilon, "replicates": reps })))
}
