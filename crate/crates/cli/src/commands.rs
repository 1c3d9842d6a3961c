use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use msfv_core::fvm::{self, BoundarySpec, FluxField};
use msfv_core::grf::Sampler;
use msfv_core::grid::{extract_patch, CoarseLayout, PermField};
use msfv_core::io::{write_field, Container, FieldHeader};
use msfv_core::msfv::{run_msfv, LocalSolver};
use msfv_core::nn::{self, MlpModel};
use msfv_core::surrogate::{self, run_hybrid};
use msfv_core::transport::{advect, breakthrough_time, total_production, ConcentrationHistory};
use msfv_core::tuner;
use msfv_core::uq::{self, CampaignConfig, Method};

use crate::config::{write_manifest, Config};
use crate::{CliError, MethodArg};

struct Ctx {
    cfg: Config,
    layout: CoarseLayout,
    out: PathBuf,
    hash: String,
}

fn prepare(config_path: &Path) -> Result<Ctx, CliError> {
    let cfg = Config::load(config_path)?;
    let layout = cfg.layout()?;
    let out = cfg.out_dir();
    let hash = write_manifest(&cfg, config_path, &out)?;
    Ok(Ctx { cfg, layout, out, hash })
}

impl Ctx {
    fn sampler(&self) -> Result<Sampler, CliError> {
        Ok(Sampler::new(self.cfg.grf_spec()?, &self.layout.grid)?)
    }

    fn bc(&self) -> Result<BoundarySpec, CliError> {
        Ok(self.cfg.problem()?.boundary_spec(&self.layout.grid))
    }

    fn field(&self, sampler: &Sampler, realization: usize) -> Result<PermField, CliError> {
        Ok(sampler.sample_field(
            &self.layout.grid,
            self.cfg.campaign.master_seed,
            realization as u64,
        )?)
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        let text = format!("# manifest={}\n{body}", self.hash);
        std::fs::write(&path, text)?;
        Ok(path)
    }

    fn model_path(&self, flag: Option<&Path>, default_name: &str) -> PathBuf {
        flag.map(Path::to_path_buf).unwrap_or_else(|| self.out.join(default_name))
    }

    fn load_model(&self, flag: Option<&Path>, default_name: &str) -> Result<MlpModel, CliError> {
        let path = self.model_path(flag, default_name);
        MlpModel::load(&path)
            .map_err(|e| CliError::config(format!("model {}: {e}", path.display())))
    }
}

pub fn grf_gen(config_path: &Path, count: Option<usize>) -> Result<(), CliError> {
    let ctx = prepare(config_path)?;
    let count = count.unwrap_or(ctx.cfg.campaign.n_realizations);
    let sampler = ctx.sampler()?;
    let dir = ctx.out.join("fields");
    std::fs::create_dir_all(&dir)?;
    let grid = &ctx.layout.grid;
    let t0 = Instant::now();
    for r in 0..count {
        let perm = ctx.field(&sampler, r)?;
        let header = FieldHeader {
            nx: grid.nx,
            ny: grid.ny,
            lx: grid.lx,
            ly: grid.ly,
            kind: "log-perm".into(),
            provenance: format!(
                "manifest:{} master_seed:{} realization:{r}",
                ctx.hash, ctx.cfg.campaign.master_seed
            ),
        };
        write_field(&dir.join(format!("field_{r:04}.bin")), &header, &perm.log_values)?;
    }
    println!(
        "wrote {count} log-permeability fields to {} in {:.2?}",
        dir.display(),
        t0.elapsed()
    );
    Ok(())
}

pub fn harvest(config_path: &Path) -> Result<(), CliError> {
    let ctx = prepare(config_path)?;
    let m = ctx.cfg.campaign.n_training;
    if m == 0 {
        return Err(CliError::config("campaign.n_training is 0, nothing to harvest"));
    }
    let sampler = ctx.sampler()?;
    let bc = ctx.bc()?;
    let perms = sampler.sample_fields(&ctx.layout.grid, ctx.cfg.campaign.master_seed, m)?;
    let t0 = Instant::now();
    let (ds, report) = surrogate::harvest(&perms, &ctx.layout, &bc)?;
    for (r, msg) in &report.failed {
        eprintln!("realization {r} failed: {msg}");
    }
    if report.succeeded == 0 {
        return Err(CliError::numerical("every training realization failed"));
    }
    let path = ctx.out.join("dataset.bin");
    ds.save_with_provenance(&path, &format!("manifest:{}", ctx.hash))?;
    println!(
        "harvested {} records from {}/{m} realizations into {} in {:.2?}",
        ds.len(),
        report.succeeded,
        path.display(),
        t0.elapsed()
    );
    Ok(())
}

pub fn train(config_path: &Path, dataset: Option<&Path>) -> Result<(), CliError> {
    let ctx = prepare(config_path)?;
    let ds_path = dataset.map(Path::to_path_buf).unwrap_or_else(|| ctx.out.join("dataset.bin"));
    let ds = surrogate::Dataset::load(&ds_path)
        .map_err(|e| CliError::config(format!("dataset {}: {e}", ds_path.display())))?;
    let split = ds.split(ctx.cfg.campaign.validation_fraction)?;
    let mut mlp = ctx.cfg.mlp_config();
    mlp.input_dim = ds.patch_dim;
    mlp.output_dim = ds.patch_dim;
    let tc = ctx.cfg.train_config();
    let t0 = Instant::now();
    let (model, report) =
        nn::train(split.x_train, split.y_train, split.x_val, split.y_val, &mlp, &tc)?;
    let model_path = ctx.out.join("model.bin");
    model.save_with_provenance(&model_path, &format!("manifest:{}", ctx.hash))?;

    let mut history = String::from("epoch,train_cost,val_cost\n");
    for (e, (tj, vj)) in report.train_cost.iter().zip(&report.val_cost).enumerate() {
        let _ = writeln!(history, "{e},{tj},{vj}");
    }
    ctx.write_csv("train_history.csv", &history)?;
    println!(
        "trained {} epochs (best {}), validation cost {:.4e}, R2 {:.4}, saved {} in {:.1?}",
        report.stopped_epoch,
        report.best_epoch,
        report.best_val_cost,
        report.final_r2,
        model_path.display(),
        t0.elapsed()
    );
    Ok(())
}

pub fn tune(config_path: &Path, dataset: Option<&Path>) -> Result<(), CliError> {
    let ctx = prepare(config_path)?;
    let ds_path = dataset.map(Path::to_path_buf).unwrap_or_else(|| ctx.out.join("dataset.bin"));
    let ds = surrogate::Dataset::load(&ds_path)
        .map_err(|e| CliError::config(format!("dataset {}: {e}", ds_path.display())))?;
    let split = ds.split(ctx.cfg.campaign.validation_fraction)?;
    let mut base = ctx.cfg.mlp_config();
    base.input_dim = ds.patch_dim;
    base.output_dim = ds.patch_dim;
    let schedule = ctx.cfg.train_config();
    let space = ctx.cfg.search_space();
    let t0 = Instant::now();
    let outcome = tuner::tune(
        split.x_train,
        split.y_train,
        split.x_val,
        split.y_val,
        &base,
        &schedule,
        &space,
        ctx.cfg.tune.budget,
        ctx.cfg.tune.seed,
    )?;
    for (trial, msg) in &outcome.failures {
        eprintln!("trial {trial} failed: {msg}");
    }
    ctx.write_csv("trials.csv", &tuner::trials_to_csv(&outcome.trials))?;
    let model_path = ctx.out.join("model_tuned.bin");
    outcome.model.save_with_provenance(&model_path, &format!("manifest:{}", ctx.hash))?;
    println!(
        "best trial {}: dropout {:.4}, learning rate {:.3e}, validation R2 {:.4}; saved {} in {:.1?}",
        outcome.best.trial,
        outcome.best.dropout_rate,
        outcome.best.learning_rate,
        outcome.best.val_r2,
        model_path.display(),
        t0.elapsed()
    );
    Ok(())
}

fn solve_method(
    ctx: &Ctx,
    method: MethodArg,
    perm: &PermField,
    bc: &BoundarySpec,
    model_flag: Option<&Path>,
) -> Result<(Vec<f64>, FluxField), CliError> {
    let grid = &ctx.layout.grid;
    match method {
        MethodArg::Ref => {
            let p = fvm::solve_fine(perm, grid, bc)?;
            let flux = fvm::darcy_velocity(&p, perm, grid, bc)?;
            Ok((p.values, flux))
        }
        MethodArg::Msfv => {
            let run = run_msfv(perm, &ctx.layout, bc)?;
            Ok((run.pressure.values, run.flux))
        }
        MethodArg::Hybrid => {
            let model = ctx.load_model(model_flag, "model.bin")?;
            let run = run_hybrid(perm, &ctx.layout, bc, &model, ctx.cfg.campaign.enforce_deltas)?;
            Ok((run.pressure.values, run.flux))
        }
    }
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Ref => "ref",
        MethodArg::Msfv => "msfv",
        MethodArg::Hybrid => "hybrid",
    }
}

pub fn run(
    config_path: &Path,
    method: MethodArg,
    realization: usize,
    model: Option<&Path>,
) -> Result<(), CliError> {
    let ctx = prepare(config_path)?;
    let sampler = ctx.sampler()?;
    let bc = ctx.bc()?;
    let perm = ctx.field(&sampler, realization)?;
    let t0 = Instant::now();
    let (pressure, _flux) = solve_method(&ctx, method, &perm, &bc, model)?;
    let elapsed = t0.elapsed();
    let grid = &ctx.layout.grid;
    let header = FieldHeader {
        nx: grid.nx,
        ny: grid.ny,
        lx: grid.lx,
        ly: grid.ly,
        kind: "pressure".into(),
        provenance: format!(
            "manifest:{} method:{} realization:{realization}",
            ctx.hash,
            method_name(method)
        ),
    };
    let path = ctx.out.join(format!("pressure_{}_{realization:04}.bin", method_name(method)));
    write_field(&path, &header, &pressure)?;
    let (lo, hi) = pressure
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!(
        "{} pressure for realization {realization}: range [{lo:.4}, {hi:.4}], wrote {} in {elapsed:.2?}",
        method_name(method),
        path.display()
    );
    Ok(())
}

fn history_csv(h: &ConcentrationHistory) -> String {
    let mut s = String::from("t_flow,t_pvi,producer_conc,cumulative_q\n");
    for k in 0..h.probe_time.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            h.probe_time[k], h.probe_pvi[k], h.probe_conc[k], h.produced[k]
        );
    }
    s
}

pub fn transport(
    config_path: &Path,
    method: MethodArg,
    realization: usize,
    model: Option<&Path>,
    snapshots: bool,
) -> Result<(), CliError> {
    let ctx = prepare(config_path)?;
    let sampler = ctx.sampler()?;
    let bc = ctx.bc()?;
    let perm = ctx.field(&sampler, realization)?;
    let (_, flux) = solve_method(&ctx, method, &perm, &bc, model)?;
    let t0 = Instant::now();
    let history = advect(&flux, &ctx.layout.grid, &bc, &ctx.cfg.transport_config())?;
    let name = format!("transport_{}_{realization:04}", method_name(method));
    let csv_path = ctx.write_csv(&format!("{name}.csv"), &history_csv(&history))?;
    if snapshots {
        let mut c = Container::new("msfv-snapshots");
        c.set("provenance", &format!("manifest:{}", ctx.hash));
        c.set("n_snapshots", history.snapshots.len());
        c.add_section("times", history.snapshot_time.clone());
        for (s, snap) in history.snapshots.iter().enumerate() {
            c.add_section(&format!("snap_{s:04}"), snap.clone());
        }
        c.write(&ctx.out.join(format!("{name}.bin")))?;
    }
    println!(
        "{}: breakthrough {:.4} PVI, produced {:.4}, {} steps, wrote {} in {:.2?}",
        method_name(method),
        breakthrough_time(&history),
        total_production(&history),
        history.probe_time.len() - 1,
        csv_path.display(),
        t0.elapsed()
    );
    if history.nonmonotone_probe {
        eprintln!("note: producer concentration was not monotone");
    }
    Ok(())
}

fn campaign_config(ctx: &Ctx) -> Result<CampaignConfig, CliError> {
    Ok(CampaignConfig {
        problem: ctx.cfg.problem()?,
        grf: ctx.cfg.grf_spec()?,
        n_realizations: ctx.cfg.campaign.n_realizations,
        n_training: ctx.cfg.campaign.n_training,
        master_seed: ctx.cfg.campaign.master_seed,
        mlp: ctx.cfg.mlp_config(),
        train: ctx.cfg.train_config(),
        transport: ctx.cfg.transport_config(),
        validation_fraction: ctx.cfg.campaign.validation_fraction,
        enforce_deltas: ctx.cfg.campaign.enforce_deltas,
    })
}

fn wide_summary(summary: &[uq::SummaryRow]) -> String {
    let metrics =
        ["e_p", "e_v", "e_c", "p_point", "q_total", "t_breakthrough"];
    let mut s = String::from("method,subset,realizations");
    for m in metrics {
        let _ = write!(s, ",{m}_mean,{m}_std");
    }
    s.push('\n');
    let mut keys: Vec<(Method, &str)> = Vec::new();
    for r in summary {
        if !keys.contains(&(r.method, r.subset)) {
            keys.push((r.method, r.subset));
        }
    }
    for (method, subset) in keys {
        let find = |metric: &str| {
            summary
                .iter()
                .find(|r| r.method == method && r.subset == subset && r.metric == metric)
        };
        let count = metrics.iter().filter_map(|m| find(m)).map(|r| r.count).max().unwrap_or(0);
        let _ = write!(s, "{},{subset},{count}", method.label());
        for m in metrics {
            match find(m) {
                Some(r) => {
                    let _ = write!(s, ",{},{}", r.mean, r.std);
                }
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    s
}

pub fn uq_report(config_path: &Path, model: Option<&Path>) -> Result<(), CliError> {
    let ctx = prepare(config_path)?;
    let pretrained = match model {
        Some(p) => Some(
            MlpModel::load(p).map_err(|e| CliError::config(format!("model {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let campaign = campaign_config(&ctx)?;
    let t0 = Instant::now();
    let outcome = uq::run_campaign(&ctx.layout, &campaign, pretrained.as_ref())?;
    let elapsed = t0.elapsed();

    ctx.write_csv("rows.csv", &uq::rows_to_csv(&outcome.rows))?;
    let summary = uq::summarize(&outcome.rows, campaign.n_training);
    ctx.write_csv("summary.csv", &uq::summary_to_csv(&summary))?;
    ctx.write_csv("summary_table.csv", &wide_summary(&summary))?;

    let mut failures_csv = String::from("realization,message\n");
    for (r, msg) in &outcome.failures {
        let _ = writeln!(failures_csv, "{r},{}", msg.replace(',', ";"));
    }
    ctx.write_csv("failures.csv", &failures_csv)?;

    for method in [Method::Reference, Method::Msfv, Method::MsfvNn] {
        for (metric, pick) in [
            ("p_point", 0usize),
            ("q_total", 1),
            ("t_breakthrough", 2),
        ] {
            let values: Vec<f64> = outcome
                .rows
                .iter()
                .filter(|r| r.method == method)
                .map(|r| [r.p_point, r.q_total, r.t_breakthrough][pick])
                .filter(|v| v.is_finite())
                .collect();
            if values.is_empty() {
                continue;
            }
            let hist = uq::histogram(&values, ctx.cfg.output.histogram_bins)?;
            ctx.write_csv(
                &format!("hist_{}_{metric}.csv", method.label()),
                &uq::histogram_to_csv(&hist),
            )?;
        }
    }

    if let Some(report) = &outcome.train_report {
        println!(
            "trained {} epochs (best {}), validation R2 {:.4}",
            report.stopped_epoch, report.best_epoch, report.final_r2
        );
    }
    print!("{}", wide_summary(&summary));
    println!(
        "campaign: {} realizations, {} rows, {} failures, {elapsed:.1?}, reports in {}",
        campaign.n_realizations,
        outcome.rows.len(),
        outcome.failures.len(),
        ctx.out.display()
    );
    if !outcome.failures.is_empty() {
        return Err(CliError::numerical(format!(
            "{} realizations failed; see failures.csv",
            outcome.failures.len()
        )));
    }
    Ok(())
}

pub fn bench_basis(config_path: &Path, count: usize, model: Option<&Path>) -> Result<(), CliError> {
    let ctx = prepare(config_path)?;
    println!("mode,total_seconds,per_basis_us");
    if count == 0 {
        ctx.write_csv("bench.csv", "mode,total_seconds,per_basis_us\n")?;
        return Ok(());
    }
    let model = ctx.load_model(model, "model.bin")?;
    let layout = &ctx.layout;
    let interior = layout.interior_nodes();
    if interior.is_empty() {
        return Err(CliError::config("layout has no interior nodes to benchmark"));
    }
    let dim = model.config.input_dim;
    let (wx, wy) = layout.window_dims();
    if dim != wx * wy {
        return Err(CliError::config(format!(
            "model expects {dim} inputs but the layout patch is {wx}x{wy}"
        )));
    }
    let sampler = ctx.sampler()?;
    let bc = ctx.bc()?;
    let n_fields = count.div_ceil(interior.len());

    // everything shared (edge solves, factorizations, patches) is built
    // up front; the timed loops below do only per-basis work
    let mut solvers = Vec::with_capacity(n_fields);
    let mut patches = Vec::with_capacity(count * dim);
    let mut work: Vec<(usize, usize)> = Vec::with_capacity(count);
    for f in 0..n_fields {
        let perm = ctx.field(&sampler, f)?;
        for &k in &interior {
            if work.len() == count {
                break;
            }
            patches.extend(extract_patch(&perm, layout, k)?);
            work.push((f, k));
        }
        solvers.push(LocalSolver::new(&perm, layout, &bc)?);
    }

    let t0 = Instant::now();
    for &(f, k) in &work {
        std::hint::black_box(solvers[f].solve_basis_interiors(layout, k));
    }
    let direct = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    for chunk in patches.chunks_exact(dim) {
        std::hint::black_box(model.predict(chunk)?);
    }
    let per_patch = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    std::hint::black_box(model.predict(&patches)?);
    let batched = t0.elapsed().as_secs_f64();

    let mut csv = String::from("mode,total_seconds,per_basis_us\n");
    for (mode, secs) in
        [("direct", direct), ("nn-per-patch", per_patch), ("nn-batched", batched)]
    {
        let line = format!("{mode},{secs:.6},{:.3}", secs / count as f64 * 1e6);
        println!("{line}");
        let _ = writeln!(csv, "{line}");
    }
    println!(
        "single-threaded, {count} basis functions; batched speedup over direct: {:.1}x",
        direct / batched
    );
    ctx.write_csv("bench.csv", &csv)?;
    Ok(())
}
