// End-to-end acceptance suite. Rebuilds the headline experiments (predictor
// quality, tuning uplift, ensemble error statistics, QoI agreement, speedup)
// and the exactness/conservation/determinism properties, printing one
// PASS/FAIL line per criterion and asserting at the end so every line is
// visible even when one fails. Trains networks and runs thousand-realization
// campaigns: expect a few hours on one core.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use msfv_core::fvm::{darcy_velocity, solve_fine, BoundarySpec};
use msfv_core::grf::{GrfSpec, Sampler};
use msfv_core::grid::{build_coarse_layout, extract_patch, CoarseLayout, FineGrid, PermField};
use msfv_core::msfv::{hybrid_basis_set, run_msfv, solve_basis_set, LocalSolver};
use msfv_core::nn::{
    r2_score, train, AdamParams, AdamState, Gradients, MlpConfig, MlpModel, Mode, TrainConfig,
};
use msfv_core::surrogate::{harvest, run_hybrid, InteriorBasisProvider, OracleProvider};
use msfv_core::transport::{advect, TransportConfig};
use msfv_core::tuner::{tune, SearchSpace};
use msfv_core::uq::{
    area_weighted_norm, histogram_to_csv, rows_to_csv, run_campaign, summarize, summary_to_csv,
    CampaignConfig, Method, Problem, SummaryRow,
};

const FIELD_SEED: u64 = 12345;
const TRAIN_SEEDS: [u64; 3] = [13, 17, 23];
const R2_TARGETS: [(f64, f64); 3] = [(0.1, 0.90), (0.2, 0.92), (0.4, 0.93)];

/// Schedule used for every acceptance training run. The batch size and
/// horizon differ from the all-defaults TrainConfig: full-batch Adam at
/// lr 1e-3 needs ~40k epochs to converge on this problem, mini-batches of
/// 128 reach the same validation cost in a fraction of the wall time.
fn accept_schedule(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: Some(128),
        learning_rate: 3e-3,
        patience: 400,
        max_epochs: 10000,
        seed,
        ..Default::default()
    }
}

fn accept_mlp(patch_dim: usize, init_seed: u64) -> MlpConfig {
    MlpConfig {
        input_dim: patch_dim,
        hidden_dim: 1024,
        output_dim: patch_dim,
        use_batchnorm: false,
        dropout_rate: 0.05,
        max_norm: Some(4.0),
        init_seed,
    }
}

struct Tally {
    results: Vec<(usize, bool)>,
}

impl Tally {
    fn new() -> Self {
        Tally { results: Vec::new() }
    }

    fn record(&mut self, n: usize, pass: bool, detail: &str) {
        println!("ACCEPTANCE {n}: {} - {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((n, pass));
    }
}

fn paper_layout() -> CoarseLayout {
    let grid = FineGrid::unit(81, 81).unwrap();
    build_coarse_layout(grid, 9, 9).unwrap()
}

fn stat<'a>(
    summary: &'a [SummaryRow],
    method: Method,
    metric: &str,
) -> &'a SummaryRow {
    summary
        .iter()
        .find(|r| r.method == method && r.subset == "all" && r.metric == metric)
        .unwrap_or_else(|| panic!("missing summary row {method:?}/{metric}"))
}

#[test]
fn acceptance_criteria() {
    let mut tally = Tally::new();
    let layout = paper_layout();
    let grid = layout.grid;
    let bc_q5 = BoundarySpec::quarter_five(&grid);

    // ---- Criterion 1: predictor quality over three correlation lengths ----
    // Also keeps the best model per L for the campaigns and the speedup test.
    let mut per_l_models: Vec<(f64, MlpModel)> = Vec::new();
    let mut per_l_avg: Vec<f64> = Vec::new();
    let mut c1_pass = true;
    let mut c1_detail = String::new();
    let mut l01_split_sizes = (0usize, 0usize);
    for (corr_len, threshold) in R2_TARGETS {
        let t0 = Instant::now();
        let sampler = Sampler::new(GrfSpec::new(1.0, corr_len).unwrap(), &grid).unwrap();
        let perms = sampler.sample_fields(&grid, FIELD_SEED, 20).unwrap();
        drop(sampler);
        let (ds, hr) = harvest(&perms, &layout, &bc_q5).unwrap();
        assert!(hr.failed.is_empty(), "harvest failures at L={corr_len}: {:?}", hr.failed);
        let split = ds.split(0.2).unwrap();
        if corr_len == 0.1 {
            l01_split_sizes = (split.x_train.len() / ds.patch_dim, split.x_val.len() / ds.patch_dim);
        }
        let mut scores = Vec::new();
        let mut best: Option<(f64, MlpModel)> = None;
        for seed in TRAIN_SEEDS {
            let cfg = accept_mlp(ds.patch_dim, seed);
            let (model, rep) = train(
                split.x_train,
                split.y_train,
                split.x_val,
                split.y_val,
                &cfg,
                &accept_schedule(seed),
            )
            .unwrap();
            eprintln!(
                "[accept] L={corr_len} seed {seed}: R2 {:.4} (epoch {}, best {})",
                rep.final_r2, rep.stopped_epoch, rep.best_epoch
            );
            scores.push(rep.final_r2);
            if best.as_ref().map_or(true, |(r, _)| rep.final_r2 > *r) {
                best = Some((rep.final_r2, model));
            }
        }
        let avg = scores.iter().sum::<f64>() / scores.len() as f64;
        per_l_avg.push(avg);
        per_l_models.push((corr_len, best.unwrap().1));
        c1_pass &= avg >= threshold;
        let _ = write!(c1_detail, "L={corr_len}: avg R2 {avg:.4} (need {threshold}); ");
        eprintln!("[accept] L={corr_len} done in {:.0?}", t0.elapsed());
    }
    let _ = write!(
        c1_detail,
        "split {}/{}, 3 seeds each",
        l01_split_sizes.0, l01_split_sizes.1
    );
    tally.record(1, c1_pass, &c1_detail);

    // ---- Criterion 2: random-search tuning uplift at L=0.1 ----
    {
        let t0 = Instant::now();
        let sampler = Sampler::new(GrfSpec::new(1.0, 0.1).unwrap(), &grid).unwrap();
        let perms = sampler.sample_fields(&grid, FIELD_SEED, 20).unwrap();
        drop(sampler);
        let (ds, _) = harvest(&perms, &layout, &bc_q5).unwrap();
        let split = ds.split(0.2).unwrap();
        let base = accept_mlp(ds.patch_dim, 7);
        let outcome = tune(
            split.x_train,
            split.y_train,
            split.x_val,
            split.y_val,
            &base,
            &accept_schedule(13),
            &SearchSpace::default(),
            20,
            21,
        )
        .unwrap();
        let baseline = per_l_avg[0];
        let best = outcome.best.val_r2;
        let pass = best >= 0.94 && best >= baseline;
        tally.record(
            2,
            pass,
            &format!(
                "best of 20 trials R2 {best:.4} (need 0.94) vs untuned baseline {baseline:.4}, \
                 dropout {:.3}, lr {:.2e}, {} failed trials, {:.0?}",
                outcome.best.dropout_rate,
                outcome.best.learning_rate,
                outcome.failures.len(),
                t0.elapsed()
            ),
        );
    }

    // ---- Criteria 3 and 4: ensemble campaigns ----
    // Models come pretrained from criterion 1 (separate field seed), so the
    // predictor deploys on every campaign realization, matching the
    // published protocol of disjoint training fields.
    let campaign_cfg = |problem: Problem, corr_len: f64, m: usize, seed: u64| CampaignConfig {
        problem,
        grf: GrfSpec::new(1.0, corr_len).unwrap(),
        n_realizations: m,
        n_training: 0,
        master_seed: seed,
        mlp: accept_mlp(361, 7),
        train: accept_schedule(13),
        transport: TransportConfig::default(),
        validation_fraction: 0.2,
        enforce_deltas: true,
    };
    let mut summaries: Vec<(Problem, f64, Vec<SummaryRow>)> = Vec::new();
    for (li, (corr_len, model)) in per_l_models.iter().enumerate() {
        let m = if *corr_len == 0.1 { 1000 } else { 300 };
        for (pi, problem) in [Problem::QuarterFive, Problem::UniformFlow].into_iter().enumerate() {
            let t0 = Instant::now();
            let cfg = campaign_cfg(problem, *corr_len, m, 770_000 + 10 * li as u64 + pi as u64);
            let out = run_campaign(&layout, &cfg, Some(model)).unwrap();
            assert!(
                out.failures.is_empty(),
                "campaign failures {problem:?} L={corr_len}: {:?}",
                out.failures
            );
            eprintln!(
                "[accept] campaign {} L={corr_len} M={m}: {} rows in {:.0?}",
                problem.label(),
                out.rows.len(),
                t0.elapsed()
            );
            summaries.push((problem, *corr_len, summarize(&out.rows, 0)));
        }
    }
    let find = |problem: Problem, corr_len: f64| {
        &summaries
            .iter()
            .find(|(p, l, _)| *p == problem && *l == corr_len)
            .unwrap()
            .2
    };
    {
        let q5 = find(Problem::QuarterFive, 0.1);
        let uni = find(Problem::UniformFlow, 0.1);
        let ep_ms = stat(q5, Method::Msfv, "e_p").mean;
        let mut ratios = String::new();
        let mut pass = (0.03..=0.08).contains(&ep_ms);
        for metric in ["e_p", "e_v", "e_c"] {
            let ms = stat(q5, Method::Msfv, metric).mean;
            let nn = stat(q5, Method::MsfvNn, metric).mean;
            let ratio = nn / ms;
            pass &= ratio <= 1.3;
            let _ = write!(ratios, "{metric} {nn:.4}/{ms:.4}={ratio:.3}; ");
        }
        let ep_uni = stat(uni, Method::Msfv, "e_p").mean;
        pass &= (0.015..=0.06).contains(&ep_uni);
        tally.record(
            3,
            pass,
            &format!(
                "quarter-five e_p(msfv) {ep_ms:.4} in [0.03,0.08], ratios (need <=1.3): \
                 {ratios}uniform e_p(msfv) {ep_uni:.4} in [0.015,0.06]"
            ),
        );
    }
    {
        // Reference means of the L=0.1 ensembles must land near the published
        // values; NN-vs-MsFV mean gaps stay within half an MsFV std for every
        // QoI, problem and correlation length.
        let published = [
            (Problem::QuarterFive, [("p_point", 0.5283), ("q_total", 0.1910), ("t_breakthrough", 0.4488)]),
            (Problem::UniformFlow, [("p_point", 0.2724), ("q_total", 0.2339), ("t_breakthrough", 0.7460)]),
        ];
        let mut pass = true;
        let mut detail = String::new();
        for (problem, rows) in published {
            let s = find(problem, 0.1);
            for (metric, want) in rows {
                let got = stat(s, Method::Reference, metric).mean;
                let ok = (got - want).abs() <= 0.20 * want;
                pass &= ok;
                if !ok {
                    let _ = write!(detail, "{} {metric} ref {got:.4} vs {want:.4}; ", problem.label());
                }
            }
        }
        let mut worst: (f64, String) = (0.0, String::new());
        for (problem, corr_len, s) in &summaries {
            for metric in ["p_point", "q_total", "t_breakthrough"] {
                let ms = stat(s, Method::Msfv, metric);
                let nn = stat(s, Method::MsfvNn, metric);
                let gap = (nn.mean - ms.mean).abs();
                let bound = 0.5 * ms.std;
                pass &= gap <= bound;
                let severity = if bound > 0.0 { gap / bound } else { f64::INFINITY };
                if severity > worst.0 {
                    worst = (
                        severity,
                        format!("{} L={corr_len} {metric} gap {gap:.2e} bound {bound:.2e}", problem.label()),
                    );
                }
            }
        }
        if detail.is_empty() {
            detail = "reference means within 20% of published".into();
        }
        tally.record(
            4,
            pass,
            &format!("{detail}; worst mean gap {} ({:.2} of bound)", worst.1, worst.0),
        );
    }

    // ---- Criterion 5: basis generation speedup ----
    {
        let sampler = Sampler::new(GrfSpec::new(1.0, 0.1).unwrap(), &grid).unwrap();
        let fields = sampler.sample_fields(&grid, 990_017, 21).unwrap();
        drop(sampler);
        let interior = layout.interior_nodes();
        let n_bases = fields.len() * interior.len();
        let model = &per_l_models[0].1;

        let patches: Vec<f64> = fields
            .iter()
            .flat_map(|f| {
                interior.iter().flat_map(|&k| extract_patch(f, &layout, k).unwrap())
            })
            .collect();

        // Direct route: everything a fresh field needs (edge problems, dual
        // factorizations, interior solves). The network route gets the same
        // ensemble as one batched prediction.
        let t0 = Instant::now();
        for f in &fields {
            let solver = LocalSolver::new(f, &layout, &bc_q5).unwrap();
            for &k in &interior {
                black_box(solver.solve_basis_interiors(&layout, k));
            }
        }
        let direct = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        black_box(model.predict(&patches).unwrap());
        let batched = t0.elapsed().as_secs_f64();

        let speedup = direct / batched;
        tally.record(
            5,
            speedup >= 3.0,
            &format!(
                "{n_bases} bases: direct {direct:.3}s, batched prediction {batched:.3}s, \
                 speedup {speedup:.1}x (need >=3)"
            ),
        );
    }

    run_property_criteria(&mut tally, &layout, &per_l_models[0].1);

    let failed: Vec<usize> =
        tally.results.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "acceptance criteria failed: {failed:?}");
}

/// Criteria 6 through 12 in order. Split out so the ignored quick test below
/// can run them without the training and campaign stages.
fn run_property_criteria(tally: &mut Tally, layout: &CoarseLayout, model: &MlpModel) {
    let (pass, detail) = criterion_6(layout);
    tally.record(6, pass, &detail);
    let (pass, detail) = criterion_7(layout, model);
    tally.record(7, pass, &detail);
    let (pass, detail) = criterion_8();
    tally.record(8, pass, &detail);
    let (pass, detail) = criterion_9(layout);
    tally.record(9, pass, &detail);
    let (pass, detail) = criterion_10();
    tally.record(10, pass, &detail);
    let (pass, detail) = criterion_11();
    tally.record(11, pass, &detail);
    let (pass, detail) = criterion_12();
    tally.record(12, pass, &detail);
}

/// The exactness, conservation, oracle and determinism criteria alone, with a
/// briefly trained throwaway model standing in for criterion 7's predictor.
/// The delta and partition repairs it exercises hold for any model. Runs in
/// minutes where the full suite takes hours.
#[test]
#[ignore]
fn property_criteria_quick() {
    let layout = paper_layout();
    let grid = layout.grid;
    let bc = BoundarySpec::quarter_five(&grid);
    let sampler = Sampler::new(GrfSpec::new(1.0, 0.2).unwrap(), &grid).unwrap();
    let perms = sampler.sample_fields(&grid, FIELD_SEED, 5).unwrap();
    drop(sampler);
    let (ds, _) = harvest(&perms, &layout, &bc).unwrap();
    let split = ds.split(0.2).unwrap();
    let cfg = MlpConfig { hidden_dim: 32, ..accept_mlp(ds.patch_dim, 7) };
    let schedule = TrainConfig { max_epochs: 40, patience: 15, seed: 13, ..Default::default() };
    let (model, _) =
        train(split.x_train, split.y_train, split.x_val, split.y_val, &cfg, &schedule).unwrap();

    let mut tally = Tally::new();
    run_property_criteria(&mut tally, &layout, &model);
    let failed: Vec<usize> =
        tally.results.iter().filter(|(_, p)| !p).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "property criteria failed: {failed:?}");
}

/// Homogeneous permeability: the multiscale solution matches the fine solve
/// and every basis collapses to a tensor product of hat functions.
fn criterion_6(layout: &CoarseLayout) -> (bool, String) {
    let grid = layout.grid;
    {
        let perm = PermField::constant(1.0, &grid).unwrap();
        let bc = BoundarySpec::uniform_flow(&grid);
        let fine = solve_fine(&perm, &grid, &bc).unwrap();
        let ms = run_msfv(&perm, layout, &bc).unwrap();
        let dp = fine
            .values
            .iter()
            .zip(&ms.pressure.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        let set = solve_basis_set(&perm, layout, &bc).unwrap();
        let hat = |coords: &[usize], nc: usize, c: usize, pos: usize| -> f64 {
            let x = pos as f64;
            let xc = coords[c] as f64;
            if pos == coords[c] {
                1.0
            } else if pos < coords[c] {
                if c == 0 {
                    1.0
                } else {
                    let xl = coords[c - 1] as f64;
                    ((x - xl) / (xc - xl)).max(0.0)
                }
            } else if c + 1 == nc {
                1.0
            } else {
                let xr = coords[c + 1] as f64;
                ((xr - x) / (xr - xc)).max(0.0)
            }
        };
        let mut dhat: f64 = 0.0;
        for b in &set.bases {
            let (ci, cj) = layout.node_coarse(b.node);
            for (i, j) in b.rect.cells() {
                let want = hat(&layout.node_xs, layout.ncx, ci, i)
                    * hat(&layout.node_ys, layout.ncy, cj, j);
                dhat = dhat.max((b.get(i, j) - want).abs());
            }
        }
        (
            dp <= 1e-9 && dhat <= 1e-10,
            format!("max |msfv - fine| {dp:.2e} (need <=1e-9), max hat deviation {dhat:.2e} (<=1e-10)"),
        )
    }
}

/// Partition of unity and exact nodal deltas for solved and predicted bases.
fn criterion_7(layout: &CoarseLayout, model: &MlpModel) -> (bool, String) {
    let grid = layout.grid;
    let bc_q5 = BoundarySpec::quarter_five(&grid);
    {
        let sampler = Sampler::new(GrfSpec::new(1.0, 0.1).unwrap(), &grid).unwrap();
        let perm = sampler.sample_field(&grid, 7_700_007, 0).unwrap();
        drop(sampler);
        let node_cells: Vec<(usize, usize, usize)> = (0..layout.n_nodes())
            .map(|k| {
                let (ci, cj) = layout.node_coarse(k);
                let (i, j) = layout.node_cell(ci, cj);
                (k, i, j)
            })
            .collect();
        let deltas_exact = |set: &msfv_core::msfv::BasisSet| -> bool {
            set.bases.iter().all(|b| {
                node_cells.iter().all(|&(k, i, j)| {
                    let want = if k == b.node { 1.0 } else { 0.0 };
                    b.get(i, j) == want
                })
            })
        };

        let solved = solve_basis_set(&perm, layout, &bc_q5).unwrap();
        let solved_defect = solved.partition_defect(&layout);
        let solved_deltas = deltas_exact(&solved);

        let windows = model.interior_bases(&perm, layout).unwrap();
        let predicted = hybrid_basis_set(&perm, layout, &bc_q5, &windows, true).unwrap();
        let pred_defect = predicted.partition_defect(&layout);
        let pred_deltas = deltas_exact(&predicted);

        (
            solved_defect <= 1e-12 && pred_defect <= 1e-12 && solved_deltas && pred_deltas,
            format!(
                "partition defect solved {solved_defect:.2e}, predicted {pred_defect:.2e} \
                 (need <=1e-12), nodal deltas exact: {}",
                solved_deltas && pred_deltas
            ),
        )
    }
}

/// Analytic gradients against central finite differences, with and without
/// batch normalization in the layer stack.
fn criterion_8() -> (bool, String) {
    {
        use rand::{Rng, SeedableRng};
        let mut worst: f64 = 0.0;
        for (use_bn, seed) in [(false, 41u64), (true, 42u64)] {
            let cfg = MlpConfig {
                input_dim: 5,
                hidden_dim: 4,
                output_dim: 3,
                use_batchnorm: use_bn,
                dropout_rate: 0.0,
                max_norm: None,
                init_seed: seed,
            };
            let mut model = MlpModel::new(cfg).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
            let n = 6;
            let x: Vec<f64> = (0..n * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(0.3..0.7)).collect();
            let loss_of = |m: &MlpModel| -> f64 {
                let mut dead = rand_chacha::ChaCha8Rng::seed_from_u64(0);
                m.loss_and_grad(&x, &y, Mode::Train, &mut dead).unwrap().0
            };
            let (_, g) = model
                .loss_and_grad(&x, &y, Mode::Train, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
                .unwrap();
            let h = 1e-5;
            let analytic: Vec<(usize, usize, f64)> = g
                .w1
                .iter()
                .enumerate()
                .map(|(i, &v)| (0, i, v))
                .chain(g.b1.iter().enumerate().map(|(i, &v)| (1, i, v)))
                .chain(g.w2.iter().enumerate().map(|(i, &v)| (2, i, v)))
                .chain(g.b2.iter().enumerate().map(|(i, &v)| (3, i, v)))
                .collect();
            fn param(m: &mut MlpModel, t: usize, i: usize) -> &mut f64 {
                match t {
                    0 => &mut m.w1[i],
                    1 => &mut m.b1[i],
                    2 => &mut m.w2[i],
                    _ => &mut m.b2[i],
                }
            }
            for (tensor, idx, ga) in analytic {
                let orig = *param(&mut model, tensor, idx);
                *param(&mut model, tensor, idx) = orig + h;
                let up = loss_of(&model);
                *param(&mut model, tensor, idx) = orig - h;
                let down = loss_of(&model);
                *param(&mut model, tensor, idx) = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        (
            worst <= 1e-5,
            format!("max relative gradient error {worst:.2e} (need <=1e-5), with and without batchnorm"),
        )
    }
}

/// Per-cell mass balance of fine and multiscale fluxes, plus the transport
/// accounting identity and concentration bounds on both.
fn criterion_9(layout: &CoarseLayout) -> (bool, String) {
    let grid = layout.grid;
    let bc_q5 = BoundarySpec::quarter_five(&grid);
    {
        let sampler = Sampler::new(GrfSpec::new(1.0, 0.1).unwrap(), &grid).unwrap();
        let perm = sampler.sample_field(&grid, 9_900_099, 0).unwrap();
        drop(sampler);
        let q = bc_q5.source_vector(&grid);
        let mut worst_balance: f64 = 0.0;
        let mut conc_ok = true;
        let mut closure_ok = true;
        let mut detail = String::new();
        for (name, flux) in [
            ("fine", {
                let fine = solve_fine(&perm, &grid, &bc_q5).unwrap();
                darcy_velocity(&fine, &perm, &grid, &bc_q5).unwrap()
            }),
            ("msfv", run_msfv(&perm, layout, &bc_q5).unwrap().flux),
        ] {
            let div = flux.divergence();
            let bal = div
                .iter()
                .zip(&q)
                .map(|(d, s)| (d - s).abs())
                .fold(0.0, f64::max);
            worst_balance = worst_balance.max(bal);
            let hist = advect(&flux, &grid, &bc_q5, &TransportConfig::default()).unwrap();
            let vol = grid.cell_volume() * 0.2;
            let stored: f64 = hist.snapshots.last().unwrap().iter().map(|c| c * vol).sum();
            let injected = hist.q_in * hist.probe_time.last().unwrap();
            let closure = (injected - hist.produced.last().unwrap() - stored).abs();
            closure_ok &= closure <= 1e-10 * injected.max(1.0);
            conc_ok &= hist
                .snapshots
                .iter()
                .flatten()
                .all(|&c| (-1e-12..=1.0 + 1e-12).contains(&c));
            let _ = write!(detail, "{name}: balance {bal:.2e}, closure {closure:.2e}; ");
        }
        (
            worst_balance <= 1e-8 && closure_ok && conc_ok,
            format!("{detail}concentrations in [0,1]: {conc_ok} (balance <=1e-8, closure <=1e-10)"),
        )
    }
}

/// Oracle equivalences: dense dual-cell re-solves, an Adam weight transcript,
/// the score and norm formulas, and a hybrid solve fed by exact bases.
fn criterion_10() -> (bool, String) {
    {
        // (a) interior basis values on small dual cells against a test-side
        // dense elimination of the same Dirichlet problems.
        let small_grid = FineGrid::unit(15, 15).unwrap();
        let small = build_coarse_layout(small_grid, 3, 3).unwrap();
        let sampler = Sampler::new(GrfSpec::new(1.0, 0.2).unwrap(), &small_grid).unwrap();
        let perm = sampler.sample_field(&small_grid, 10_100_101, 0).unwrap();
        let bc = BoundarySpec::quarter_five(&small_grid);
        let set = solve_basis_set(&perm, &small, &bc).unwrap();
        let mut dual_err: f64 = 0.0;
        let (ndx, ndy) = small.n_dual();
        for dj in 1..ndy - 1 {
            for di in 1..ndx - 1 {
                let rect = small.dual_rect(di, dj);
                assert!(
                    rect.width() <= 12 && rect.height() <= 12,
                    "dual cell {}x{} too large for the dense oracle",
                    rect.width(),
                    rect.height()
                );
                for k in small.dual_corner_nodes(di, dj) {
                    let b = &set.bases[k];
                    let e = dense_dirichlet_residual(&perm, &small_grid, rect, |i, j| b.get(i, j));
                    dual_err = dual_err.max(e);
                }
            }
        }

        // (b) Adam update transcript on a single weight.
        let mut tiny = MlpModel::new(MlpConfig {
            input_dim: 1,
            hidden_dim: 1,
            output_dim: 1,
            use_batchnorm: false,
            dropout_rate: 0.0,
            max_norm: None,
            init_seed: 1,
        })
        .unwrap();
        tiny.w1[0] = 0.5;
        let p = AdamParams { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut state = AdamState::new(&tiny);
        let grads = [0.3, -0.2, 0.05, 0.4, -0.1];
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 0.5f64);
        let mut adam_err: f64 = 0.0;
        for (t, &g) in grads.iter().enumerate() {
            let g_all = Gradients {
                w1: vec![g],
                b1: vec![0.0],
                w2: vec![0.0],
                b2: vec![0.0],
                gamma: vec![],
                beta: vec![],
            };
            state.step(&mut tiny, &g_all, &p);
            m = p.beta1 * m + (1.0 - p.beta1) * g;
            v = p.beta2 * v + (1.0 - p.beta2) * g * g;
            let mhat = m / (1.0 - p.beta1.powi(t as i32 + 1));
            let vhat = v / (1.0 - p.beta2.powi(t as i32 + 1));
            theta -= p.learning_rate * mhat / (vhat.sqrt() + p.eps);
            adam_err = adam_err.max((tiny.w1[0] - theta).abs());
        }

        // (c) score and norm formulas against direct evaluation.
        let preds = [0.2f64, 0.8, 0.4, 0.9, 0.1, 0.5];
        let targs = [0.3f64, 0.7, 0.5, 1.0, 0.2, 0.4];
        let dim = 2;
        let mean = [(0.3 + 0.5 + 0.2) / 3.0, (0.7 + 1.0 + 0.4) / 3.0];
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for r in 0..3 {
            for d in 0..dim {
                ss_res += (targs[r * dim + d] - preds[r * dim + d]).powi(2);
                ss_tot += (targs[r * dim + d] - mean[d]).powi(2);
            }
        }
        let r2_direct = 1.0 - ss_res / ss_tot;
        let r2_err = (r2_score(&preds, &targs, dim).unwrap() - r2_direct).abs();

        let g3 = FineGrid::new(3, 3, 2.0, 1.0).unwrap();
        let u = [1.0, -2.0, 3.0, 0.5, 0.0, -1.5, 2.5, 1.0, -0.5];
        let direct: f64 = u.iter().map(|x| x * x * g3.cell_volume()).sum::<f64>().sqrt();
        let norm_err = (area_weighted_norm(&u, &g3) - direct).abs();

        // (d) hybrid solve fed by exactly solved bases reproduces MsFV.
        let ms = run_msfv(&perm, &small, &bc).unwrap();
        let hy = run_hybrid(&perm, &small, &bc, &OracleProvider, true).unwrap();
        let hybrid_gap = ms
            .pressure
            .values
            .iter()
            .zip(&hy.pressure.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        (
            dual_err <= 1e-10 && adam_err <= 1e-12 && r2_err <= 1e-12 && norm_err <= 1e-12
                && hybrid_gap <= 1e-10,
            format!(
                "dual-cell dense oracle {dual_err:.2e} (<=1e-10), adam transcript {adam_err:.2e} \
                 (<=1e-12), r2 {r2_err:.2e}, norm {norm_err:.2e} (<=1e-12), oracle hybrid vs msfv \
                 {hybrid_gap:.2e} (<=1e-10)"
            ),
        )
    }
}

/// Sampled log-permeability covariance against the exponential model, in
/// units of the sampling standard error.
fn criterion_11() -> (bool, String) {
    {
        let g6 = FineGrid::unit(6, 6).unwrap();
        let spec = GrfSpec::new(1.3, 0.3).unwrap();
        let sampler = Sampler::new(spec, &g6).unwrap();
        let n_samples = 10_000usize;
        let n = g6.n_cells();
        let mut acc = vec![0.0f64; n * n];
        for r in 0..n_samples {
            let y = sampler.sample_log(11_011, r as u64);
            for i in 0..n {
                for j in 0..n {
                    acc[i * n + j] += y[i] * y[j];
                }
            }
        }
        let mut worst_se: f64 = 0.0;
        for i in 0..n {
            let (xi, yi) = g6.cell_center(i % 6, i / 6);
            for j in 0..n {
                let (xj, yj) = g6.cell_center(j % 6, j / 6);
                let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
                let want = 1.3 * (-d / 0.3).exp();
                let got = acc[i * n + j] / n_samples as f64;
                let se = ((1.3 * 1.3 + want * want) / n_samples as f64).sqrt();
                worst_se = worst_se.max((got - want).abs() / se);
            }
        }
        (
            worst_se <= 5.0,
            format!(
                "10^4 samples on 6x6: worst covariance deviation {worst_se:.2} standard errors (need <=5)"
            ),
        )
    }
}

/// Byte-identical reports from two runs of a reduced pipeline under one
/// master seed.
fn criterion_12() -> (bool, String) {
    {
        let small_grid = FineGrid::unit(27, 27).unwrap();
        let small = build_coarse_layout(small_grid, 3, 3).unwrap();
        let run_once = || {
            let cfg = CampaignConfig {
                problem: Problem::QuarterFive,
                grf: GrfSpec::new(1.0, 0.2).unwrap(),
                n_realizations: 40,
                n_training: 8,
                master_seed: 2024,
                mlp: MlpConfig {
                    input_dim: 0,
                    hidden_dim: 64,
                    output_dim: 0,
                    use_batchnorm: false,
                    dropout_rate: 0.05,
                    max_norm: Some(4.0),
                    init_seed: 7,
                },
                train: TrainConfig { max_epochs: 300, patience: 50, seed: 13, ..Default::default() },
                transport: TransportConfig::default(),
                validation_fraction: 0.2,
                enforce_deltas: true,
            };
            let out = run_campaign(&small, &cfg, None).unwrap();
            let mut report = rows_to_csv(&out.rows);
            report.push_str(&summary_to_csv(&summarize(&out.rows, cfg.n_training)));
            for metric in ["p_point", "q_total"] {
                let vals: Vec<f64> = out
                    .rows
                    .iter()
                    .filter(|r| r.method == Method::Msfv)
                    .map(|r| match metric {
                        "p_point" => r.p_point,
                        _ => r.q_total,
                    })
                    .collect();
                report.push_str(&histogram_to_csv(&msfv_core::uq::histogram(&vals, 10).unwrap()));
            }
            report
        };
        let first = run_once();
        let second = run_once();
        (
            first == second,
            format!(
                "two 40-realization pipeline runs (27x27/3x3, 8 training fields) produced \
                 {} reports ({} bytes)",
                if first == second { "byte-identical" } else { "DIFFERING" },
                first.len()
            ),
        )
    }
}

/// Re-solves the interior of one dual cell densely from the basis's own
/// boundary ring and returns the largest disagreement with the basis values.
/// Transmissibilities are recomputed here from the raw permeabilities so the
/// oracle shares no assembly code with the solver.
fn dense_dirichlet_residual(
    perm: &PermField,
    grid: &FineGrid,
    rect: msfv_core::grid::CellRect,
    value: impl Fn(usize, usize) -> f64,
) -> f64 {
    let hx = grid.hx();
    let hy = grid.hy();
    let k = |i: usize, j: usize| perm.values[grid.idx(i, j)];
    let tx = |il: usize, ir: usize, j: usize| {
        let (a, b) = (k(il, j), k(ir, j));
        hy / hx * 2.0 * a * b / (a + b)
    };
    let ty = |i: usize, jl: usize, ju: usize| {
        let (a, b) = (k(i, jl), k(i, ju));
        hx / hy * 2.0 * a * b / (a + b)
    };

    let interior: Vec<(usize, usize)> = rect
        .cells()
        .filter(|&(i, j)| i > rect.x0 && i < rect.x1 && j > rect.y0 && j < rect.y1)
        .collect();
    let n = interior.len();
    let index = |i: usize, j: usize| interior.iter().position(|&c| c == (i, j));
    let mut a = vec![0.0f64; n * n];
    let mut rhs = vec![0.0f64; n];
    for (row, &(i, j)) in interior.iter().enumerate() {
        let neighbors = [
            (i - 1, j, tx(i - 1, i, j)),
            (i + 1, j, tx(i, i + 1, j)),
            (i, j - 1, ty(i, j - 1, j)),
            (i, j + 1, ty(i, j, j + 1)),
        ];
        for (ni, nj, t) in neighbors {
            a[row * n + row] += t;
            match index(ni, nj) {
                Some(col) => a[row * n + col] -= t,
                None => rhs[row] += t * value(ni, nj),
            }
        }
    }
    gauss_solve(&mut a, &mut rhs, n);
    interior
        .iter()
        .zip(&rhs)
        .map(|(&(i, j), &x)| (value(i, j) - x).abs())
        .fold(0.0, f64::max)
}

fn gauss_solve(a: &mut [f64], b: &mut [f64], n: usize) {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .unwrap();
        if pivot != col {
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r * n + c] * b[c];
        }
        b[r] = s / a[r * n + r];
    }
}
