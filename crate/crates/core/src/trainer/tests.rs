use super::*;
use crate::graph::{gen_sbm, make_open_split, SbmConfig, SplitFractions};
use crate::kernel::{finite_diff_check, DenseMatrix};

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        lr: 0.01,
        backbone: BackboneConfig {
            hidden_dims: vec![16, 8, 8],
            ..BackboneConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn sbm_split(sizes: Vec<usize>, seed: u64, mode: Visibility) -> (Graph, OpenSetSplit) {
    let last = sizes.len() - 1;
    let g = gen_sbm(&SbmConfig::new(sizes, 0.3, 0.02, 8, seed)).unwrap();
    let s = make_open_split(&g, &[last], SplitFractions::default(), seed, mode).unwrap();
    (g, s)
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!("bogus".parse::<Variant>().is_err());
}

#[test]
fn variants_resolve_to_switches() {
    let base = TrainConfig::default();
    let r = |v| TrainConfig { variant: v, ..base.clone() }.resolved();
    assert_eq!(r(Variant::NoCoe).loss.lambda2, 0.0);
    assert_eq!(r(Variant::IntOnly).proxy.ext_budget, Some(0));
    assert_eq!(r(Variant::ExtOnly).proxy.inter_budget, Some(0));
    let t = r(Variant::ThresholdOnly);
    assert_eq!((t.proxy.inter_budget, t.proxy.ext_budget, t.loss.lambda2), (Some(0), Some(0), 0.0));
    assert_eq!(r(Variant::Full), base);
}

#[test]
fn config_validation() {
    assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let g = gen_sbm(&SbmConfig::new(vec![10, 10, 10], 0.4, 0.2, 5, 3)).unwrap();
    let s = make_open_split(&g, &[2], SplitFractions::default(), 3, Visibility::Inductive).unwrap();
    let cfg = TrainConfig {
        backbone: BackboneConfig {
            hidden_dims: vec![6, 5, 4],
            ..BackboneConfig::default()
        },
        ..TrainConfig::default()
    };
    let ctx = TrainContext::new(&g, &s, Arch::Gcn).unwrap();
    let mut model = Model::init(&cfg.backbone, g.d(), s.num_known(), &mut stream_rng(0, 0)).unwrap();
    for t in model.tensors_mut() {
        if t.value.rows() == 1 {
            t.value.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.05 + 0.01 * i as f64);
        }
    }
    model.zero_grad();
    let stats = objective_and_grad(&mut model, &ctx, &cfg, &mut stream_rng(0, 1)).unwrap();
    assert!(stats.num_inter > 0 && stats.num_external > 0);
    let values: Vec<DenseMatrix> = model.tensors().iter().map(|t| t.value.clone()).collect();
    let grads: Vec<DenseMatrix> = model.tensors().iter().map(|t| t.grad.clone()).collect();
    let report = finite_diff_check(
        |v| {
            let mut m = model.clone();
            for (t, x) in m.tensors_mut().into_iter().zip(v) {
                t.value = x.clone();
            }
            objective_and_grad(&mut m, &ctx, &cfg, &mut stream_rng(0, 1)).unwrap().loss.total
        },
        &values,
        &grads,
        1e-6,
        1e-4,
    );
    assert!(report.passed, "max rel err {}", report.max_rel_err);
}

#[test]
fn same_seed_same_report() {
    let (g, s) = sbm_split(vec![12, 12, 12], 1, Visibility::Inductive);
    let cfg = small_cfg(15);
    let (_, a) = run(&g, &s, &cfg).unwrap();
    let (_, b) = run(&g, &s, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let par = TrainConfig {
        deterministic: false,
        ..cfg
    };
    let (_, c) = run(&g, &s, &par).unwrap();
    assert_eq!(a.test, c.test);
}

#[test]
fn closed_set_model_never_predicts_unknown() {
    let (g, s) = sbm_split(vec![15, 15, 15], 2, Visibility::Inductive);
    let mut cfg = small_cfg(40);
    cfg.proxy.inter_budget = Some(0);
    cfg.proxy.ext_budget = Some(0);
    cfg.loss.lambda2 = 0.0;
    let (_, r) = run(&g, &s, &cfg).unwrap();
    assert!(r.history.iter().all(|h| h.num_inter + h.num_external == 0));
    assert_eq!(r.test.ood_accuracy, Some(0.0));
    assert_eq!(r.test.per_class[s.unknown_label].recall, 0.0);
}

#[test]
fn threshold_variant_has_no_proxies_and_picks_a_threshold() {
    let (g, s) = sbm_split(vec![15, 15, 15], 4, Visibility::Inductive);
    let (m, r) = run_ablation(Variant::ThresholdOnly, &g, &s, &small_cfg(20)).unwrap();
    assert!(r.history.iter().all(|h| h.num_inter == 0 && h.num_external == 0));
    let tau = r.threshold.unwrap();
    assert!(threshold_grid().contains(&tau));
    assert_eq!(m.threshold, Some(tau));
}

#[test]
fn no_coe_records_zero_lambda2() {
    let (g, s) = sbm_split(vec![12, 12, 12], 5, Visibility::Inductive);
    let (_, r) = run_ablation(Variant::NoCoe, &g, &s, &small_cfg(5)).unwrap();
    assert_eq!(r.config.loss.lambda2, 0.0);
    assert!(r.history.iter().all(|h| h.loss.l2 == 0.0 && h.loss.total == h.loss.l1));
}

#[test]
fn loss_trends_down_on_separable_case() {
    let (g, s) = sbm_split(vec![20, 20, 20], 6, Visibility::Inductive);
    let (_, r) = run(&g, &s, &small_cfg(150)).unwrap();
    let window = |a: usize| r.history[a..a + 50].iter().map(|h| h.loss.total).sum::<f64>() / 50.0;
    assert!(window(0) > window(50) && window(50) > window(100));
    assert!(r.history.iter().all(|h| h.loss.total.is_finite()));
}

#[test]
fn inductive_validation_rejects_visible_unknowns() {
    let (g, mut s) = sbm_split(vec![12, 12, 12], 7, Visibility::Inductive);
    assert!(EvalContext::new(&g, &s, Phase::Val, Arch::Gcn).is_ok());
    let unknown_node = s.test_idx.iter().copied().find(|&i| s.is_unknown_class(g.labels()[i])).unwrap();
    s.val_idx.push(unknown_node);
    assert!(matches!(EvalContext::new(&g, &s, Phase::Val, Arch::Gcn), Err(Error::Split(_))));
}

#[test]
fn checkpoint_reload_reproduces_metrics() {
    let (g, s) = sbm_split(vec![12, 12, 12], 8, Visibility::Transductive);
    let (m, r) = run(&g, &s, &small_cfg(10)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(evaluate(&back, &g, &s, Phase::Test).unwrap(), r.test);
}

#[test]
fn grid_shape_and_selection() {
    assert_eq!(LAMBDA_GRID.len() * LAMBDA_GRID.len(), 25);
    let (g, s) = sbm_split(vec![10, 10, 10], 9, Visibility::Inductive);
    let rep = grid_search_over(&g, &s, &small_cfg(3), &[0.1, 1.0]).unwrap();
    assert_eq!(rep.cells.len(), 4);
    let max = rep.cells.iter().map(|c| c.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(rep.cells[rep.best_index].val_accuracy, max);
    assert_eq!((rep.best_lambda1, rep.best_lambda2), (rep.cells[rep.best_index].lambda1, rep.cells[rep.best_index].lambda2));
    let seeds: std::collections::HashSet<u64> = rep.cells.iter().map(|c| c.seed).collect();
    assert_eq!(seeds.len(), 4);
}

#[test]
fn cell_selection_tie_rule() {
    let cell = |lambda1, lambda2, val_accuracy| GridCell {
        lambda1,
        lambda2,
        seed: 0,
        best_epoch: 1,
        val_accuracy,
        test_accuracy: 0.0,
        test_macro_f1: 0.0,
    };
    let cells = vec![cell(1.0, 0.1, 0.8), cell(0.1, 10.0, 0.8), cell(0.1, 1.0, 0.8), cell(10.0, 0.01, 0.7)];
    assert_eq!(select_cell(&cells), Some(2));
    assert_eq!(select_cell(&[]), None);
}

#[test]
fn csv_row_has_header_arity() {
    let (g, s) = sbm_split(vec![10, 10, 10], 10, Visibility::Inductive);
    let (_, r) = run(&g, &s, &small_cfg(2)).unwrap();
    assert_eq!(r.csv_row().split(',').count(), RunReport::CSV_HEADER.split(',').count());
}
