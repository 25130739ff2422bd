use super::*;
use crate::datagen::{Sample, Target};
use rand::Rng;

/// Two actions whose labels are both `field0 <= 10`; every label observed.
fn separable(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let f0 = rng.random_range(1..=20u32);
            let y = (f0 <= 10) as u8;
            Sample {
                id: i as u64,
                ad_task: (i % 4) as u32,
                target: Target::Action(i % 2),
                day: 0,
                fields: vec![f0, rng.random_range(1..=5)],
                observed: vec![y, y],
                truth: None,
            }
        })
        .collect();
    Dataset::new(2, vec!["a".into(), "b".into()], samples).unwrap()
}

fn small_config(variant: Variant) -> TrainConfig {
    let mut cfg = TrainConfig::new(2);
    cfg.model = ModelShape {
        embed_dim: 4,
        n_experts: 2,
        expert_widths: vec![16, 8],
        sub_tower_widths: vec![8],
        merge_widths: vec![4, 1],
    };
    cfg.lr = 0.01;
    cfg.batch_size = 64;
    cfg.epochs = 4;
    cfg.seeds = vec![1];
    cfg.for_variant(variant)
}

#[test]
fn separable_data_is_learned() {
    let train_set = separable(2000, 1);
    let test = separable(500, 2);
    for v in [Variant::Mmoe, Variant::Kaml, Variant::SingleTask] {
        let run = train(&train_set, Some(&test), &small_config(v), 3).unwrap();
        let auc = run.history.final_report().unwrap().overall.auc.unwrap();
        assert!(auc > 0.95, "{}: {auc}", v.name());
        assert_eq!(run.history.epochs.len(), 4);
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let ds = separable(300, 4);
    let mut cfg = small_config(Variant::Kaml);
    cfg.lr = 0.0;
    cfg.epochs = 2;
    cfg.batch_size = 300;
    cfg.loss.pair_cap = 1_000_000;
    let run = train(&ds, None, &cfg, 5).unwrap();
    let fresh = Model::new(run.model.config().clone(), ChaCha8Rng::seed_from_u64(5).next_u64()).unwrap();
    assert!(run.model.params().same_values(fresh.params()));
    let h = &run.history.epochs;
    assert!((h[0].loss - h[1].loss).abs() < 1e-12);
}

#[test]
fn same_seed_same_run() {
    let ds = separable(400, 6);
    let test = separable(100, 7);
    let cfg = small_config(Variant::Kaml);
    let a = train(&ds, Some(&test), &cfg, 8).unwrap();
    let b = train(&ds, Some(&test), &cfg, 8).unwrap();
    assert!(a.history.same_results(&b.history));
    assert!(a.model.params().same_values(b.model.params()));
    let c = train(&ds, Some(&test), &cfg, 9).unwrap();
    assert!(!a.model.params().same_values(c.model.params()));
}

#[test]
fn loss_falls_on_a_fixed_batch() {
    let ds = separable(64, 10);
    let mut cfg = small_config(Variant::Kaml);
    cfg.batch_size = 64;
    cfg.epochs = 30;
    let run = train(&ds, None, &cfg, 11).unwrap();
    let h = &run.history.epochs;
    assert!(h[29].loss < 0.5 * h[0].loss, "{} -> {}", h[0].loss, h[29].loss);
}

#[test]
fn variants_configure_components() {
    let base = TrainConfig::new(3);
    let mmoe = base.for_variant(Variant::Mmoe);
    assert_eq!(mmoe.mask, MaskStrategy::Base);
    assert_eq!(mmoe.loss.gamma, 1.0);
    let kaml = mmoe.for_variant(Variant::Kaml);
    assert_eq!(kaml.mask.name(), "adm");
    assert_eq!(kaml.loss.gamma, 0.7);
    let rlu = base.for_variant(Variant::MmoeRlu);
    assert_eq!((rlu.mask.name(), rlu.loss.gamma), ("base", 0.7));
    for v in Variant::ALL {
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!(matches!("mmoe+xyz".parse::<Variant>(), Err(Error::Config(_))));
}

#[test]
fn invalid_configs_rejected() {
    let ds = separable(50, 1);
    let mut cfg = small_config(Variant::Mmoe);
    cfg.seeds.clear();
    assert!(matches!(train(&ds, None, &cfg, 0), Err(Error::Config(_))));
    let mut cfg = small_config(Variant::Mmoe);
    cfg.lr = -1.0;
    assert!(cfg.validate().is_err());
    let empty = Dataset::new(2, vec!["a".into(), "b".into()], vec![]).unwrap();
    assert!(matches!(train(&empty, None, &small_config(Variant::Mmoe), 0), Err(Error::Config(_))));
    assert!(run_ablation(&ds, &ds, &[], &small_config(Variant::Mmoe)).is_err());
}

#[test]
fn single_run_ablation_equals_the_run() {
    let ds = separable(300, 12);
    let test = separable(100, 13);
    let cfg = small_config(Variant::Mmoe);
    let table = run_ablation(&ds, &test, &[Variant::Mmoe], &cfg).unwrap();
    let run = train(&ds, Some(&test), &cfg, 1).unwrap();
    let report = run.history.final_report().unwrap();
    let row = table.row("mmoe").unwrap();
    assert_eq!(row.overall_auc.mean, report.overall.auc);
    assert_eq!(row.overall_auc.std, Some(0.0));
    assert_eq!(row.auc[1].mean, report.per_action[1].auc);
    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(2).unwrap().starts_with("mmoe,auc_std,"));
}

#[test]
fn one_expert_mixture_equals_shared_bottom_rows() {
    let ds = separable(300, 14);
    let test = separable(100, 15);
    let mut cfg = small_config(Variant::Mmoe);
    cfg.model.n_experts = 1;
    cfg.seeds = vec![1, 2];
    cfg.epochs = 2;
    let t = run_ablation(&ds, &test, &[Variant::Mmoe, Variant::SharedBottom], &cfg).unwrap();
    let (a, b) = (&t.rows[0], &t.rows[1]);
    assert_eq!(a.auc, b.auc);
    assert_eq!(a.overall_logloss, b.overall_logloss);
}

#[test]
fn summary_statistics() {
    let s = Summary::of(&[Some(1.0), Some(2.0), Some(3.0)]);
    assert_eq!(s.mean, Some(2.0));
    assert!((s.std.unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(Summary::of(&[Some(1.0), None]).mean, None);
}

#[test]
fn history_series() {
    let ds = separable(200, 16);
    let mut cfg = small_config(Variant::Mmoe);
    cfg.epochs = 2;
    cfg.eval_every_epoch = false;
    let run = train(&ds, Some(&ds), &cfg, 1).unwrap();
    assert!(run.history.epochs[0].test.is_none());
    let mut out = Vec::new();
    run.history.write_tsv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch\tloss\tbce\tranking\tauc_all\tlogloss_all\tauc_1\tauc_2");
    assert!(lines[1].ends_with("NA\tNA\tNA\tNA"));
    assert_eq!(lines.len(), 3);
}
