use coag_core::coalescent::{
    self, empirical, first_species_merger, run, run_to_absorption, Engine, EntranceProxy,
    GeneticComposition, InitialGenes, WarmGenes,
};
use coag_core::rng::Streams;
use coag_core::stats::{ks_two_sample, mean_stderr};

#[test]
fn absorbs_after_exact_event_count() {
    let s = Streams::new(21);
    for rep in 0..50u64 {
        let mut rng = s.get("absorb", rep);
        let genes: Vec<u64> = (0..1 + rep % 7).map(|i| 1 + (i * 3 + rep) % 5).collect();
        let start = GeneticComposition::new(genes).unwrap();
        let s0 = start.species_count() as u64;
        let g = start.total_genes();
        let (_, events) = run_to_absorption(&start, 0.7, &mut rng).unwrap();
        assert_eq!(events, (s0 - 1) + (g - 1));
    }
}

#[test]
fn species_hitting_time_mean() {
    let s = Streams::new(4);
    for k in [2u64, 5, 12] {
        let start = GeneticComposition::uniform(k, 3).unwrap();
        let times: Vec<f64> = (0..20_000)
            .map(|i| first_species_merger(&start, 1.0, &mut s.get("hit", k * 100_000 + i)).unwrap().unwrap())
            .collect();
        let m = mean_stderr(&times).unwrap();
        let target = 2.0 / (k * (k - 1)) as f64;
        assert!((m.mean - target).abs() < 3.0 * m.stderr, "k={k}: {m:?} vs {target}");
    }
}

#[test]
fn single_species_is_plain_kingman() {
    let s = Streams::new(8);
    let start = GeneticComposition::uniform(1, 20_000).unwrap();
    let t = 2.0;
    let rec = run(Engine::EXACT_LAZY, &start, 1.0, 0.0, &[0.01, 0.1, t], &mut s.get("k", 0)).unwrap();
    assert!(rec.snapshots.iter().all(|s| s.species == 1));
    // t K_t -> 2/c
    let v: Vec<f64> = (0..200)
        .map(|i| {
            let r = run(Engine::EXACT_LAZY, &start, 1.0, 0.0, &[0.05], &mut s.get("kk", i)).unwrap();
            0.05 * r.snapshots[0].genes as f64
        })
        .collect();
    let m = mean_stderr(&v).unwrap();
    assert!((m.mean - 2.0).abs() < 0.05, "{m:?}");
}

#[test]
fn relabelled_start_gives_identical_snapshots() {
    let s = Streams::new(30);
    let a = GeneticComposition::new(vec![4, 1, 9, 2, 2, 6]).unwrap();
    let b = GeneticComposition::new(vec![2, 6, 2, 9, 1, 4]).unwrap();
    let times = [0.1, 0.3, 0.9];
    for engine in [Engine::Direct, Engine::EXACT_LAZY] {
        let ra = run(engine, &a, 1.0, 0.0, &times, &mut s.get("perm", 0)).unwrap();
        let rb = run(engine, &b, 1.0, 0.0, &times, &mut s.get("perm", 0)).unwrap();
        assert_eq!(ra, rb);
    }
}

#[test]
fn relabelled_start_same_law_across_seeds() {
    let s = Streams::new(31);
    let a = GeneticComposition::new(vec![4, 1, 9, 2, 2, 6]).unwrap();
    let b = GeneticComposition::new(vec![2, 6, 2, 9, 1, 4]).unwrap();
    let sample = |c: &GeneticComposition, tag: &str| -> Vec<f64> {
        (0..400)
            .map(|i| run(Engine::Direct, c, 1.0, 0.0, &[0.4], &mut s.get(tag, i)).unwrap().snapshots[0].genes as f64)
            .collect()
    };
    let ks = ks_two_sample(&sample(&a, "a"), &sample(&b, "b")).unwrap();
    assert!(!ks.rejected_at(0.001), "{ks:?}");
}

#[test]
fn engines_agree_in_law() {
    let s = Streams::new(12);
    let start = GeneticComposition::new(vec![30, 5, 12, 1, 1, 40, 8, 3]).unwrap();
    let sample = |engine: Engine, tag: &str| -> (Vec<f64>, Vec<f64>) {
        (0..600)
            .map(|i| {
                let r = run(engine, &start, 0.8, 0.0, &[0.15], &mut s.get(tag, i)).unwrap();
                (r.snapshots[0].genes as f64, r.snapshots[0].species as f64)
            })
            .unzip()
    };
    let (g_direct, s_direct) = sample(Engine::Direct, "direct");
    let (g_lazy, s_lazy) = sample(Engine::EXACT_LAZY, "lazy");
    assert!(!ks_two_sample(&g_direct, &g_lazy).unwrap().rejected_at(0.001));
    assert!(!ks_two_sample(&s_direct, &s_lazy).unwrap().rejected_at(0.001));
}

#[test]
fn fast_lazy_matches_direct_on_large_start() {
    let s = Streams::new(13);
    let start = GeneticComposition::uniform(40, 20_000).unwrap();
    let sample = |engine: Engine, tag: &str| -> Vec<f64> {
        (0..150)
            .map(|i| run(engine, &start, 1.0, 0.0, &[2e-3], &mut s.get(tag, i)).unwrap().snapshots[0].genes as f64)
            .collect()
    };
    let a = sample(Engine::EXACT_LAZY, "exact");
    let b = sample(Engine::FAST_LAZY, "fast");
    let (ma, mb) = (mean_stderr(&a).unwrap(), mean_stderr(&b).unwrap());
    assert!((ma.mean - mb.mean).abs() < 4.0 * ma.stderr.hypot(mb.stderr), "{ma:?} {mb:?}");
}

#[test]
fn species_curve_small_scale() {
    let s = Streams::new(14);
    let n = 2000u64;
    let times: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|t| t / n as f64).collect();
    let rec = coalescent::simulate_nested(n, &InitialGenes::Constant { genes: 1 }, 1.0, &times, &mut s.get("sp", 0))
        .unwrap();
    for (snap, t) in rec.snapshots.iter().zip([0.5, 1.0, 2.0]) {
        let ratio = snap.species as f64 / n as f64;
        assert!((ratio - 2.0 / (2.0 + t)).abs() < 0.05, "t={t}: {ratio}");
    }
}

#[test]
fn iid_initial_laws() {
    let mut rng = Streams::new(2).get("init", 0);
    let c = InitialGenes::Geometric { mean: 3.0 }.sample(5000, &mut rng).unwrap();
    let m = empirical(&c).mean();
    assert!((m - 3.0).abs() < 0.15, "{m}");
    let c = InitialGenes::Table { weights: vec![0.0, 1.0] }.sample(10, &mut rng).unwrap();
    assert!(c.species().iter().all(|&g| g == 2));
}

#[test]
fn speed_estimate_requires_two_replicates() {
    let proxy = EntranceProxy::minimal(10, WarmGenes::Lossless).unwrap();
    let r = coalescent::cdi_speed_estimate(10, 1.0, 1.0, &proxy, Engine::FAST_LAZY, 1, &Streams::new(0));
    assert!(r.is_err());
}
