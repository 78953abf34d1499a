//! Experiment-level criteria on the synthetic benchmark.

use std::collections::BTreeMap;

use metalab_core::harness::{run_experiment, ExperimentConfig, ExperimentResults, Method, RunStatus};
use serde_json::{json, Value};

use super::common::mean;
use super::{verdict, Verdict};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Shared supervised setting: both methods see the same pool, widths and
/// evaluation episodes; only the training objective differs.
fn supervised(name: &str, patch: Value) -> ExperimentConfig {
    let mut base = json!({
        "name": name,
        "methods": ["wct", "maml"],
        "seeds": SEEDS,
        "dataset": {"per_class": 20, "separation": 3.0},
        "model": {"hidden": [64, 64]},
        "wct": {"epochs": 600},
        "trainer": {"eta": 0.01, "epochs": 3000}
    });
    metalab_core::harness::merge(&mut base, patch);
    ExperimentConfig::from_json_str(&base.to_string()).expect("acceptance config")
}

/// Runs the experiment; any failed cell becomes the criterion's verdict.
fn run(cfg: &ExperimentConfig) -> (ExperimentResults, Option<Verdict>) {
    let res = match run_experiment(cfg) {
        Ok(r) => r,
        Err(e) => return (ExperimentResults::default(), Some(verdict(false, format!("{}: {e}", cfg.name)))),
    };
    let failure = res
        .rows
        .iter()
        .find(|r| r.status != RunStatus::Ok)
        .map(|r| verdict(false, format!("{} seed {} failed: {}", r.method, r.seed, r.message)));
    (res, failure)
}

fn per_seed(res: &ExperimentResults, method: Method, g: f64) -> BTreeMap<u64, f64> {
    res.rows
        .iter()
        .filter(|r| r.method == method.name() && r.grid_value == g)
        .map(|r| (r.seed, r.value))
        .collect()
}

pub fn noise_robustness() -> (Verdict, ExperimentConfig, ExperimentResults) {
    let cfg = supervised("noise_robustness", json!({"kind": "noise_table", "noise_levels": [0.0, 0.3]}));
    let (res, failure) = run(&cfg);
    if let Some(v) = failure {
        return (v, cfg, res);
    }
    let gap = |g| 100.0 * (mean(&res.values(Method::Maml, g)) - mean(&res.values(Method::Wct, g)));
    let (clean, noisy) = (gap(0.0), gap(0.3));
    let v = verdict(
        noisy >= 5.0 && clean.abs() <= 3.0,
        format!("bi-level minus WCT: {noisy:+.2} pts at 30% noise (need ≥ +5), {clean:+.2} pts clean (need within ±3)"),
    );
    (v, cfg, res)
}

pub fn entropy_efficiency() -> Verdict {
    let cfg = supervised("entropy_efficiency", json!({"kind": "entropy_curve"}));
    let (res, failure) = run(&cfg);
    if let Some(v) = failure {
        return v;
    }
    let points: Vec<f64> = cfg.entropy_fractions.iter().copied().filter(|f| *f < 1.0).collect();
    let mut winning_seeds = 0;
    let mut losses = Vec::new();
    for &seed in &SEEDS {
        let lost: Vec<f64> = points
            .iter()
            .copied()
            .filter(|&f| per_seed(&res, Method::Maml, f)[&seed] < per_seed(&res, Method::Wct, f)[&seed])
            .collect();
        if lost.is_empty() {
            winning_seeds += 1;
        }
        losses.push(lost.len());
    }
    let gaps: Vec<String> = points
        .iter()
        .map(|&f| format!("{:+.1}", 100.0 * (mean(&res.values(Method::Maml, f)) - mean(&res.values(Method::Wct, f)))))
        .collect();
    verdict(
        winning_seeds * 2 > SEEDS.len(),
        format!(
            "{winning_seeds}/5 seeds dominate at all {} points; points lost per seed {losses:?}; mean gap by H [{}] pts",
            points.len(),
            gaps.join(" ")
        ),
    )
}

/// Mean rs per layer over the second half of the trace for one run.
fn late_means(res: &ExperimentResults, method: Method, seed: u64, g: f64) -> Vec<f64> {
    let rows: Vec<_> = res
        .traces
        .iter()
        .filter(|t| t.method == method.name() && t.seed == seed && t.grid_value == g)
        .collect();
    let last = rows.iter().map(|t| t.epoch).max().unwrap_or(0);
    let layers = rows.iter().map(|t| t.layer).max().map_or(0, |l| l + 1);
    (0..layers)
        .map(|l| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|t| t.layer == l && 2 * t.epoch > last)
                .map(|t| t.rs)
                .collect();
            mean(&v)
        })
        .collect()
}

pub fn stability_shape() -> Verdict {
    let cfg = supervised(
        "stability_shape",
        json!({"kind": "noise_table", "noise_levels": [0.0, 0.15], "trace": {"every": 25, "probe_size": 200}}),
    );
    let (res, failure) = run(&cfg);
    if let Some(v) = failure {
        return v;
    }
    let mut good = 0;
    let mut notes = Vec::new();
    for &seed in &SEEDS {
        let meta = late_means(&res, Method::Maml, seed, 0.15);
        let (head, body) = meta.split_last().expect("traced layers");
        let head_lowest = body.iter().all(|b| head < b);
        let wct_noisy = late_means(&res, Method::Wct, seed, 0.15);
        let wct_clean = late_means(&res, Method::Wct, seed, 0.0);
        let wct_drops = wct_noisy.iter().zip(&wct_clean).all(|(n, c)| n < c);
        good += (head_lowest && wct_drops) as usize;
        notes.push(format!("s{seed}:{}{}", if head_lowest { "h" } else { "-" }, if wct_drops { "w" } else { "-" }));
    }
    verdict(good >= 4, format!("{good}/5 seeds show both shapes [{}]", notes.join(" ")))
}

pub fn ablation() -> (Verdict, ExperimentConfig, ExperimentResults) {
    let cfg = ExperimentConfig::from_json_str(
        &json!({
            "name": "ablation",
            "kind": "ablation",
            "methods": ["mino", "mino_kmeans", "mino_wct", "mino_no_scaler"],
            "seeds": SEEDS,
            "noise_levels": [0.3],
            "trainer": {"eta": 0.01, "epochs": 3000},
            "dbscan": {"eps": 2.0, "min_samples": 5},
            "unsupervised": {"pool_dbscan": {"eps": 1.5, "min_samples": 15}}
        })
        .to_string(),
    )
    .expect("acceptance config");
    let (res, failure) = run(&cfg);
    if let Some(v) = failure {
        return (v, cfg, res);
    }
    let full = mean(&res.values(Method::Mino, 0.3));
    let mut strict = 0;
    let mut all_geq = true;
    let mut parts = vec![format!("full {:.4}", full)];
    for m in [Method::MinoKmeans, Method::MinoWct, Method::MinoNoScaler] {
        let a = mean(&res.values(m, 0.3));
        strict += (full > a) as usize;
        all_geq &= full >= a;
        parts.push(format!("{} {:.4}", m.name(), a));
    }
    let v = verdict(all_geq && strict >= 2, format!("{}; {strict}/3 strictly below full", parts.join(", ")));
    (v, cfg, res)
}
