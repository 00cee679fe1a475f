//! Timing ladders. Kept in their own target so no other test competes for
//! the CPU while they run.

use std::sync::{Mutex, MutexGuard};

use rbayes_cli::bench::bench;
use rbayes_cli::config::{Mode, ModelKind, RunConfig};
use recursive_bayes::models::geostat::{GeoTuning, SpatialUpdate};
use recursive_bayes::StageConfig;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn geostat_recursive_share_shrinks_with_n() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        model: ModelKind::Geostat,
        mode: Mode::Pprb,
        ..Default::default()
    };
    cfg.bench.sizes = vec![60, 120, 240];
    cfg.bench.repeats = 3;
    cfg.geostat.tuning = GeoTuning {
        update: SpatialUpdate::Collapsed,
        spatial_steps: 4,
        adapt_shape: true,
        ..Default::default()
    };
    cfg.stage = StageConfig {
        iterations: 3_000,
        burn_in: 500,
        workers: 4,
        ..Default::default()
    };
    let rows = bench(&cfg, dir.path()).unwrap();
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    assert!(rows.iter().all(|r| r.recursive_ms < r.full_ms), "{rows:?}");
}

#[test]
fn online_update_time_is_flat_in_series_length() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        model: ModelKind::PoissonDyn,
        mode: Mode::Online,
        ..Default::default()
    };
    cfg.bench.sizes = vec![36, 72, 144];
    cfg.bench.repeats = 25;
    cfg.stage = StageConfig {
        iterations: 22_000,
        burn_in: 2_000,
        ..Default::default()
    };
    let rows = bench(&cfg, dir.path()).unwrap();
    let base = rows[0].recursive_ms;
    for r in &rows {
        assert!((r.recursive_ms / base - 1.0).abs() < 0.10, "{rows:?}");
        assert!(r.recursive_ms < r.full_ms);
    }
}
