//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use qdaa::geometry::{grid_measure, BoxBounds, FacetId, Rectangle, Side, TileGrid};
use qdaa::model::{BiochemicalSystem, MultiAffineField, MultiAffineTerm, Partition};
use qdaa::qdaa::{build, successors, Node};
use qdaa::rats::rats_reach;
use qdaa::reach::{compare_with_rats, containment, reachable};
use qdaa::sim::{integrate_until_exit, Direction, ExitEvent, SimSettings};
use qdaa::{bundled, QdaaConfig, QdaaState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

type Check = fn() -> Result<String, String>;

fn qdaa_bin(args: &[&str], out: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_qdaa"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("QDAA_SEED")
        .output()
        .map_err(|e| format!("spawning qdaa: {e}"))?;
    let elapsed = start.elapsed();
    if !output.status.success() {
        return Err(format!(
            "qdaa {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&output.stderr)
        ));
    }
    Ok(elapsed)
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn rect_list(doc: &Value) -> Vec<Vec<u64>> {
    doc["rectangles"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|r| r.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect())
        .collect()
}

fn json_bounds(doc: &Value, species: &str) -> Result<(f64, f64), String> {
    doc["bounds"]
        .as_array()
        .into_iter()
        .flatten()
        .find(|b| b["species"] == species)
        .map(|b| (b["lower"].as_f64().unwrap(), b["upper"].as_f64().unwrap()))
        .ok_or_else(|| format!("no bounds for {species}"))
}

fn csv_bounds(path: &Path, species: &str) -> Result<(f64, f64), String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    for row in reader.records() {
        let row = row.map_err(|e| e.to_string())?;
        if &row[0] == species {
            let parse = |s: &str| s.parse::<f64>().map_err(|e| e.to_string());
            return Ok((parse(&row[1])?, parse(&row[2])?));
        }
    }
    Err(format!("{species} missing from {}", path.display()))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tmp() -> TempDir {
    tempfile::tempdir().expect("temporary directory")
}

/// Criterion 1: fig2 reach at κ=8, M=500 is exactly {H, S} for any seed.
fn fig2_reach() -> Result<String, String> {
    let dir = tmp();
    let elapsed = qdaa_bin(
        &["reach", "--model", "fig2", "--kappa", "8", "--samples", "500", "--seed", "7"],
        dir.path(),
    )?;
    let report = read_json(&dir.path().join("report.json"))?;
    let want = vec![vec![0, 0], vec![1, 0]];
    ensure(rect_list(&report) == want, || format!("rectangles {:?}", rect_list(&report)))?;
    ensure(json_bounds(&report, "A")? == (0.0, 5.0), || "bounds of A".into())?;
    ensure(json_bounds(&report, "B")? == (0.0, 2.5), || "bounds of B".into())?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    let sys = bundled::model("fig2").unwrap();
    for seed in [0, 1, 2, 3, 1234] {
        let config = QdaaConfig::new(8).with_samples(500).with_seed(seed);
        let (_, states) = reachable(&sys, &config).map_err(|e| e.to_string())?;
        let rects: BTreeSet<_> = states.into_iter().map(|s| s.rectangle).collect();
        let want: BTreeSet<_> = [Rectangle::new(vec![0, 0]), Rectangle::new(vec![1, 0])].into();
        ensure(rects == want, || format!("seed {seed}: {rects:?}"))?;
    }
    Ok(format!("{{H, S}}, [A]=[0,5], [B]=[0,2.5] for 6 seeds; CLI {elapsed:.2?}"))
}

/// Criterion 2: RATS on fig2 reaches exactly three rectangles.
fn fig2_rats() -> Result<String, String> {
    let dir = tmp();
    let elapsed = qdaa_bin(&["rats", "--model", "fig2"], dir.path())?;
    let doc = read_json(&dir.path().join("rats.json"))?;
    let got = rect_list(&doc);
    ensure(got == vec![vec![0, 0], vec![1, 0], vec![1, 1]], || format!("{got:?}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{{[0,0], [1,0], [1,1]}} in {elapsed:.2?}"))
}

/// Fraction of a 2000x2000 grid over [0,2.5]^2 whose trajectory leaves
/// through A = 2.5. Trajectories move along A + B = c towards the fixed
/// line 0.5A = 0.8B, so a point exits right iff that line meets its level
/// set beyond A = 2.5.
fn brute_force_exit_fraction() -> f64 {
    let n = 2000;
    let h = 2.5 / n as f64;
    let mut exits = 0usize;
    for i in 0..n {
        let a = (i as f64 + 0.5) * h;
        for j in 0..n {
            let b = (j as f64 + 0.5) * h;
            let c = a + b;
            let a_fixed = c * 0.8 / 1.3;
            if a_fixed > 2.5 {
                exits += 1;
            }
        }
    }
    exits as f64 / (n * n) as f64
}

/// Criterion 3: weight of <H,H> -> <S,E> against the brute-force oracle.
fn transition_weight() -> Result<String, String> {
    let start = Instant::now();
    let oracle = brute_force_exit_fraction();
    let analytic = 0.9375f64.powi(2) / 2.0 / 6.25;
    ensure((oracle - analytic).abs() < 1e-3, || format!("oracle {oracle} vs {analytic}"))?;
    let sys = bundled::model("fig2").unwrap();
    let config = QdaaConfig::new(8).with_samples(1000).with_seed(7);
    let out = successors(&QdaaState::initial(Rectangle::new(vec![0, 0])), &sys, &config)
        .map_err(|e| e.to_string())?;
    let weight: f64 = out
        .iter()
        .filter(|t| t.target.rectangle() == Some(&Rectangle::new(vec![1, 0])))
        .map(|t| t.weight)
        .sum();
    ensure((weight - oracle).abs() <= 0.02, || format!("weight {weight} vs oracle {oracle}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("weight {weight:.4}, oracle {oracle:.4} (±0.02)"))
}

/// Criterion 4: row-stochastic weights and absorbing empty states.
fn markov_property() -> Result<String, String> {
    let start = Instant::now();
    let mut states = 0;
    for name in bundled::NAMES {
        let sys = bundled::model(name).unwrap();
        for kappa in [4, 8] {
            let config = QdaaConfig::new(kappa).with_samples(500).with_seed(7);
            let qdaa = build(&sys, &config).map_err(|e| format!("{name}: {e}"))?;
            for (id, node) in qdaa.nodes().iter().enumerate() {
                let out = qdaa.transitions_from(id);
                let sum: f64 = out.iter().map(|&(_, w)| w).sum();
                ensure((sum - 1.0).abs() <= 1e-12, || format!("{name} κ={kappa} {node}: {sum}"))?;
                let absorbing = match node {
                    Node::State(s) => s.entry.is_empty(),
                    Node::Sink => true,
                };
                if absorbing {
                    ensure(out == [(id, 1.0)], || format!("{name} κ={kappa} {node}: {out:?}"))?;
                }
            }
            qdaa.check_invariants().map_err(|e| format!("{name} κ={kappa}: {e}"))?;
            states += qdaa.len();
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("{states} vertices over 4 models × κ∈{{4,8}} in {elapsed:.1?}"))
}

/// Criterion 5: grid measure of a quarter disk converges to its area.
fn grid_convergence() -> Result<String, String> {
    let start = Instant::now();
    let disk = |p: &[f64]| p[0] * p[0] + p[1] * p[1] <= 4.0;
    let error = |kappa| {
        let bounds = BoxBounds {
            lo: vec![0.0, 0.0],
            hi: vec![2.5, 2.5],
        };
        let grid = TileGrid::from_box(bounds, None, kappa).unwrap();
        (grid_measure(disk, &grid, 256) - std::f64::consts::PI).abs()
    };
    let (e8, e64, e128) = (error(8), error(64), error(128));
    ensure(e64 <= 0.15, || format!("|λ64 - π| = {e64}"))?;
    ensure(e128 < e8, || format!("error at 128 ({e128}) not below error at 8 ({e8})"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("errors κ=8: {e8:.4}, κ=64: {e64:.4}, κ=128: {e128:.4}"))
}

fn random_system(seed: u64) -> BiochemicalSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let monomials: [&[usize]; 4] = [&[], &[0], &[1], &[0, 1]];
    let components = (0..2)
        .map(|_| {
            monomials
                .iter()
                .map(|vars| MultiAffineTerm::new(rng.gen_range(-1.0..1.0), vars.to_vec()).unwrap())
                .collect()
        })
        .collect();
    let field = MultiAffineField::new(components).unwrap();
    let axis = vec![0.0, 1.0, 2.0, 3.0];
    let partition = Partition::new(vec![axis.clone(), axis]).unwrap();
    let start = Rectangle::new(vec![rng.gen_range(0..3), rng.gen_range(0..3)]);
    BiochemicalSystem::new(vec!["x".into(), "y".into()], field, partition, vec![start]).unwrap()
}

/// Criterion 6: QDAA rectangles lie inside the RATS reach.
fn containment_property() -> Result<String, String> {
    let start = Instant::now();
    let mut spurious = 0;
    // default configuration on every bundled model, plus the unfiltered
    // ammonium run of the case study
    let runs = bundled::NAMES
        .iter()
        .map(|&name| (name, true))
        .chain([("ammonium", false)]);
    for (name, backward) in runs {
        let sys = bundled::model(name).unwrap();
        let config = QdaaConfig::new(4)
            .with_samples(200)
            .with_seed(7)
            .with_backward_filter(backward);
        let c = compare_with_rats(&sys, &config).map_err(|e| format!("{name}: {e}"))?;
        spurious += c.spurious.len();
    }
    for k in 0..20 {
        let sys = random_system(1000 + k);
        let config = QdaaConfig::new(4)
            .with_samples(200)
            .with_seed(k)
            .with_backward_filter(false);
        let (_, states) = reachable(&sys, &config).map_err(|e| format!("random {k}: {e}"))?;
        let q = states.into_iter().map(|s| s.rectangle).collect();
        let c = containment(q, rats_reach(&sys, sys.initial()))
            .map_err(|e| format!("random system {k}: {e}"))?;
        spurious += c.spurious.len();
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "4 bundled models and 20 unfiltered random systems; {spurious} spurious RATS rectangles in {elapsed:.1?}"
    ))
}

/// Criterion 7: ammonium NH4in bounds versus the rectangular abstraction.
fn ammonium() -> Result<String, String> {
    let dir = tmp();
    let elapsed = qdaa_bin(
        &["reach", "--model", "ammonium", "--kappa", "4", "--samples", "200", "--no-backward", "--seed", "7"],
        dir.path(),
    )?;
    let csv = dir.path().join("bounds.csv");
    let (nh4_lo, nh4_hi) = csv_bounds(&csv, "NH4in")?;
    let (_, nh3_hi) = csv_bounds(&csv, "NH3in")?;
    qdaa_bin(&["rats", "--model", "ammonium"], dir.path())?;
    let (_, rats_hi) = json_bounds(&read_json(&dir.path().join("rats.json"))?, "NH4in")?;
    ensure(nh4_lo >= 1e-6 && nh4_hi <= 1e-5, || format!("NH4in [{nh4_lo:e}, {nh4_hi:e}]"))?;
    ensure(nh3_hi <= 1.1e-6, || format!("NH3in upper {nh3_hi:e}"))?;
    ensure(rats_hi >= 1e-4, || format!("RATS NH4in upper {rats_hi:e}"))?;
    ensure(rats_hi >= 10.0 * nh4_hi, || format!("RATS {rats_hi:e} vs QDAA {nh4_hi:e}"))?;
    ensure(elapsed < Duration::from_secs(900), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "QDAA NH4in [{nh4_lo:e}, {nh4_hi:e}], NH3in ≤ {nh3_hi:e}; RATS NH4in ≤ {rats_hi:e} in {elapsed:.1?}"
    ))
}

fn sweep_rows(path: &Path) -> Result<Vec<csv::StringRecord>, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    ensure(
        header.iter().collect::<Vec<_>>()
            == ["kappa", "rectangles", "states", "rho", "sink_mass", "rats_rectangles", "seconds"],
        || format!("header {header:?}"),
    )?;
    reader
        .records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())
}

/// Criterion 8: sweep shape on fig2 and strict refinement on oscillatory.
fn sweep() -> Result<String, String> {
    let dir = tmp();
    qdaa_bin(&["sweep", "--model", "fig2", "--kappas", "4,8,16", "--seed", "7"], dir.path())?;
    let rows = sweep_rows(&dir.path().join("sweep.csv"))?;
    ensure(rows.len() == 3, || format!("{} rows", rows.len()))?;
    for (row, kappa) in rows.iter().zip(["4", "8", "16"]) {
        ensure(&row[0] == kappa, || format!("row {row:?}"))?;
        ensure(&row[1] == "2", || format!("κ={kappa}: {} rectangles", &row[1]))?;
        let rho: f64 = row[3].parse().map_err(|_| format!("rho {:?}", &row[3]))?;
        ensure(rho >= 1.0, || format!("κ={kappa}: rho {rho}"))?;
    }
    let dir = tmp();
    qdaa_bin(&["sweep", "--model", "oscillatory", "--kappas", "4,8", "--seed", "7"], dir.path())?;
    let rows = sweep_rows(&dir.path().join("sweep.csv"))?;
    let mut detail = Vec::new();
    for row in &rows {
        let q: usize = row[1].parse().unwrap();
        let r: usize = row[5].parse().unwrap();
        ensure(q < r, || format!("κ={}: QDAA {q} vs RATS {r}", &row[0]))?;
        ensure(r == 15 * 12, || format!("RATS reaches {r} of 180"))?;
        detail.push(format!("κ={}: {q} (ρ={})", &row[0], &row[3]));
    }
    Ok(format!("fig2 rows well formed; oscillatory {} vs RATS 180", detail.join(", ")))
}

/// Criterion 9: byte-identical reports regardless of thread count.
fn determinism() -> Result<String, String> {
    let commands: [&[&str]; 3] = [
        &["reach", "--model", "fig2", "--kappa", "8", "--samples", "500", "--seed", "7"],
        &["reach", "--model", "oscillatory", "--kappa", "4", "--seed", "7"],
        &["reach", "--model", "ammonium", "--kappa", "4", "--samples", "200", "--no-backward", "--seed", "7"],
    ];
    for args in commands {
        let mut reports = Vec::new();
        for threads in ["1", "1", "4"] {
            let dir = tmp();
            let mut full = args.to_vec();
            full.extend(["--threads", threads]);
            qdaa_bin(&full, dir.path())?;
            reports.push(fs::read(dir.path().join("report.json")).map_err(|e| e.to_string())?);
        }
        ensure(reports.windows(2).all(|w| w[0] == w[1]), || {
            format!("reports differ for `{}`", args.join(" "))
        })?;
    }
    Ok("3 commands × (1, 1, 4 threads) byte-identical".into())
}

/// Criterion 10: backward integration from forward exits returns to the
/// entry facet.
fn reversibility() -> Result<String, String> {
    let sys = bundled::model("fig2").unwrap();
    let bounds = Rectangle::new(vec![0, 1]).bounds(sys.partition());
    let params = SimSettings::default()
        .resolve(sys.field(), &bounds)
        .map_err(|e| e.to_string())?;
    let tol = 10.0 * params.crossing_tol;
    let top = FacetId::new(1, Side::Upper);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let start = [2.5 * (k as f64 + 0.5) / 50.0, 5.0];
        let forward = integrate_until_exit(sys.field(), &start, &bounds, &params, Direction::Forward)
            .map_err(|e| e.to_string())?;
        let ExitEvent::Exited { point, time, .. } = forward else {
            return Err(format!("start {start:?} never left"));
        };
        let backward = integrate_until_exit(sys.field(), &point, &bounds, &params, Direction::Backward)
            .map_err(|e| e.to_string())?;
        let ExitEvent::Exited { point: home, facet, time: back } = backward else {
            return Err(format!("backward run from {point:?} never left"));
        };
        ensure(facet == top, || format!("start {start:?} returned through {facet}"))?;
        ensure((home[1] - 5.0).abs() <= tol, || format!("{home:?} off the facet"))?;
        let dist = ((home[0] - start[0]).powi(2) + (home[1] - start[1]).powi(2)).sqrt();
        ensure(dist <= tol, || format!("start {start:?} returned to {home:?}"))?;
        ensure((back - time).abs() <= 1e-3 * time, || format!("times {time} and {back}"))?;
        worst = worst.max(dist);
    }
    Ok(format!("50/50 returned; worst distance {worst:.2e} (limit {tol:.1e})"))
}

fn main() {
    let checks: [(u32, &str, Check); 10] = [
        (1, "fig2 QDAA reachability", fig2_reach),
        (2, "fig2 RATS baseline", fig2_rats),
        (3, "transition-weight oracle", transition_weight),
        (4, "Markov-chain property", markov_property),
        (5, "grid-measure convergence", grid_convergence),
        (6, "containment in RATS", containment_property),
        (7, "ammonium case study", ammonium),
        (8, "sweep across κ", sweep),
        (9, "determinism", determinism),
        (10, "reversibility", reversibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, title, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string()) {
            continue;
        }
        let result = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS criterion {n:>2} ({title}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n:>2} ({title}): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
