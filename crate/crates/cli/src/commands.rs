use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use teleop_core::config::{load_robot, ParamSet, RobotConfig};
use teleop_core::recording::{read_recording, AGGRESSIVE_SWEEP_JSONL};
use teleop_core::reference::TargetSample;
use teleop_core::runner::{
    self, metrics, percentile, replay_cycles, CycleRecord, Metrics, SessionOptions,
};

use crate::Common;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] teleop_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    /// 2 for configuration, input and file errors, 3 for internal failures.
    pub fn exit_code(&self) -> u8 {
        use teleop_core::Error as E;
        match self {
            CliError::Core(E::Config(_) | E::Parse { .. } | E::Io { .. }) | CliError::Io { .. } => {
                2
            }
            CliError::Core(_) | CliError::Internal(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

struct Setup {
    robot: RobotConfig,
    samples: Vec<TargetSample>,
}

fn setup(common: &Common) -> Result<Setup> {
    let robot = load_robot(common.config_dir.as_deref())?;
    let samples = match &common.recording {
        Some(path) => read_recording(path)?,
        None => teleop_core::recording::aggressive_sweep(),
    };
    fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;
    Ok(Setup { robot, samples })
}

fn resolve(common: &Common, params: &str) -> Result<ParamSet> {
    Ok(ParamSet::resolve(params, common.config_dir.as_deref())?)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))
}

pub fn replay(common: &Common, params: &str) -> Result<()> {
    let s = setup(common)?;
    let p = resolve(common, params)?;
    let log = runner::replay(&s.robot, &p, &s.samples, SessionOptions::default())?;
    let csv = common.out.join("log.csv");
    let jsonl = common.out.join("log.jsonl");
    let summary = common.out.join("summary.json");
    log.save_csv(&csv)?;
    log.save_jsonl(&jsonl)?;
    if log.is_empty() {
        write_file(&summary, "null\n")?;
        println!("empty recording: no cycles run");
        return Ok(());
    }
    let m = metrics(&log)?;
    write_file(&summary, to_json(&m)? + "\n")?;
    println!("{}", summary_table(&p.name, &m));
    println!(
        "wrote {}, {} and {}",
        csv.display(),
        jsonl.display(),
        summary.display()
    );
    if m.degraded_cycles > 0 {
        eprintln!(
            "warning: {} of {} cycles were degraded (previous plan kept)",
            m.degraded_cycles, m.cycles
        );
    }
    Ok(())
}

fn summary_table(name: &str, m: &Metrics) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "params {name}, {} cycles", m.cycles);
    let _ = writeln!(
        t,
        "  mean lateral accel   {:>9.4} m/s^2",
        m.mean_lateral_accel
    );
    let _ = writeln!(
        t,
        "  max lateral accel    {:>9.4} m/s^2",
        m.max_lateral_accel
    );
    let _ = writeln!(t, "  rms tracking error   {:>9.4} m", m.rms_tracking_error);
    let _ = writeln!(
        t,
        "  solve mean / p99     {:>9.3} / {:.3} ms",
        m.solve_ms_mean, m.solve_ms_p99
    );
    let _ = write!(t, "  degraded cycles      {:>9}", m.degraded_cycles);
    t
}

#[derive(Debug, Serialize)]
struct BenchReport {
    params: String,
    cycles: usize,
    seed: Option<u64>,
    solve_ms_mean: f64,
    solve_ms_max: f64,
    solve_ms_p50: f64,
    solve_ms_p99: f64,
    iterations_mean: f64,
    iterations_max: usize,
    degraded_cycles: usize,
    overrun_cycles: usize,
    iterations: Vec<usize>,
}

/// Adds uniform noise of at most half a millimeter per axis to every
/// recorded position.
fn jitter(samples: &[TargetSample], seed: u64) -> Vec<TargetSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            let d = Vector3::from_fn(|_, _| rng.random_range(-5e-4..=5e-4));
            s.pose.position += d;
            s
        })
        .collect()
}

pub fn bench(common: &Common, params: &str, cycles: usize, seed: Option<u64>) -> Result<()> {
    let s = setup(common)?;
    let p = resolve(common, params)?;
    if s.samples.is_empty() {
        return Err(teleop_core::Error::Input("benchmark recording is empty".into()).into());
    }
    let samples = match seed {
        Some(seed) => jitter(&s.samples, seed),
        None => s.samples,
    };
    let log = replay_cycles(&s.robot, &p, &samples, SessionOptions::default(), cycles)?;
    let r = &log.records;
    let mut times: Vec<f64> = r.iter().map(|c| c.solve_ms).collect();
    times.sort_by(f64::total_cmp);
    let iterations: Vec<usize> = r.iter().map(|c| c.iterations).collect();
    let report = BenchReport {
        params: p.name.clone(),
        cycles: r.len(),
        seed,
        solve_ms_mean: times.iter().sum::<f64>() / times.len() as f64,
        solve_ms_max: times[times.len() - 1],
        solve_ms_p50: percentile(&times, 50.0),
        solve_ms_p99: percentile(&times, 99.0),
        iterations_mean: iterations.iter().sum::<usize>() as f64 / iterations.len() as f64,
        iterations_max: iterations.iter().copied().max().unwrap_or(0),
        degraded_cycles: r.iter().filter(|c| c.degraded).count(),
        overrun_cycles: r.iter().filter(|c| c.overrun).count(),
        iterations,
    };
    let path = common.out.join("bench.json");
    write_file(&path, to_json(&report)? + "\n")?;
    println!("params {}, {} cycles", report.params, report.cycles);
    println!(
        "  {:>9} {:>9} {:>9} {:>9} {:>10}",
        "mean ms", "p50 ms", "p99 ms", "max ms", "mean iter"
    );
    println!(
        "  {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>10.2}",
        report.solve_ms_mean,
        report.solve_ms_p50,
        report.solve_ms_p99,
        report.solve_ms_max,
        report.iterations_mean
    );
    println!(
        "  degraded {}, overruns {}",
        report.degraded_cycles, report.overrun_cycles
    );
    println!("wrote {}", path.display());
    if report.degraded_cycles > 0 {
        eprintln!("warning: {} cycles were degraded", report.degraded_cycles);
    }
    Ok(())
}

/// Roll angle (rotation about world x) of a `w, x, y, z` quaternion.
fn roll(q: &[f64; 4]) -> f64 {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .euler_angles()
        .0
}

pub const COMPARE_HEADER: &str = "t,y_ref,roll_ref,y_a,roll_a,lateral_a,y_b,roll_b,lateral_b";

fn compare_rows(a: &[CycleRecord], b: &[CycleRecord]) -> Result<String> {
    if a.len() != b.len() {
        return Err(CliError::Internal(format!(
            "run lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for (ra, rb) in a.iter().zip(b) {
        if ra.t != rb.t || ra.target_p != rb.target_p {
            return Err(CliError::Internal(format!(
                "runs diverge in their reference at cycle {}",
                ra.cycle
            )));
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            ra.t,
            ra.target_p[1],
            roll(&ra.target_quat),
            ra.ee_p[1],
            roll(&ra.ee_quat),
            ra.lateral_accel,
            rb.ee_p[1],
            roll(&rb.ee_quat),
            rb.lateral_accel
        );
    }
    Ok(out)
}

pub fn compare(common: &Common, params_a: &str, params_b: &str) -> Result<()> {
    let s = setup(common)?;
    let pa = resolve(common, params_a)?;
    let pb = resolve(common, params_b)?;
    if pa == pb {
        println!("note: both runs use identical parameters; the series will coincide");
    }
    let la = runner::replay(&s.robot, &pa, &s.samples, SessionOptions::default())?;
    let lb = runner::replay(&s.robot, &pb, &s.samples, SessionOptions::default())?;
    let path = common.out.join("compare.csv");
    write_file(&path, compare_rows(&la.records, &lb.records)?)?;
    if !la.is_empty() {
        let ma = metrics(&la)?;
        let mb = metrics(&lb)?;
        println!(
            "{:<24} {:>10} {:>10}",
            "",
            format!("A={}", pa.name),
            format!("B={}", pb.name)
        );
        println!(
            "{:<24} {:>10.4} {:>10.4}",
            "mean lateral (m/s^2)", ma.mean_lateral_accel, mb.mean_lateral_accel
        );
        println!(
            "{:<24} {:>10.4} {:>10.4}",
            "rms tracking (m)", ma.rms_tracking_error, mb.rms_tracking_error
        );
        println!(
            "{:<24} {:>10.3} {:>10.3}",
            "mean solve (ms)", ma.solve_ms_mean, mb.solve_ms_mean
        );
        println!(
            "{:<24} {:>10} {:>10}",
            "degraded cycles", ma.degraded_cycles, mb.degraded_cycles
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn fixture(path: &Path) -> Result<()> {
    write_file(path, AGGRESSIVE_SWEEP_JSONL)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn serve(host: &str, port: u16, params: &str, config_dir: Option<&Path>) -> Result<()> {
    let robot = load_robot(config_dir)?;
    let builtin = teleop_core::config::BUILTIN_PARAM_SETS
        .iter()
        .any(|n| n.eq_ignore_ascii_case(params));
    if !builtin {
        return Err(
            teleop_core::Error::Config(format!("serve accepts P1 or P2, got '{params}'")).into(),
        );
    }
    let mut config =
        teleop_service::ServiceConfig::new(robot, ParamSet::resolve(params, config_dir)?);
    config.params_dir = config_dir.map(Path::to_path_buf);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    runtime.block_on(async {
        let addr = format!("{host}:{port}");
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|source| CliError::Io {
                path: addr.clone(),
                source,
            })?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        println!("listening on ws://{local}/ws (schema at http://{local}/schema)");
        teleop_service::serve(listener, teleop_service::Hub::new(config))
            .await
            .map_err(|e| CliError::Internal(e.to_string()))
    })
}
