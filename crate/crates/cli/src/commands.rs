use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use sksv::bounds::{certify as certify_spectrum, value_envelope, ErrorCertificate};
use sksv::budget::{Budget, BUDGET_ENV};
use sksv::graph::{incidence_updates, oracle_laplacian, pair_count, EdgeUpdate, GraphSketch, LaplacianOracle, NegativeWeightPolicy};
use sksv::jl::{required_measurements, JlFamily, SketchConfig};
use sksv::oracle::{
    exact_svd, materialize_x, perturbation_diagnostics, subspace_embedding_check, weyl_check, DiagnosticsOptions,
    EmbeddingCheck, OracleDecomposition, PerturbationDiagnostics, WeylReport,
};
use sksv::spectral::{rows_of, sketched_svd, RankReport, SpectralEstimate};
use sksv::turnstile::{decode_state, MatrixUpdate, SketchState, StreamMode};

use crate::manifest::RunManifest;
use crate::store::{emit_report, lock_state, parse_stream, read_source, read_state, write_atomic, Records};
use crate::{
    CertifyArgs, Failure, InitArgs, MergeArgs, Mode, OnError, OracleArgs, SpectrumArgs, UpdateArgs, EXIT_FAIL,
    EXIT_INCOMPATIBLE, EXIT_NUMERICAL, EXIT_RESOURCE,
};

/// Relative mismatch between a state and its replayed log above which
/// certification refuses to run.
const REPLAY_TOLERANCE: f64 = 1e-8;

const MAX_REPORTED_REJECTIONS: usize = 20;

pub fn init(a: &InitArgs, man: &mut RunManifest) -> Result<u8, Failure> {
    if a.out.exists() && !a.force {
        return Err(Failure::usage(format!("{} exists; pass --force to replace it", a.out.display())));
    }
    if a.family == JlFamily::Identity && !a.unsafe_test_mode {
        return Err(Failure::usage("the identity operator requires --unsafe-test-mode"));
    }
    let (rows, cols, mode) = match a.mode {
        Mode::Matrix => {
            if a.vertices.is_some() {
                return Err(Failure::usage("--vertices only applies to --mode graph"));
            }
            let rows = a.rows.ok_or_else(|| Failure::usage("--rows is required in matrix mode"))?;
            let cols = a.cols.ok_or_else(|| Failure::usage("--cols is required in matrix mode"))?;
            (rows, cols, StreamMode::Matrix)
        }
        Mode::Graph => {
            if a.rows.is_some() || a.cols.is_some() {
                return Err(Failure::usage("graph mode takes --vertices, not --rows/--cols"));
            }
            let n = a.vertices.ok_or_else(|| Failure::usage("--vertices is required in graph mode"))?;
            if n < 2 {
                return Err(Failure::usage("a graph needs at least two vertices"));
            }
            (pair_count(n), n, StreamMode::Graph)
        }
    };
    let m = match (a.family, a.m, a.k) {
        (JlFamily::Identity, Some(m), _) if m != rows => {
            return Err(Failure::usage(format!("the identity operator needs m = N = {rows}")));
        }
        (JlFamily::Identity, _, _) => rows,
        (_, Some(m), _) => m,
        (family, None, Some(k)) => {
            required_measurements(k, a.eps, a.delta, family).map_err(|e| Failure::usage(e.to_string()))?
        }
        (_, None, None) => return Err(Failure::usage("pass --k to size the sketch, or --m explicitly")),
    };
    let config = SketchConfig {
        seed: a.seed,
        family: a.family,
        m,
        rows,
        cols,
        eps: a.eps,
        delta: a.delta,
        k_hint: a.k,
    };
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    man.config = Some(config.clone());
    let bytes = match mode {
        StreamMode::Matrix => SketchState::new(config)?.to_bytes(),
        StreamMode::Graph => GraphSketch::new(config)?.to_bytes(),
    };
    write_atomic(&a.out, &bytes)?;
    man.output(&a.out);
    println!("m={m}");
    Ok(0)
}

pub fn update(a: &UpdateArgs, man: &mut RunManifest) -> Result<u8, Failure> {
    let locked = lock_state(&a.state, true)?;
    man.input(&a.state, &locked.bytes);
    let (state, mode) = decode_state(&locked.bytes)?;
    let config = state.config().clone();
    man.config = Some(config.clone());

    let source = read_source(a.input.as_deref(), man)?;
    let skip = matches!(a.on_error, OnError::Skip);
    let (records, rejected) = parse_stream(&source, mode, (config.rows, config.cols), skip)?;
    man.stat("applied", records.len());
    man.stat("rejected", rejected.len());
    if !rejected.is_empty() {
        let shown: Vec<String> = rejected.iter().take(MAX_REPORTED_REJECTIONS).cloned().collect();
        man.stat("rejections", shown);
    }
    if records.len() == 0 {
        man.stat("updates_applied_total", state.updates_applied());
        return Ok(0);
    }

    let (bytes, total) = match records {
        Records::Matrix(updates) => {
            let mut state = state;
            state.apply_batch(&updates)?;
            (state.to_bytes(), state.updates_applied())
        }
        Records::Edges(edges) => {
            let mut g = GraphSketch::from_bytes(&locked.bytes)?;
            for e in &edges {
                g.apply_edge_update(e)?;
            }
            (g.to_bytes(), g.state().updates_applied())
        }
    };
    write_atomic(&a.state, &bytes)?;
    man.output(&a.state);
    man.stat("updates_applied_total", total);
    Ok(0)
}

#[derive(Serialize)]
struct GraphSummary {
    vertices: usize,
    k_detected: usize,
    /// `n − k_detected`: components implied by the sketched rank.
    c_implied: usize,
    /// Components of the replayed graph, when a log is supplied.
    c_oracle: Option<usize>,
}

#[derive(Serialize)]
struct SpectrumReport<'a> {
    mode: StreamMode,
    #[serde(flatten)]
    estimate: &'a SpectralEstimate,
    rank_report: RankReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<GraphSummary>,
}

fn check_tol(tol: f64) -> Result<(), Failure> {
    if tol.is_finite() && (0.0..1.0).contains(&tol) {
        Ok(())
    } else {
        Err(Failure::usage(format!("--tol must lie in [0, 1), got {tol}")))
    }
}

fn budget() -> Result<Budget, Failure> {
    Budget::from_env().map_err(|e| Failure::usage(e.to_string()))
}

/// Lifts budget failures with a pointer to the knob that controls them.
fn with_guidance(f: Failure) -> Failure {
    if f.code == EXIT_RESOURCE {
        Failure::new(
            EXIT_RESOURCE,
            format!(
                "{}; the oracle materializes dense matrices and is meant for desk-scale checks (set {BUDGET_ENV} to change the byte cap)",
                f.message
            ),
        )
    } else {
        f
    }
}

fn estimate(y: &DMatrix<f64>, tol: f64) -> Result<SpectralEstimate, Failure> {
    sketched_svd(y, tol).map_err(|e| Failure::new(EXIT_NUMERICAL, e.to_string()))
}

fn read_edges(path: &Path, n: usize, man: &mut RunManifest) -> Result<Vec<EdgeUpdate>, Failure> {
    let bytes = read_source(Some(path), man)?;
    match parse_stream(&bytes, StreamMode::Graph, (pair_count(n), n), false)?.0 {
        Records::Edges(e) => Ok(e),
        Records::Matrix(_) => unreachable!("graph mode parses edges"),
    }
}

fn read_matrix_log(path: &Path, shape: (usize, usize), man: &mut RunManifest) -> Result<Vec<MatrixUpdate>, Failure> {
    let bytes = read_source(Some(path), man)?;
    match parse_stream(&bytes, StreamMode::Matrix, shape, false)?.0 {
        Records::Matrix(u) => Ok(u),
        Records::Edges(_) => unreachable!("matrix mode parses entries"),
    }
}

fn policy(allow_negative: bool) -> NegativeWeightPolicy {
    if allow_negative {
        NegativeWeightPolicy::Warn
    } else {
        NegativeWeightPolicy::Error
    }
}

pub fn spectrum(a: &SpectrumArgs, man: &mut RunManifest) -> Result<u8, Failure> {
    check_tol(a.tol)?;
    let (state, mode) = read_state(&a.state, man)?;
    let est = estimate(state.sketch(), a.tol)?;
    let rank_report = est.rank_report(state.config().k_hint);
    if let Some(w) = &rank_report.warning {
        eprintln!("warning: {w}");
    }
    let graph = match mode {
        StreamMode::Matrix => {
            if a.log.is_some() {
                return Err(Failure::usage("--log only applies to graph states"));
            }
            None
        }
        StreamMode::Graph => {
            let n = state.config().cols;
            let c_oracle = match &a.log {
                Some(path) => {
                    let edges = read_edges(path, n, man)?;
                    let lap = oracle_laplacian(&edges, n, NegativeWeightPolicy::Warn, &budget()?)
                        .map_err(|e| with_guidance(e.into()))?;
                    Some(lap.components)
                }
                None => None,
            };
            Some(GraphSummary {
                vertices: n,
                k_detected: est.rank,
                c_implied: n - est.rank,
                c_oracle,
            })
        }
    };
    man.stat("rank", est.rank);
    let report = SpectrumReport {
        mode,
        estimate: &est,
        rank_report,
        graph,
    };
    emit_report(&report, a.out.as_deref(), man)?;
    Ok(0)
}

#[derive(Serialize)]
struct GraphOracleSummary {
    components: usize,
    expected_rank: usize,
    unit_weight: bool,
    /// Whether `XᵀX` equals `diag(d) − A`; false for non-unit weights.
    gram_matches_laplacian: bool,
    laplacian_eigenvalues: Vec<f64>,
    warnings: Vec<String>,
}

impl GraphOracleSummary {
    fn of(lap: &LaplacianOracle) -> Self {
        let scale = lap.laplacian.amax().max(1.0);
        GraphOracleSummary {
            components: lap.components,
            expected_rank: lap.expected_rank(),
            unit_weight: lap.unit_weight,
            gram_matches_laplacian: (&lap.incidence_gram - &lap.laplacian).amax() <= 1e-12 * scale,
            laplacian_eigenvalues: lap.laplacian_eigenvalues(),
            warnings: lap.warnings.clone(),
        }
    }
}

/// Replays a log in the state's mode and returns the dense oracle.
fn build_oracle(
    mode: StreamMode,
    config: &SketchConfig,
    log: &Path,
    tol: f64,
    allow_negative: bool,
    budget: &Budget,
    man: &mut RunManifest,
) -> Result<(Vec<MatrixUpdate>, OracleDecomposition, Option<GraphOracleSummary>), Failure> {
    let (updates, graph) = match mode {
        StreamMode::Matrix => (read_matrix_log(log, (config.rows, config.cols), man)?, None),
        StreamMode::Graph => {
            let n = config.cols;
            let edges = read_edges(log, n, man)?;
            let lap = oracle_laplacian(&edges, n, policy(allow_negative), budget).map_err(|e| with_guidance(e.into()))?;
            for w in &lap.warnings {
                eprintln!("warning: {w}");
            }
            (incidence_updates(&edges, n)?, Some(GraphOracleSummary::of(&lap)))
        }
    };
    let x = materialize_x(&updates, config.rows, config.cols, budget).map_err(|e| with_guidance(e.into()))?;
    let oracle = exact_svd(x, tol)?;
    Ok((updates, oracle, graph))
}

#[derive(Serialize)]
struct CertifyReport {
    mode: StreamMode,
    pass: bool,
    certificate: ErrorCertificate,
    rank_report: RankReport,
    diagnostics: PerturbationDiagnostics,
    /// Absent when the sketched and oracle ranks differ.
    weyl: Option<WeylReport>,
    embedding: EmbeddingCheck,
    /// `‖Y − replay(log)‖_F / ‖replay(log)‖_F`.
    replay_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<GraphOracleSummary>,
}

pub fn certify(a: &CertifyArgs, man: &mut RunManifest) -> Result<u8, Failure> {
    check_tol(a.tol)?;
    let (state, mode) = read_state(&a.state, man)?;
    let config = state.config().clone();
    let eps = a.eps.unwrap_or(config.eps);
    value_envelope(eps).map_err(|e| Failure::usage(e.to_string()))?;
    let budget = budget()?;

    let (updates, oracle, graph) = build_oracle(mode, &config, &a.log, a.tol, a.allow_negative, &budget, man)?;

    let mut replay = SketchState::new(config.clone())?;
    replay.apply_batch(&updates)?;
    let replay_norm = replay.sketch().norm();
    let diff = (state.sketch() - replay.sketch()).norm();
    let replay_residual = if replay_norm > 0.0 { diff / replay_norm } else { diff };
    if replay_residual > REPLAY_TOLERANCE {
        return Err(Failure::new(
            EXIT_INCOMPATIBLE,
            format!("state does not match the update log (relative residual {replay_residual:.3e})"),
        ));
    }

    let est = estimate(state.sketch(), a.tol)?;
    let certificate = certify_spectrum(&oracle, &est, eps)?.with_context(config.m, config.seed, None);
    let opts = DiagnosticsOptions {
        budget,
        full_delta_phi: a.full_delta_phi,
    };
    let diagnostics =
        perturbation_diagnostics(&config, &oracle, state.sketch(), &opts).map_err(|e| with_guidance(e.into()))?;
    let weyl = if est.rank == oracle.rank() {
        Some(weyl_check(&oracle, &diagnostics, &est)?)
    } else {
        None
    };
    let embedding = subspace_embedding_check(&config, &oracle, eps, &budget).map_err(|e| with_guidance(e.into()))?;
    let rank_report = est.rank_report(Some(oracle.rank()));
    if let Some(w) = &rank_report.warning {
        eprintln!("warning: {w}");
    }

    let pass = certificate.overall_pass;
    man.stat("pass", pass);
    man.stat("eps", eps);
    let report = CertifyReport {
        mode,
        pass,
        certificate,
        rank_report,
        diagnostics,
        weyl,
        embedding,
        replay_residual,
        graph,
    };
    emit_report(&report, a.out.as_deref(), man)?;
    Ok(if pass { 0 } else { EXIT_FAIL })
}

pub fn merge(a: &MergeArgs, man: &mut RunManifest) -> Result<u8, Failure> {
    let la = lock_state(&a.a, false)?;
    man.input(&a.a, &la.bytes);
    let lb = lock_state(&a.b, false)?;
    man.input(&a.b, &lb.bytes);
    let (sa, mode_a) = decode_state(&la.bytes)?;
    let (sb, mode_b) = decode_state(&lb.bytes)?;
    man.config = Some(sa.config().clone());
    if mode_a != mode_b {
        return Err(Failure::new(
            EXIT_INCOMPATIBLE,
            format!("cannot merge a {mode_a:?} state with a {mode_b:?} state"),
        ));
    }
    let bytes = match mode_a {
        StreamMode::Matrix => sa.merge(sb)?.to_bytes(),
        StreamMode::Graph => GraphSketch::from_bytes(&la.bytes)?
            .merge(GraphSketch::from_bytes(&lb.bytes)?)?
            .to_bytes(),
    };
    write_atomic(&a.out, &bytes)?;
    man.output(&a.out);
    Ok(0)
}

#[derive(Serialize)]
struct OracleReport {
    mode: StreamMode,
    rank: usize,
    tol_used: f64,
    singular_values: Vec<f64>,
    eigenvalues: Vec<f64>,
    right_vectors: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<GraphOracleSummary>,
}

pub fn oracle(a: &OracleArgs, man: &mut RunManifest) -> Result<u8, Failure> {
    check_tol(a.tol)?;
    let (state, mode) = read_state(&a.state, man)?;
    let budget = budget()?;
    let (_, oracle, graph) = build_oracle(mode, state.config(), &a.log, a.tol, a.allow_negative, &budget, man)?;
    man.stat("rank", oracle.rank());
    let report = OracleReport {
        mode,
        rank: oracle.rank(),
        tol_used: oracle.tol_used,
        eigenvalues: oracle.eigenvalues(),
        right_vectors: rows_of(&oracle.v),
        singular_values: oracle.singular_values,
        graph,
    };
    emit_report(&report, a.out.as_deref(), man)?;
    Ok(0)
}
