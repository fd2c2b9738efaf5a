//! Evaluation suite: pairwise F1 over primitive types, Chamfer distance,
//! set-level coverage / minimum matching distance / Jensen-Shannon
//! divergence over voxel occupancy, and report assembly. Distribution
//! scores and CD are reported multiplied by 10^2; F1, COV and IR are
//! 100-scaled.

use crate::geometry::{chamfer_distance, model_voxels, surface_pointcloud, PointCloud, VoxelGrid};
use crate::sem::{parse_model, validate_sequence, BoolOp, CadModel, CurveKind, Token};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("metric requires a non-empty set")]
    EmptySet,
    #[error("pairwise metrics need aligned lists: {generated} generated vs {truth} truth")]
    LengthMismatch { generated: usize, truth: usize },
}

/// Per-type multiset F1 over curve kinds (sketch) and boolean ops
/// (extrusion), 100-scaled. Zero denominators score 0.
pub fn f1_scores(generated: &CadModel, truth: &CadModel) -> (f64, f64) {
    let curve_counts = |model: &CadModel| {
        let mut counts = [0usize; 3];
        for (sketch, _) in &model.pairs {
            for curve in sketch
                .faces
                .iter()
                .flat_map(|f| &f.loops)
                .flat_map(|l| &l.curves)
            {
                let idx = match curve.kind {
                    CurveKind::Line => 0,
                    CurveKind::Arc => 1,
                    CurveKind::Circle => 2,
                };
                counts[idx] += 1;
            }
        }
        counts
    };
    let op_counts = |model: &CadModel| {
        let mut counts = [0usize; 3];
        for (_, extrusion) in &model.pairs {
            let idx = match extrusion.op {
                BoolOp::Add => 0,
                BoolOp::Cut => 1,
                BoolOp::Intersect => 2,
            };
            counts[idx] += 1;
        }
        counts
    };

    let f1 = |gen: [usize; 3], tru: [usize; 3]| {
        let tp: usize = gen.iter().zip(&tru).map(|(g, t)| g.min(t)).sum();
        let total_gen: usize = gen.iter().sum();
        let total_tru: usize = tru.iter().sum();
        if total_gen == 0 || total_tru == 0 || tp == 0 {
            return 0.0;
        }
        let precision = tp as f64 / total_gen as f64;
        let recall = tp as f64 / total_tru as f64;
        100.0 * 2.0 * precision * recall / (precision + recall)
    };

    (
        f1(curve_counts(generated), curve_counts(truth)),
        f1(op_counts(generated), op_counts(truth)),
    )
}

/// Coverage and minimum matching distance over point-cloud sets.
/// COV = percentage of truth items that are the nearest match of at least
/// one generated item; MMD = mean over truth of the closest generated CD,
/// scaled by 10^2.
pub fn coverage_mmd(
    generated: &[PointCloud],
    truth: &[PointCloud],
) -> Result<(f64, f64), MetricError> {
    if generated.is_empty() || truth.is_empty() {
        return Err(MetricError::EmptySet);
    }
    // Full pairwise CD table, generated x truth.
    let table: Vec<Vec<f64>> = generated
        .par_iter()
        .map(|g| {
            truth
                .iter()
                .map(|t| chamfer_distance(g, t).expect("non-empty clouds"))
                .collect()
        })
        .collect();

    let mut covered = vec![false; truth.len()];
    for row in &table {
        let mut best = 0;
        for (j, &d) in row.iter().enumerate() {
            if d < row[best] {
                best = j;
            }
        }
        covered[best] = true;
    }
    let cov = 100.0 * covered.iter().filter(|&&c| c).count() as f64 / truth.len() as f64;

    let mut mmd = 0.0;
    for j in 0..truth.len() {
        let mut best = f64::INFINITY;
        for row in &table {
            if row[j] < best {
                best = row[j];
            }
        }
        mmd += best;
    }
    mmd /= truth.len() as f64;
    Ok((cov, mmd * 100.0))
}

/// Jensen-Shannon divergence between aggregate voxel-occupancy
/// distributions (natural log), scaled by 10^2. Grids must share one
/// resolution.
pub fn jsd(generated: &[VoxelGrid], truth: &[VoxelGrid]) -> Result<f64, MetricError> {
    if generated.is_empty() || truth.is_empty() {
        return Err(MetricError::EmptySet);
    }
    let res = generated[0].resolution;
    assert!(
        generated.iter().chain(truth).all(|g| g.resolution == res),
        "jsd needs a common grid resolution"
    );
    let aggregate = |grids: &[VoxelGrid]| {
        let mut sums = vec![0.0f64; res * res * res];
        for grid in grids {
            for (s, &occ) in sums.iter_mut().zip(&grid.occupancy) {
                if occ {
                    *s += 1.0;
                }
            }
        }
        let total: f64 = sums.iter().sum();
        if total > 0.0 {
            for s in &mut sums {
                *s /= total;
            }
        }
        sums
    };
    let p = aggregate(generated);
    let q = aggregate(truth);
    let mut div = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        let mi = (pi + qi) / 2.0;
        if pi > 0.0 {
            div += 0.5 * pi * (pi / mi).ln();
        }
        if qi > 0.0 {
            div += 0.5 * qi * (qi / mi).ln();
        }
    }
    Ok(div * 100.0)
}

/// Knobs for a full evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub voxel_resolution: usize,
    pub cloud_points: usize,
    pub cloud_seed: u64,
    pub jsd_resolution: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            voxel_resolution: 64,
            cloud_points: 2000,
            cloud_seed: 0,
            jsd_resolution: 28,
        }
    }
}

/// Assembled metric report. Distribution scores and CD carry the 10^2
/// scaling; reserved `vlm`/`he` fields hold externally supplied judge
/// scores.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub schema_version: u32,
    pub f1_sketch: f64,
    pub f1_extrusion: f64,
    pub cd: f64,
    pub cov: f64,
    pub jsd: f64,
    pub mmd: f64,
    pub ir: f64,
    /// Sequences evaluated pairwise for F1/CD.
    pub pairwise_count: usize,
    /// Valid sequences whose geometry could not be realized (degenerate
    /// loops, singular rotations); excluded from geometric metrics.
    pub geometry_failures: usize,
    pub config: EvalConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vlm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub he: Option<f64>,
}

impl EvalReport {
    /// Aligned text table in the standard column order.
    pub fn render_table(&self) -> String {
        let headers = ["F1-Skt", "F1-Ext", "CD", "COV", "JSD", "MMD", "IR"];
        let values = [
            self.f1_sketch,
            self.f1_extrusion,
            self.cd,
            self.cov,
            self.jsd,
            self.mmd,
            self.ir,
        ];
        let cells: Vec<String> = values.iter().map(|v| format!("{v:.2}")).collect();
        let widths: Vec<usize> = headers
            .iter()
            .zip(&cells)
            .map(|(h, c)| h.len().max(c.len()))
            .collect();
        let mut row1 = String::new();
        let mut row2 = String::new();
        for ((h, c), w) in headers.iter().zip(&cells).zip(&widths) {
            row1.push_str(&format!("{h:>w$}  ", w = w));
            row2.push_str(&format!("{c:>w$}  ", w = w));
        }
        format!("{}\n{}\n", row1.trim_end(), row2.trim_end())
    }
}

struct Realized {
    model: CadModel,
    cloud: PointCloud,
    jsd_grid: VoxelGrid,
}

fn realize(tokens: &[Token], config: &EvalConfig) -> Option<Realized> {
    let model = parse_model(tokens).ok()?;
    let grid = model_voxels(&model, config.voxel_resolution).ok()?;
    let cloud = surface_pointcloud(&grid, config.cloud_points, config.cloud_seed).ok()?;
    let jsd_grid = model_voxels(&model, config.jsd_resolution).ok()?;
    Some(Realized {
        model,
        cloud,
        jsd_grid,
    })
}

/// Runs the full suite over aligned generated/truth sequence lists.
/// Invalid generated sequences count toward IR and are excluded from the
/// geometric metrics; pairs whose truth side cannot be realized are skipped
/// pairwise.
pub fn evaluate_run(
    generated: &[Vec<Token>],
    truth: &[Vec<Token>],
    config: &EvalConfig,
) -> Result<EvalReport, MetricError> {
    if generated.is_empty() || truth.is_empty() {
        return Err(MetricError::EmptySet);
    }
    if generated.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            generated: generated.len(),
            truth: truth.len(),
        });
    }

    let invalid = generated
        .iter()
        .filter(|s| !validate_sequence(s).valid)
        .count();
    let ir = 100.0 * invalid as f64 / generated.len() as f64;

    // Realize geometry in parallel; None marks exclusion.
    let gen_realized: Vec<Option<Realized>> = generated
        .par_iter()
        .map(|tokens| {
            if validate_sequence(tokens).valid {
                realize(tokens, config)
            } else {
                None
            }
        })
        .collect();
    let truth_realized: Vec<Option<Realized>> =
        truth.par_iter().map(|tokens| realize(tokens, config)).collect();

    let geometry_failures = gen_realized
        .iter()
        .zip(generated)
        .filter(|(r, tokens)| r.is_none() && validate_sequence(tokens).valid)
        .count();

    let mut f1_sketch_sum = 0.0;
    let mut f1_ext_sum = 0.0;
    let mut cd_sum = 0.0;
    let mut pairwise_count = 0usize;
    for (g, t) in gen_realized.iter().zip(&truth_realized) {
        let (Some(g), Some(t)) = (g, t) else { continue };
        let (f1s, f1e) = f1_scores(&g.model, &t.model);
        f1_sketch_sum += f1s;
        f1_ext_sum += f1e;
        cd_sum += 100.0 * chamfer_distance(&g.cloud, &t.cloud).expect("non-empty clouds");
        pairwise_count += 1;
    }

    let gen_set: Vec<&Realized> = gen_realized.iter().flatten().collect();
    let truth_set: Vec<&Realized> = truth_realized.iter().flatten().collect();
    let (cov, mmd) = if gen_set.is_empty() || truth_set.is_empty() {
        (0.0, f64::INFINITY)
    } else {
        let gen_clouds: Vec<PointCloud> = gen_set.iter().map(|r| r.cloud.clone()).collect();
        let truth_clouds: Vec<PointCloud> = truth_set.iter().map(|r| r.cloud.clone()).collect();
        coverage_mmd(&gen_clouds, &truth_clouds)?
    };
    let jsd_value = if gen_set.is_empty() || truth_set.is_empty() {
        100.0 * std::f64::consts::LN_2
    } else {
        let gen_grids: Vec<VoxelGrid> = gen_set.iter().map(|r| r.jsd_grid.clone()).collect();
        let truth_grids: Vec<VoxelGrid> = truth_set.iter().map(|r| r.jsd_grid.clone()).collect();
        jsd(&gen_grids, &truth_grids)?
    };

    Ok(EvalReport {
        schema_version: 1,
        f1_sketch: if pairwise_count > 0 {
            f1_sketch_sum / pairwise_count as f64
        } else {
            0.0
        },
        f1_extrusion: if pairwise_count > 0 {
            f1_ext_sum / pairwise_count as f64
        } else {
            0.0
        },
        cd: if pairwise_count > 0 {
            cd_sum / pairwise_count as f64
        } else {
            f64::INFINITY
        },
        cov,
        jsd: jsd_value,
        mmd,
        ir,
        pairwise_count,
        geometry_failures,
        config: config.clone(),
        vlm: None,
        he: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;
    use crate::fsa::BranchProbs;
    use crate::sem::{serialize_model, Curve, Extrusion, Face, Loop, Sketch};

    fn model_with_curves(kinds: &[CurveKind]) -> CadModel {
        let curves: Vec<Curve> = kinds
            .iter()
            .enumerate()
            .map(|(i, kind)| match kind {
                CurveKind::Line => Curve::line((10 + i as u8, 20)).unwrap(),
                CurveKind::Arc => Curve::arc((30, 40 + i as u8), (50, 20)).unwrap(),
                CurveKind::Circle => {
                    Curve::circle([(41, 31), (31, 41), (21, 31), (31, 21)]).unwrap()
                }
            })
            .collect();
        CadModel {
            pairs: vec![(
                Sketch {
                    faces: vec![Face {
                        loops: vec![Loop { curves }],
                    }],
                },
                Extrusion {
                    op: BoolOp::Add,
                    v: [16, 48],
                    t: [31, 31, 31],
                    r: Extrusion::identity_r(),
                    s: 31,
                    o: [31, 31],
                },
            )],
        }
    }

    #[test]
    fn identical_models_score_perfect_f1() {
        let model = model_with_curves(&[CurveKind::Line, CurveKind::Arc]);
        assert_eq!(f1_scores(&model, &model), (100.0, 100.0));
    }

    #[test]
    fn two_lines_vs_line_arc_scores_fifty() {
        let generated = model_with_curves(&[CurveKind::Line, CurveKind::Line]);
        let truth = model_with_curves(&[CurveKind::Line, CurveKind::Arc]);
        let (f1s, f1e) = f1_scores(&generated, &truth);
        assert!((f1s - 50.0).abs() < 1e-12);
        assert_eq!(f1e, 100.0);
    }

    #[test]
    fn disjoint_types_score_zero() {
        let generated = model_with_curves(&[CurveKind::Line]);
        let truth = model_with_curves(&[CurveKind::Circle]);
        let (f1s, _) = f1_scores(&generated, &truth);
        assert_eq!(f1s, 0.0);
    }

    #[test]
    fn f1_swaps_precision_and_recall_symmetrically() {
        let a = model_with_curves(&[CurveKind::Line, CurveKind::Line, CurveKind::Arc]);
        let b = model_with_curves(&[CurveKind::Line, CurveKind::Circle]);
        assert_eq!(f1_scores(&a, &b).0, f1_scores(&b, &a).0);
    }

    fn box_cloud(shift: f64, seed: u64) -> PointCloud {
        let mut points = Vec::new();
        let mut rng = {
            use rand_chacha::rand_core::SeedableRng;
            rand_chacha::ChaCha8Rng::seed_from_u64(seed)
        };
        use rand::Rng;
        for _ in 0..60 {
            points.push([
                rng.random::<f64>() + shift,
                rng.random::<f64>(),
                rng.random::<f64>(),
            ]);
        }
        PointCloud { points }
    }

    #[test]
    fn identical_sets_cover_fully_with_zero_mmd() {
        let set: Vec<PointCloud> = (0..4).map(|i| box_cloud(i as f64, i as u64)).collect();
        let (cov, mmd) = coverage_mmd(&set, &set).unwrap();
        assert_eq!(cov, 100.0);
        assert_eq!(mmd, 0.0);
    }

    #[test]
    fn duplicated_generated_item_halves_coverage() {
        let a = box_cloud(0.0, 1);
        let b = box_cloud(5.0, 2);
        let (cov, _) = coverage_mmd(&[a.clone(), a.clone()], &[a.clone(), b]).unwrap();
        assert_eq!(cov, 50.0);
    }

    #[test]
    fn coverage_mmd_match_brute_force_on_10x10() {
        let generated: Vec<PointCloud> = (0..10).map(|i| box_cloud(i as f64 * 0.3, i)).collect();
        let truth: Vec<PointCloud> =
            (0..10).map(|i| box_cloud(i as f64 * 0.4 + 0.1, 100 + i)).collect();
        let (cov, mmd) = coverage_mmd(&generated, &truth).unwrap();

        // Brute force with explicit double loops.
        let cd = |a: &PointCloud, b: &PointCloud| chamfer_distance(a, b).unwrap();
        let mut covered = vec![false; truth.len()];
        for g in &generated {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, t) in truth.iter().enumerate() {
                let d = cd(g, t);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            covered[best] = true;
        }
        let cov_brute = 100.0 * covered.iter().filter(|&&c| c).count() as f64 / 10.0;
        let mut mmd_brute = 0.0;
        for t in &truth {
            let mut best = f64::INFINITY;
            for g in &generated {
                let d = cd(g, t);
                if d < best {
                    best = d;
                }
            }
            mmd_brute += best;
        }
        mmd_brute = mmd_brute * 100.0 / 10.0;
        assert_eq!(cov, cov_brute);
        assert_eq!(mmd, mmd_brute);
    }

    #[test]
    fn empty_sets_rejected() {
        let set = vec![box_cloud(0.0, 0)];
        assert_eq!(coverage_mmd(&[], &set), Err(MetricError::EmptySet));
        assert_eq!(coverage_mmd(&set, &[]), Err(MetricError::EmptySet));
        assert_eq!(jsd(&[], &[]), Err(MetricError::EmptySet));
    }

    fn corner_grid(corner: usize) -> VoxelGrid {
        let mut grid = VoxelGrid::empty(8);
        let (x, y) = (corner % 2 * 6, corner / 2 * 6);
        for dz in 0..2 {
            let idx = grid.index(x + 1, y + 1, dz + 1);
            grid.occupancy[idx] = true;
        }
        grid
    }

    #[test]
    fn jsd_zero_on_identical_sets_and_bounded_on_disjoint() {
        let a = vec![corner_grid(0), corner_grid(1)];
        let b = vec![corner_grid(2), corner_grid(3)];
        assert!(jsd(&a, &a).unwrap().abs() < 1e-12);
        let upper = 100.0 * std::f64::consts::LN_2;
        assert!((jsd(&a, &b).unwrap() - upper).abs() < 1e-6);
        // Symmetry
        assert!((jsd(&a, &b).unwrap() - jsd(&b, &a).unwrap()).abs() < 1e-12);
    }

    fn eval_config() -> EvalConfig {
        EvalConfig {
            voxel_resolution: 24,
            cloud_points: 128,
            cloud_seed: 0,
            jsd_resolution: 12,
        }
    }

    #[test]
    fn identical_lists_score_perfectly() {
        let corpus = synth_corpus(11, 8, 72, &BranchProbs::default()).unwrap();
        let sequences = corpus.sequences();
        let report = evaluate_run(&sequences, &sequences, &eval_config()).unwrap();
        assert_eq!(report.ir, 0.0);
        assert_eq!(report.f1_sketch, 100.0);
        assert_eq!(report.f1_extrusion, 100.0);
        assert_eq!(report.cd, 0.0);
        assert_eq!(report.cov, 100.0);
        assert_eq!(report.mmd, 0.0);
        assert!(report.jsd.abs() < 1e-12);
    }

    #[test]
    fn one_invalid_in_ten_gives_ir_ten_and_nine_pairwise() {
        let corpus = synth_corpus(12, 10, 72, &BranchProbs::default()).unwrap();
        let truth = corpus.sequences();
        let mut generated = truth.clone();
        generated[3] = vec![Token::LINE, Token::PAD];
        let report = evaluate_run(&generated, &truth, &eval_config()).unwrap();
        assert_eq!(report.ir, 10.0);
        assert_eq!(report.pairwise_count, 9 - report.geometry_failures.min(9));
        assert!(report.f1_sketch > 99.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let corpus = synth_corpus(13, 4, 72, &BranchProbs::default()).unwrap();
        let sequences = corpus.sequences();
        assert_eq!(
            evaluate_run(&sequences[..3], &sequences, &eval_config()),
            Err(MetricError::LengthMismatch {
                generated: 3,
                truth: 4
            })
        );
    }

    #[test]
    fn report_json_round_trips() {
        let corpus = synth_corpus(14, 5, 72, &BranchProbs::default()).unwrap();
        let sequences = corpus.sequences();
        let report = evaluate_run(&sequences, &sequences, &eval_config()).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
        let table = report.render_table();
        assert!(table.contains("F1-Skt"));
        assert!(table.lines().count() == 2);
    }
}
