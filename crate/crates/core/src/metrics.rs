//! CSV emission and re-parsing for every artifact the tool writes. Numbers
//! use Rust's shortest-round-trip decimal form, so a written file parses
//! back to bit-identical values and identical runs emit identical bytes.

use std::path::Path;

use thiserror::Error;

use crate::env::SpecDef;
use crate::netlist::ParamSpace;
use crate::ppo::{DeployTrace, TrainResult};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Format(String),
}

fn format_err(msg: impl Into<String>) -> MetricsError {
    MetricsError::Format(msg.into())
}

/// Shortest decimal form that parses back to the same f64 bits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn parse_f64(cell: &str) -> Result<f64, MetricsError> {
    cell.parse::<f64>().map_err(|_| format_err(format!("invalid number `{cell}`")))
}

fn parse_u64(cell: &str) -> Result<u64, MetricsError> {
    cell.parse::<u64>().map_err(|_| format_err(format!("invalid count `{cell}`")))
}

fn parse_usize(cell: &str) -> Result<usize, MetricsError> {
    cell.parse::<usize>().map_err(|_| format_err(format!("invalid count `{cell}`")))
}

fn parse_bool(cell: &str) -> Result<bool, MetricsError> {
    cell.parse::<bool>().map_err(|_| format_err(format!("invalid flag `{cell}`")))
}

fn opt_f64(cell: &str) -> Result<Option<f64>, MetricsError> {
    if cell.is_empty() { Ok(None) } else { parse_f64(cell).map(Some) }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Plain comma-separated table. Cells may not contain separators or quotes;
/// the writer rejects them rather than introducing an escaping dialect.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn push_row<S: Into<String>>(
        &mut self,
        cells: impl IntoIterator<Item = S>,
    ) -> Result<(), MetricsError> {
        let row: Vec<String> = cells.into_iter().map(Into::into).collect();
        if row.len() != self.header.len() {
            return Err(format_err(format!(
                "row has {} cells, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        for cell in &row {
            if cell.contains([',', '"', '\n', '\r']) {
                return Err(format_err(format!("cell `{cell}` contains a separator")));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_csv_string())
            .map_err(|source| MetricsError::Io { path: path.display().to_string(), source })
    }

    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| format_err("empty csv"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for line in lines {
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                return Err(format_err(format!(
                    "row `{line}` has {} cells, header has {}",
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Table { header, rows })
    }

    fn expect_header(&self, want: &[String]) -> Result<(), MetricsError> {
        if self.header != want {
            return Err(format_err(format!(
                "header mismatch: expected {:?}, found {:?}",
                want, self.header
            )));
        }
        Ok(())
    }
}

pub const TRAIN_HEADER: [&str; 9] = [
    "batch",
    "episodes_cum",
    "mean_ep_reward",
    "mean_ep_len",
    "policy_loss",
    "value_loss",
    "clip_frac",
    "deploy_acc",
    "wall_secs",
];

/// One training-metrics row, per optimizer batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRow {
    pub batch: usize,
    pub episodes_cum: usize,
    pub mean_ep_reward: f64,
    pub mean_ep_len: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_frac: f64,
    /// Greedy accuracy when this batch ended on an evaluation, else blank.
    pub deploy_acc: Option<f64>,
    /// Populated only when wall-time recording is on; blank keeps reruns
    /// byte-identical.
    pub wall_secs: Option<f64>,
}

/// Flattens a training result into rows, attaching each periodic evaluation
/// to the batch it followed. Wall times are dropped unless requested.
pub fn train_rows(result: &TrainResult, record_wall_time: bool) -> Vec<TrainRow> {
    result
        .batches
        .iter()
        .map(|b| {
            let eval = result.evals.iter().find(|e| e.after_episode == b.episodes_done);
            TrainRow {
                batch: b.batch,
                episodes_cum: b.episodes_done,
                mean_ep_reward: b.mean_reward,
                mean_ep_len: b.mean_len,
                policy_loss: b.stats.loss,
                value_loss: b.stats.value_loss,
                clip_frac: b.stats.clip_fraction,
                deploy_acc: eval.map(|e| e.accuracy),
                wall_secs: record_wall_time.then_some(b.wall_secs),
            }
        })
        .collect()
}

pub fn train_csv(rows: &[TrainRow]) -> Result<Table, MetricsError> {
    let mut table = Table::new(TRAIN_HEADER);
    for r in rows {
        table.push_row([
            r.batch.to_string(),
            r.episodes_cum.to_string(),
            fmt_f64(r.mean_ep_reward),
            fmt_f64(r.mean_ep_len),
            fmt_f64(r.policy_loss),
            fmt_f64(r.value_loss),
            fmt_f64(r.clip_frac),
            fmt_opt(r.deploy_acc),
            fmt_opt(r.wall_secs),
        ])?;
    }
    Ok(table)
}

pub fn parse_train_csv(text: &str) -> Result<Vec<TrainRow>, MetricsError> {
    let table = Table::parse(text)?;
    table.expect_header(&TRAIN_HEADER.map(str::to_string))?;
    table
        .rows()
        .iter()
        .map(|r| {
            Ok(TrainRow {
                batch: parse_usize(&r[0])?,
                episodes_cum: parse_usize(&r[1])?,
                mean_ep_reward: parse_f64(&r[2])?,
                mean_ep_len: parse_f64(&r[3])?,
                policy_loss: parse_f64(&r[4])?,
                value_loss: parse_f64(&r[5])?,
                clip_frac: parse_f64(&r[6])?,
                deploy_acc: opt_f64(&r[7])?,
                wall_secs: opt_f64(&r[8])?,
            })
        })
        .collect()
}

/// Step-by-step deployment trace: parameters, measured metrics, and reward
/// per step. Step 0 is the initial state and has no reward.
pub fn deploy_csv(
    space: &ParamSpace,
    defs: &[SpecDef],
    trace: &DeployTrace,
) -> Result<Table, MetricsError> {
    let mut header = vec!["step".to_string()];
    header.extend((0..space.len()).map(|i| space.label(i)));
    header.extend(defs.iter().map(|d| d.name.clone()));
    header.push("reward".to_string());

    let mut table = Table::new(header);
    let row = |step: usize, params: &[f64], achieved: &[f64], reward: Option<f64>| {
        let mut cells = vec![step.to_string()];
        cells.extend(params.iter().map(|&v| fmt_f64(v)));
        cells.extend(achieved.iter().map(|&v| fmt_f64(v)));
        cells.push(fmt_opt(reward));
        cells
    };
    table.push_row(row(0, &trace.initial_params, &trace.initial_achieved, None))?;
    for (i, step) in trace.steps.iter().enumerate() {
        table.push_row(row(i + 1, &step.params, &step.achieved, Some(step.reward)))?;
    }
    Ok(table)
}

/// One method-versus-goal comparison outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub goal: Vec<f64>,
    pub success: bool,
    pub evals_used: u64,
    pub best_r: f64,
    pub wall_secs: Option<f64>,
}

pub fn compare_header(defs: &[SpecDef]) -> Vec<String> {
    let mut header = vec!["method".to_string()];
    header.extend(defs.iter().map(|d| format!("goal_{}", d.name)));
    header.extend(["success", "evals_used", "best_r", "wall_secs"].map(str::to_string));
    header
}

pub fn compare_csv(defs: &[SpecDef], rows: &[CompareRow]) -> Result<Table, MetricsError> {
    let mut table = Table::new(compare_header(defs));
    for r in rows {
        if r.goal.len() != defs.len() {
            return Err(format_err(format!(
                "goal has {} values, circuit has {} metrics",
                r.goal.len(),
                defs.len()
            )));
        }
        let mut cells = vec![r.method.clone()];
        cells.extend(r.goal.iter().map(|&v| fmt_f64(v)));
        cells.push(r.success.to_string());
        cells.push(r.evals_used.to_string());
        cells.push(fmt_f64(r.best_r));
        cells.push(fmt_opt(r.wall_secs));
        table.push_row(cells)?;
    }
    Ok(table)
}

pub fn parse_compare_csv(text: &str) -> Result<Vec<CompareRow>, MetricsError> {
    let table = Table::parse(text)?;
    let header = table.header();
    let goal_cols = header.iter().filter(|h| h.starts_with("goal_")).count();
    let want_tail = ["success", "evals_used", "best_r", "wall_secs"];
    if header.len() != goal_cols + 5
        || header[0] != "method"
        || header[1 + goal_cols..] != want_tail.map(str::to_string)
    {
        return Err(format_err(format!("unexpected comparison header {header:?}")));
    }
    table
        .rows()
        .iter()
        .map(|r| {
            Ok(CompareRow {
                method: r[0].clone(),
                goal: r[1..1 + goal_cols]
                    .iter()
                    .map(|c| parse_f64(c))
                    .collect::<Result<_, _>>()?,
                success: parse_bool(&r[1 + goal_cols])?,
                evals_used: parse_u64(&r[2 + goal_cols])?,
                best_r: parse_f64(&r[3 + goal_cols])?,
                wall_secs: opt_f64(&r[4 + goal_cols])?,
            })
        })
        .collect()
}

pub const FOM_CURVE_HEADER: [&str; 4] = ["method", "seed", "evals", "best_fom"];

/// One point on a method's best-so-far figure-of-merit curve.
#[derive(Debug, Clone, PartialEq)]
pub struct FomCurveRow {
    pub method: String,
    pub seed: u64,
    pub evals: u64,
    pub best_fom: f64,
}

pub fn fom_curve_csv(rows: &[FomCurveRow]) -> Result<Table, MetricsError> {
    let mut table = Table::new(FOM_CURVE_HEADER);
    for r in rows {
        table.push_row([
            r.method.clone(),
            r.seed.to_string(),
            r.evals.to_string(),
            fmt_f64(r.best_fom),
        ])?;
    }
    Ok(table)
}

pub fn parse_fom_curve_csv(text: &str) -> Result<Vec<FomCurveRow>, MetricsError> {
    let table = Table::parse(text)?;
    table.expect_header(&FOM_CURVE_HEADER.map(str::to_string))?;
    table
        .rows()
        .iter()
        .map(|r| {
            Ok(FomCurveRow {
                method: r[0].clone(),
                seed: parse_u64(&r[1])?,
                evals: parse_u64(&r[2])?,
                best_fom: parse_f64(&r[3])?,
            })
        })
        .collect()
}

pub const FOM_SUMMARY_HEADER: [&str; 5] =
    ["method", "seed", "final_fom", "best_fom", "evals_used"];

/// Final outcome of one figure-of-merit run.
#[derive(Debug, Clone, PartialEq)]
pub struct FomSummaryRow {
    pub method: String,
    pub seed: u64,
    /// Deployed design's value; for search baselines this equals best_fom.
    pub final_fom: f64,
    pub best_fom: f64,
    pub evals_used: u64,
}

pub fn fom_summary_csv(rows: &[FomSummaryRow]) -> Result<Table, MetricsError> {
    let mut table = Table::new(FOM_SUMMARY_HEADER);
    for r in rows {
        table.push_row([
            r.method.clone(),
            r.seed.to_string(),
            fmt_f64(r.final_fom),
            fmt_f64(r.best_fom),
            r.evals_used.to_string(),
        ])?;
    }
    Ok(table)
}

pub fn parse_fom_summary_csv(text: &str) -> Result<Vec<FomSummaryRow>, MetricsError> {
    let table = Table::parse(text)?;
    table.expect_header(&FOM_SUMMARY_HEADER.map(str::to_string))?;
    table
        .rows()
        .iter()
        .map(|r| {
            Ok(FomSummaryRow {
                method: r[0].clone(),
                seed: parse_u64(&r[1])?,
                final_fom: parse_f64(&r[2])?,
                best_fom: parse_f64(&r[3])?,
                evals_used: parse_u64(&r[4])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Evaluator as _;
    use crate::ppo::{BatchStat, EvalStat, TraceStep, UpdateStats};
    use proptest::prelude::*;

    #[test]
    fn float_formatting_round_trips_hard_cases() {
        for x in [
            0.1 + 0.2,
            1.0 / 3.0,
            -0.0,
            1e-300,
            f64::MAX,
            f64::MIN_POSITIVE,
            5e-324,
            283.127_001,
            f64::INFINITY,
        ] {
            let back = parse_f64(&fmt_f64(x)).unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x}");
        }
    }

    proptest! {
        #[test]
        fn float_formatting_round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(!x.is_nan());
            let back = parse_f64(&fmt_f64(x)).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }

    fn fake_result() -> TrainResult {
        let stats = |loss: f64| UpdateStats {
            loss,
            mean_ratio: 1.0,
            clip_fraction: 0.125,
            entropy: -16.0,
            value_loss: 2.5,
        };
        TrainResult {
            net: crate::policy::PolicyNet::new(
                crate::policy::Variant::MlpBaseline,
                crate::policy::SpecObservation::GoalOnly,
                false,
                crate::policy::PolicySizes {
                    graph_hidden: 2,
                    gat_heads: 1,
                    gat_head_dim: 2,
                    spec_hidden: 2,
                    trunk_hidden: 2,
                },
                crate::netlist::NODE_FEATURE_WIDTH,
                1,
                1,
                &mut crate::rng::stream_rng(0, "test"),
            ),
            episodes: Vec::new(),
            batches: vec![
                BatchStat {
                    batch: 1,
                    episodes_done: 20,
                    mean_reward: -3.25,
                    mean_len: 41.5,
                    stats: stats(0.75),
                    wall_secs: 1.5,
                },
                BatchStat {
                    batch: 2,
                    episodes_done: 40,
                    mean_reward: -1.125,
                    mean_len: 30.0,
                    stats: stats(0.5),
                    wall_secs: 3.25,
                },
            ],
            evals: vec![EvalStat { after_episode: 40, accuracy: 0.55, mean_steps: 12.0 }],
            env_evals: 900,
        }
    }

    #[test]
    fn train_csv_round_trips_and_blanks_off_rows() {
        let rows = train_rows(&fake_result(), false);
        assert_eq!(rows[0].deploy_acc, None);
        assert_eq!(rows[1].deploy_acc, Some(0.55));
        assert!(rows.iter().all(|r| r.wall_secs.is_none()));

        let text = train_csv(&rows).unwrap().to_csv_string();
        let first_line = text.lines().next().unwrap();
        assert_eq!(first_line, TRAIN_HEADER.join(","));
        assert!(text.lines().nth(1).unwrap().ends_with(",,"));
        assert_eq!(parse_train_csv(&text).unwrap(), rows);

        let timed = train_rows(&fake_result(), true);
        assert_eq!(timed[0].wall_secs, Some(1.5));
    }

    #[test]
    fn deploy_csv_labels_parameters_and_metrics() {
        let nl = crate::netlist::parse_netlist(crate::netlist::builtin::OPAMP).unwrap();
        let space = crate::netlist::ParamSpace::from_netlist(&nl);
        let defs = crate::env::OpampEvaluator::new(&space, Default::default())
            .unwrap()
            .spec_defs()
            .to_vec();
        let m = space.len();
        let trace = DeployTrace {
            goal: vec![400.0, 2e7, 57.0, 1e-3],
            initial_params: vec![1.0; m],
            initial_achieved: vec![0.5; 4],
            steps: vec![TraceStep {
                params: vec![2.0; m],
                achieved: vec![0.75; 4],
                reward: -0.25,
            }],
            reached_goal: false,
            final_params: vec![2.0; m],
            final_achieved: vec![0.75; 4],
            env_evals: 2,
        };
        let table = deploy_csv(&space, &defs, &trace).unwrap();
        let header = table.header();
        assert_eq!(header.len(), 1 + m + 4 + 1);
        assert_eq!(header[0], "step");
        assert!(header.contains(&"M1.width_um".to_string()));
        assert!(header.contains(&"C1.value".to_string()));
        assert_eq!(header[1 + m], "gain");
        assert_eq!(table.rows().len(), 2);
        assert_eq!(table.rows()[0][0], "0");
        assert_eq!(table.rows()[0].last().unwrap(), "");
        assert_eq!(table.rows()[1].last().unwrap(), "-0.25");
    }

    #[test]
    fn compare_csv_round_trips() {
        let nl = crate::netlist::parse_netlist(crate::netlist::builtin::OPAMP).unwrap();
        let space = crate::netlist::ParamSpace::from_netlist(&nl);
        let defs = crate::env::OpampEvaluator::new(&space, Default::default())
            .unwrap()
            .spec_defs()
            .to_vec();
        let rows = vec![
            CompareRow {
                method: "policy".into(),
                goal: vec![400.0, 2e7, 57.5, 1e-3],
                success: true,
                evals_used: 9,
                best_r: 10.0,
                wall_secs: None,
            },
            CompareRow {
                method: "genetic".into(),
                goal: vec![400.0, 2e7, 57.5, 1e-3],
                success: false,
                evals_used: 4000,
                best_r: -0.015625,
                wall_secs: None,
            },
        ];
        let text = compare_csv(&defs, &rows).unwrap().to_csv_string();
        assert!(text.starts_with("method,goal_gain,"));
        assert_eq!(parse_compare_csv(&text).unwrap(), rows);

        let bad = CompareRow { goal: vec![1.0], ..rows[0].clone() };
        assert!(compare_csv(&defs, &[bad]).is_err());
    }

    #[test]
    fn fom_tables_round_trip() {
        let curve = vec![
            FomCurveRow { method: "policy".into(), seed: 3, evals: 31, best_fom: 4.125 },
            FomCurveRow { method: "policy".into(), seed: 3, evals: 62, best_fom: 4.5 },
        ];
        let text = fom_curve_csv(&curve).unwrap().to_csv_string();
        assert_eq!(parse_fom_curve_csv(&text).unwrap(), curve);

        let summary = vec![FomSummaryRow {
            method: "random".into(),
            seed: 7,
            final_fom: 4.25,
            best_fom: 4.25,
            evals_used: 1000,
        }];
        let text = fom_summary_csv(&summary).unwrap().to_csv_string();
        assert_eq!(parse_fom_summary_csv(&text).unwrap(), summary);
    }

    #[test]
    fn tables_reject_malformed_input() {
        let mut table = Table::new(["a", "b"]);
        assert!(table.push_row(["1"]).is_err());
        assert!(table.push_row(["1,2", "3"]).is_err());
        assert!(table.push_row(["1", "2"]).is_ok());

        assert!(Table::parse("").is_err());
        assert!(Table::parse("a,b\n1\n").is_err());
        let ok = Table::parse("a,b\n1,\n").unwrap();
        assert_eq!(ok.rows()[0], vec!["1".to_string(), String::new()]);
        assert!(parse_train_csv("x,y\n").is_err());
    }
}
