use std::fmt::Write;
use std::sync::Arc;

use mvseg_core::metrics::{aggregate, evaluate_case, CaseReport, Summary};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::inference::{run_inference, Case, InferenceOutput, LaVariant, SaVariant, Stages};
use crate::par::par_map;
use crate::segmenter::Segmenter;
use crate::training::AblationModels;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEvaluation {
    pub case_id: String,
    pub la: CaseReport,
    pub sa: CaseReport,
    pub la_fell_back: bool,
    pub sa_fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub la: Summary,
    pub sa: Summary,
    pub cases: Vec<CaseEvaluation>,
}

impl Evaluation {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        format!("LA ({} cases)\n{}\nSA ({} cases)\n{}", self.la.cases, self.la.to_table(), self.sa.cases, self.sa.to_table())
    }
}

/// Runs the pipeline on every case, in case order, on `cfg.jobs` workers.
pub fn infer_all<F>(cases: &[Case], stages_for: F, cfg: &PipelineConfig) -> Result<Vec<InferenceOutput>>
where
    F: Fn(&Case) -> Result<Stages> + Sync,
{
    par_map(cases, cfg.jobs, |c| run_inference(&c.sa_image, &c.la_image, &stages_for(c)?, cfg))
}

/// Scores native-grid predictions against both ground truths.
pub fn score(cases: &[Case], outputs: &[InferenceOutput], cfg: &PipelineConfig) -> Result<Evaluation> {
    if cases.len() != outputs.len() {
        return Err(Error::Config(format!("{} cases but {} predictions", cases.len(), outputs.len())));
    }
    let scored = cases
        .iter()
        .zip(outputs)
        .map(|(c, o)| {
            let (sa_gt, la_gt) = c.ground_truth()?;
            Ok(CaseEvaluation {
                case_id: c.id.clone(),
                la: evaluate_case(&c.id, &o.s_la, la_gt, cfg.hd_variant)?,
                sa: evaluate_case(&c.id, &o.s_sa2, sa_gt, cfg.hd_variant)?,
                la_fell_back: o.state.la_fell_back,
                sa_fell_back: o.state.sa_fell_back,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let la: Vec<CaseReport> = scored.iter().map(|c| c.la.clone()).collect();
    let sa: Vec<CaseReport> = scored.iter().map(|c| c.sa.clone()).collect();
    Ok(Evaluation {
        la: aggregate(&la)?,
        sa: aggregate(&sa)?,
        cases: scored,
    })
}

pub fn evaluate<F>(cases: &[Case], stages_for: F, cfg: &PipelineConfig) -> Result<Evaluation>
where
    F: Fn(&Case) -> Result<Stages> + Sync,
{
    let outputs = infer_all(cases, stages_for, cfg)?;
    score(cases, &outputs, cfg)
}

/// Networks for each ablation row.
#[derive(Clone)]
pub struct AblationNets {
    pub trigger: Arc<dyn Segmenter>,
    pub la: Vec<(LaVariant, Arc<dyn Segmenter>)>,
    /// SA rows other than TriggerNet, which is always reported.
    pub sa: Vec<(SaVariant, Arc<dyn Segmenter>)>,
}

impl From<&AblationModels> for AblationNets {
    fn from(m: &AblationModels) -> Self {
        AblationNets {
            trigger: m.trigger.segmenter(),
            la: m.la.iter().map(|(v, a)| (*v, a.segmenter())).collect(),
            sa: m.sa.iter().map(|(v, a)| (*v, a.segmenter())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorFlag {
    pub prior: String,
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub hlc: bool,
    pub priors: Vec<PriorFlag>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub la: Vec<AblationRow>,
    pub sa: Vec<AblationRow>,
}

fn flag(name: &str, used: bool) -> PriorFlag {
    PriorFlag {
        prior: name.into(),
        used,
    }
}

/// Runs each ablation row over `cases`. LA rows score the LA output with
/// TriggerNet upstream; SA rows use the full LA network upstream.
pub fn run_ablation(cases: &[Case], nets: &AblationNets, cfg: &PipelineConfig) -> Result<AblationReport> {
    let mut la_rows = Vec::new();
    for (v, net) in &nets.la {
        let stages = Stages {
            trigger: nets.trigger.clone(),
            la: net.clone(),
            sa: nets.trigger.clone(),
            la_variant: *v,
            sa_variant: SaVariant::TRIGGER_ONLY,
        };
        let e = evaluate(cases, |_| Ok(stages.clone()), cfg)?;
        la_rows.push(AblationRow {
            hlc: v.hlc,
            priors: vec![flag("SA2LAmap", v.prior)],
            summary: e.la,
        });
    }
    let la_full = nets
        .la
        .iter()
        .find(|(v, _)| *v == LaVariant::FULL)
        .map(|(_, n)| n.clone())
        .ok_or_else(|| Error::Config("ablation needs the full LA network".into()))?;
    let mut sa_nets: Vec<(SaVariant, Arc<dyn Segmenter>)> = vec![(SaVariant::TRIGGER_ONLY, nets.trigger.clone())];
    sa_nets.extend(nets.sa.iter().filter(|(v, _)| !v.is_trigger_only()).cloned());
    let mut sa_rows = Vec::new();
    for (v, net) in sa_nets {
        let stages = Stages {
            trigger: nets.trigger.clone(),
            la: la_full.clone(),
            sa: net,
            la_variant: LaVariant::FULL,
            sa_variant: v,
        };
        let e = evaluate(cases, |_| Ok(stages.clone()), cfg)?;
        sa_rows.push(AblationRow {
            hlc: v.hlc,
            priors: vec![flag("S_SA1", v.prior_trigger), flag("LA2SAmap", v.prior_la)],
            summary: e.sa,
        });
    }
    Ok(AblationReport { la: la_rows, sa: sa_rows })
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.prec$}"))
}

fn rows_table(title: &str, rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let Some(first) = rows.first() else {
        return s;
    };
    let _ = writeln!(s, "{title}");
    let mut head = format!("{:<5}", "HLC");
    for p in &first.priors {
        let _ = write!(head, " {:<9}", p.prior);
    }
    head.push_str(" |");
    for c in &first.summary.classes {
        let _ = write!(head, " {:>8}", format!("Dice {}", c.class));
    }
    let _ = write!(head, " {:>8} |", "Dice avg");
    for c in &first.summary.classes {
        let _ = write!(head, " {:>8}", format!("HD {}", c.class));
    }
    let _ = write!(head, " {:>8}", "HD avg");
    let _ = writeln!(s, "{head}");
    for r in rows {
        let mut line = format!("{:<5}", yes_no(r.hlc));
        for p in &r.priors {
            let _ = write!(line, " {:<9}", yes_no(p.used));
        }
        line.push_str(" |");
        for c in &r.summary.classes {
            let _ = write!(line, " {:>8}", cell(c.mean_dice, 4));
        }
        let _ = write!(line, " {:>8} |", cell(r.summary.mean_dice, 4));
        for c in &r.summary.classes {
            let _ = write!(line, " {:>8}", cell(c.mean_hd_mm, 2));
        }
        let _ = write!(line, " {:>8}", cell(r.summary.mean_hd_mm, 2));
        let _ = writeln!(s, "{line}");
    }
    s
}

impl AblationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        format!("{}\n{}", rows_table("LA ablation", &self.la), rows_table("SA ablation", &self.sa))
    }
}
