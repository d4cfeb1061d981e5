use std::sync::Arc;

use log::info;
use mvseg_core::hlc::{crop, restore};
use mvseg_core::xdim_transform::{la_to_sa_map, sa_to_la_map};
use mvseg_core::{copy_geometry, LabelMap, Volume};
use mvseg_segnet::{train, EpochLog, NetworkConfig, Sample, TrainConfig, Weights};

use crate::cache::{ArtifactCache, ArtifactKey};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::inference::{la_inputs, sa_inputs, working_grid, Case, LaVariant, SaVariant, Stages};
use crate::par::par_map;
use crate::segmenter::{image_multiple, training_sample, NetSegmenter, Segmenter};

/// Trained weights of one network and its per-epoch log.
#[derive(Debug, Clone, PartialEq)]
pub struct StageArtifacts {
    pub tag: String,
    pub weights: Weights<f32>,
    pub log: Vec<EpochLog>,
}

impl StageArtifacts {
    pub fn segmenter(&self) -> Arc<dyn Segmenter> {
        Arc::new(NetSegmenter::new(self.weights.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub trigger: StageArtifacts,
    pub la: StageArtifacts,
    pub sa: StageArtifacts,
}

impl TrainedPipeline {
    pub fn stages(&self) -> Stages {
        Stages::new(self.trigger.segmenter(), self.la.segmenter(), self.sa.segmenter())
    }

    pub fn artifacts(&self) -> [&StageArtifacts; 3] {
        [&self.trigger, &self.la, &self.sa]
    }
}

/// Every network of the ablation grid. `la` holds all LA rows including the
/// full variant; `sa` holds the SA rows other than TriggerNet.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationModels {
    pub trigger: StageArtifacts,
    pub la: Vec<(LaVariant, StageArtifacts)>,
    pub sa: Vec<(SaVariant, StageArtifacts)>,
}

impl AblationModels {
    pub fn la_full(&self) -> Option<&StageArtifacts> {
        self.la.iter().find(|(v, _)| *v == LaVariant::FULL).map(|(_, a)| a)
    }

    pub fn sa_full(&self) -> Option<&StageArtifacts> {
        self.sa.iter().find(|(v, _)| *v == SaVariant::FULL).map(|(_, a)| a)
    }

    pub fn artifacts(&self) -> Vec<&StageArtifacts> {
        std::iter::once(&self.trigger)
            .chain(self.la.iter().map(|(_, a)| a))
            .chain(self.sa.iter().map(|(_, a)| a))
            .collect()
    }
}

/// A training case on the working grids.
struct Working {
    sa: Volume,
    la: Volume,
    sa_gt: LabelMap,
    la_gt: LabelMap,
}

fn prepare(cases: &[Case], cfg: &PipelineConfig) -> Result<Vec<Working>> {
    par_map(cases, cfg.jobs, |c| {
        let (sa_gt, la_gt) = c.ground_truth()?;
        Ok(Working {
            sa: working_grid(&c.sa_image, cfg)?,
            la: working_grid(&c.la_image, cfg)?,
            sa_gt: working_grid(sa_gt, cfg)?,
            la_gt: working_grid(la_gt, cfg)?,
        })
    })
}

fn train_stage(tag: String, samples: &[Sample], network: &NetworkConfig, t: &TrainConfig) -> Result<StageArtifacts> {
    info!("training {tag}: {} samples, {} epochs", samples.len(), t.epochs);
    let out = train(samples, network, t)?;
    Ok(StageArtifacts {
        tag,
        weights: out.weights,
        log: out.log,
    })
}

fn with_inputs(network: &NetworkConfig, in_channels: usize) -> NetworkConfig {
    NetworkConfig {
        in_channels,
        ..network.clone()
    }
}

fn train_trigger(work: &[Working], cfg: &PipelineConfig) -> Result<StageArtifacts> {
    let net = &cfg.trigger.network;
    let samples = par_map(work, cfg.jobs, |w| training_sample(&w.sa, &[], &w.sa_gt, image_multiple(net)))?;
    train_stage("trigger".into(), &samples, net, &cfg.trigger.train)
}

/// S_SA1 for every training case: TriggerNet predictions, or ground truth
/// under teacher forcing.
fn trigger_outputs(work: &[Working], trigger: &StageArtifacts, cfg: &PipelineConfig, cache: &ArtifactCache) -> Result<Vec<LabelMap>> {
    if cfg.teacher_forcing {
        return Ok(work.iter().map(|w| w.sa_gt.clone()).collect());
    }
    let seg = NetSegmenter::new(trigger.weights.clone());
    par_map(work, cfg.jobs, |w| {
        let key = ArtifactKey::new("trigger", &trigger.weights, &w.sa, &[])?;
        cache.get_or_compute(key, || Ok(copy_geometry(&w.sa, seg.segment(&w.sa, &[])?)?))
    })
}

fn la_samples(work: &[Working], sa2la: &[LabelMap], variant: LaVariant, net: &NetworkConfig, cfg: &PipelineConfig) -> Result<Vec<Sample>> {
    let items: Vec<(&Working, &LabelMap)> = work.iter().zip(sa2la).collect();
    par_map(&items, cfg.jobs, |(w, map)| {
        let (input, prior, rec, _) = la_inputs(&w.la, map, variant, cfg.margin)?;
        let (gt, _) = crop(&w.la_gt, rec.bbox)?;
        let priors: Vec<&LabelMap> = if variant.prior { vec![&prior] } else { vec![] };
        training_sample(&input, &priors, &gt, image_multiple(net))
    })
}

/// S_LA for every training case from the full LA network, or ground truth
/// under teacher forcing.
fn la_outputs(work: &[Working], sa2la: &[LabelMap], la: &StageArtifacts, cfg: &PipelineConfig, cache: &ArtifactCache) -> Result<Vec<LabelMap>> {
    if cfg.teacher_forcing {
        return Ok(work.iter().map(|w| w.la_gt.clone()).collect());
    }
    let seg = NetSegmenter::new(la.weights.clone());
    let items: Vec<(&Working, &LabelMap)> = work.iter().zip(sa2la).collect();
    let tag = format!("la/margin{}", cfg.margin);
    par_map(&items, cfg.jobs, |(w, map)| {
        let key = ArtifactKey::new(&tag, &la.weights, &w.la, &[map])?;
        cache.get_or_compute(key, || {
            let (input, prior, rec, _) = la_inputs(&w.la, map, LaVariant::FULL, cfg.margin)?;
            let out = seg.segment(&input, &[&prior])?;
            Ok(copy_geometry(&w.la, restore(&out, &rec)?)?)
        })
    })
}

fn sa_samples(
    work: &[Working],
    s_sa1: &[LabelMap],
    la2sa: &[LabelMap],
    variant: SaVariant,
    net: &NetworkConfig,
    cfg: &PipelineConfig,
) -> Result<Vec<Sample>> {
    let items: Vec<usize> = (0..work.len()).collect();
    par_map(&items, cfg.jobs, |&i| {
        let w = &work[i];
        let (input, priors, rec, _) = sa_inputs(&w.sa, &s_sa1[i], &la2sa[i], variant, cfg.margin)?;
        let (gt, _) = crop(&w.sa_gt, rec.bbox)?;
        let refs: Vec<&LabelMap> = priors.iter().collect();
        training_sample(&input, &refs, &gt, image_multiple(net))
    })
}

fn train_grid(
    cases: &[Case],
    cfg: &PipelineConfig,
    cache: &ArtifactCache,
    la_variants: &[LaVariant],
    sa_variants: &[SaVariant],
) -> Result<AblationModels> {
    cfg.validate()?;
    let work = prepare(cases, cfg)?;
    if work.is_empty() {
        return Err(mvseg_segnet::Error::EmptyDataset.into());
    }
    let trigger = train_trigger(&work, cfg)?;
    let s_sa1 = trigger_outputs(&work, &trigger, cfg, cache)?;
    let sa2la = work
        .iter()
        .zip(&s_sa1)
        .map(|(w, s)| Ok(sa_to_la_map(s, &w.sa, &w.la)?))
        .collect::<Result<Vec<_>>>()?;

    let mut la = Vec::new();
    for &v in la_variants {
        let net = with_inputs(&cfg.la.network, v.in_channels());
        let samples = la_samples(&work, &sa2la, v, &net, cfg)?;
        la.push((v, train_stage(v.tag(), &samples, &net, &cfg.la.train)?));
    }
    let mut sa = Vec::new();
    if !sa_variants.is_empty() {
        let la_full = la
            .iter()
            .find(|(v, _)| *v == LaVariant::FULL)
            .map(|(_, a)| a)
            .ok_or_else(|| crate::error::Error::Config("SA training needs the full LA network".into()))?;
        let s_la = la_outputs(&work, &sa2la, la_full, cfg, cache)?;
        let la2sa = work
            .iter()
            .zip(&s_la)
            .map(|(w, s)| Ok(la_to_sa_map(s, &w.la, &w.sa)?))
            .collect::<Result<Vec<_>>>()?;
        for &v in sa_variants.iter().filter(|v| !v.is_trigger_only()) {
            let net = with_inputs(&cfg.sa.network, v.in_channels());
            let samples = sa_samples(&work, &s_sa1, &la2sa, v, &net, cfg)?;
            sa.push((v, train_stage(v.tag(), &samples, &net, &cfg.sa.train)?));
        }
    }
    Ok(AblationModels { trigger, la, sa })
}

/// Trains TriggerNet, then LA-SegNet on its projected outputs, then SA-SegNet
/// on both predecessors.
pub fn run_training(cases: &[Case], cfg: &PipelineConfig, cache: &ArtifactCache) -> Result<TrainedPipeline> {
    let mut m = train_grid(cases, cfg, cache, &[LaVariant::FULL], &[SaVariant::FULL])?;
    let sa = m.sa.pop().expect("SA stage trained").1;
    let la = m.la.pop().expect("LA stage trained").1;
    Ok(TrainedPipeline {
        trigger: m.trigger,
        la,
        sa,
    })
}

/// Trains every network of the ablation grid.
pub fn train_ablation(cases: &[Case], cfg: &PipelineConfig, cache: &ArtifactCache) -> Result<AblationModels> {
    train_grid(cases, cfg, cache, &LaVariant::ALL, &SaVariant::ALL)
}
