//! The alternating multiple-instance training loop.
//!
//! Each iteration scores every weak tile with the current classifier, keeps
//! the most probable tiles of every bag (labeled with the bag label), adds
//! the reinforced set with label 1, and trains one epoch on the result.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::classifier::{
    init_model, predict_bags, train_epoch, Adam, Architecture, BagPrediction, ClassifierModel, LabeledSample,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::types::{Bag, Provenance, Tile, TrainingCorpus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionConfig {
    pub pos_per_bag: usize,
    pub neg_per_bag: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            pos_per_bag: 1,
            neg_per_bag: 5,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pos_per_bag == 0 || self.neg_per_bag == 0 {
            return Err(Error::InvalidConfig("per-bag selection quotas must be at least 1".into()));
        }
        Ok(())
    }
}

/// Instance-labeled training set for iteration `iteration` (1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct TemporarySet {
    pub iteration: usize,
    pub entries: Vec<(Tile, u8)>,
}

impl TemporarySet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub set_size: Vec<usize>,
}

impl TrainingHistory {
    pub fn epochs(&self) -> usize {
        self.loss.len()
    }

    /// CSV with header `epoch,loss,acc,d_size`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,loss,acc,d_size")?;
        for e in 0..self.epochs() {
            writeln!(f, "{},{},{},{}", e + 1, self.loss[e], self.accuracy[e], self.set_size[e])?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Top tiles of every bag by probability: `pos_per_bag` from positive bags
/// labeled 1, `neg_per_bag` from negative bags labeled 0. Small bags give up
/// all their tiles; ties go to the smaller tile index.
pub fn select_instances(
    predictions: &[BagPrediction],
    bags: &[Bag],
    config: &SelectionConfig,
) -> Result<Vec<(Tile, u8)>> {
    if predictions.len() != bags.len() {
        return Err(Error::AlignmentMismatch(format!(
            "{} predictions for {} bags",
            predictions.len(),
            bags.len()
        )));
    }
    let mut out = Vec::new();
    for (pred, bag) in predictions.iter().zip(bags) {
        if pred.bag_index != bag.index || pred.probs.len() != bag.tiles.len() {
            return Err(Error::AlignmentMismatch(format!(
                "prediction for bag {} ({} probs) against bag {} ({} tiles)",
                pred.bag_index,
                pred.probs.len(),
                bag.index,
                bag.tiles.len()
            )));
        }
        let quota = if bag.label.is_positive() {
            config.pos_per_bag
        } else {
            config.neg_per_bag
        };
        let mut order: Vec<usize> = (0..pred.probs.len()).collect();
        // Stable sort keeps ascending index among equal probabilities.
        order.sort_by(|&a, &b| pred.probs[b].total_cmp(&pred.probs[a]));
        let target = bag.label.as_target();
        out.extend(order.into_iter().take(quota).map(|j| (bag.tiles[j], target)));
    }
    Ok(out)
}

type FootprintKey = (usize, usize, usize, usize);

fn footprint(t: &Tile) -> FootprintKey {
    (t.bag_index, t.row, t.col, t.size)
}

/// D = selected ∪ {(t, 1) : t ∈ reinforced}. A selected tile with the same
/// bag and footprint as a reinforced tile is dropped in its favor, and
/// repeated (bag, index, provenance) entries are kept once.
pub fn build_temporary_set(selected: &[(Tile, u8)], reinforced: &[Tile], iteration: usize) -> TemporarySet {
    let reinforced_keys: HashSet<FootprintKey> = reinforced.iter().map(footprint).collect();
    let mut seen: HashSet<(usize, usize, Provenance)> = HashSet::new();
    let mut entries = Vec::with_capacity(selected.len() + reinforced.len());
    for &(t, y) in selected {
        if reinforced_keys.contains(&footprint(&t)) {
            continue;
        }
        if seen.insert((t.bag_index, t.tile_index, t.provenance)) {
            entries.push((t, y));
        }
    }
    for &t in reinforced {
        if seen.insert((t.bag_index, t.tile_index, t.provenance)) {
            entries.push((t, 1));
        }
    }
    TemporarySet {
        iteration: iteration.max(1),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilConfig {
    pub train: TrainConfig,
    pub selection: SelectionConfig,
    /// Include the reinforced set in every temporary set.
    pub use_reinforced: bool,
    /// Carry selections over from earlier iterations instead of rebuilding.
    pub accumulate: bool,
}

impl Default for MilConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            selection: SelectionConfig::default(),
            use_reinforced: true,
            accumulate: false,
        }
    }
}

fn samples_for(set: &TemporarySet, bags: &[Bag]) -> Vec<LabeledSample> {
    set.entries
        .iter()
        .map(|(t, y)| LabeledSample {
            pixels: bags[t.bag_index].tile_pixels(t),
            target: *y,
        })
        .collect()
}

fn accuracy_on(model: &ClassifierModel, samples: &[LabeledSample]) -> Result<f64> {
    let mut pred = model.predictor();
    let mut correct = 0usize;
    for s in samples {
        let p = pred.predict(&s.pixels)?;
        if (p > 0.5) == (s.target == 1) {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

pub fn train(corpus: &TrainingCorpus, config: &MilConfig) -> Result<(ClassifierModel, TrainingHistory)> {
    train_observed(corpus, config, |_| {})
}

/// `train`, calling `observer` with every temporary set before it is used.
pub fn train_observed(
    corpus: &TrainingCorpus,
    config: &MilConfig,
    mut observer: impl FnMut(&TemporarySet),
) -> Result<(ClassifierModel, TrainingHistory)> {
    let (positives, negatives) = corpus.count_by_label();
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateCorpus { positives, negatives });
    }
    config.selection.validate()?;
    config.train.validate()?;
    let tile_size = corpus
        .all_tiles()
        .next()
        .map(|t| t.size)
        .ok_or(Error::EmptyTrainingSet)?;
    if let Some(t) = corpus.all_tiles().find(|t| t.size != tile_size) {
        return Err(Error::ArchitectureMismatch {
            expected: tile_size,
            found: t.size,
        });
    }
    for bag in &corpus.bags {
        if bag.tiles.is_empty() {
            return Err(Error::EmptyBag(bag.index));
        }
    }

    let mut model = init_model(config.train.seed, Architecture::compact(tile_size))?;
    let mut optimizer = Adam::new(model.parameter_count());
    let mut history = TrainingHistory::default();
    let reinforced: Vec<Tile> = if config.use_reinforced {
        corpus.reinforced().copied().collect()
    } else {
        Vec::new()
    };
    let mut carried: Vec<(Tile, u8)> = Vec::new();

    for k in 1..=config.train.epochs {
        let predictions = predict_bags(&model, &corpus.bags)?;
        let mut selected = select_instances(&predictions, &corpus.bags, &config.selection)?;
        if config.accumulate {
            carried.append(&mut selected);
            selected = carried.clone();
        }
        let set = build_temporary_set(&selected, &reinforced, k);
        if config.accumulate {
            carried = set.entries.iter().filter(|(t, _)| t.provenance == Provenance::Weak).copied().collect();
        }
        observer(&set);
        let samples = samples_for(&set, &corpus.bags);
        let loss = train_epoch(&mut model, &mut optimizer, &samples, &config.train, k)?;
        history.loss.push(loss);
        history.accuracy.push(accuracy_on(&model, &samples)?);
        history.set_size.push(set.len());
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BagLabel, LesionImage, RegionMask, TileLabel};
    use image::RgbImage;

    fn tile(bag: usize, j: usize, prov: Provenance) -> Tile {
        Tile {
            bag_index: bag,
            tile_index: j,
            row: j * 4,
            col: 0,
            size: 4,
            label: TileLabel::Positive,
            provenance: prov,
        }
    }

    fn bag(index: usize, label: BagLabel, n: usize) -> Bag {
        Bag {
            index,
            image: LesionImage::new(format!("b{index}"), RgbImage::new(4, (4 * n.max(1)) as u32)),
            mask: RegionMask::full(4 * n.max(1), 4),
            label,
            boxes: vec![],
            tiles: (0..n).map(|j| tile(index, j, Provenance::Weak)).collect(),
            reinforced: vec![],
        }
    }

    fn pred(bag: usize, probs: &[f64]) -> BagPrediction {
        BagPrediction::from_probs(bag, probs.to_vec()).unwrap()
    }

    #[test]
    fn positive_bag_contributes_its_argmax() {
        let bags = [bag(0, BagLabel::Positive, 3)];
        let sel = select_instances(&[pred(0, &[0.1, 0.8, 0.3])], &bags, &SelectionConfig::default()).unwrap();
        assert_eq!(sel.len(), 1);
        assert_eq!((sel[0].0.tile_index, sel[0].1), (1, 1));
    }

    #[test]
    fn negative_bag_contributes_top_five() {
        let bags = [bag(0, BagLabel::Negative, 6)];
        let sel = select_instances(
            &[pred(0, &[0.9, 0.8, 0.1, 0.2, 0.3, 0.05])],
            &bags,
            &SelectionConfig::default(),
        )
        .unwrap();
        let js: Vec<usize> = sel.iter().map(|(t, _)| t.tile_index).collect();
        assert_eq!(js, vec![0, 1, 4, 3, 2]);
        assert!(sel.iter().all(|&(_, y)| y == 0));
    }

    #[test]
    fn small_bag_gives_everything() {
        let bags = [bag(0, BagLabel::Negative, 3)];
        let sel = select_instances(&[pred(0, &[0.2, 0.2, 0.1])], &bags, &SelectionConfig::default()).unwrap();
        assert_eq!(sel.iter().map(|(t, _)| t.tile_index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn misaligned_predictions_are_rejected() {
        let bags = [bag(0, BagLabel::Negative, 3), bag(1, BagLabel::Positive, 2)];
        let cfg = SelectionConfig::default();
        assert!(matches!(
            select_instances(&[pred(0, &[0.1, 0.2, 0.3])], &bags, &cfg),
            Err(Error::AlignmentMismatch(_))
        ));
        assert!(matches!(
            select_instances(&[pred(0, &[0.1, 0.2]), pred(1, &[0.1, 0.2])], &bags, &cfg),
            Err(Error::AlignmentMismatch(_))
        ));
    }

    #[test]
    fn reinforced_only_set() {
        let s: Vec<Tile> = (0..250).map(|j| tile(j / 5, j % 5, Provenance::Reinforced)).collect();
        let d = build_temporary_set(&[], &s, 1);
        assert_eq!(d.len(), 250);
        assert!(d.entries.iter().all(|&(_, y)| y == 1));
    }

    #[test]
    fn no_reinforced_set_keeps_selection() {
        let sel = vec![(tile(0, 1, Provenance::Weak), 1), (tile(1, 0, Provenance::Weak), 0)];
        assert_eq!(build_temporary_set(&sel, &[], 3).entries, sel);
    }

    #[test]
    fn selection_matching_a_reinforced_tile_appears_once() {
        let weak = tile(0, 2, Provenance::Weak);
        let mut strong = weak;
        strong.provenance = Provenance::Reinforced;
        strong.tile_index = 0;
        let d = build_temporary_set(&[(weak, 1), (weak, 1)], &[strong], 1);
        assert_eq!(d.entries, vec![(strong, 1)]);
    }

    #[test]
    fn corpus_without_positives_is_degenerate() {
        let corpus = TrainingCorpus::new(vec![bag(0, BagLabel::Negative, 2)]).unwrap();
        assert!(matches!(
            train(&corpus, &MilConfig::default()),
            Err(Error::DegenerateCorpus { positives: 0, negatives: 1 })
        ));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let corpus = TrainingCorpus::new(vec![bag(0, BagLabel::Negative, 2), bag(1, BagLabel::Positive, 2)]).unwrap();
        let mut cfg = MilConfig::default();
        cfg.train.epochs = 0;
        cfg.train.seed = 4;
        let (m, h) = train(&corpus, &cfg).unwrap();
        assert_eq!(m, init_model(4, Architecture::compact(4)).unwrap());
        assert_eq!(h.epochs(), 0);
    }
}
