//! The standard synthetic benchmark: a handful of furnished rooms with a fixed
//! number of views each, plus a held-out view set of the same rooms, and the
//! scaled training setup the benchmark runs with on one CPU core.

use crate::error::Result;
use crate::harness::config::TrainConfig;
use crate::harness::dataset::{generate_views, Dataset, SceneData, ViewSettings};
use crate::harness::derive_seed;
use crate::harness::scene::{default_catalog, generate_scene, SceneSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub scenes: usize,
    pub views: usize,
    pub objects: usize,
    /// Surface density in points per square meter.
    pub density: f64,
    pub seed: u64,
}

impl Default for Benchmark {
    fn default() -> Self {
        Benchmark {
            scenes: 5,
            views: 20,
            objects: 5,
            density: 30.0,
            seed: 77,
        }
    }
}

impl Benchmark {
    pub fn specs(&self) -> Vec<SceneSpec> {
        (0..self.scenes as u64)
            .map(|i| SceneSpec::random(derive_seed(self.seed, &[i]), self.objects, self.density))
            .collect()
    }

    fn build(&self, stream: u64, views: usize) -> Result<Dataset> {
        let settings = ViewSettings::default();
        let mut scenes = Vec::with_capacity(self.scenes);
        for (i, spec) in self.specs().iter().enumerate() {
            let cloud = generate_scene(spec)?;
            let samples = generate_views(&cloud, views, derive_seed(self.seed, &[stream, i as u64]), &settings)?;
            scenes.push(SceneData {
                name: format!("scene_{i:03}"),
                cloud,
                samples,
            });
        }
        Ok(Dataset {
            catalog: default_catalog(),
            scenes,
        })
    }

    /// Training views.
    pub fn dataset(&self) -> Result<Dataset> {
        self.build(1, self.views)
    }

    /// Other views of the same rooms, disjoint in pose sampling from
    /// [`Benchmark::dataset`].
    pub fn held_out(&self, views: usize) -> Result<Dataset> {
        self.build(2, views)
    }

    /// Training configuration sized so that one run takes a few minutes on a
    /// single core: fewer points, neighbors, epochs and a narrower global
    /// feature than the defaults.
    pub fn train_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 15,
            n_points: 512,
            k: 16,
            global_width: 256,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn held_out_views_differ_from_training_views() {
        let b = Benchmark {
            scenes: 1,
            views: 2,
            ..Benchmark::default()
        };
        let a = b.dataset().unwrap();
        let h = b.held_out(2).unwrap();
        assert_eq!(a.scenes[0].cloud, h.scenes[0].cloud);
        for s in &h.scenes[0].samples {
            assert!(a.scenes[0].samples.iter().all(|t| t.view != s.view));
        }
    }
}
