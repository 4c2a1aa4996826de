//! Perfect-sight object encodings built from ground-truth annotations.
//!
//! An object encodes as the average of three projected parts: class embedding,
//! mean attribute embedding (zero when there are no attributes), and the
//! normalized box. The projections are fixed random matrices drawn from the
//! configured seeds, so encodings are deterministic for a given configuration.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{
    BoundingBox, DetectedObject, EmbeddingTable, FeatureMatrix, ObjectAnnotation, SceneGraph,
};
use crate::error::{Error, Result};
use crate::ingestion::{DatasetBundle, ImageFeatures};
use crate::seed::{rng_for, SeedPart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSeeds {
    pub class: u64,
    pub attribute: u64,
    pub bbox: u64,
}

impl Default for EncoderSeeds {
    fn default() -> Self {
        EncoderSeeds {
            class: 1,
            attribute: 2,
            bbox: 3,
        }
    }
}

/// Dense `rows x cols` projection, row-major.
#[derive(Debug, Clone, PartialEq)]
struct Projection {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl Projection {
    fn random(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (rows as f64).sqrt();
        let weights = (0..rows * cols)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        Projection {
            rows,
            cols,
            weights,
        }
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (x, row) in input.iter().zip(self.weights.chunks_exact(self.cols)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        out
    }
}

/// The three projected parts of an object encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingParts {
    pub class: Vec<f64>,
    pub attributes: Vec<f64>,
    pub bbox: Vec<f64>,
}

impl EncodingParts {
    pub fn combine(&self) -> Vec<f32> {
        self.class
            .iter()
            .zip(&self.attributes)
            .zip(&self.bbox)
            .map(|((o, a), b)| ((o + a + b) / 3.0) as f32)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder<'a> {
    table: &'a EmbeddingTable,
    d: usize,
    seeds: EncoderSeeds,
    class_proj: Projection,
    attr_proj: Projection,
    bbox_proj: Projection,
}

impl<'a> Encoder<'a> {
    pub fn new(table: &'a EmbeddingTable, d: usize, seeds: EncoderSeeds) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "encoder dimension must be positive".into(),
            ));
        }
        let e = table.dim();
        Ok(Encoder {
            table,
            d,
            seeds,
            class_proj: Projection::random(e, d, seeds.class),
            attr_proj: Projection::random(e, d, seeds.attribute),
            bbox_proj: Projection::random(4, d, seeds.bbox),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seeds(&self) -> EncoderSeeds {
        self.seeds
    }

    pub fn parts<'s>(
        &self,
        class_label: &str,
        attributes: impl IntoIterator<Item = &'s String>,
        bbox: &BoundingBox,
        image_size: (f64, f64),
    ) -> Result<EncodingParts> {
        let class = self.class_proj.apply(&self.table.lookup(class_label)?);

        let mut attr_sum = vec![0.0; self.table.dim()];
        let mut count = 0usize;
        for attr in attributes {
            let v = self.table.lookup(attr)?;
            attr_sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
            count += 1;
        }
        let attributes = if count == 0 {
            vec![0.0; self.d]
        } else {
            attr_sum.iter_mut().for_each(|s| *s /= count as f64);
            self.attr_proj.apply(&attr_sum)
        };

        let (w, h) = image_size;
        let normalized = [bbox.x1 / w, bbox.y1 / h, bbox.x2 / w, bbox.y2 / h];
        let bbox = self.bbox_proj.apply(&normalized);
        Ok(EncodingParts {
            class,
            attributes,
            bbox,
        })
    }

    pub fn encode_object(
        &self,
        ann: &ObjectAnnotation,
        image_size: (f64, f64),
    ) -> Result<Vec<f32>> {
        Ok(self
            .parts(&ann.class_label, &ann.attributes, &ann.bbox, image_size)?
            .combine())
    }

    /// Encoding of `ann` with its class replaced and attributes taken from a
    /// seeded-random real object of `donor_class`; the box is kept.
    pub fn swap_class_encoding(
        &self,
        ann: &ObjectAnnotation,
        image_size: (f64, f64),
        donor_class: &str,
        bundle: &DatasetBundle,
        seed: u64,
    ) -> Result<Vec<f32>> {
        let instances = bundle
            .class_index
            .get(donor_class)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::EmptyClass(donor_class.to_string()))?;
        let mut rng = rng_for(&[
            SeedPart::U64(seed),
            SeedPart::Str(&ann.object_id),
            SeedPart::Str(donor_class),
        ]);
        let donor = &instances[rng.random_range(0..instances.len())];
        let attrs = bundle
            .object(donor)
            .map(|o| o.attributes.clone())
            .unwrap_or_default();
        Ok(self
            .parts(donor_class, &attrs, &ann.bbox, image_size)?
            .combine())
    }

    /// Encoding of `ann` with its canonical attribute replaced by `new_attribute`.
    pub fn swap_attribute_encoding(
        &self,
        ann: &ObjectAnnotation,
        image_size: (f64, f64),
        new_attribute: &str,
    ) -> Result<Vec<f32>> {
        let mut attrs: BTreeSet<String> = ann.attributes.clone();
        if let Some(old) = ann.canonical_attribute() {
            if old == new_attribute {
                return Err(Error::InvalidArgument(format!(
                    "attribute swap must change the attribute, got {old:?} -> {new_attribute:?}"
                )));
            }
            attrs.remove(old);
        }
        attrs.insert(new_attribute.to_string());
        Ok(self
            .parts(&ann.class_label, &attrs, &ann.bbox, image_size)?
            .combine())
    }

    /// Perfect-sight input for an image: one row per object, in object-id order.
    pub fn encode_scene(&self, g: &SceneGraph) -> Result<ImageFeatures> {
        let size = (g.width, g.height);
        let rows = g
            .objects
            .iter()
            .map(|o| self.encode_object(o, size))
            .collect::<Result<Vec<_>>>()?;
        let features = FeatureMatrix::from_rows(&rows)?;
        let detections = g
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| DetectedObject {
                detection_index: i,
                bbox: o.bbox,
                predicted_class: Some(o.class_label.clone()),
            })
            .collect();
        Ok(ImageFeatures {
            features,
            detections,
        })
    }
}
