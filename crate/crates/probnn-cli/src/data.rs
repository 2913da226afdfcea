//! Dataset generation and CSV round-tripping.
//!
//! Inputs are drawn uniformly over the configured rectangle from a ChaCha8
//! stream keyed by the seed (`x = min + (max - min) * u` with `u` the next
//! f64 in [0, 1), x1 before x2 per point), so generation is bit-reproducible
//! across platforms. The built-in labeler assigns class 1 inside the upper
//! wedge (`x1 + x2 > 0` and `-x1 + x2 > 0`), class 2 inside the mirrored
//! lower wedge (both strict `<`), and class 3 everywhere else, boundaries
//! included.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Bounds;
use crate::error::{CliError, Result};

/// Labeled rows: features plus the one-hot label over the first `N - 1`
/// classes (all zeros marks the last class).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_classes: usize,
    pub rows: Vec<(DVector<f64>, DVector<f64>)>,
}

/// Wedge rule of the benchmark: returns the 1-based class of a point.
pub fn wedge_class(x1: f64, x2: f64) -> usize {
    if x1 + x2 > 0.0 && -x1 + x2 > 0.0 {
        1
    } else if x1 + x2 < 0.0 && -x1 + x2 < 0.0 {
        2
    } else {
        3
    }
}

/// Encode a 1-based class as the one-hot-minus-last-class label vector.
pub fn encode_label(class: usize, n_classes: usize) -> DVector<f64> {
    let mut y = DVector::zeros(n_classes - 1);
    if class < n_classes {
        y[class - 1] = 1.0;
    }
    y
}

/// Decode a label vector back to its 1-based class.
pub fn decode_label(y: &DVector<f64>) -> usize {
    y.iter()
        .position(|&v| v == 1.0)
        .map(|p| p + 1)
        .unwrap_or(y.len() + 1)
}

/// Draw `m` uniformly distributed points over the bounds and label them with
/// the wedge rule (three classes over two features).
pub fn gen_data(m: usize, bounds: &Bounds, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(m);
    for _ in 0..m {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let x1 = bounds.x1_min + (bounds.x1_max - bounds.x1_min) * u1;
        let x2 = bounds.x2_min + (bounds.x2_max - bounds.x2_min) * u2;
        let class = wedge_class(x1, x2);
        rows.push((DVector::from_vec(vec![x1, x2]), encode_label(class, 3)));
    }
    Dataset { n_classes: 3, rows }
}

impl Dataset {
    /// CSV text with header `x1,x2,label`, label being the 1-based class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x1,x2,label\n");
        for (x, y) in &self.rows {
            let class = decode_label(y);
            out.push_str(&format!("{},{},{}\n", x[0], x[1], class));
        }
        out
    }

    pub fn from_csv(text: &str, n_classes: usize) -> Result<Dataset> {
        let mut rows = Vec::new();
        let mut lines = text.lines();
        match lines.next() {
            Some(header) if header.trim() == "x1,x2,label" => {}
            other => {
                return Err(CliError::Data(format!(
                    "expected header 'x1,x2,label', got {other:?}"
                )))
            }
        }
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(CliError::Data(format!(
                    "line {}: expected 3 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CliError::Data(format!("line {}: {e}", lineno + 2)))
            };
            let x1 = parse(fields[0])?;
            let x2 = parse(fields[1])?;
            let class: usize = fields[2]
                .trim()
                .parse()
                .map_err(|e| CliError::Data(format!("line {}: {e}", lineno + 2)))?;
            if class == 0 || class > n_classes {
                return Err(CliError::Data(format!(
                    "line {}: class {class} out of range 1..={n_classes}",
                    lineno + 2
                )));
            }
            rows.push((
                DVector::from_vec(vec![x1, x2]),
                encode_label(class, n_classes),
            ));
        }
        if rows.is_empty() {
            return Err(CliError::Data("dataset has no rows".into()));
        }
        Ok(Dataset { n_classes, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wedge_rule_anchor_points() {
        assert_eq!(wedge_class(0.0, 1.0), 1);
        assert_eq!(wedge_class(0.0, -1.0), 2);
        assert_eq!(wedge_class(1.0, 0.0), 3);
        // boundary points fall to the residual class
        assert_eq!(wedge_class(0.0, 0.0), 3);
        assert_eq!(wedge_class(1.0, 1.0), 3);
    }

    #[test]
    fn labels_encode_and_decode() {
        assert_eq!(encode_label(1, 3).as_slice(), &[1.0, 0.0]);
        assert_eq!(encode_label(2, 3).as_slice(), &[0.0, 1.0]);
        assert_eq!(encode_label(3, 3).as_slice(), &[0.0, 0.0]);
        for class in 1..=3 {
            assert_eq!(decode_label(&encode_label(class, 3)), class);
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let bounds = Bounds {
            x1_min: -2.0,
            x1_max: 2.0,
            x2_min: -2.0,
            x2_max: 2.0,
        };
        let a = gen_data(25, &bounds, 42);
        let b = gen_data(25, &bounds, 42);
        assert_eq!(a, b);
        let c = gen_data(25, &bounds, 43);
        assert_ne!(a, c);
        for (x, _) in &a.rows {
            assert!(x[0] >= -2.0 && x[0] < 2.0);
            assert!(x[1] >= -2.0 && x[1] < 2.0);
        }
    }

    #[test]
    fn csv_round_trip() {
        let bounds = Bounds {
            x1_min: -2.0,
            x1_max: 2.0,
            x2_min: -2.0,
            x2_max: 2.0,
        };
        let data = gen_data(10, &bounds, 7);
        let text = data.to_csv();
        let back = Dataset::from_csv(&text, 3).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(Dataset::from_csv("nope\n1,2,3\n", 3).is_err());
        assert!(Dataset::from_csv("x1,x2,label\n1,2,9\n", 3).is_err());
        assert!(Dataset::from_csv("x1,x2,label\n", 3).is_err());
    }
}
