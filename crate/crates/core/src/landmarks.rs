//! Ordered 2D landmark sets in normalized image coordinates, plus the
//! 300-W `.pts` and JSON formats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AffineMap, Vec2};

/// N ordered points, coordinates expressed as fractions of the image side.
///
/// Order matters: edge graphs, plans and the l1 consistency term all index
/// points by position.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Vec2>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("landmark set must contain at least one point".into()));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidInput("landmark coordinates must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn from_xy(coords: &[[f64; 2]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Vec2::new(c[0], c[1])).collect())
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec2> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every coordinate lies in `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        self.points
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y))
    }

    pub fn center_of_mass(&self) -> Vec2 {
        let sum = self.points.iter().fold(Vec2::zeros(), |acc, p| acc + p);
        sum / self.points.len() as f64
    }

    pub fn translated(&self, t: &Vec2) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(|p| p + t).collect(),
        }
    }

    pub fn mapped(&self, map: &AffineMap) -> LandmarkSet {
        LandmarkSet {
            points: self.points.iter().map(|p| map.apply(p)).collect(),
        }
    }

    /// Copy with every coordinate clamped to the unit square.
    pub fn clamped(&self) -> LandmarkSet {
        LandmarkSet {
            points: self
                .points
                .iter()
                .map(|p| Vec2::new(p.x.clamp(0.0, 1.0), p.y.clamp(0.0, 1.0)))
                .collect(),
        }
    }

    /// Reorders points so that output point `i` is input point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<LandmarkSet> {
        if perm.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} for {} points",
                perm.len(),
                self.len()
            )));
        }
        let mut seen = vec![false; perm.len()];
        let mut points = Vec::with_capacity(perm.len());
        for &p in perm {
            if p >= self.len() || seen[p] {
                return Err(Error::InvalidInput("not a permutation".into()));
            }
            seen[p] = true;
            points.push(self.points[p]);
        }
        Ok(LandmarkSet { points })
    }

    /// Reads a `.pts` annotation; pixel coordinates are divided by `side`.
    pub fn parse_pts(text: &str, side: f64) -> Result<LandmarkSet> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::InvalidInput(format!("image side must be positive, got {side}")));
        }
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());

        let mut declared = None;
        let mut saw_version = false;
        let open_line = loop {
            let Some((no, line)) = lines.next() else {
                return Err(Error::Parse {
                    line: text.lines().count().max(1),
                    message: "unexpected end of file before '{'".into(),
                });
            };
            if line == "{" {
                break no;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| Error::Parse {
                line: no,
                message: format!("malformed header line '{line}'"),
            })?;
            match key.trim() {
                "version" => saw_version = true,
                "n_points" => {
                    let n = value.trim().parse::<usize>().map_err(|_| Error::Parse {
                        line: no,
                        message: format!("non-numeric point count '{}'", value.trim()),
                    })?;
                    declared = Some(n);
                }
                other => {
                    return Err(Error::Parse {
                        line: no,
                        message: format!("unknown header field '{other}'"),
                    })
                }
            }
        };
        if !saw_version {
            return Err(Error::Parse {
                line: open_line,
                message: "missing 'version' header".into(),
            });
        }
        let declared = declared.ok_or_else(|| Error::Parse {
            line: open_line,
            message: "missing 'n_points' header".into(),
        })?;

        let mut points = Vec::with_capacity(declared);
        let mut closed = false;
        for (no, line) in lines.by_ref() {
            if line == "}" {
                closed = true;
                break;
            }
            let mut tokens = line.split_whitespace();
            let mut coord = || -> Result<f64> {
                let tok = tokens.next().ok_or_else(|| Error::Parse {
                    line: no,
                    message: "expected two coordinates".into(),
                })?;
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    line: no,
                    message: format!("non-numeric token '{tok}'"),
                })
            };
            let x = coord()?;
            let y = coord()?;
            if tokens.next().is_some() {
                return Err(Error::Parse {
                    line: no,
                    message: "expected exactly two coordinates".into(),
                });
            }
            points.push(Vec2::new(x / side, y / side));
        }
        if !closed {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: "missing closing '}'".into(),
            });
        }
        if let Some((no, _)) = lines.next() {
            return Err(Error::Parse {
                line: no,
                message: "trailing content after '}'".into(),
            });
        }
        if points.len() != declared {
            return Err(Error::PointCountMismatch {
                declared,
                found: points.len(),
            });
        }
        LandmarkSet::new(points)
    }

    /// Writes a `.pts` annotation in pixel units (`version: 1`).
    pub fn to_pts(&self, side: f64) -> String {
        let mut out = format!("version: 1\nn_points: {}\n{{\n", self.len());
        for p in &self.points {
            out.push_str(&format!("{:?} {:?}\n", p.x * side, p.y * side));
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Serialize, Deserialize)]
struct LandmarkRepr {
    points: Vec<[f64; 2]>,
}

impl Serialize for LandmarkSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        LandmarkRepr {
            points: self.points.iter().map(|p| [p.x, p.y]).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LandmarkSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = LandmarkRepr::deserialize(deserializer)?;
        LandmarkSet::from_xy(&repr.points).map_err(serde::de::Error::custom)
    }
}
