use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, OrientedBoundingBox};

/// Relative tolerance under which two half-extents count as tied.
const EXTENT_TIE: f64 = 1e-9;
/// Absolute size below which a source extent is treated as zero.
const ZERO_EXTENT: f64 = 1e-12;
/// Target extents smaller than this fraction of the largest one (flat targets such as a
/// window seen from the front) do not constrain the uniform scale.
const FLAT_TARGET_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Uniform,
    #[default]
    PerAxis,
}

impl std::str::FromStr for ScalingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(ScalingMode::Uniform),
            "per_axis" | "per-axis" => Ok(ScalingMode::PerAxis),
            other => Err(format!("unknown scaling mode `{other}`")),
        }
    }
}

/// `x -> linear * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "PlacementJson", into = "PlacementJson")]
pub struct AffinePlacement {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scaling_mode: ScalingMode,
}

/// Wire form: 12 floats, the rows of `[linear | translation]`.
#[derive(Serialize, Deserialize)]
struct PlacementJson {
    matrix: [f64; 12],
    mode: ScalingMode,
}

impl From<AffinePlacement> for PlacementJson {
    fn from(p: AffinePlacement) -> Self {
        let mut matrix = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                matrix[r * 4 + c] = p.linear[(r, c)];
            }
            matrix[r * 4 + 3] = p.translation[r];
        }
        PlacementJson {
            matrix,
            mode: p.scaling_mode,
        }
    }
}

impl From<PlacementJson> for AffinePlacement {
    fn from(j: PlacementJson) -> Self {
        let m = j.matrix;
        AffinePlacement {
            linear: Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]),
            translation: Vector3::new(m[3], m[7], m[11]),
            scaling_mode: j.mode,
        }
    }
}

impl AffinePlacement {
    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
            scaling_mode: ScalingMode::PerAxis,
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.linear * p.coords + self.translation)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = self.linear.to_homogeneous();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= EXTENT_TIE * a.abs().max(b.abs())
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Source axis `i` maps to target axis `perm[i]`. Axes pair up by extent rank; within tied
/// extents the pairing with the largest total `|dot|` wins.
fn axis_correspondence(source: &OrientedBoundingBox, target: &OrientedBoundingBox) -> [usize; 3] {
    let (s, t) = (source.half_extents, target.half_extents);
    let admissible = |perm: &[usize; 3]| {
        (0..3).all(|i| perm[i] == i || tied(t[perm[i]], t[i]) || tied(s[i], s[perm[i]]))
    };
    let mut best = (f64::NEG_INFINITY, [0, 1, 2]);
    for perm in PERMUTATIONS.iter().filter(|p| admissible(p)) {
        let score: f64 = (0..3)
            .map(|i| source.axis(i).dot(&target.axis(perm[i])).abs())
            .sum();
        if score > best.0 + 1e-12 {
            best = (score, *perm);
        }
    }
    best.1
}

/// Maps the source box frame onto the target frame:
/// `M(x) = R_t * S * R_s^T * (x - c_s) + c_t`.
///
/// `S = diag(t_i / s_i)` in per-axis mode. In uniform mode `S = min(t_i / s_i) * I`, taken
/// over axes whose target extent is not flat; zero/zero axis pairs keep ratio 1.
pub fn compute_alignment(
    source: &OrientedBoundingBox,
    target: &OrientedBoundingBox,
    mode: ScalingMode,
) -> Result<AffinePlacement, GeometryError> {
    let perm = axis_correspondence(source, target);
    let mut target_axes = Matrix3::from_columns(&perm.map(|j| target.axis(j)));
    let target_ext = Vector3::from(perm.map(|j| target.half_extents[j]));

    if target_axes.determinant() < 0.0 {
        // Flip the column whose pairing is most anti-aligned (last one on ties).
        let mut flip = 2;
        let mut worst = f64::INFINITY;
        for i in 0..3 {
            let d = source.axis(i).dot(&target_axes.column(i));
            if d < worst - 1e-12 || (d <= worst + 1e-12 && i > flip) {
                worst = d;
                flip = i;
            }
        }
        let negated = -target_axes.column(flip).into_owned();
        target_axes.set_column(flip, &negated);
    }

    let mut ratios = Vector3::repeat(1.0);
    for i in 0..3 {
        let (s, t) = (source.half_extents[i], target_ext[i]);
        if s <= ZERO_EXTENT {
            if t > ZERO_EXTENT {
                return Err(GeometryError::DegenerateSource { axis: i });
            }
        } else {
            ratios[i] = t / s;
        }
    }

    let scale = match mode {
        ScalingMode::PerAxis => Matrix3::from_diagonal(&ratios),
        ScalingMode::Uniform => {
            let t_max = target_ext.max();
            let constraining: Vec<f64> = (0..3)
                .filter(|&i| source.half_extents[i] > ZERO_EXTENT)
                .filter(|&i| target_ext[i] > FLAT_TARGET_RATIO * t_max)
                .map(|i| ratios[i])
                .collect();
            let k = if constraining.is_empty() {
                ratios.min()
            } else {
                constraining.iter().cloned().fold(f64::INFINITY, f64::min)
            };
            Matrix3::from_diagonal_element(k)
        }
    };

    let linear = target_axes * scale * source.axes.transpose();
    Ok(AffinePlacement {
        linear,
        translation: target.center.coords - linear * source.center.coords,
        scaling_mode: mode,
    })
}
