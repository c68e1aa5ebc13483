//! JSON file formats for instances and solver results, and error metrics.
//!
//! Output is canonical: keys sorted, floats written with 17 significant
//! digits, no whitespace. Parsing a canonical file and writing it again
//! reproduces the same bytes.

use std::io::Write;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::bnb::SolverResult;
use crate::error::{Error, Result};
use crate::geometry::{geodesic_distance, Correspondence, ProblemInstance, ProblemKind, Rotation3, Transform, Vec3};
use crate::instances::{AdversarialInstance, GenSpec, SyntheticInstance};

pub const SCHEMA_VERSION: &str = "1";

fn default_schema() -> String {
    SCHEMA_VERSION.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairJson {
    pub p: [f64; 3],
    pub q: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformJson {
    /// Row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&Transform> for TransformJson {
    fn from(x: &Transform) -> Self {
        TransformJson {
            rotation: rows(&x.rotation),
            translation: x.translation.into(),
        }
    }
}

impl TransformJson {
    pub fn to_transform(&self) -> Result<Transform> {
        let m = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        let orth = (m.transpose() * m - Matrix3::identity()).abs().max();
        if !(orth < 1e-6) || !(m.determinant() > 0.0) {
            return Err(Error::Parse("ground-truth rotation is not a rotation matrix".into()));
        }
        Ok(Transform::new(
            Rotation3::from_matrix_unchecked(m),
            Vec3::from(self.translation),
        ))
    }
}

fn rows(r: &Rotation3) -> [[f64; 3]; 3] {
    let m = r.matrix();
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

/// Generation parameters and planted solutions carried alongside an instance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlier_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<Vec<TransformJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_costs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_label: Option<usize>,
}

impl InstanceMeta {
    fn from_spec(spec: &GenSpec, inlier_mask: &[bool]) -> Self {
        InstanceMeta {
            seed: Some(spec.seed),
            n: Some(spec.n),
            outlier_rate: Some(spec.outlier_rate),
            scale: Some(spec.scale),
            noise_radius: Some(spec.noise_radius),
            problem: Some(spec.problem.to_string()),
            adversarial_fraction: Some(spec.adversarial_fraction),
            inlier_mask: Some(inlier_mask.to_vec()),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    #[serde(default = "default_schema")]
    pub schema_version: String,
    pub eps: f64,
    pub axis: Option<[f64; 3]>,
    pub correspondences: Vec<PairJson>,
    pub ground_truth: Option<TransformJson>,
    pub meta: Option<InstanceMeta>,
}

impl InstanceFile {
    pub fn from_instance(instance: &ProblemInstance, meta: Option<InstanceMeta>) -> Self {
        InstanceFile {
            schema_version: default_schema(),
            eps: instance.eps,
            axis: instance.axis.map(Into::into),
            correspondences: instance
                .correspondences
                .iter()
                .map(|c| PairJson {
                    p: c.p.into(),
                    q: c.q.into(),
                })
                .collect(),
            ground_truth: instance.ground_truth.as_ref().map(TransformJson::from),
            meta,
        }
    }

    pub fn from_synthetic(spec: &GenSpec, g: &SyntheticInstance) -> Self {
        Self::from_instance(&g.instance, Some(InstanceMeta::from_spec(spec, &g.inlier_mask)))
    }

    pub fn from_adversarial(spec: &GenSpec, a: &AdversarialInstance) -> Self {
        let mut meta = InstanceMeta::from_spec(spec, &a.inlier_mask);
        meta.planted = Some(a.planted.iter().map(TransformJson::from).collect());
        meta.planted_costs = Some(a.planted_costs.to_vec());
        meta.global_label = Some(a.global_label);
        Self::from_instance(&a.instance, Some(meta))
    }

    pub fn to_instance(&self) -> Result<ProblemInstance> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!("unsupported schema_version {:?}", self.schema_version)));
        }
        let pairs = self
            .correspondences
            .iter()
            .map(|c| Correspondence::new(Vec3::from(c.p), Vec3::from(c.q)))
            .collect();
        let mut inst = ProblemInstance::new(pairs, self.eps, self.axis.map(Vec3::from))?;
        if let Some(gt) = &self.ground_truth {
            inst = inst.with_ground_truth(gt.to_transform()?);
        }
        Ok(inst)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultFile {
    #[serde(default = "default_schema")]
    pub schema_version: String,
    pub problem: String,
    pub rotation: [[f64; 3]; 3],
    /// Signed angle about `axis`.
    pub angle_deg: f64,
    pub axis: Option<[f64; 3]>,
    pub translation: [f64; 3],
    pub ub: f64,
    pub lb: f64,
    pub eta: f64,
    pub converged: bool,
    pub nodes_expanded: u64,
    pub wall_time_ms: f64,
    pub rotation_error_deg: Option<f64>,
    pub translation_error: Option<f64>,
}

impl ResultFile {
    pub fn new(problem: ProblemKind, instance: &ProblemInstance, result: &SolverResult) -> Self {
        let r = &result.best.rotation;
        let (axis, angle) = match (problem, instance.axis) {
            (ProblemKind::PoseSo2, Some(a)) => (Some(a), signed_angle_about(r, &a)),
            _ => match r.axis_angle() {
                Some((a, angle)) => (Some(a.into_inner()), angle),
                None => (None, 0.0),
            },
        };
        let gt = instance.ground_truth.as_ref();
        ResultFile {
            schema_version: default_schema(),
            problem: problem.to_string(),
            rotation: rows(r),
            angle_deg: angle.to_degrees(),
            axis: axis.map(Into::into),
            translation: result.best.translation.into(),
            ub: result.ub,
            lb: result.lb,
            eta: result.eta,
            converged: result.converged,
            nodes_expanded: result.nodes_expanded as u64,
            wall_time_ms: result.wall_time * 1e3,
            rotation_error_deg: gt.map(|g| rotation_error_deg(r, &g.rotation)),
            translation_error: gt.map(|g| translation_error(&result.best.translation, &g.translation)),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self)
    }
}

/// Angle of `r` about unit `axis`, assuming `r` fixes the axis.
pub fn signed_angle_about(r: &Rotation3, axis: &Vec3) -> f64 {
    let m = r.matrix();
    let w = Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5;
    let cos = (m.trace() - 1.0) * 0.5;
    w.dot(axis).atan2(cos)
}

pub fn rotation_error_deg(estimate: &Rotation3, truth: &Rotation3) -> f64 {
    geodesic_distance(estimate, truth).to_degrees()
}

pub fn translation_error(estimate: &Vec3, truth: &Vec3) -> f64 {
    (estimate - truth).norm()
}

/// Writes floats as `{:.16e}` (17 significant digits, exact round trip).
struct CanonicalFormatter;

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// Compact JSON with sorted keys and fixed float formatting.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    // going through Value sorts object keys (BTreeMap-backed map)
    let tree = serde_json::to_value(value).expect("serializable");
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter);
    tree.serialize(&mut ser).expect("in-memory write");
    String::from_utf8(out).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_z;
    use crate::instances::generate_synthetic;

    #[test]
    fn instance_round_trip_is_byte_stable() {
        let spec = GenSpec::new(20, 0.5, ProblemKind::PoseSo2, 5);
        let g = generate_synthetic(&spec).unwrap();
        let text = InstanceFile::from_synthetic(&spec, &g).to_json();
        let parsed = InstanceFile::from_json(&text).unwrap();
        assert_eq!(parsed.to_json(), text);
        let inst = parsed.to_instance().unwrap();
        assert_eq!(inst.correspondences, g.instance.correspondences);
        assert_eq!(inst.axis, g.instance.axis);
    }

    #[test]
    fn keys_are_sorted_and_floats_fixed() {
        let inst = ProblemInstance::new(vec![Correspondence::new(Vec3::x(), Vec3::y())], 0.5, None).unwrap();
        let text = InstanceFile::from_instance(&inst, None).to_json();
        assert!(text.starts_with(r#"{"axis":null,"correspondences":[{"p":[1.0000000000000000e0,"#), "{text}");
        assert!(text.contains(r#""eps":5.0000000000000000e-1"#));
        assert!(text.ends_with(r#""schema_version":"1"}"#));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"eps":0.5,"axis":null,"correspondences":[],"ground_truth":null,"meta":null,"extra":1}"#;
        assert!(InstanceFile::from_json(text).is_err());
        let text = r#"{"eps":0.5,"axis":null,"correspondences":[{"p":[0,0,0],"q":[0,0,0],"w":1}],"ground_truth":null,"meta":null}"#;
        assert!(InstanceFile::from_json(text).is_err());
    }

    #[test]
    fn bad_rotation_is_rejected() {
        let text = r#"{"eps":0.5,"axis":null,"correspondences":[{"p":[0,0,0],"q":[0,0,0]}],"ground_truth":{"rotation":[[2,0,0],[0,1,0],[0,0,1]],"translation":[0,0,0]},"meta":null}"#;
        assert!(InstanceFile::from_json(text).unwrap().to_instance().is_err());
    }

    #[test]
    fn signed_angle_matches_construction() {
        for th in [-3.0, -1.0, 0.0, 0.5, 3.1] {
            assert!((signed_angle_about(&rot_z(th), &Vec3::z()) - th).abs() < 1e-12);
            assert!((signed_angle_about(&rot_z(th), &-Vec3::z()) + th).abs() < 1e-12);
        }
    }
}
