//! Hand-config JSON schema and its validation into a [`HandModel`].

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Capsule, HandModel, Joint, Keypoint, Link, WorkspaceBox};
use crate::error::{Error, Result};
use crate::math::{quat_normalize, Rigid, Vec3, IDENTITY_QUAT};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandConfig {
    #[serde(default)]
    pub name: String,
    pub dof: usize,
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
    pub capsules: Vec<CapsuleSpec>,
    pub keypoints: Vec<KeypointSpec>,
    pub workspace_box: BoxSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    pub parent: Option<String>,
    /// Rest rotation, scalar-first unit quaternion.
    #[serde(default = "identity_quat")]
    pub rotation: [f64; 4],
    /// Rest translation in the parent frame, meters.
    #[serde(default)]
    pub translation: [f64; 3],
}

fn identity_quat() -> [f64; 4] {
    IDENTITY_QUAT
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    /// The link this revolute joint moves.
    pub link: String,
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsuleSpec {
    pub link: String,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointSpec {
    pub link: String,
    pub offset: [f64; 3],
    /// Self-penetration radius; a pair collides below the sum of radii.
    pub radius: f64,
    /// Extra keypoint indices never tested against this one.
    #[serde(default)]
    pub exclude: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn finite3(field: &str, a: &[f64; 3]) -> Result<()> {
    if a.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::parse(field, "non-finite coordinate"))
    }
}

impl HandConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            // serde_json reports line/column; the message usually names the field
            Error::parse(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hand config serializes")
    }

    pub fn build(&self) -> Result<HandModel> {
        if self.links.is_empty() {
            return Err(Error::parse("links", "at least one link is required"));
        }
        let mut by_name = HashMap::new();
        for (i, l) in self.links.iter().enumerate() {
            if by_name.insert(l.name.as_str(), i).is_some() {
                return Err(Error::parse(
                    format!("links[{i}].name"),
                    format!("duplicate link name `{}`", l.name),
                ));
            }
        }
        let lookup = |field: String, name: &str| -> Result<usize> {
            by_name
                .get(name)
                .copied()
                .ok_or_else(|| Error::parse(field, format!("unknown link `{name}`")))
        };

        let mut links = Vec::with_capacity(self.links.len());
        for (i, l) in self.links.iter().enumerate() {
            let parent = match &l.parent {
                None => None,
                Some(p) => Some(lookup(format!("links[{i}].parent"), p)?),
            };
            finite3(&format!("links[{i}].translation"), &l.translation)?;
            let q = quat_normalize(&l.rotation)
                .ok_or_else(|| Error::parse(format!("links[{i}].rotation"), "zero quaternion"))?;
            links.push(Link {
                name: l.name.clone(),
                parent,
                rest: Rigid::from_quat(&q, v3(l.translation)),
            });
        }
        if links[0].parent.is_some() {
            return Err(Error::Structure("link 0 must be the root".into()));
        }
        if let Some(i) = links.iter().skip(1).position(|l| l.parent.is_none()) {
            return Err(Error::Structure(format!(
                "link `{}` has no parent; only link 0 may be a root",
                links[i + 1].name
            )));
        }

        let mut joints = Vec::with_capacity(self.joints.len());
        for (i, j) in self.joints.iter().enumerate() {
            let link = lookup(format!("joints[{i}].link"), &j.link)?;
            finite3(&format!("joints[{i}].axis"), &j.axis)?;
            let axis = v3(j.axis);
            if axis.norm() < 1e-12 {
                return Err(Error::parse(format!("joints[{i}].axis"), "zero axis"));
            }
            if !(j.lower.is_finite() && j.upper.is_finite()) {
                return Err(Error::parse(
                    format!("joints[{i}].lower"),
                    "non-finite limit",
                ));
            }
            joints.push(Joint {
                name: j.name.clone(),
                link,
                axis: axis.normalize(),
                lower: j.lower,
                upper: j.upper,
            });
        }

        let mut capsules = Vec::with_capacity(self.capsules.len());
        for (i, c) in self.capsules.iter().enumerate() {
            let link = lookup(format!("capsules[{i}].link"), &c.link)?;
            finite3(&format!("capsules[{i}].a"), &c.a)?;
            finite3(&format!("capsules[{i}].b"), &c.b)?;
            capsules.push(Capsule {
                link,
                a: v3(c.a),
                b: v3(c.b),
                radius: c.radius,
            });
        }

        let mut keypoints = Vec::with_capacity(self.keypoints.len());
        let mut extra = Vec::with_capacity(self.keypoints.len());
        for (i, k) in self.keypoints.iter().enumerate() {
            let link = lookup(format!("keypoints[{i}].link"), &k.link)?;
            finite3(&format!("keypoints[{i}].offset"), &k.offset)?;
            if let Some(&bad) = k.exclude.iter().find(|&&e| e >= self.keypoints.len()) {
                return Err(Error::parse(
                    format!("keypoints[{i}].exclude"),
                    format!("index {bad} out of range"),
                ));
            }
            keypoints.push(Keypoint {
                link,
                offset: v3(k.offset),
                radius: k.radius,
            });
            extra.push(k.exclude.clone());
        }

        finite3("workspace_box.lower", &self.workspace_box.lower)?;
        finite3("workspace_box.upper", &self.workspace_box.upper)?;
        let workspace = WorkspaceBox {
            lower: v3(self.workspace_box.lower),
            upper: v3(self.workspace_box.upper),
        };

        HandModel::assemble(
            self.name.clone(),
            self.dof,
            links,
            joints,
            capsules,
            keypoints,
            &extra,
            workspace,
        )
    }
}

/// Reads and validates a hand config file.
pub fn load_hand_config(path: impl AsRef<Path>) -> Result<HandModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_hand_config(&text)
}

/// Validates hand-config text into a model.
pub fn parse_hand_config(text: &str) -> Result<HandModel> {
    HandConfig::from_json(text)?.build()
}
