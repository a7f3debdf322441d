use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Similarity3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::rig::{compute_weights, prescribe_column, Joint, Rig};
use super::{Region, SynthError, SynthResult};
use crate::mesh::{detect_self_intersections, enclosed_volume, Landmark, LandmarkSet, TriMesh};

/// Sampling density of the swept template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateParams {
    /// Vertices per cross-section ring (even).
    pub around: usize,
    /// Ring spacing along the stomach, mm.
    pub stomach_spacing_mm: f64,
    /// Ring spacing along esophagus and duodenum, mm.
    pub tube_spacing_mm: f64,
}

impl Default for TemplateParams {
    fn default() -> Self {
        Self {
            around: 44,
            stomach_spacing_mm: 5.0,
            tube_spacing_mm: 10.0,
        }
    }
}

impl TemplateParams {
    /// Roughly 1,000 vertices; used where runtime matters more than detail.
    pub fn coarse() -> Self {
        Self {
            around: 24,
            stomach_spacing_mm: 8.0,
            tube_spacing_mm: 7.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeType {
    Cylindrical,
    JShaped,
    ReverseL,
    Crescentic,
}

impl ShapeType {
    pub const ALL: [ShapeType; 4] = [
        ShapeType::Cylindrical,
        ShapeType::JShaped,
        ShapeType::ReverseL,
        ShapeType::Crescentic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeType::Cylindrical => "cylindrical",
            ShapeType::JShaped => "j_shaped",
            ShapeType::ReverseL => "reverse_l",
            ShapeType::Crescentic => "crescentic",
        }
    }

    /// Joint rotations (degrees, about the guide-curve plane normal) defining the prototype.
    /// Negative angles curl the J further.
    fn pose_preset(self) -> &'static [(&'static str, f64)] {
        match self {
            ShapeType::Cylindrical => &[
                ("greater_bend", 18.0),
                ("lower_bend", 18.0),
                ("antrum", 15.0),
            ],
            ShapeType::JShaped => &[],
            ShapeType::ReverseL => &[
                ("body_lower", -15.0),
                ("lower_bend", 22.0),
                ("antrum", 10.0),
            ],
            ShapeType::Crescentic => &[
                ("greater_bend", -10.0),
                ("lower_bend", -10.0),
                ("antrum", -8.0),
                ("fundus", -10.0),
            ],
        }
    }
}

impl fmt::Display for ShapeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ShapeType::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown shape type '{s}'"))
    }
}

/// The procedural template with everything the generator needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateAsset {
    /// Template mesh, carrying region labels and vertex-bound landmarks.
    pub mesh: TriMesh,
    pub rig: Rig,
    pub regions: Vec<Region>,
    pub gc_chain: Vec<usize>,
    pub lc_chain: Vec<usize>,
    /// Vertex indices of each cross-section ring, in guide-curve order.
    pub rings: Vec<Vec<usize>>,
    /// Apex vertices closing the first and last ring.
    pub caps: [usize; 2],
    /// Inclusive ring range covering fundus through pylorus.
    pub stomach_rings: (usize, usize),
    /// Prototype vertex arrays in `ShapeType::ALL` order.
    pub prototypes: [Vec<Point3<f64>>; 4],
    pub params: TemplateParams,
}

impl TemplateAsset {
    pub fn landmarks(&self) -> &LandmarkSet {
        self.mesh.landmarks().expect("template carries landmarks")
    }

    pub fn prototype(&self, t: ShapeType) -> &[Point3<f64>] {
        let i = ShapeType::ALL.iter().position(|x| *x == t).expect("listed");
        &self.prototypes[i]
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn region_mask(&self, region: Region) -> Vec<bool> {
        self.regions.iter().map(|r| *r == region).collect()
    }

    /// Check the structural invariants of the asset.
    pub fn check(&self) -> SynthResult<()> {
        let bad = |m: String| Err(SynthError::InvalidAsset(m));
        let n = self.mesh.vertex_count();
        if self.rig.vertex_count() != n || self.regions.len() != n {
            return bad("rig or region map does not match vertex count".into());
        }
        if self.prototypes.iter().any(|p| p.len() != n) {
            return bad("prototype vertex count differs from template".into());
        }
        for (name, chain) in [("gc", &self.gc_chain), ("lc", &self.lc_chain)] {
            if chain.len() < 10 {
                return bad(format!("{name} chain has {} vertices (< 10)", chain.len()));
            }
            if chain
                .iter()
                .any(|&v| v >= n || !self.regions[v].is_stomach())
            {
                return bad(format!("{name} chain leaves the stomach regions"));
            }
        }
        let report = self.mesh.edge_report();
        if !report.is_closed() {
            return bad(format!("template is not closed: {report:?}"));
        }
        Ok(())
    }
}

enum Piece {
    Line(f64),
    /// Arc in the x–z plane; `sign` is the sign of the heading change.
    Arc {
        radius: f64,
        angle: f64,
        sign: f64,
    },
}

impl Piece {
    fn len(&self) -> f64 {
        match self {
            Piece::Line(l) => *l,
            Piece::Arc { radius, angle, .. } => radius * angle,
        }
    }
}

/// Planar guide curve: heading ψ gives the tangent `(sin ψ, 0, cos ψ)`.
struct GuideCurve {
    start: Point3<f64>,
    heading: f64,
    pieces: Vec<Piece>,
}

impl GuideCurve {
    fn stomach() -> Self {
        Self {
            start: Point3::new(0.0, 0.0, ESOPHAGUS_END),
            heading: PI,
            pieces: vec![
                Piece::Line(BODY_END),
                Piece::Arc {
                    radius: ARC_RADIUS,
                    angle: ARC_DEGREES.to_radians(),
                    sign: -1.0,
                },
                Piece::Line(40.0),
                Piece::Arc {
                    radius: 30.0,
                    angle: 100f64.to_radians(),
                    sign: 1.0,
                },
                Piece::Line(30.0),
            ],
        }
    }

    fn length(&self) -> f64 {
        self.pieces.iter().map(Piece::len).sum()
    }

    fn eval(&self, s: f64) -> (Point3<f64>, Vector3<f64>) {
        let tangent = |psi: f64| Vector3::new(psi.sin(), 0.0, psi.cos());
        let normal = |psi: f64| Vector3::new(psi.cos(), 0.0, -psi.sin());
        let mut p = self.start;
        let mut psi = self.heading;
        let mut rem = s;
        for piece in &self.pieces {
            let u = rem.min(piece.len());
            match *piece {
                Piece::Line(_) => p += tangent(psi) * u,
                Piece::Arc { radius, sign, .. } => {
                    let center = p + normal(psi) * (sign * radius);
                    psi += sign * u / radius;
                    p = center - normal(psi) * (sign * radius);
                }
            }
            rem -= u;
            if rem <= 0.0 {
                break;
            }
        }
        (p, tangent(psi))
    }
}

// Arclength landmarks along the guide curve, mm.
const MOUTH_END: f64 = 15.0;
const PHARYNX_END: f64 = 50.0;
const ESOPHAGUS_END: f64 = 120.0;
const BODY_END: f64 = 160.0;
const ARC_RADIUS: f64 = 48.0;
const ARC_DEGREES: f64 = 165.0;
const ARC_END: f64 = BODY_END + ARC_RADIUS * ARC_DEGREES * PI / 180.0;
const BODY_REGION_END: f64 = 222.0;
const ANTRUM_END: f64 = 322.0;
const PYLORUS_END: f64 = 338.0;
const FUNDUS_WINDOW: (f64, f64) = (122.0, 175.0);
const FUNDUS_AMPLITUDE: f64 = 16.0;
const STOMACH_RADIUS: f64 = 32.0;

fn smoothstep(a: f64, b: f64, x: f64) -> f64 {
    let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn base_radius(s: f64) -> f64 {
    12.0 - 2.0 * smoothstep(10.0, 20.0, s) - 2.0 * smoothstep(45.0, 55.0, s)
        + (STOMACH_RADIUS - 8.0) * smoothstep(120.0, 150.0, s)
        - (STOMACH_RADIUS - 14.0) * smoothstep(ARC_END, ANTRUM_END, s)
        - 5.0 * smoothstep(ANTRUM_END, 330.0, s)
        + 3.0 * smoothstep(332.0, 344.0, s)
}

/// Fundus bulge factor in [0, 1] at arclength `s` and ring angle `phi` (0 = greater-curvature side).
fn bulge(s: f64, phi: f64) -> f64 {
    let (a, b) = FUNDUS_WINDOW;
    if s <= a || s >= b {
        return 0.0;
    }
    let along = (PI * (s - a) / (b - a)).sin().powi(2);
    along * phi.cos().max(0.0).powi(2)
}

fn region_at(s: f64, phi: f64) -> Region {
    if s < MOUTH_END {
        Region::Mouth
    } else if s < PHARYNX_END {
        Region::Pharynx
    } else if s < ESOPHAGUS_END {
        Region::Esophagus
    } else if bulge(s, phi) > 0.25 {
        Region::Fundus
    } else if s < BODY_REGION_END {
        Region::Body
    } else if s < ANTRUM_END {
        Region::Antrum
    } else if s < PYLORUS_END {
        Region::Pylorus
    } else {
        Region::Duodenum
    }
}

fn interval_samples(a: f64, b: f64, spacing: f64) -> Vec<f64> {
    let n = ((b - a) / spacing).ceil().max(1.0) as usize;
    (0..n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

const JOINTS: [(&str, Option<f64>, Option<usize>); 16] = [
    ("mouth", Some(5.0), None),
    ("pharynx", Some(32.0), Some(0)),
    ("esophagus_upper", Some(70.0), Some(1)),
    ("esophagus_lower", Some(105.0), Some(2)),
    ("cardia", Some(125.0), Some(3)),
    ("fundus", None, Some(4)),
    ("body_upper", Some(145.0), Some(4)),
    ("body_lower", Some(165.0), Some(6)),
    ("greater_bend", Some(205.0), Some(7)),
    ("lower_bend", Some(250.0), Some(8)),
    ("antrum", Some(298.0), Some(9)),
    ("antrum_distal", Some(315.0), Some(10)),
    ("pylorus", Some(330.0), Some(11)),
    ("duodenum_bulb", Some(350.0), Some(12)),
    ("duodenum_descending", Some(380.0), Some(13)),
    ("duodenum_end", Some(410.0), Some(14)),
];

const FUNDUS_SUPPORT_MM: f64 = 40.0;
const WEIGHT_SMOOTHING_PASSES: usize = 3;

/// Build the swept-tube template, its rig, annotations and shape prototypes.
pub fn build_template(params: &TemplateParams) -> SynthResult<TemplateAsset> {
    let around = params.around;
    if around < 8 || around % 2 != 0 {
        return Err(SynthError::ResolutionTooLow(format!(
            "ring vertex count must be even and >= 8, got {around}"
        )));
    }
    for (name, v) in [
        ("stomach spacing", params.stomach_spacing_mm),
        ("tube spacing", params.tube_spacing_mm),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SynthError::ResolutionTooLow(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    let curve = GuideCurve::stomach();
    let total = curve.length();
    let mut ring_s = interval_samples(0.0, ESOPHAGUS_END, params.tube_spacing_mm);
    ring_s.extend(interval_samples(
        ESOPHAGUS_END,
        PYLORUS_END,
        params.stomach_spacing_mm,
    ));
    ring_s.extend(interval_samples(PYLORUS_END, total, params.tube_spacing_mm));
    ring_s.push(total);

    for (region, lo, hi) in [
        (Region::Mouth, 0.0, MOUTH_END),
        (Region::Pharynx, MOUTH_END, PHARYNX_END),
        (Region::Esophagus, PHARYNX_END, ESOPHAGUS_END),
        (Region::Body, ESOPHAGUS_END, BODY_REGION_END),
        (Region::Antrum, BODY_REGION_END, ANTRUM_END),
        (Region::Pylorus, ANTRUM_END, PYLORUS_END),
        (Region::Duodenum, PYLORUS_END, total + 1.0),
    ] {
        let count = ring_s.iter().filter(|&&s| s >= lo && s < hi).count();
        if count < 2 {
            return Err(SynthError::ResolutionTooLow(format!(
                "region {region} gets {count} rings; at least 2 are required"
            )));
        }
    }
    let (fa, fb) = FUNDUS_WINDOW;
    if ring_s.iter().filter(|&&s| s > fa && s < fb).count() < 3 {
        return Err(SynthError::ResolutionTooLow(
            "fewer than 3 rings across the fundus".into(),
        ));
    }

    // Rotation-minimizing frames by double reflection.
    let frames: Vec<(Point3<f64>, Vector3<f64>)> = ring_s.iter().map(|&s| curve.eval(s)).collect();
    let mut n1 = vec![Vector3::new(-1.0, 0.0, 0.0)];
    for i in 0..frames.len() - 1 {
        let (x0, t0) = frames[i];
        let (x1, t1) = frames[i + 1];
        let v1 = x1 - x0;
        let c1 = v1.dot(&v1);
        let r0 = n1[i];
        let rl = r0 - v1 * (2.0 / c1 * v1.dot(&r0));
        let tl = t0 - v1 * (2.0 / c1 * v1.dot(&t0));
        let v2 = t1 - tl;
        let c2 = v2.dot(&v2);
        let r1 = if c2 > 1e-20 {
            rl - v2 * (2.0 / c2 * v2.dot(&rl))
        } else {
            rl
        };
        n1.push(r1.normalize());
    }

    let mut vertices = Vec::with_capacity(ring_s.len() * around + 2);
    let mut regions = Vec::with_capacity(vertices.capacity());
    let mut bulges = Vec::with_capacity(vertices.capacity());
    let mut rings = Vec::with_capacity(ring_s.len());
    for (i, &s) in ring_s.iter().enumerate() {
        let (c, t) = frames[i];
        let a = n1[i];
        let b = t.cross(&a);
        let mut ring = Vec::with_capacity(around);
        for j in 0..around {
            let phi = 2.0 * PI * j as f64 / around as f64;
            let bf = bulge(s, phi);
            let r = base_radius(s) + FUNDUS_AMPLITUDE * bf;
            ring.push(vertices.len());
            vertices.push(c + (a * phi.cos() + b * phi.sin()) * r);
            regions.push(region_at(s, phi));
            bulges.push(bf);
        }
        rings.push(ring);
    }
    let last = ring_s.len() - 1;
    let (c0, t0) = frames[0];
    let (c1, t1) = frames[last];
    let caps = [vertices.len(), vertices.len() + 1];
    vertices.push(c0 - t0 * (0.4 * base_radius(0.0)));
    vertices.push(c1 + t1 * (0.4 * base_radius(total)));
    regions.push(Region::Mouth);
    regions.push(Region::Duodenum);
    bulges.extend([0.0, 0.0]);

    let mut triangles = Vec::with_capacity(2 * around * ring_s.len());
    for i in 0..last {
        for j in 0..around {
            let jn = (j + 1) % around;
            let (a, b) = (rings[i][j], rings[i][jn]);
            let (c, d) = (rings[i + 1][jn], rings[i + 1][j]);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    for j in 0..around {
        let jn = (j + 1) % around;
        triangles.push([caps[0], rings[0][jn], rings[0][j]]);
        triangles.push([caps[1], rings[last][j], rings[last][jn]]);
    }

    let labels: Vec<u8> = regions.iter().map(|r| r.id()).collect();
    let mut mesh = TriMesh::new(vertices, triangles)?.with_region_labels(labels)?;
    if !enclosed_volume(&mesh)?.outward {
        return Err(SynthError::InvalidAsset(
            "template winding is inward".into(),
        ));
    }

    let ring_near = |s: f64| -> usize {
        (0..ring_s.len())
            .min_by(|&x, &y| (ring_s[x] - s).abs().total_cmp(&(ring_s[y] - s).abs()))
            .expect("rings exist")
    };
    let first_stomach = ring_s
        .iter()
        .position(|&s| s >= ESOPHAGUS_END)
        .expect("stomach rings");
    let last_stomach = ring_s
        .iter()
        .rposition(|&s| s < PYLORUS_END)
        .expect("stomach rings");
    let lc_col = around / 2;
    let gc_chain: Vec<usize> = (first_stomach..=last_stomach)
        .map(|i| rings[i][0])
        .collect();
    let lc_chain: Vec<usize> = (first_stomach..=last_stomach)
        .map(|i| rings[i][lc_col])
        .collect();

    let fundus_peak = rings[ring_near((fa + fb) / 2.0)][0];
    let landmarks = LandmarkSet::vertex_bound([
        (
            Landmark::GastroesophagealJunction,
            rings[first_stomach][lc_col],
        ),
        (Landmark::Fundus, fundus_peak),
        (Landmark::GreaterCurvature, gc_chain[gc_chain.len() / 2]),
        (Landmark::AngularIncisure, rings[ring_near(229.0)][lc_col]),
        (Landmark::PyloricSphincter, rings[ring_near(330.0)][0]),
    ]);
    mesh = mesh.with_landmarks(landmarks)?;

    // Rig: chain joints anchor on their nearest ring, the fundus on its dome.
    let chain_s: Vec<f64> = JOINTS.iter().filter_map(|j| j.1).collect();
    let mut anchors = Vec::with_capacity(JOINTS.len());
    let mut support = Vec::with_capacity(JOINTS.len());
    for (_, s, _) in JOINTS {
        match s {
            Some(s) => {
                anchors.push(rings[ring_near(s)].clone());
                let pos = chain_s.iter().position(|&x| x == s).expect("listed");
                let prev = if pos > 0 { s - chain_s[pos - 1] } else { 0.0 };
                let next = chain_s.get(pos + 1).map_or(0.0, |n| n - s);
                support.push(1.25 * prev.max(next).max(2.0 * params.stomach_spacing_mm));
            }
            None => {
                let dome: Vec<usize> = (0..bulges.len()).filter(|&v| bulges[v] >= 0.6).collect();
                anchors.push(if dome.is_empty() {
                    vec![fundus_peak]
                } else {
                    dome
                });
                support.push(FUNDUS_SUPPORT_MM);
            }
        }
    }
    let mut weights = compute_weights(&mesh, &anchors, &support, WEIGHT_SMOOTHING_PASSES);
    // The fundus follows its bulge field so the whole dome moves with the joint.
    let fundus_j = JOINTS
        .iter()
        .position(|j| j.1.is_none())
        .expect("fundus joint");
    let fundus_w: Vec<f64> = bulges.iter().map(|&b| smoothstep(0.05, 0.35, b)).collect();
    prescribe_column(&mut weights, JOINTS.len(), fundus_j, &fundus_w);
    let positions: Vec<Point3<f64>> = anchors
        .iter()
        .map(|a| {
            let sum = a
                .iter()
                .fold(Vector3::zeros(), |acc, &v| acc + mesh.vertices()[v].coords);
            Point3::from(sum / a.len() as f64)
        })
        .collect();
    let joints = JOINTS
        .iter()
        .zip(&positions)
        .map(|((name, _, parent), p)| Joint {
            name: (*name).to_string(),
            rest_position: *p,
            parent: *parent,
        })
        .collect();
    let rig = Rig::new(joints, weights, mesh.vertex_count(), anchors)?;

    let mut prototypes: [Vec<Point3<f64>>; 4] = Default::default();
    for (slot, t) in prototypes.iter_mut().zip(ShapeType::ALL) {
        *slot = pose_vertices(&rig, mesh.vertices(), t.pose_preset())?;
    }

    let asset = TemplateAsset {
        mesh,
        rig,
        regions,
        gc_chain,
        lc_chain,
        rings,
        caps,
        stomach_rings: (first_stomach, last_stomach),
        prototypes,
        params: *params,
    };
    asset.check()?;
    let hits = detect_self_intersections(&asset.mesh);
    if !hits.is_empty() {
        return Err(SynthError::InvalidAsset(format!(
            "template has {} self-intersecting triangle pairs",
            hits.len()
        )));
    }
    Ok(asset)
}

/// Skin `rest` with rotations (degrees) about the curve-plane normal at the named joints.
fn pose_vertices(
    rig: &Rig,
    rest: &[Point3<f64>],
    preset: &[(&str, f64)],
) -> SynthResult<Vec<Point3<f64>>> {
    let centers = rig.joint_positions(rest);
    let mut locals = vec![Similarity3::identity(); rig.joint_count()];
    for (name, deg) in preset {
        let k = rig.joint_index(name)?;
        let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), deg.to_radians());
        locals[k] = about_point(&centers[k], rot, 1.0);
    }
    let globals = rig.compose_global(&locals)?;
    rig.skin(rest, &globals)
}

/// `translate(c) · R · S · translate(−c)`.
pub(crate) fn about_point(
    c: &Point3<f64>,
    rot: UnitQuaternion<f64>,
    scale: f64,
) -> Similarity3<f64> {
    let to = Similarity3::from_parts(
        Translation3::from(c.coords),
        UnitQuaternion::identity(),
        1.0,
    );
    let rs = Similarity3::from_parts(Translation3::identity(), rot, scale);
    let from = Similarity3::from_parts(
        Translation3::from(-c.coords),
        UnitQuaternion::identity(),
        1.0,
    );
    to * rs * from
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::polyline_length;

    fn mean_distance(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
        a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn default_template_is_clean() {
        let asset = build_template(&TemplateParams::default()).unwrap();
        let r = asset.mesh.edge_report();
        assert_eq!(r.boundary_edges, 0);
        assert!(r.is_closed());
        assert!(detect_self_intersections(&asset.mesh).is_empty());
        assert_eq!(asset.rig.joint_count(), 16);
        let v = asset.vertex_count();
        assert!((2500..=3500).contains(&v), "{v}");
        for region in Region::ALL {
            assert!(asset.regions.contains(&region), "{region} missing");
        }
        for p in &asset.prototypes {
            let m = asset.mesh.with_vertices(p.clone()).unwrap();
            assert!(detect_self_intersections(&m).is_empty());
        }
    }

    #[test]
    fn deterministic_build() {
        let a = build_template(&TemplateParams::coarse()).unwrap();
        let b = build_template(&TemplateParams::coarse()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prototypes_are_distinct() {
        let asset = build_template(&TemplateParams::default()).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                let d = mean_distance(&asset.prototypes[i], &asset.prototypes[j]);
                assert!(d > 2.0, "prototypes {i} and {j}: mean distance {d}");
            }
        }
    }

    #[test]
    fn too_coarse_is_an_error() {
        let p = TemplateParams {
            stomach_spacing_mm: 100.0,
            ..TemplateParams::default()
        };
        assert!(matches!(
            build_template(&p),
            Err(SynthError::ResolutionTooLow(_))
        ));
        let p = TemplateParams {
            around: 5,
            ..TemplateParams::default()
        };
        assert!(matches!(
            build_template(&p),
            Err(SynthError::ResolutionTooLow(_))
        ));
    }

    #[test]
    fn curvature_chains_have_plausible_lengths() {
        let asset = build_template(&TemplateParams::default()).unwrap();
        let gc = polyline_length(&asset.mesh, &asset.gc_chain).unwrap();
        let lc = polyline_length(&asset.mesh, &asset.lc_chain).unwrap();
        let vol = enclosed_volume(&asset.mesh).unwrap().value;
        assert!(gc > lc, "gc {gc} lc {lc}");
        assert!((250.0..450.0).contains(&gc), "gc {gc}");
        assert!((100.0..200.0).contains(&lc), "lc {lc}");
        assert!((2e5..1.5e6).contains(&vol), "vol {vol}");
    }
}
