//! Crystal geometry: direct and reciprocal lattices, centering extinctions,
//! goniometer rotations, high-symmetry target axes and the stereographic
//! projection used for trajectory plots.
//!
//! Frames:
//! * crystal frame: Cartesian, `a` along x, `b` in the xy-plane.
//! * lab frame: crystal at the origin, detector plane at `z = +L`, the incident
//!   beam travels along `-z` through the detector pinhole.
//! * goniometer frame: the frame in which the yaw/roll/pitch matrices are
//!   written. Its x axis is the beam axis (roll is `R_x`), and it is mapped onto
//!   the lab frame by [`goniometer_to_lab`].

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;

use crate::error::{LaueError, Result};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Crystal systems covered by the supported space groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrystalSystem {
    Cubic,
    Tetragonal,
    Hexagonal,
}

impl fmt::Display for CrystalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CrystalSystem::Cubic => "cubic",
            CrystalSystem::Tetragonal => "tetragonal",
            CrystalSystem::Hexagonal => "hexagonal",
        };
        f.write_str(s)
    }
}

/// Bravais centering of a mono-atomic cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Centering {
    Primitive,
    BodyCentered,
    FaceCentered,
}

impl Centering {
    /// Fractional coordinates of the lattice points in the conventional cell.
    pub fn basis(self) -> &'static [[f64; 3]] {
        match self {
            Centering::Primitive => &[[0.0, 0.0, 0.0]],
            Centering::BodyCentered => &[[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]],
            Centering::FaceCentered => &[
                [0.0, 0.0, 0.0],
                [0.5, 0.5, 0.0],
                [0.5, 0.0, 0.5],
                [0.0, 0.5, 0.5],
            ],
        }
    }
}

/// The supported space groups, identified by their International Tables number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum SpaceGroup {
    /// Pm-3m (221)
    PrimitiveCubic,
    /// Fm-3m (225)
    FaceCenteredCubic,
    /// Im-3m (229)
    BodyCenteredCubic,
    /// P6/mmm (191)
    PrimitiveHexagonal,
    /// I4/mmm (139)
    BodyCenteredTetragonal,
}

impl SpaceGroup {
    pub const ALL: [SpaceGroup; 5] = [
        SpaceGroup::PrimitiveCubic,
        SpaceGroup::FaceCenteredCubic,
        SpaceGroup::BodyCenteredCubic,
        SpaceGroup::PrimitiveHexagonal,
        SpaceGroup::BodyCenteredTetragonal,
    ];

    pub fn number(self) -> u16 {
        match self {
            SpaceGroup::PrimitiveCubic => 221,
            SpaceGroup::FaceCenteredCubic => 225,
            SpaceGroup::BodyCenteredCubic => 229,
            SpaceGroup::PrimitiveHexagonal => 191,
            SpaceGroup::BodyCenteredTetragonal => 139,
        }
    }

    pub fn from_number(n: u16) -> Result<Self> {
        SpaceGroup::ALL
            .iter()
            .copied()
            .find(|g| g.number() == n)
            .ok_or(LaueError::UnsupportedSpaceGroup(n))
    }

    pub fn system(self) -> CrystalSystem {
        match self {
            SpaceGroup::PrimitiveCubic
            | SpaceGroup::FaceCenteredCubic
            | SpaceGroup::BodyCenteredCubic => CrystalSystem::Cubic,
            SpaceGroup::PrimitiveHexagonal => CrystalSystem::Hexagonal,
            SpaceGroup::BodyCenteredTetragonal => CrystalSystem::Tetragonal,
        }
    }

    pub fn centering(self) -> Centering {
        match self {
            SpaceGroup::PrimitiveCubic | SpaceGroup::PrimitiveHexagonal => Centering::Primitive,
            SpaceGroup::BodyCenteredCubic | SpaceGroup::BodyCenteredTetragonal => {
                Centering::BodyCentered
            }
            SpaceGroup::FaceCenteredCubic => Centering::FaceCentered,
        }
    }
}

impl TryFrom<u16> for SpaceGroup {
    type Error = LaueError;
    fn try_from(n: u16) -> Result<Self> {
        SpaceGroup::from_number(n)
    }
}

impl From<SpaceGroup> for u16 {
    fn from(g: SpaceGroup) -> u16 {
        g.number()
    }
}

impl fmt::Display for SpaceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Cell edges in Å and angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

const LATTICE_TOL: f64 = 1e-9;

impl LatticeConstants {
    pub fn cubic(a: f64) -> Self {
        Self { a, b: a, c: a, alpha: 90.0, beta: 90.0, gamma: 90.0 }
    }

    pub fn tetragonal(a: f64, c: f64) -> Self {
        Self { a, b: a, c, alpha: 90.0, beta: 90.0, gamma: 90.0 }
    }

    pub fn hexagonal(a: f64, c: f64) -> Self {
        Self { a, b: a, c, alpha: 90.0, beta: 90.0, gamma: 120.0 }
    }

    /// Checks positivity and angle ranges, then the constraints of `system`.
    pub fn validate(&self, system: CrystalSystem) -> Result<()> {
        let bad = |msg: String| Err(LaueError::InvalidLattice(msg));
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} must be a positive length"));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0 && v < 180.0) {
                return bad(format!("{name} = {v} must lie in (0, 180)"));
            }
        }
        let eq = |x: f64, y: f64| (x - y).abs() <= LATTICE_TOL * x.abs().max(1.0);
        let right = eq(self.alpha, 90.0) && eq(self.beta, 90.0);
        let ok = match system {
            CrystalSystem::Cubic => {
                eq(self.a, self.b) && eq(self.b, self.c) && right && eq(self.gamma, 90.0)
            }
            CrystalSystem::Tetragonal => eq(self.a, self.b) && right && eq(self.gamma, 90.0),
            CrystalSystem::Hexagonal => eq(self.a, self.b) && right && eq(self.gamma, 120.0),
        };
        if ok {
            Ok(())
        } else {
            bad(format!("{self:?} is inconsistent with a {system} cell"))
        }
    }

    /// Direct basis vectors as matrix columns (a along x, b in the xy-plane).
    pub fn direct_basis(&self) -> Mat3 {
        let (ca, cb, cg) = (
            self.alpha.to_radians().cos(),
            self.beta.to_radians().cos(),
            self.gamma.to_radians().cos(),
        );
        let sg = self.gamma.to_radians().sin();
        let a1 = Vec3::new(self.a, 0.0, 0.0);
        let a2 = Vec3::new(self.b * cg, self.b * sg, 0.0);
        let cy = (ca - cb * cg) / sg;
        let cz2 = 1.0 - cb * cb - cy * cy;
        let a3 = Vec3::new(self.c * cb, self.c * cy, self.c * cz2.max(0.0).sqrt());
        Mat3::from_columns(&[a1, a2, a3])
    }
}

/// Reciprocal basis `b1, b2, b3` as matrix columns, with `a_i . b_j = 2 pi delta_ij`.
pub fn reciprocal_basis(lattice: &LatticeConstants) -> Result<Mat3> {
    let direct = lattice.direct_basis();
    let (a1, a2, a3) = (direct.column(0), direct.column(1), direct.column(2));
    let volume = a1.dot(&a2.cross(&a3));
    let scale = lattice.a * lattice.b * lattice.c;
    if !volume.is_finite() || volume.abs() <= 1e-12 * scale {
        return Err(LaueError::DegenerateCell(volume));
    }
    let k = 2.0 * PI / volume;
    Ok(Mat3::from_columns(&[
        a2.cross(&a3) * k,
        a3.cross(&a1) * k,
        a1.cross(&a2) * k,
    ]))
}

/// A validated crystal: space group plus a lattice consistent with its system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalSpec {
    pub space_group: SpaceGroup,
    pub lattice: LatticeConstants,
}

impl CrystalSpec {
    pub fn new(space_group: SpaceGroup, lattice: LatticeConstants) -> Result<Self> {
        let spec = Self { space_group, lattice };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.lattice.validate(self.space_group.system())
    }

    pub fn system(&self) -> CrystalSystem {
        self.space_group.system()
    }

    /// Fixed-setting cell used for training (cubic 9 Å, hexagonal 4/8 Å,
    /// tetragonal 3/12 Å).
    pub fn preset(space_group: SpaceGroup) -> Self {
        let lattice = match space_group.system() {
            CrystalSystem::Cubic => LatticeConstants::cubic(9.0),
            CrystalSystem::Hexagonal => LatticeConstants::hexagonal(4.0, 8.0),
            CrystalSystem::Tetragonal => LatticeConstants::tetragonal(3.0, 12.0),
        };
        Self { space_group, lattice }
    }
}

/// Whether the mono-atomic structure factor of `(h, k, l)` is nonzero.
pub fn reflection_allowed(spec: &CrystalSpec, h: i32, k: i32, l: i32) -> Result<bool> {
    if h == 0 && k == 0 && l == 0 {
        return Err(LaueError::ZeroReflection);
    }
    Ok(centering_allows(spec.space_group.centering(), h, k, l))
}

#[inline]
pub(crate) fn centering_allows(centering: Centering, h: i32, k: i32, l: i32) -> bool {
    match centering {
        Centering::Primitive => true,
        Centering::BodyCentered => (h + k + l).rem_euclid(2) == 0,
        Centering::FaceCentered => {
            let (ph, pk, pl) = (h.rem_euclid(2), k.rem_euclid(2), l.rem_euclid(2));
            ph == pk && pk == pl
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationAxis {
    X,
    Y,
    Z,
}

/// Right-handed rotation by `angle_deg` about a coordinate axis.
pub fn rotation_matrix(axis: RotationAxis, angle_deg: f64) -> Mat3 {
    let (s, c) = angle_deg.to_radians().sin_cos();
    match axis {
        RotationAxis::X => Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        RotationAxis::Y => Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        RotationAxis::Z => Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

/// `Ω0 = R_y(θ0) R_x(χ0) R_z(φ0)`.
pub fn initial_orientation(theta0: f64, chi0: f64, phi0: f64) -> Mat3 {
    rotation_matrix(RotationAxis::Y, theta0)
        * rotation_matrix(RotationAxis::X, chi0)
        * rotation_matrix(RotationAxis::Z, phi0)
}

/// `Ω_t = Ω0 R_y(θ_t) R_z(φ_t) Ω0ᵀ`, with θ_t, φ_t the cumulative executed actions.
pub fn compose_orientation(omega0: &Mat3, theta_cum: f64, phi_cum: f64) -> Mat3 {
    omega0
        * rotation_matrix(RotationAxis::Y, theta_cum)
        * rotation_matrix(RotationAxis::Z, phi_cum)
        * omega0.transpose()
}

/// Maps goniometer coordinates (x = beam axis) onto the lab frame (z = beam axis).
///
/// Yaw (`R_y`) becomes a rotation about lab y and pitch (`R_z`) a rotation about
/// lab `-x`, so both translate the pattern on the detector while roll (`R_x`)
/// spins it about the beam.
pub fn goniometer_to_lab() -> Mat3 {
    rotation_matrix(RotationAxis::Y, -90.0)
}

/// Crystal-to-lab orientation `M_t = P Ω0ᵀ Ω_t Pᵀ B`.
///
/// `base` puts the episode's target axis on the beam, `P` is
/// [`goniometer_to_lab`]. Since `Ω0ᵀ Ω_t = R_y(θ_t) R_z(φ_t) Ω0ᵀ`, the executed
/// actions always rotate the crystal about fixed lab axes.
pub fn crystal_orientation(omega0: &Mat3, theta_cum: f64, phi_cum: f64, base: &Mat3) -> Mat3 {
    let p = goniometer_to_lab();
    let omega_t = compose_orientation(omega0, theta_cum, phi_cum);
    p * omega0.transpose() * omega_t * p.transpose() * base
}

/// Lab axis of the incident beam line (the beam itself travels along `-z`).
pub fn beam_axis() -> Vec3 {
    Vec3::z()
}

/// Unit vector of the beam propagation direction.
pub fn beam_direction() -> Vec3 {
    -Vec3::z()
}

/// A proper rotation taking the unit vector along `axis` onto lab +z.
pub fn align_axis_to_beam(axis: &Vec3) -> Mat3 {
    let v = axis.normalize();
    let z = Vec3::z();
    let cos = v.dot(&z).clamp(-1.0, 1.0);
    let cross = v.cross(&z);
    let sin = cross.norm();
    if sin < 1e-12 {
        return if cos > 0.0 {
            Mat3::identity()
        } else {
            rotation_matrix(RotationAxis::X, 180.0)
        };
    }
    let k = cross / sin;
    let kx = Mat3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    Mat3::identity() + kx * sin + kx * kx * (1.0 - cos)
}

/// Which high-symmetry axes count as alignment targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Only the crystallographic c axis, `(0,0,±1)`.
    CAxisOnly,
    /// All symmetry-equivalent members of the (001) family: the six cubic
    /// `<001>` axes, or the c axis for tetragonal and hexagonal cells.
    Family001,
    /// Every cubic `<001>`, `<101>` and `<111>` axis (26 signed vectors).
    AllCubicHighSymmetry,
}

/// Cubic high-symmetry families, used as classifier labels 1..=3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisFamily {
    F001,
    F101,
    F111,
}

impl AxisFamily {
    pub const ALL: [AxisFamily; 3] = [AxisFamily::F001, AxisFamily::F101, AxisFamily::F111];

    /// Signed, normalized members of the cubic family.
    pub fn cubic_axes(self) -> Vec<Vec3> {
        let mut out = Vec::new();
        for x in -1i32..=1 {
            for y in -1i32..=1 {
                for z in -1i32..=1 {
                    let nonzero = [x, y, z].iter().filter(|&&c| c != 0).count();
                    let want = match self {
                        AxisFamily::F001 => 1,
                        AxisFamily::F101 => 2,
                        AxisFamily::F111 => 3,
                    };
                    if nonzero == want {
                        out.push(Vec3::new(x as f64, y as f64, z as f64).normalize());
                    }
                }
            }
        }
        out
    }

    pub fn label(self) -> usize {
        match self {
            AxisFamily::F001 => 1,
            AxisFamily::F101 => 2,
            AxisFamily::F111 => 3,
        }
    }
}

/// Target axes in the crystal frame; closed under `v -> -v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    pub axes: Vec<Vec3>,
    pub mode: TargetMode,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }
}

pub fn target_set(spec: &CrystalSpec, mode: TargetMode) -> Result<TargetSet> {
    let c_axis = || vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -1.0)];
    let axes = match (mode, spec.system()) {
        (TargetMode::CAxisOnly, _) => c_axis(),
        (TargetMode::Family001, CrystalSystem::Cubic) => AxisFamily::F001.cubic_axes(),
        (TargetMode::Family001, _) => c_axis(),
        (TargetMode::AllCubicHighSymmetry, CrystalSystem::Cubic) => AxisFamily::ALL
            .iter()
            .flat_map(|f| f.cubic_axes())
            .collect(),
        (TargetMode::AllCubicHighSymmetry, system) => {
            return Err(LaueError::IncompatibleTargetMode {
                mode: "all-cubic-high-symmetry".into(),
                system: system.to_string(),
            })
        }
    };
    Ok(TargetSet { axes, mode })
}

/// Angle in degrees between `beam` and the closest target axis carried by `m`.
///
/// Uses `|cos|`, so an axis and its Friedel mate are equivalent.
pub fn angular_distance(m: &Mat3, targets: &TargetSet, beam: &Vec3) -> f64 {
    nearest_target(m, targets, beam).1
}

/// Index of the closest target and its angular distance in degrees.
pub fn nearest_target(m: &Mat3, targets: &TargetSet, beam: &Vec3) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in targets.axes.iter().enumerate() {
        let d = axis_angle_deg(&(m * v), beam);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Unsigned angle between two lines through the origin, in degrees.
pub fn axis_angle_deg(u: &Vec3, v: &Vec3) -> f64 {
    let c = (u.dot(v) / (u.norm() * v.norm())).abs();
    c.clamp(0.0, 1.0).acos().to_degrees()
}

/// Stereographic projection from the south pole onto the equatorial plane.
pub fn stereographic_project(v: &Vec3) -> Result<(f64, f64)> {
    let denom = 1.0 + v.z;
    if denom <= 1e-12 {
        return Err(LaueError::Antipode(v.z));
    }
    Ok((v.x / denom, v.y / denom))
}

/// `‖MᵀM − I‖_∞` and `det M`, for orthonormality checks.
pub fn orthonormality_defect(m: &Mat3) -> (f64, f64) {
    let e = m.transpose() * m - Mat3::identity();
    (e.amax(), m.determinant())
}
