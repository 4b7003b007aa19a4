//! Linear inequality builders for the planning QP: longitudinal and lateral
//! DCBFs, ellipse projection with tangent-linearized DHOCBF rows, safety
//! boundaries and actuator limits.
//!
//! Decision variables are laid out stage-wise, `[x_0, u_0, x_1, u_1, …, x_N]`,
//! followed by extra variables (slacks and ω relaxations) in allocation order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{LinearizedModel, StateVec, INPUT_DIM, STATE_DIM};

/// State component indices.
pub const VX: usize = 0;
pub const VY: usize = 1;
pub const YAW_RATE: usize = 2;
pub const S: usize = 3;
pub const EY: usize = 4;
pub const EPSI: usize = 5;
/// Input component indices.
pub const ACCEL: usize = 0;
pub const STEER: usize = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ConstraintError {
    #[error("projection undefined for a query at the ellipse center")]
    CenterQuery,
    #[error("ellipse semi-axes must be positive (a = {a}, b = {b})")]
    InvalidEllipse { a: f64, b: f64 },
    #[error("{what} has {got} entries, expected at least {want}")]
    ShortSequence { what: &'static str, got: usize, want: usize },
}

/// Index map of the stage-wise variable layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub horizon: usize,
}

impl Layout {
    const STAGE: usize = STATE_DIM + INPUT_DIM;

    pub fn new(horizon: usize) -> Self {
        Self { horizon }
    }

    pub fn x(&self, k: usize, i: usize) -> usize {
        debug_assert!(k <= self.horizon && i < STATE_DIM);
        k * Self::STAGE + i
    }

    pub fn u(&self, k: usize, j: usize) -> usize {
        debug_assert!(k < self.horizon && j < INPUT_DIM);
        k * Self::STAGE + STATE_DIM + j
    }

    /// Number of state and input variables.
    pub fn base_len(&self) -> usize {
        self.horizon * Self::STAGE + STATE_DIM
    }
}

/// Which vehicle a family constrains, relative to the ego's groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    CurrentLeader,
    CurrentFollower,
    DesiredLeader,
    DesiredFollower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Initial { state: usize },
    Dynamics { state: usize },
    Lon(Role),
    Lat,
    DhoFirst(Role),
    DhoSecond(Role),
    Boundary,
    BandUpper,
    BandLower,
    AccelBox,
    SteerBox,
    AccelRate,
    SteerRate,
}

impl Family {
    /// Families whose rows are discrete CBF conditions with a slack.
    pub fn is_dcbf(&self) -> bool {
        matches!(self, Family::Lon(_) | Family::Lat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowTag {
    pub family: Family,
    pub vehicle: Option<usize>,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
    Range,
}

/// `lo ≤ Σ cᵢ xᵢ ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub lo: f64,
    pub hi: f64,
    pub tag: RowTag,
}

impl LinearRow {
    pub fn ge(coeffs: Vec<(usize, f64)>, rhs: f64, tag: RowTag) -> Self {
        Self { coeffs, lo: rhs, hi: f64::INFINITY, tag }
    }

    pub fn le(coeffs: Vec<(usize, f64)>, rhs: f64, tag: RowTag) -> Self {
        Self { coeffs, lo: f64::NEG_INFINITY, hi: rhs, tag }
    }

    pub fn eq(coeffs: Vec<(usize, f64)>, rhs: f64, tag: RowTag) -> Self {
        Self { coeffs, lo: rhs, hi: rhs, tag }
    }

    pub fn range(coeffs: Vec<(usize, f64)>, lo: f64, hi: f64, tag: RowTag) -> Self {
        Self { coeffs, lo, hi, tag }
    }

    pub fn sense(&self) -> Sense {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            _ if self.lo == self.hi => Sense::Eq,
            (true, false) => Sense::Ge,
            (false, true) => Sense::Le,
            _ => Sense::Range,
        }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * z[i]).sum()
    }

    /// Amount by which `z` violates the row (0 when satisfied).
    pub fn violation(&self, z: &[f64]) -> f64 {
        let v = self.value(z);
        (self.lo - v).max(v - self.hi).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtraKind {
    Slack,
    Omega,
}

/// A slack or relaxation variable appended after the stage variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtraVar {
    pub kind: ExtraKind,
    pub family: Family,
    pub vehicle: Option<usize>,
}

/// Rows plus the extra variables they introduced.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSet {
    pub layout: Layout,
    pub rows: Vec<LinearRow>,
    pub extras: Vec<ExtraVar>,
}

impl RowSet {
    pub fn new(layout: Layout) -> Self {
        Self { layout, rows: Vec::new(), extras: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.layout.base_len() + self.extras.len()
    }

    pub fn add_extra(&mut self, kind: ExtraKind, family: Family, vehicle: Option<usize>) -> usize {
        self.extras.push(ExtraVar { kind, family, vehicle });
        self.layout.base_len() + self.extras.len() - 1
    }

    pub fn count(&self, pred: impl Fn(&Family) -> bool) -> usize {
        self.rows.iter().filter(|r| pred(&r.tag.family)).count()
    }
}

/// Which side of the ego the other vehicle is on along the track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Ahead,
    Behind,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Ahead => 1.0,
            Side::Behind => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonCbfParams {
    /// Time headway [s].
    pub t_d: f64,
    /// Standstill distance [m].
    pub d_0: f64,
    pub gamma: f64,
}

impl Default for LonCbfParams {
    fn default() -> Self {
        Self { t_d: 0.3, d_0: 5.0, gamma: 0.3 }
    }
}

/// Longitudinal barrier `|s − s_i| − T_d v_x − d_0`, with the absolute value
/// resolved by `side`.
pub fn h_lon(s: f64, v_x: f64, s_i: f64, side: Side, p: &LonCbfParams) -> f64 {
    side.sign() * (s_i - s) - p.t_d * v_x - p.d_0
}

/// A vehicle constrained longitudinally. `s[k]` is its predicted position and
/// `scale[k]` converts centerline distance to distance along the ego's lane,
/// for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LonObstacle {
    pub vehicle: Option<usize>,
    pub side: Side,
    pub s: Vec<f64>,
    pub scale: Vec<f64>,
}

fn check_len(what: &'static str, got: usize, want: usize) -> Result<(), ConstraintError> {
    if got < want {
        Err(ConstraintError::ShortSequence { what, got, want })
    } else {
        Ok(())
    }
}

/// `h_{k+1} − h_k ≥ −γ h_k − ε` for `k = 0..N−1`, with one non-negative slack
/// shared by the family. Returns the slack's variable index.
pub fn lon_dcbf_rows(set: &mut RowSet, role: Role, obs: &LonObstacle, p: &LonCbfParams) -> Result<usize, ConstraintError> {
    let n = set.layout.horizon;
    check_len("obstacle positions", obs.s.len(), n + 1)?;
    check_len("lane scales", obs.scale.len(), n + 1)?;
    let family = Family::Lon(role);
    let slack = set.add_extra(ExtraKind::Slack, family, obs.vehicle);
    let sg = obs.side.sign();
    let keep = 1.0 - p.gamma;
    let l = set.layout;
    for k in 0..n {
        // h_k = sg·σ_k·(s_i,k − s_k) − T_d v_k − d_0
        let (sk, sk1) = (obs.scale[k], obs.scale[k + 1]);
        let coeffs = vec![
            (l.x(k + 1, S), -sg * sk1),
            (l.x(k + 1, VX), -p.t_d),
            (l.x(k, S), keep * sg * sk),
            (l.x(k, VX), keep * p.t_d),
            (slack, 1.0),
        ];
        let constant = sg * sk1 * obs.s[k + 1] - p.d_0 - keep * (sg * sk * obs.s[k] - p.d_0);
        let tag = RowTag { family, vehicle: obs.vehicle, k };
        set.rows.push(LinearRow::ge(coeffs, -constant, tag));
    }
    Ok(slack)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatCbfParams {
    /// Vehicle width [m].
    pub width: f64,
    pub d_lat: f64,
    pub gamma: f64,
    /// Half-length of the ego-centred region of interest (2·l_diag) [m].
    pub roi_half: f64,
}

impl Default for LatCbfParams {
    fn default() -> Self {
        Self { width: 1.8, d_lat: 2.1, gamma: 0.3, roi_half: 7.4 }
    }
}

/// Lateral barrier `|e_y − e_y^j| − w − d_lat`; `left` when the neighbor is at
/// larger `e_y`.
pub fn h_lat(e_y: f64, e_y_j: f64, left: bool, p: &LatCbfParams) -> f64 {
    let side = if left { 1.0 } else { -1.0 };
    side * (e_y_j - e_y) - p.width - p.d_lat
}

/// Closed region of interest around the ego.
pub fn in_roi(ego_s: f64, s_j: f64, p: &LatCbfParams) -> bool {
    (s_j - ego_s).abs() <= p.roi_half
}

/// A neighbor in an adjacent lane with predicted `s` and `e_y` for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatNeighbor {
    pub vehicle: usize,
    pub left: bool,
    pub s: Vec<f64>,
    pub e_y: Vec<f64>,
}

/// Lateral DCBF rows for each step the neighbor is inside the ROI of the
/// predicted ego position `ego_s[k]`. Returns the slack index, or `None` when
/// the neighbor never enters the ROI.
pub fn lat_dcbf_rows(set: &mut RowSet, nb: &LatNeighbor, ego_s: &[f64], p: &LatCbfParams) -> Result<Option<usize>, ConstraintError> {
    let n = set.layout.horizon;
    check_len("neighbor positions", nb.s.len().min(nb.e_y.len()), n + 1)?;
    check_len("ego positions", ego_s.len(), n + 1)?;
    let steps: Vec<usize> = (0..n).filter(|&k| in_roi(ego_s[k], nb.s[k], p)).collect();
    if steps.is_empty() {
        return Ok(None);
    }
    let slack = set.add_extra(ExtraKind::Slack, Family::Lat, Some(nb.vehicle));
    let side = if nb.left { 1.0 } else { -1.0 };
    let keep = 1.0 - p.gamma;
    let l = set.layout;
    for k in steps {
        let margin = p.width + p.d_lat;
        let coeffs = vec![(l.x(k + 1, EY), -side), (l.x(k, EY), keep * side), (slack, 1.0)];
        let constant = side * nb.e_y[k + 1] - margin - keep * (side * nb.e_y[k] - margin);
        let tag = RowTag { family: Family::Lat, vehicle: Some(nb.vehicle), k };
        set.rows.push(LinearRow::ge(coeffs, -constant, tag));
    }
    Ok(Some(slack))
}

/// Axis-aligned ellipse in `(s, e_y)`: `(s−s_o)²/a² + (e_y−e_yo)²/b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseObstacle {
    pub s_o: f64,
    pub e_yo: f64,
    pub a: f64,
    pub b: f64,
}

impl EllipseObstacle {
    /// Left-hand side of the ellipse equation minus one.
    pub fn level(&self, s: f64, e_y: f64) -> f64 {
        ((s - self.s_o) / self.a).powi(2) + ((e_y - self.e_yo) / self.b).powi(2) - 1.0
    }
}

/// Nearest point on the ellipse to `(s_b, e_yb)`.
///
/// Stationarity of the Lagrangian gives the candidate in closed form as a
/// function of the multiplier λ; the nearest one is the unique root of the
/// secular equation with λ > −min(a², b²), found by safeguarded Newton.
pub fn ellipse_project(s_b: f64, e_yb: f64, e: &EllipseObstacle) -> Result<(f64, f64), ConstraintError> {
    let (a, b) = (e.a, e.b);
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(ConstraintError::InvalidEllipse { a, b });
    }
    let (u, v) = (s_b - e.s_o, e_yb - e.e_yo);
    if u == 0.0 && v == 0.0 {
        return Err(ConstraintError::CenterQuery);
    }
    let (a2, b2) = (a * a, b * b);
    let point = |lam: f64| (a2 * u / (a2 + lam), b2 * v / (b2 + lam));
    let g = |lam: f64| {
        let (p, q) = point(lam);
        (p / a).powi(2) + (q / b).powi(2) - 1.0
    };
    let dg = |lam: f64| -2.0 * (a2 * u * u / (a2 + lam).powi(3) + b2 * v * v / (b2 + lam).powi(3));
    let lo_pole = -a2.min(b2);
    // when the coordinate along the shorter axis vanishes the pole is removable
    let degenerate = if a2 <= b2 { u == 0.0 } else { v == 0.0 };
    if degenerate {
        let (other, other2, short2) = if a2 <= b2 { (v, b2, a2) } else { (u, a2, b2) };
        let c = other2 * other / (other2 - short2);
        if a2 != b2 && (c * c) / other2 <= 1.0 {
            // interior query on the long axis: two symmetric nearest points
            let free = (short2 * (1.0 - c * c / other2)).sqrt();
            return Ok(if a2 <= b2 { (e.s_o + free, e.e_yo + c) } else { (e.s_o + c, e.e_yo + free) });
        }
    }
    let mut lo = lo_pole;
    let mut hi = std::f64::consts::SQRT_2 * (a * u.abs()).max(b * v.abs());
    let mut lam = if g(0.0) > 0.0 { 0.5 * hi } else { 0.5 * (lo + 0.0) };
    for _ in 0..200 {
        let val = g(lam);
        if val == 0.0 {
            break;
        }
        if val > 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
        let step = lam - val / dg(lam);
        let next = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if (next - lam).abs() <= 1e-15 * (1.0 + lam.abs()) {
            lam = next;
            break;
        }
        lam = next;
    }
    let (p, q) = point(lam);
    Ok((e.s_o + p, e.e_yo + q))
}

/// Tangent half-plane `ψ_0(s, e_y) = A s + B e_y + C`, non-negative outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tangent {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Tangent {
    pub fn eval(&self, s: f64, e_y: f64) -> f64 {
        self.a * s + self.b * e_y + self.c
    }
}

/// Tangent of the ellipse at the boundary point `(s̄, ē_y)`.
pub fn tangent_coeffs(s_bar: f64, e_bar: f64, e: &EllipseObstacle) -> Tangent {
    let (a2, b2) = (e.a * e.a, e.b * e.b);
    Tangent {
        a: b2 * (s_bar - e.s_o),
        b: a2 * (e_bar - e.e_yo),
        c: b2 * (e.s_o * e.s_o - e.s_o * s_bar) + a2 * (e.e_yo * e.e_yo - e.e_yo * e_bar) - a2 * b2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhocbfParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub n_dho: usize,
    pub omega_min: f64,
}

impl Default for DhocbfParams {
    fn default() -> Self {
        Self { gamma1: 0.3, gamma2: 0.3, n_dho: 20, omega_min: 0.0 }
    }
}

/// How the relaxation multipliers enter the rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaMode {
    /// Each row gets its own decision variable.
    Free,
    /// Fixed value folded into the right-hand side.
    Fixed(f64),
}

/// Linearized second-order DHOCBF rows for one obstacle.
///
/// `tangents[k]` linearizes the obstacle at step `k = 0..=N_dho`; `psi_t0`
/// and `psi_t1` are ψ_0 at the current state and at step 1 of the previous
/// trajectory. Emits `N_dho` first-order rows
/// `ψ_0(x_{k+1}) ≥ ω (1−γ_1)^{k+1} ψ_0(x_{t,0})` and `N_dho − 1` second-order
/// rows `ψ_1(x_{k+1}) ≥ (1−γ_2)^{k+1} ψ_0(x_{t,1}) + ω (γ_1−1)(1−γ_2)^{k+1} ψ_0(x_{t,0})`
/// with `ψ_1(x_{k+1}) = ψ_0(x_{k+2}) + (γ_1 − 1) ψ_0(x_{k+1})`.
#[allow(clippy::too_many_arguments)]
pub fn dhocbf_rows(
    set: &mut RowSet,
    role: Role,
    vehicle: Option<usize>,
    tangents: &[Tangent],
    psi_t0: f64,
    psi_t1: f64,
    p: &DhocbfParams,
    omega: OmegaMode,
) -> Result<(), ConstraintError> {
    let n_dho = p.n_dho.min(set.layout.horizon);
    check_len("tangents", tangents.len(), n_dho + 1)?;
    let l = set.layout;
    let psi_terms = |k: usize, w: f64| -> Vec<(usize, f64)> {
        let t = tangents[k];
        vec![(l.x(k, S), w * t.a), (l.x(k, EY), w * t.b)]
    };
    let (d1, d2) = (1.0 - p.gamma1, 1.0 - p.gamma2);
    let first = Family::DhoFirst(role);
    for k in 0..n_dho {
        let mut coeffs = psi_terms(k + 1, 1.0);
        let factor = d1.powi(k as i32 + 1) * psi_t0;
        let mut rhs = -tangents[k + 1].c;
        match omega {
            OmegaMode::Free => {
                let w = set.add_extra(ExtraKind::Omega, first, vehicle);
                coeffs.push((w, -factor));
            }
            OmegaMode::Fixed(w) => rhs += w * factor,
        }
        set.rows.push(LinearRow::ge(coeffs, rhs, RowTag { family: first, vehicle, k }));
    }
    let second = Family::DhoSecond(role);
    for k in 0..n_dho.saturating_sub(1) {
        let mut coeffs = psi_terms(k + 2, 1.0);
        coeffs.extend(psi_terms(k + 1, -d1));
        let decay = d2.powi(k as i32 + 1);
        let factor = -d1 * decay * psi_t0;
        let mut rhs = decay * psi_t1 - tangents[k + 2].c + d1 * tangents[k + 1].c;
        match omega {
            OmegaMode::Free => {
                let w = set.add_extra(ExtraKind::Omega, second, vehicle);
                coeffs.push((w, -factor));
            }
            OmegaMode::Fixed(w) => rhs += w * factor,
        }
        set.rows.push(LinearRow::ge(coeffs, rhs, RowTag { family: second, vehicle, k }));
    }
    Ok(())
}

/// Hard rows `|e_y,k| ≤ outer` for `k = 1..N`, plus (when `soft`) the band
/// `|e_y,k − e_ref| ≤ λ_b + ε_b` with one shared slack. Returns the slack.
pub fn boundary_rows(set: &mut RowSet, e_ref: f64, lambda_b: f64, outer: f64, soft: bool) -> Option<usize> {
    let n = set.layout.horizon;
    let l = set.layout;
    for k in 1..=n {
        let tag = RowTag { family: Family::Boundary, vehicle: None, k };
        set.rows.push(LinearRow::range(vec![(l.x(k, EY), 1.0)], -outer, outer, tag));
    }
    if !soft {
        return None;
    }
    let slack = set.add_extra(ExtraKind::Slack, Family::BandUpper, None);
    for k in 1..=n {
        let up = RowTag { family: Family::BandUpper, vehicle: None, k };
        set.rows.push(LinearRow::le(vec![(l.x(k, EY), 1.0), (slack, -1.0)], e_ref + lambda_b, up));
        let down = RowTag { family: Family::BandLower, vehicle: None, k };
        set.rows.push(LinearRow::ge(vec![(l.x(k, EY), 1.0), (slack, 1.0)], e_ref - lambda_b, down));
    }
    Some(slack)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLimits {
    pub a_min: f64,
    pub a_max: f64,
    pub delta_max: f64,
    /// Bounds on ȧ_x [m/s³].
    pub jerk_min: f64,
    pub jerk_max: f64,
    /// Bound on |δ̇| [rad/s].
    pub steer_rate_max: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        Self { a_min: -3.0, a_max: 3.0, delta_max: 0.44, jerk_min: -5.0, jerk_max: 5.0, steer_rate_max: 0.5 }
    }
}

/// Box rows on every input and first-difference rate rows `(u_{k+1} − u_k)/Δt`
/// for `k = 0..N−2`.
pub fn actuator_rows(set: &mut RowSet, lim: &ActuatorLimits, dt: f64) {
    let n = set.layout.horizon;
    let l = set.layout;
    for k in 0..n {
        let t = |family| RowTag { family, vehicle: None, k };
        set.rows.push(LinearRow::range(vec![(l.u(k, ACCEL), 1.0)], lim.a_min, lim.a_max, t(Family::AccelBox)));
        set.rows.push(LinearRow::range(vec![(l.u(k, STEER), 1.0)], -lim.delta_max, lim.delta_max, t(Family::SteerBox)));
    }
    for k in 0..n.saturating_sub(1) {
        let t = |family| RowTag { family, vehicle: None, k };
        let diff = |j| vec![(l.u(k + 1, j), 1.0 / dt), (l.u(k, j), -1.0 / dt)];
        set.rows.push(LinearRow::range(diff(ACCEL), lim.jerk_min, lim.jerk_max, t(Family::AccelRate)));
        set.rows.push(LinearRow::range(diff(STEER), -lim.steer_rate_max, lim.steer_rate_max, t(Family::SteerRate)));
    }
}

/// `x_0 = x_t` and `x_{k+1} = A_k x_k + B_k u_k + C_k`.
pub fn dynamics_rows(set: &mut RowSet, x_t: &StateVec, models: &[LinearizedModel]) -> Result<(), ConstraintError> {
    let n = set.layout.horizon;
    check_len("linearized models", models.len(), n)?;
    let l = set.layout;
    for i in 0..STATE_DIM {
        let tag = RowTag { family: Family::Initial { state: i }, vehicle: None, k: 0 };
        set.rows.push(LinearRow::eq(vec![(l.x(0, i), 1.0)], x_t[i], tag));
    }
    for (k, m) in models.iter().take(n).enumerate() {
        for i in 0..STATE_DIM {
            let mut coeffs = vec![(l.x(k + 1, i), 1.0)];
            for j in 0..STATE_DIM {
                if m.a[(i, j)] != 0.0 {
                    coeffs.push((l.x(k, j), -m.a[(i, j)]));
                }
            }
            for j in 0..INPUT_DIM {
                if m.b[(i, j)] != 0.0 {
                    coeffs.push((l.u(k, j), -m.b[(i, j)]));
                }
            }
            let tag = RowTag { family: Family::Dynamics { state: i }, vehicle: None, k };
            set.rows.push(LinearRow::eq(coeffs, m.c[i], tag));
        }
    }
    Ok(())
}
