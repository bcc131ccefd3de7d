//! Outcome measures from walkway records and controller logs.

use serde::{Deserialize, Serialize};

use crate::fsm::{GaitPhase, TransitionEvent};
use crate::logs::{SensorLog, StateLog};
use crate::model::{ParticipantProfile, Placement, Side};
use crate::plant::{Footfall, WalkwayRecord};

/// Minimum footfalls per side for spatiotemporal measures.
pub const MIN_FOOTFALLS_PER_SIDE: usize = 3;
/// Heel strikes delimiting three full cycles.
pub const MIN_HEEL_STRIKES: usize = 4;
/// Points on the stride-normalized grid (0 % to 100 % inclusive).
pub const STRIDE_GRID_POINTS: usize = 101;

/// Relative tolerance for matching sensor and state log timestamps.
const TIME_MATCH_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("symmetry index undefined for ({left}, {right}): inputs must be finite, >= 0 and not both zero")]
    Domain { left: f64, right: f64 },
    #[error("insufficient steps: {side} has {found} footfalls, need {required}")]
    InsufficientSteps { side: Side, found: usize, required: usize },
    #[error("insufficient steps: no {side} step follows a contralateral footfall")]
    NoSteps { side: Side },
    #[error("walkway record is not ordered by contact time at footfall {index}")]
    Unordered { index: usize },
    #[error("footfall {index} has a non-finite field or lifts off before contact")]
    BadFootfall { index: usize },
    #[error("insufficient cycles: {found} heel strikes, need {required}")]
    InsufficientCycles { found: usize, required: usize },
    #[error("sensor log ({sensor} rows) and state log ({state} rows) are not tick-aligned at t={t}")]
    Misaligned { sensor: usize, state: usize, t: f64 },
    #[error("placement mismatch: {expected} requested, log recorded under {found}")]
    PlacementMismatch { expected: Placement, found: Placement },
    #[error("moment comparison across placements ({a} vs {b}) is not meaningful")]
    CrossPlacement { a: Placement, b: Placement },
    #[error("need at least 2 heel strikes to normalize strides, found {found}")]
    TooFewEvents { found: usize },
    #[error("cycle [{start}, {end}] is not covered by the signal")]
    UncoveredCycle { start: f64, end: f64 },
    #[error("signal times and values differ in length")]
    LengthMismatch,
    #[error("no trials to summarize")]
    NoTrials,
}

/// `min / max` of two non-negative measures; 1 is perfect symmetry.
pub fn symmetry_index(left: f64, right: f64) -> Result<f64, AnalysisError> {
    let valid = left.is_finite() && right.is_finite() && left >= 0.0 && right >= 0.0;
    let hi = left.max(right);
    if !valid || hi == 0.0 {
        return Err(AnalysisError::Domain { left, right });
    }
    Ok(left.min(right) / hi)
}

/// Standard deviation divisor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SdConvention {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N − 1; a single sample has SD 0.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// `values` must be non-empty.
    pub fn of(values: &[f64], convention: SdConvention) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        let divisor = match convention {
            SdConvention::Population => n,
            SdConvention::Sample => n - 1.0,
        };
        let sd = if divisor > 0.0 { (ss / divisor).sqrt() } else { 0.0 };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimbMetrics {
    pub footfalls: usize,
    /// s
    pub step_time: MeanSd,
    /// m
    pub step_length: MeanSd,
    /// % of the gait cycle
    pub swing_pct: MeanSd,
    pub stance_pct: MeanSd,
    /// m
    pub step_width: MeanSd,
}

/// Symmetry index per spatiotemporal measure, computed on limb means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryIndices {
    pub step_time: f64,
    pub step_length: f64,
    pub swing_pct: f64,
    pub stance_pct: f64,
    pub step_width: f64,
}

impl SymmetryIndices {
    pub fn as_array(&self) -> [f64; 5] {
        [self.step_time, self.step_length, self.swing_pct, self.stance_pct, self.step_width]
    }

    fn from_limbs(left: &LimbMetrics, right: &LimbMetrics) -> Result<Self, AnalysisError> {
        Ok(Self {
            step_time: symmetry_index(left.step_time.mean, right.step_time.mean)?,
            step_length: symmetry_index(left.step_length.mean, right.step_length.mean)?,
            swing_pct: symmetry_index(left.swing_pct.mean, right.swing_pct.mean)?,
            stance_pct: symmetry_index(left.stance_pct.mean, right.stance_pct.mean)?,
            step_width: symmetry_index(left.step_width.mean, right.step_width.mean)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitMetrics {
    pub participant: String,
    /// m/s
    pub speed: f64,
    /// steps/min
    pub cadence: f64,
    pub left: LimbMetrics,
    pub right: LimbMetrics,
    pub symmetry: SymmetryIndices,
}

impl GaitMetrics {
    pub fn limb(&self, side: Side) -> &LimbMetrics {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }
}

fn check_record(footfalls: &[Footfall]) -> Result<(), AnalysisError> {
    for (index, f) in footfalls.iter().enumerate() {
        let finite = [f.t_contact, f.t_liftoff, f.x, f.y].iter().all(|v| v.is_finite());
        if !finite || f.t_liftoff < f.t_contact {
            return Err(AnalysisError::BadFootfall { index });
        }
    }
    if let Some(i) = footfalls.windows(2).position(|w| w[1].t_contact <= w[0].t_contact) {
        return Err(AnalysisError::Unordered { index: i + 1 });
    }
    Ok(())
}

fn limb_metrics(footfalls: &[Footfall], side: Side, sd: SdConvention) -> Result<LimbMetrics, AnalysisError> {
    let mut step_time = Vec::new();
    let mut step_length = Vec::new();
    let mut step_width = Vec::new();
    for w in footfalls.windows(2) {
        let (prev, cur) = (w[0], w[1]);
        if cur.side == side && prev.side != side {
            step_time.push(cur.t_contact - prev.t_contact);
            step_length.push(cur.x - prev.x);
            step_width.push((cur.y - prev.y).abs());
        }
    }
    let mut stance = Vec::new();
    let own: Vec<&Footfall> = footfalls.iter().filter(|f| f.side == side).collect();
    for w in own.windows(2) {
        let cycle = w[1].t_contact - w[0].t_contact;
        stance.push(100.0 * (w[0].t_liftoff - w[0].t_contact) / cycle);
    }
    if step_time.is_empty() {
        return Err(AnalysisError::NoSteps { side });
    }
    let swing: Vec<f64> = stance.iter().map(|s| 100.0 - s).collect();
    Ok(LimbMetrics {
        footfalls: own.len(),
        step_time: MeanSd::of(&step_time, sd),
        step_length: MeanSd::of(&step_length, sd),
        swing_pct: MeanSd::of(&swing, sd),
        stance_pct: MeanSd::of(&stance, sd),
        step_width: MeanSd::of(&step_width, sd),
    })
}

/// Spatiotemporal measures of one (already trimmed) walkway pass, with
/// population SDs.
///
/// A step belongs to the limb that lands; it is measured from the preceding
/// contralateral contact. Stance and swing percentages use the limb's own
/// contact-to-contact cycle.
pub fn spatiotemporal(record: &WalkwayRecord, participant: &ParticipantProfile) -> Result<GaitMetrics, AnalysisError> {
    spatiotemporal_with(record, participant, SdConvention::Population)
}

pub fn spatiotemporal_with(
    record: &WalkwayRecord,
    participant: &ParticipantProfile,
    sd: SdConvention,
) -> Result<GaitMetrics, AnalysisError> {
    let ff = &record.footfalls;
    for side in [Side::Left, Side::Right] {
        let found = ff.iter().filter(|f| f.side == side).count();
        if found < MIN_FOOTFALLS_PER_SIDE {
            return Err(AnalysisError::InsufficientSteps {
                side,
                found,
                required: MIN_FOOTFALLS_PER_SIDE,
            });
        }
    }
    check_record(ff)?;
    let left = limb_metrics(ff, Side::Left, sd)?;
    let right = limb_metrics(ff, Side::Right, sd)?;
    let (first, last) = (ff[0], ff[ff.len() - 1]);
    let elapsed = last.t_contact - first.t_contact;
    Ok(GaitMetrics {
        participant: participant.id.clone(),
        speed: (last.x - first.x) / elapsed,
        cadence: 60.0 * (ff.len() - 1) as f64 / elapsed,
        symmetry: SymmetryIndices::from_limbs(&left, &right)?,
        left,
        right,
    })
}

/// One row of the across-trial summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub participant: String,
    pub placement: Placement,
    pub condition: String,
    pub trials: usize,
    pub speed: MeanSd,
    pub cadence: MeanSd,
    /// Mean of the per-trial symmetry indices.
    pub symmetry: SymmetryIndices,
}

/// Per-trial metrics averaged across trials.
pub fn summarize_trials(
    trials: &[GaitMetrics],
    placement: Placement,
    condition: &str,
    sd: SdConvention,
) -> Result<SummaryRow, AnalysisError> {
    let first = trials.first().ok_or(AnalysisError::NoTrials)?;
    let column = |f: &dyn Fn(&GaitMetrics) -> f64| trials.iter().map(f).collect::<Vec<_>>();
    let mean_of = |f: &dyn Fn(&GaitMetrics) -> f64| MeanSd::of(&column(f), sd).mean;
    Ok(SummaryRow {
        participant: first.participant.clone(),
        placement,
        condition: condition.to_string(),
        trials: trials.len(),
        speed: MeanSd::of(&column(&|m| m.speed), sd),
        cadence: MeanSd::of(&column(&|m| m.cadence), sd),
        symmetry: SymmetryIndices {
            step_time: mean_of(&|m| m.symmetry.step_time),
            step_length: mean_of(&|m| m.symmetry.step_length),
            swing_pct: mean_of(&|m| m.symmetry.swing_pct),
            stance_pct: mean_of(&|m| m.symmetry.stance_pct),
            step_width: mean_of(&|m| m.symmetry.step_width),
        },
    })
}

/// Fixed-width text rendering of summary rows.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<8} {:<10} {:<14} {:>6} {:>17} {:>17} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "subject", "placement", "condition", "trials", "speed m/s", "cadence st/min", "SI st", "SI sl", "SI sw%", "SI st%", "SI wd"
    );
    for r in rows {
        let s = &r.symmetry;
        out.push_str(&format!(
            "{:<8} {:<10} {:<14} {:>6} {:>8.3} ± {:<6.3} {:>8.1} ± {:<6.1} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3}\n",
            r.participant,
            r.placement,
            r.condition,
            r.trials,
            r.speed.mean,
            r.speed.sd,
            r.cadence.mean,
            r.cadence.sd,
            s.step_time,
            s.step_length,
            s.swing_pct,
            s.stance_pct,
            s.step_width
        ));
    }
    out
}

/// Knee kinematics and stance load-cell moment over steady cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicSummary {
    pub placement: Placement,
    /// Steady cycles analysed.
    pub cycles: usize,
    /// Mean per-cycle knee range of motion, deg.
    pub rom: MeanSd,
    /// Mean per-cycle peak |knee velocity|, deg/s.
    pub peak_velocity: MeanSd,
    /// Sagittal moment over stance ticks, Nm.
    pub stance_moment: MeanSd,
    /// Mean stance |moment|, Nm.
    pub stance_moment_abs: f64,
}

fn heel_strike_times(state: &StateLog) -> Vec<f64> {
    state
        .records
        .iter()
        .filter(|r| r.events.contains(TransitionEvent::HeelStrike))
        .map(|r| r.t)
        .collect()
}

/// Summarizes cycles between heel strikes, dropping the first and last.
///
/// The two logs must come from the same run: one state record per sensor
/// frame with matching timestamps. Their recorded placements are checked
/// against `placement`.
pub fn kinematic_summary(
    sensor: (Placement, &SensorLog),
    state: (Placement, &StateLog),
    placement: Placement,
) -> Result<KinematicSummary, AnalysisError> {
    for found in [sensor.0, state.0] {
        if found != placement {
            return Err(AnalysisError::PlacementMismatch {
                expected: placement,
                found,
            });
        }
    }
    let (frames, records) = (&sensor.1.frames, &state.1.records);
    if frames.len() != records.len() {
        return Err(AnalysisError::Misaligned {
            sensor: frames.len(),
            state: records.len(),
            t: f64::NAN,
        });
    }
    if let Some((f, _)) = frames
        .iter()
        .zip(records)
        .find(|(f, r)| (f.t - r.t).abs() > TIME_MATCH_EPS * f.t.abs().max(1.0))
    {
        return Err(AnalysisError::Misaligned {
            sensor: frames.len(),
            state: records.len(),
            t: f.t,
        });
    }

    let strikes = heel_strike_times(state.1);
    if strikes.len() < MIN_HEEL_STRIKES {
        return Err(AnalysisError::InsufficientCycles {
            found: strikes.len(),
            required: MIN_HEEL_STRIKES,
        });
    }
    let steady = &strikes[1..strikes.len() - 1];
    let mut rom = Vec::new();
    let mut peak = Vec::new();
    for w in steady.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let cycle: Vec<_> = frames.iter().filter(|f| f.t >= lo && f.t < hi).collect();
        let max = cycle.iter().map(|f| f.q).fold(f64::NEG_INFINITY, f64::max);
        let min = cycle.iter().map(|f| f.q).fold(f64::INFINITY, f64::min);
        rom.push(max - min);
        peak.push(cycle.iter().map(|f| f.q_dot.abs()).fold(0.0, f64::max));
    }

    let (start, end) = (steady[0], steady[steady.len() - 1]);
    let stance: Vec<f64> = frames
        .iter()
        .zip(records)
        .filter(|(f, r)| f.t >= start && f.t < end && matches!(r.phase, GaitPhase::EarlyStance | GaitPhase::LateStance))
        .map(|(f, _)| f.m_sagittal)
        .collect();
    let (stance_moment, stance_moment_abs) = if stance.is_empty() {
        (MeanSd::default(), 0.0)
    } else {
        let abs = stance.iter().map(|m| m.abs()).sum::<f64>() / stance.len() as f64;
        (MeanSd::of(&stance, SdConvention::Population), abs)
    };

    Ok(KinematicSummary {
        placement,
        cycles: rom.len(),
        rom: MeanSd::of(&rom, SdConvention::Population),
        peak_velocity: MeanSd::of(&peak, SdConvention::Population),
        stance_moment,
        stance_moment_abs,
    })
}

/// Difference `b − a` in mean stance |moment|. Only defined within one
/// placement: the load cell measures different loads in each.
pub fn moment_delta(a: &KinematicSummary, b: &KinematicSummary) -> Result<f64, AnalysisError> {
    if a.placement != b.placement {
        return Err(AnalysisError::CrossPlacement {
            a: a.placement,
            b: b.placement,
        });
    }
    Ok(b.stance_moment_abs - a.stance_moment_abs)
}

/// Cycles resampled on a 0–100 % grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StrideTraces {
    /// Grid in percent of the cycle.
    pub grid: Vec<f64>,
    pub cycles: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Pointwise population SD.
    pub sd: Vec<f64>,
}

/// Linear interpolation of a sampled signal; `times` ascending.
fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    let i = times.partition_point(|&x| x <= t);
    if i == 0 {
        return values[0];
    }
    if i == times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[i - 1], times[i]);
    let s = (t - t0) / (t1 - t0);
    values[i - 1] + s * (values[i] - values[i - 1])
}

/// Resamples each heel-strike-delimited cycle of a signal onto a 101-point
/// grid and takes the pointwise mean and SD.
pub fn stride_normalize(times: &[f64], values: &[f64], heel_strikes: &[f64]) -> Result<StrideTraces, AnalysisError> {
    if times.len() != values.len() {
        return Err(AnalysisError::LengthMismatch);
    }
    if heel_strikes.len() < 2 {
        return Err(AnalysisError::TooFewEvents {
            found: heel_strikes.len(),
        });
    }
    let n = STRIDE_GRID_POINTS;
    let grid: Vec<f64> = (0..n).map(|i| 100.0 * i as f64 / (n - 1) as f64).collect();
    let mut cycles = Vec::with_capacity(heel_strikes.len() - 1);
    for w in heel_strikes.windows(2) {
        let (start, end) = (w[0], w[1]);
        let covered = !times.is_empty() && times[0] <= start && times[times.len() - 1] >= end && end > start;
        if !covered {
            return Err(AnalysisError::UncoveredCycle { start, end });
        }
        cycles.push(
            grid.iter()
                .map(|p| interpolate(times, values, start + p / 100.0 * (end - start)))
                .collect::<Vec<_>>(),
        );
    }
    let (mean, sd) = (0..n)
        .map(|i| {
            let column: Vec<f64> = cycles.iter().map(|c| c[i]).collect();
            let m = MeanSd::of(&column, SdConvention::Population);
            (m.mean, m.sd)
        })
        .unzip();
    Ok(StrideTraces { grid, cycles, mean, sd })
}
