//! Segment-angle reconstruction from the device IMU and joint encoder, and
//! placement-aware load-cell semantics.
//!
//! The IMU sits in the main body of the prosthesis, so it rides on the shank
//! when the powertrain is below the knee and on the thigh when it is above.
//! Both cases reduce to the same kinematic chain `thigh = shank - q`.
//!
//! Segment angles are sagittal tilts from vertical, positive when the distal
//! end of the segment is behind its proximal end. With knee flexion positive
//! this makes the chain hold physically: a flexed knee tilts the shank back
//! relative to the thigh. Quiet standing reads zero on both segments.

use serde::{Deserialize, Serialize};

use crate::model::{wrap_degrees, Placement, PlacementConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("rejected frame at t={t}: channel `{channel}` is not finite")]
    NonFinite { t: f64, channel: &'static str },
    #[error("incompatible resampling rate: {source_rate} Hz -> {target_rate} Hz")]
    IncompatibleRate { source_rate: u32, target_rate: u32 },
    #[error("timestamps must strictly increase (t={t} after {previous})")]
    NonMonotonic { t: f64, previous: f64 },
}

/// Per-channel freshness bits. A stale channel holds its last fresh value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FreshMask(u8);

impl FreshMask {
    pub const IMU: FreshMask = FreshMask(0b001);
    pub const ENCODER: FreshMask = FreshMask(0b010);
    pub const LOADCELL: FreshMask = FreshMask(0b100);
    pub const ALL: FreshMask = FreshMask(0b111);
    pub const NONE: FreshMask = FreshMask(0);

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !Self::ALL.0 == 0).then_some(Self(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, other: FreshMask) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: FreshMask) {
        self.0 |= other.0;
    }
}

impl std::ops::BitOr for FreshMask {
    type Output = FreshMask;

    fn bitor(self, rhs: Self) -> Self {
        FreshMask(self.0 | rhs.0)
    }
}

/// One snapshot of every sensor channel on the control grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSensorFrame {
    /// s
    pub t: f64,
    /// Sagittal IMU angle, deg.
    pub theta_imu: f64,
    /// Joint encoder, deg.
    pub q: f64,
    /// Joint velocity, deg/s.
    pub q_dot: f64,
    /// Load-cell vertical force, N.
    pub f_vertical: f64,
    /// Load-cell sagittal moment, Nm.
    pub m_sagittal: f64,
    pub fresh: FreshMask,
}

impl RawSensorFrame {
    /// Rejects frames carrying NaN or infinite values.
    pub fn check_finite(&self) -> Result<(), GeometryError> {
        let channels = [
            ("t", self.t),
            ("theta_imu", self.theta_imu),
            ("q", self.q),
            ("q_dot", self.q_dot),
            ("f_vertical", self.f_vertical),
            ("m_sagittal", self.m_sagittal),
        ];
        match channels.iter().find(|(_, v)| !v.is_finite()) {
            Some((channel, _)) => Err(GeometryError::NonFinite { t: self.t, channel }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentAngles {
    pub theta_shank: f64,
    pub theta_thigh: f64,
}

/// Shank and thigh sagittal angles for the given placement.
///
/// Below knee the IMU reads the shank directly. Above knee it reads the thigh
/// with a 180° mounting offset; the IMU-derived segment is wrapped to
/// (−180, 180].
pub fn segment_angles(
    frame: &RawSensorFrame,
    placement: PlacementConfig,
) -> Result<SegmentAngles, GeometryError> {
    frame.check_finite()?;
    let angles = match placement.placement() {
        Placement::BelowKnee => {
            let theta_shank = wrap_degrees(frame.theta_imu);
            SegmentAngles {
                theta_shank,
                theta_thigh: theta_shank - frame.q,
            }
        }
        Placement::AboveKnee => {
            let theta_thigh = wrap_degrees(frame.theta_imu - 180.0);
            SegmentAngles {
                theta_shank: theta_thigh + frame.q,
                theta_thigh,
            }
        }
    };
    Ok(angles)
}

/// IMU reading a given placement would produce for a physical pose.
pub fn imu_reading_for_pose(placement: PlacementConfig, pose: SegmentAngles) -> f64 {
    match placement.placement() {
        Placement::BelowKnee => wrap_degrees(pose.theta_shank),
        Placement::AboveKnee => wrap_degrees(pose.theta_thigh + 180.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoadMeasure {
    GroundReaction,
    SocketInterface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MomentLeverage {
    Long,
    Short,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadCellSemantics {
    pub measures: LoadMeasure,
    pub stance_moment_leverage: MomentLeverage,
}

pub fn loadcell_semantics(placement: PlacementConfig) -> LoadCellSemantics {
    match placement.placement() {
        Placement::BelowKnee => LoadCellSemantics {
            measures: LoadMeasure::GroundReaction,
            stance_moment_leverage: MomentLeverage::Long,
        },
        Placement::AboveKnee => LoadCellSemantics {
            measures: LoadMeasure::SocketInterface,
            stance_moment_leverage: MomentLeverage::Short,
        },
    }
}

/// Decides which ticks of the `base_rate` grid carry a fresh sample of a
/// channel running at `channel_rate`.
///
/// Refreshes happen whenever `floor(tick * channel_rate / base_rate)`
/// increments, so 100 Hz on a 250 Hz grid refreshes in a 3-2-3-2 pattern and
/// yields exactly 100 updates per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshSchedule {
    channel_rate: u64,
    base_rate: u64,
}

impl RefreshSchedule {
    pub fn new(channel_rate: u32, base_rate: u32) -> Self {
        Self {
            channel_rate: u64::from(channel_rate),
            base_rate: u64::from(base_rate.max(1)),
        }
    }

    pub fn is_fresh(&self, tick: u64) -> bool {
        tick == 0
            || (tick * self.channel_rate) / self.base_rate
                != ((tick - 1) * self.channel_rate) / self.base_rate
    }
}

/// Zero-order-hold resampling onto the grid `k / target_rate`.
///
/// `target_rate` must divide `source_rate`. Each output sample carries the
/// latest input sample at or before its grid time; the fresh mask is the
/// union of the masks of the input samples consumed since the previous
/// output sample.
pub fn resample(
    frames: &[RawSensorFrame],
    source_rate: u32,
    target_rate: u32,
) -> Result<Vec<RawSensorFrame>, GeometryError> {
    if target_rate == 0 || source_rate == 0 || !source_rate.is_multiple_of(target_rate) {
        return Err(GeometryError::IncompatibleRate {
            source_rate,
            target_rate,
        });
    }
    for pair in frames.windows(2) {
        if pair[1].t <= pair[0].t {
            return Err(GeometryError::NonMonotonic {
                t: pair[1].t,
                previous: pair[0].t,
            });
        }
    }
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        return Ok(Vec::new());
    };

    // Grid tolerance absorbs the rounding of `i * dt` timestamps.
    const EPS: f64 = 1e-9;
    let rate = f64::from(target_rate);
    let k_start = ((first.t - EPS) * rate).ceil() as i64;
    let k_end = ((last.t + EPS) * rate).floor() as i64;

    let mut out = Vec::with_capacity((k_end - k_start + 1).max(0) as usize);
    let mut cursor = 0usize;
    let mut pending = FreshMask::NONE;
    for k in k_start..=k_end {
        let grid_t = k as f64 / rate;
        while cursor < frames.len() && frames[cursor].t <= grid_t + EPS {
            pending.insert(frames[cursor].fresh);
            cursor += 1;
        }
        // k_start guarantees at least one frame has been consumed.
        let held = frames[cursor - 1];
        out.push(RawSensorFrame {
            t: grid_t,
            fresh: pending,
            ..held
        });
        pending = FreshMask::NONE;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Placement::{AboveKnee, BelowKnee};

    fn frame(theta_imu: f64, q: f64) -> RawSensorFrame {
        RawSensorFrame {
            t: 0.0,
            theta_imu,
            q,
            q_dot: 0.0,
            f_vertical: 0.0,
            m_sagittal: 0.0,
            fresh: FreshMask::ALL,
        }
    }

    #[test]
    fn below_knee_reads_shank() {
        let a = segment_angles(&frame(10.0, 20.0), BelowKnee.into()).unwrap();
        assert_eq!(a.theta_shank, 10.0);
        assert_eq!(a.theta_thigh, -10.0);
    }

    #[test]
    fn above_knee_upright_standing() {
        let a = segment_angles(&frame(180.0, 0.0), AboveKnee.into()).unwrap();
        assert_eq!(a.theta_thigh, 0.0);
        assert_eq!(a.theta_shank, 0.0);
    }

    #[test]
    fn above_knee_reads_thigh_with_offset() {
        let a = segment_angles(&frame(185.0, 30.0), AboveKnee.into()).unwrap();
        assert_eq!(a.theta_thigh, 5.0);
        assert_eq!(a.theta_shank, 35.0);
        // Same pose reported in the wrapped range.
        let b = segment_angles(&frame(-175.0, 30.0), AboveKnee.into()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_frame_is_rejected() {
        let err = segment_angles(&frame(f64::NAN, 0.0), BelowKnee.into()).unwrap_err();
        assert!(matches!(
            err,
            GeometryError::NonFinite {
                channel: "theta_imu",
                ..
            }
        ));
    }

    #[test]
    fn loadcell_semantics_by_placement() {
        let bk = loadcell_semantics(BelowKnee.into());
        assert_eq!(bk.measures, LoadMeasure::GroundReaction);
        assert_eq!(bk.stance_moment_leverage, MomentLeverage::Long);
        let ak = loadcell_semantics(AboveKnee.into());
        assert_eq!(ak.measures, LoadMeasure::SocketInterface);
        assert_eq!(ak.stance_moment_leverage, MomentLeverage::Short);
    }

    #[test]
    fn loadcell_schedule_hits_100_per_second() {
        let s = RefreshSchedule::new(100, 250);
        let fresh: Vec<u64> = (0..250).filter(|&i| s.is_fresh(i)).collect();
        assert_eq!(fresh.len(), 100);
        let gaps: Vec<u64> = fresh.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|&g| g == 2 || g == 3));
        assert_eq!(&gaps[..4], &[3, 2, 3, 2]);
        let full = RefreshSchedule::new(250, 250);
        assert!((0..250).all(|i| full.is_fresh(i)));
    }

    fn stream(n: usize, value: impl Fn(f64) -> f64) -> Vec<RawSensorFrame> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 250.0;
                RawSensorFrame {
                    t,
                    theta_imu: value(t),
                    q: value(t),
                    q_dot: 0.0,
                    f_vertical: value(t),
                    m_sagittal: 0.0,
                    fresh: FreshMask::ALL,
                }
            })
            .collect()
    }

    #[test]
    fn resample_same_rate_is_identity() {
        let input = stream(100, |t| 3.0 * t + 1.0);
        assert_eq!(resample(&input, 250, 250).unwrap(), input);
    }

    #[test]
    fn resample_constant_stream() {
        let input = stream(500, |_| 7.5);
        let out = resample(&input, 250, 50).unwrap();
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|f| f.q == 7.5 && f.f_vertical == 7.5));
    }

    #[test]
    fn resample_ramp_holds_grid_values() {
        let ramp = |t: f64| 2.0 * t - 0.5;
        let input = stream(501, ramp);
        let out = resample(&input, 250, 50).unwrap();
        assert_eq!(out.len(), 101);
        for (k, f) in out.iter().enumerate() {
            let grid_t = k as f64 / 50.0;
            assert!((f.t - grid_t).abs() < 1e-12);
            assert!((f.q - ramp(grid_t)).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn resample_rejects_non_divisor() {
        let input = stream(10, |_| 0.0);
        assert!(matches!(
            resample(&input, 250, 100),
            Err(GeometryError::IncompatibleRate { .. })
        ));
    }
}
