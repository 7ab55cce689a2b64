use super::ProtocolError;

/// Pressure on the wire: `i16` little-endian in units of 0.01 kPa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PressureCode(pub i16);

impl PressureCode {
    pub const KPA_PER_COUNT: f64 = 0.01;

    pub fn from_kpa(kpa: f64) -> Result<Self, ProtocolError> {
        let counts = (kpa * 100.0).round();
        if !counts.is_finite() || counts < f64::from(i16::MIN) || counts > f64::from(i16::MAX) {
            return Err(ProtocolError::PressureOutOfRange(kpa.to_string()));
        }
        Ok(Self(counts as i16))
    }

    /// Like [`PressureCode::from_kpa`] but saturates at the code range.
    pub fn saturating_from_kpa(kpa: f64) -> Self {
        if kpa.is_nan() {
            return Self(0);
        }
        Self((kpa * 100.0).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16)
    }

    pub fn kpa(self) -> f64 {
        f64::from(self.0) / 100.0
    }

    pub fn to_le_bytes(self) -> [u8; 2] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 2]) -> Self {
        Self(i16::from_le_bytes(bytes))
    }
}

/// Flow on the wire: `i16` little-endian in mL/min.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowCode(pub i16);

impl FlowCode {
    pub fn from_l_per_min(flow: f64) -> Result<Self, ProtocolError> {
        let counts = (flow * 1000.0).round();
        if !counts.is_finite() || counts < f64::from(i16::MIN) || counts > f64::from(i16::MAX) {
            return Err(ProtocolError::FlowOutOfRange(flow.to_string()));
        }
        Ok(Self(counts as i16))
    }

    pub fn saturating_from_l_per_min(flow: f64) -> Self {
        if flow.is_nan() {
            return Self(0);
        }
        Self((flow * 1000.0).round().clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16)
    }

    pub fn l_per_min(self) -> f64 {
        f64::from(self.0) / 1000.0
    }

    pub fn to_le_bytes(self) -> [u8; 2] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 2]) -> Self {
        Self(i16::from_le_bytes(bytes))
    }
}
