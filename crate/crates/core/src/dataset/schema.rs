use std::fmt;
use std::str::FromStr;

/// Value domain of a predictor column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    /// Non-negative real (durations, occupancy, gap statistics).
    Real,
    /// Non-negative integer (triggers, cycles, lanes, POI tallies).
    Count,
    /// Integer code in `min..=max`.
    Code { min: u8, max: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Column {
    pub name: &'static str,
    pub description: &'static str,
    pub kind: ColumnKind,
}

const fn real(name: &'static str, description: &'static str) -> Column {
    Column {
        name,
        description,
        kind: ColumnKind::Real,
    }
}

const fn count(name: &'static str, description: &'static str) -> Column {
    Column {
        name,
        description,
        kind: ColumnKind::Count,
    }
}

const fn code(name: &'static str, description: &'static str, min: u8, max: u8) -> Column {
    Column {
        name,
        description,
        kind: ColumnKind::Code { min, max },
    }
}

static COLUMNS_V1: [Column; 25] = [
    real("o_TM", "Through movement detector occupancy time"),
    count("d_TM", "Through movement detector trigger counts"),
    real("g_TM", "Through movement green time duration"),
    count("c_TM", "Through movement cycle counts"),
    real("m_TM", "Through movement average of time differences between consecutive detections"),
    real("s_TM", "Through movement standard deviation of time differences between consecutive detections"),
    real("o_LM", "Left-turn movement detector occupancy time"),
    count("d_LM", "Left-turn movement detector trigger counts"),
    real("g_LM", "Left-turn movement green time duration"),
    count("c_LM", "Left-turn movement cycle counts"),
    real("m_LM", "Left-turn movement average of time differences between consecutive detections"),
    real("s_LM", "Left-turn movement standard deviation of time differences between consecutive detections"),
    real("p_LM", "Left-turn movement permissive green time"),
    count("l_SL", "Number of shared left turn lanes"),
    count("l_EL", "Number of exclusive left turn lanes"),
    count("l_TL", "Number of through lanes"),
    count("l_ER", "Number of exclusive right turn lanes"),
    count("l_SR", "Number of shared right turn lanes"),
    count("e_POIE", "Number of employees of all POI"),
    count("e_POIC", "POI categories count"),
    code("r", "Road type", 1, 2),
    code("l", "Left-turn type", 1, 3),
    code("direction", "Direction", 1, 4),
    code("h_MOH", "Minute-of-hour", 1, 4),
    code("h_HOD", "Hour-of-day", 0, 23),
];

/// Ordered, versioned list of the 25 predictor columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSchema {
    version: &'static str,
    columns: &'static [Column],
}

impl FeatureSchema {
    pub const LEN: usize = 25;

    pub fn standard() -> Self {
        Self {
            version: "tmc-schema/1",
            columns: &COLUMNS_V1,
        }
    }

    pub fn version(&self) -> &'static str {
        self.version
    }

    pub fn columns(&self) -> &'static [Column] {
        self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.columns.iter().map(|c| c.name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Checks one value against its column's domain, returning a reason on failure.
    pub fn check_value(&self, column: usize, value: f64) -> Result<(), String> {
        let col = &self.columns[column];
        if !value.is_finite() {
            return Err(format!("{} is not finite", col.name));
        }
        match col.kind {
            ColumnKind::Real => {
                if value < 0.0 {
                    return Err(format!("{} must be >= 0, got {value}", col.name));
                }
            }
            ColumnKind::Count => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(format!("{} must be a non-negative integer, got {value}", col.name));
                }
            }
            ColumnKind::Code { min, max } => {
                if value.fract() != 0.0 || value < f64::from(min) || value > f64::from(max) {
                    return Err(format!("{} must be an integer code in {min}..={max}, got {value}", col.name));
                }
            }
        }
        Ok(())
    }
}

/// Turning movement whose count is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Movement {
    Left,
    Through,
    Right,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Left, Movement::Through, Movement::Right];

    pub fn label_column(self) -> &'static str {
        match self {
            Movement::Left => "v_LM",
            Movement::Through => "v_TM",
            Movement::Right => "v_RM",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Movement::Left => "left",
            Movement::Through => "through",
            Movement::Right => "right",
        }
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Movement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "lm" | "v_lm" => Ok(Movement::Left),
            "through" | "tm" | "v_tm" => Ok(Movement::Through),
            "right" | "rm" | "v_rm" => Ok(Movement::Right),
            other => Err(format!("unknown movement {other:?}")),
        }
    }
}

/// Intersection approach (the direction traffic arrives from).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Approach {
    Northbound,
    Southbound,
    Eastbound,
    Westbound,
}

impl Approach {
    pub const ALL: [Approach; 4] = [
        Approach::Northbound,
        Approach::Southbound,
        Approach::Eastbound,
        Approach::Westbound,
    ];

    /// Value of the `direction` predictor: NB=1, SB=2, EB=3, WB=4.
    pub fn code(self) -> u8 {
        match self {
            Approach::Northbound => 1,
            Approach::Southbound => 2,
            Approach::Eastbound => 3,
            Approach::Westbound => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            Approach::Northbound => "NB",
            Approach::Southbound => "SB",
            Approach::Eastbound => "EB",
            Approach::Westbound => "WB",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbreviation())
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nb" | "northbound" | "north" | "1" => Ok(Approach::Northbound),
            "sb" | "southbound" | "south" | "2" => Ok(Approach::Southbound),
            "eb" | "eastbound" | "east" | "3" => Ok(Approach::Eastbound),
            "wb" | "westbound" | "west" | "4" => Ok(Approach::Westbound),
            other => Err(format!("unknown approach {other:?}")),
        }
    }
}
