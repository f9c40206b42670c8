//! Check-in parsing, trajectory segmentation and stay-time estimation.
//!
//! Input records are grouped per user and per local calendar day, split into
//! sub-trajectories wherever two consecutive check-ins are further apart than
//! `split_gap_seconds`, and single-point sub-trajectories are discarded. The
//! stay at each point is the gap to the next check-in minus the estimated
//! travel time between the two points.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read};

use chrono::{DateTime, Datelike, FixedOffset, NaiveDate, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::haversine_meters;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unable to read input: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing CSV column `{0}`")]
    MissingColumn(&'static str),
    #[error("{rejected} of {total} rows rejected (limit {limit:.0}%), check the input schema")]
    TooManyRejects {
        rejected: usize,
        total: usize,
        limit: f64,
    },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("invalid holiday calendar line {line}: `{text}`")]
    Calendar { line: usize, text: String },
}

/// Ordered list of POI category names. Category indices follow file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTaxonomy {
    names: Vec<String>,
}

/// The nine top-level check-in venue categories.
pub const DEFAULT_CATEGORIES: [&str; 9] = [
    "Arts & Entertainment",
    "College & University",
    "Food",
    "Outdoors & Recreation",
    "Nightlife Spot",
    "Professional & Other Places",
    "Residence",
    "Shop & Service",
    "Travel & Transport",
];

impl Default for CategoryTaxonomy {
    fn default() -> Self {
        Self::new(DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect())
            .expect("default taxonomy is valid")
    }
}

impl CategoryTaxonomy {
    pub fn new(names: Vec<String>) -> Result<Self, IngestError> {
        if names.is_empty() {
            return Err(IngestError::Taxonomy("no categories".into()));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(IngestError::Taxonomy("duplicate category names".into()));
        }
        Ok(Self { names })
    }

    /// Parse a JSON array of category names.
    pub fn from_json<R: Read>(reader: R) -> Result<Self, IngestError> {
        let names: Vec<String> =
            serde_json::from_reader(reader).map_err(|e| IngestError::Taxonomy(e.to_string()))?;
        Self::new(names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<CategoryId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| CategoryId(i as u16))
    }

    pub fn name(&self, id: CategoryId) -> &str {
        &self.names[id.index()]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Index into a [`CategoryTaxonomy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u16);

impl CategoryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementRecord {
    pub user_id: String,
    pub poi_id: String,
    pub category: CategoryId,
    pub lat: f64,
    pub lon: f64,
    pub timestamp: DateTime<FixedOffset>,
}

impl MovementRecord {
    /// Calendar date in the record's own UTC offset.
    pub fn local_date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingField,
    BadLatitude,
    BadLongitude,
    BadTimestamp,
    UnknownCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based data row number, header excluded.
    pub row: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub total_rows: usize,
    pub accepted: usize,
    pub rejected: Vec<RejectedRow>,
    pub warnings: Vec<String>,
}

impl ParseReport {
    pub fn reject_counts(&self) -> BTreeMap<RejectReason, usize> {
        let mut out = BTreeMap::new();
        for r in &self.rejected {
            *out.entry(r.reason).or_insert(0) += 1;
        }
        out
    }
}

/// Fraction of rows that may be rejected before the whole file is refused.
pub const DEFAULT_MAX_REJECT_RATIO: f64 = 0.10;

/// Parse check-in CSV (`user_id,poi_id,category,lat,lon,timestamp`).
///
/// Output is sorted by `(user_id, timestamp)`; rows with equal keys keep
/// their file order.
pub fn parse_checkins<R: Read>(
    source: R,
    taxonomy: &CategoryTaxonomy,
    max_reject_ratio: f64,
) -> Result<(Vec<MovementRecord>, ParseReport), IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader.headers()?.clone();
    let column = |name: &'static str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(IngestError::MissingColumn(name))
    };
    // An empty file has no header row at all.
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        let report = ParseReport {
            warnings: vec!["empty input".to_string()],
            ..Default::default()
        };
        log::warn!("check-in source is empty");
        return Ok((Vec::new(), report));
    }
    let cols = [
        column("user_id")?,
        column("poi_id")?,
        column("category")?,
        column("lat")?,
        column("lon")?,
        column("timestamp")?,
    ];

    let mut records = Vec::new();
    let mut report = ParseReport::default();
    let mut row = csv::StringRecord::new();
    while reader.read_record(&mut row)? {
        report.total_rows += 1;
        match parse_row(&row, &cols, taxonomy) {
            Ok(rec) => records.push(rec),
            Err(reason) => report.rejected.push(RejectedRow {
                row: report.total_rows,
                reason,
            }),
        }
    }
    report.accepted = records.len();

    if report.total_rows == 0 {
        log::warn!("check-in source has no data rows");
        report.warnings.push("empty input".to_string());
    }
    let rejected = report.rejected.len();
    if report.total_rows > 0 && rejected as f64 > max_reject_ratio * report.total_rows as f64 {
        return Err(IngestError::TooManyRejects {
            rejected,
            total: report.total_rows,
            limit: max_reject_ratio * 100.0,
        });
    }

    records.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then(a.timestamp.cmp(&b.timestamp))
    });
    Ok((records, report))
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &[usize; 6],
    taxonomy: &CategoryTaxonomy,
) -> Result<MovementRecord, RejectReason> {
    let field = |i: usize| {
        row.get(cols[i])
            .filter(|s| !s.is_empty())
            .ok_or(RejectReason::MissingField)
    };
    let user_id = field(0)?.to_string();
    let poi_id = field(1)?.to_string();
    let category = taxonomy
        .index_of(field(2)?)
        .ok_or(RejectReason::UnknownCategory)?;
    let lat: f64 = field(3)?.parse().map_err(|_| RejectReason::BadLatitude)?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(RejectReason::BadLatitude);
    }
    let lon: f64 = field(4)?.parse().map_err(|_| RejectReason::BadLongitude)?;
    if !(-180.0..=180.0).contains(&lon) {
        return Err(RejectReason::BadLongitude);
    }
    let timestamp =
        DateTime::parse_from_rfc3339(field(5)?).map_err(|_| RejectReason::BadTimestamp)?;
    Ok(MovementRecord {
        user_id,
        poi_id,
        category,
        lat,
        lon,
        timestamp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user_id: String,
    pub day: NaiveDate,
    pub records: Vec<MovementRecord>,
}

/// Default gap that splits a day's check-ins into separate sub-trajectories.
pub const DEFAULT_SPLIT_GAP_SECONDS: i64 = 6 * 3600;

/// Group sorted records into per-user, per-day sub-trajectories.
///
/// Records sharing a timestamp with their predecessor are dropped so that
/// timestamps are strictly increasing. Sub-trajectories of one point are
/// filtered out.
pub fn build_trajectories(records: &[MovementRecord], split_gap_seconds: i64) -> Vec<Trajectory> {
    let mut out = Vec::new();
    let mut current: Vec<MovementRecord> = Vec::new();

    let flush = |current: &mut Vec<MovementRecord>, out: &mut Vec<Trajectory>| {
        if current.len() >= 2 {
            out.push(Trajectory {
                user_id: current[0].user_id.clone(),
                day: current[0].local_date(),
                records: std::mem::take(current),
            });
        } else {
            current.clear();
        }
    };

    for rec in records {
        if let Some(prev) = current.last() {
            let same_group = prev.user_id == rec.user_id && prev.local_date() == rec.local_date();
            if same_group && rec.timestamp <= prev.timestamp {
                continue;
            }
            let gap = (rec.timestamp - prev.timestamp).num_seconds();
            if !same_group || gap > split_gap_seconds {
                flush(&mut current, &mut out);
            }
        }
        current.push(rec.clone());
    }
    flush(&mut current, &mut out);
    out
}

#[derive(Debug, Error)]
#[error("travel time unavailable: {0}")]
pub struct ProviderError(pub String);

/// Source of travel-time estimates between consecutive check-ins.
pub trait TravelTimeProvider {
    fn travel_time(&self, from: &MovementRecord, to: &MovementRecord)
        -> Result<f64, ProviderError>;
}

/// Great-circle distance over a constant mean speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StraightLineProvider {
    pub speed_kmh: f64,
}

pub const DEFAULT_SPEED_KMH: f64 = 25.0;

impl Default for StraightLineProvider {
    fn default() -> Self {
        Self {
            speed_kmh: DEFAULT_SPEED_KMH,
        }
    }
}

impl TravelTimeProvider for StraightLineProvider {
    fn travel_time(
        &self,
        from: &MovementRecord,
        to: &MovementRecord,
    ) -> Result<f64, ProviderError> {
        let meters = haversine_meters(from.lon, from.lat, to.lon, to.lat);
        Ok(meters / (self.speed_kmh * 1000.0 / 3600.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayVisit {
    pub poi_id: String,
    /// Filled by projection; `None` when the point lies outside every region.
    pub region_id: Option<u32>,
    pub arrival: DateTime<FixedOffset>,
    pub stay_seconds: f64,
    pub category: CategoryId,
    pub lat: f64,
    pub lon: f64,
    /// Set when the travel-time provider failed and the default model was used.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback_travel: bool,
}

impl StayVisit {
    pub fn departure(&self) -> DateTime<FixedOffset> {
        self.arrival + chrono::Duration::milliseconds((self.stay_seconds * 1000.0).round() as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaySequence {
    pub user_id: String,
    pub day: NaiveDate,
    pub day_type: DayType,
    pub visits: Vec<StayVisit>,
}

/// Stay assigned to the last point of a trajectory.
pub const DEFAULT_TAIL_STAY_SECONDS: f64 = 1800.0;

/// Deduce the stay at each point of a trajectory.
///
/// `day_type` is attached as-is; see [`classify_day`].
pub fn estimate_stays(
    trajectory: &Trajectory,
    provider: &dyn TravelTimeProvider,
    tail_stay_seconds: f64,
    day_type: DayType,
) -> StaySequence {
    let fallback = StraightLineProvider::default();
    let recs = &trajectory.records;
    let mut visits = Vec::with_capacity(recs.len());
    for (i, rec) in recs.iter().enumerate() {
        let (stay, flagged) = match recs.get(i + 1) {
            Some(next) => {
                let gap = (next.timestamp - rec.timestamp).num_milliseconds() as f64 / 1000.0;
                let (travel, flagged) = if rec.poi_id == next.poi_id {
                    (0.0, false)
                } else {
                    match provider.travel_time(rec, next) {
                        Ok(t) if t.is_finite() && t >= 0.0 => (t, false),
                        Ok(_) | Err(_) => (fallback.travel_time(rec, next).unwrap_or(0.0), true),
                    }
                };
                ((gap - travel).max(0.0), flagged)
            }
            None => (tail_stay_seconds, false),
        };
        visits.push(StayVisit {
            poi_id: rec.poi_id.clone(),
            region_id: None,
            arrival: rec.timestamp,
            stay_seconds: stay,
            category: rec.category,
            lat: rec.lat,
            lon: rec.lon,
            fallback_travel: flagged,
        });
    }
    StaySequence {
        user_id: trajectory.user_id.clone(),
        day: trajectory.day,
        day_type,
        visits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayType {
    Weekday,
    Weekend,
    Holiday,
}

impl DayType {
    pub const ALL: [DayType; 3] = [DayType::Weekday, DayType::Weekend, DayType::Holiday];

    pub fn as_str(self) -> &'static str {
        match self {
            DayType::Weekday => "weekday",
            DayType::Weekend => "weekend",
            DayType::Holiday => "holiday",
        }
    }
}

impl std::str::FromStr for DayType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weekday" => Ok(DayType::Weekday),
            "weekend" => Ok(DayType::Weekend),
            "holiday" => Ok(DayType::Holiday),
            other => Err(format!("unknown day type `{other}`")),
        }
    }
}

impl std::fmt::Display for DayType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolidayCalendar {
    dates: BTreeSet<NaiveDate>,
}

impl HolidayCalendar {
    pub fn new(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self {
            dates: dates.into_iter().collect(),
        }
    }

    /// One `YYYY-MM-DD` per line; blank lines and `#` comments are ignored.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, IngestError> {
        let mut dates = BTreeSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let date =
                NaiveDate::parse_from_str(text, "%Y-%m-%d").map_err(|_| IngestError::Calendar {
                    line: i + 1,
                    text: text.to_string(),
                })?;
            dates.insert(date);
        }
        Ok(Self { dates })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.dates.contains(&date)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

pub fn classify_day(date: NaiveDate, calendar: &HolidayCalendar) -> DayType {
    if calendar.contains(date) {
        DayType::Holiday
    } else if matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
        DayType::Weekend
    } else {
        DayType::Weekday
    }
}

/// Seconds since local midnight.
pub fn seconds_of_day(t: &DateTime<FixedOffset>) -> u32 {
    t.num_seconds_from_midnight()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StayConfig {
    pub split_gap_seconds: i64,
    pub tail_stay_seconds: f64,
}

impl Default for StayConfig {
    fn default() -> Self {
        Self {
            split_gap_seconds: DEFAULT_SPLIT_GAP_SECONDS,
            tail_stay_seconds: DEFAULT_TAIL_STAY_SECONDS,
        }
    }
}

/// Trajectory formation and stay estimation for a whole sorted record set.
pub fn stay_sequences(
    records: &[MovementRecord],
    config: &StayConfig,
    provider: &dyn TravelTimeProvider,
    calendar: &HolidayCalendar,
) -> Vec<StaySequence> {
    build_trajectories(records, config.split_gap_seconds)
        .iter()
        .map(|t| {
            estimate_stays(
                t,
                provider,
                config.tail_stay_seconds,
                classify_day(t.day, calendar),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: &str, poi: &str, lat: f64, lon: f64, ts: &str) -> MovementRecord {
        MovementRecord {
            user_id: user.into(),
            poi_id: poi.into(),
            category: CategoryId(2),
            lat,
            lon,
            timestamp: DateTime::parse_from_rfc3339(ts).unwrap(),
        }
    }

    const HEADER: &str = "user_id,poi_id,category,lat,lon,timestamp\n";

    #[test]
    fn parses_valid_rows() {
        let csv = format!(
            "{HEADER}u1,p1,Food,40.7,-74.0,2013-07-08T08:00:00Z\n\
             u1,p2,Shop & Service,40.71,-74.0,2013-07-08T09:00:00Z\n\
             u2,p1,Food,40.7,-74.0,2013-07-08T10:00:00Z\n"
        );
        let (recs, report) =
            parse_checkins(csv.as_bytes(), &CategoryTaxonomy::default(), 0.1).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(report.rejected.is_empty());
        assert_eq!(report.total_rows, 3);
    }

    #[test]
    fn unknown_category_is_rejected_with_reason() {
        let mut csv = String::from(HEADER);
        for i in 0..10 {
            csv.push_str(&format!("u{i},p,Food,40.7,-74.0,2013-07-08T08:00:00Z\n"));
        }
        csv.push_str("u9,p,Event,40.7,-74.0,2013-07-08T08:00:00Z\n");
        let taxonomy = CategoryTaxonomy::default();
        assert_eq!(taxonomy.len(), 9);
        let (recs, report) = parse_checkins(csv.as_bytes(), &taxonomy, 0.1).unwrap();
        assert_eq!(recs.len(), 10);
        assert_eq!(
            report.rejected,
            vec![RejectedRow {
                row: 11,
                reason: RejectReason::UnknownCategory
            }]
        );
    }

    #[test]
    fn too_many_rejects_is_fatal() {
        let csv = format!(
            "{HEADER}u1,p1,Food,400,-74.0,2013-07-08T08:00:00Z\n\
             u1,p2,Food,40.7,-74.0,2013-07-08T09:00:00Z\n"
        );
        let err = parse_checkins(csv.as_bytes(), &CategoryTaxonomy::default(), 0.1).unwrap_err();
        assert!(matches!(
            err,
            IngestError::TooManyRejects { rejected: 1, .. }
        ));
    }

    #[test]
    fn bad_fields_map_to_reason_codes() {
        let tax = CategoryTaxonomy::default();
        let cols = [0, 1, 2, 3, 4, 5];
        let cases = [
            (
                "u,p,Food,91,0,2013-07-08T08:00:00Z",
                RejectReason::BadLatitude,
            ),
            (
                "u,p,Food,0,181,2013-07-08T08:00:00Z",
                RejectReason::BadLongitude,
            ),
            ("u,p,Food,0,0,yesterday", RejectReason::BadTimestamp),
            (
                "u,,Food,0,0,2013-07-08T08:00:00Z",
                RejectReason::MissingField,
            ),
        ];
        for (line, reason) in cases {
            let row = csv::StringRecord::from(line.split(',').collect::<Vec<_>>());
            assert_eq!(parse_row(&row, &cols, &tax).unwrap_err(), reason, "{line}");
        }
    }

    #[test]
    fn empty_file_yields_empty_list_with_warning() {
        let (recs, report) = parse_checkins(&b""[..], &CategoryTaxonomy::default(), 0.1).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.warnings.len(), 1);

        let (recs, report) =
            parse_checkins(HEADER.as_bytes(), &CategoryTaxonomy::default(), 0.1).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn missing_column_is_fatal() {
        let csv = "user_id,poi_id,lat,lon,timestamp\n";
        let err = parse_checkins(csv.as_bytes(), &CategoryTaxonomy::default(), 0.1).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn("category")));
    }

    #[test]
    fn output_sorted_by_user_then_time() {
        let csv = format!(
            "{HEADER}b,p1,Food,40.7,-74.0,2013-07-08T08:00:00Z\n\
             a,p2,Food,40.7,-74.0,2013-07-08T09:00:00Z\n\
             a,p3,Food,40.7,-74.0,2013-07-08T07:00:00Z\n"
        );
        let (recs, _) = parse_checkins(csv.as_bytes(), &CategoryTaxonomy::default(), 0.1).unwrap();
        let keys: Vec<_> = recs.iter().map(|r| r.poi_id.as_str()).collect();
        assert_eq!(keys, ["p3", "p2", "p1"]);
    }

    #[test]
    fn short_gaps_form_one_trajectory() {
        let recs = vec![
            rec("u", "a", 0.0, 0.0, "2013-07-08T08:00:00Z"),
            rec("u", "b", 0.0, 0.0, "2013-07-08T08:10:00Z"),
            rec("u", "c", 0.0, 0.0, "2013-07-08T08:30:00Z"),
        ];
        let trajs = build_trajectories(&recs, DEFAULT_SPLIT_GAP_SECONDS);
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].records.len(), 3);
    }

    #[test]
    fn long_gap_splits_and_drops_singleton() {
        let recs = vec![
            rec("u", "a", 0.0, 0.0, "2013-07-08T08:00:00Z"),
            rec("u", "b", 0.0, 0.0, "2013-07-08T08:10:00Z"),
            rec("u", "c", 0.0, 0.0, "2013-07-08T16:10:00Z"),
        ];
        let trajs = build_trajectories(&recs, DEFAULT_SPLIT_GAP_SECONDS);
        assert_eq!(trajs.len(), 1);
        let pois: Vec<_> = trajs[0].records.iter().map(|r| r.poi_id.as_str()).collect();
        assert_eq!(pois, ["a", "b"]);
    }

    #[test]
    fn single_record_yields_nothing() {
        let recs = vec![rec("u", "a", 0.0, 0.0, "2013-07-08T08:00:00Z")];
        assert!(build_trajectories(&recs, DEFAULT_SPLIT_GAP_SECONDS).is_empty());
    }

    #[test]
    fn days_and_users_split() {
        let recs = vec![
            rec("u", "a", 0.0, 0.0, "2013-07-08T22:00:00Z"),
            rec("u", "b", 0.0, 0.0, "2013-07-08T23:00:00Z"),
            rec("u", "c", 0.0, 0.0, "2013-07-09T00:30:00Z"),
            rec("u", "d", 0.0, 0.0, "2013-07-09T01:00:00Z"),
            rec("v", "e", 0.0, 0.0, "2013-07-09T01:10:00Z"),
        ];
        let trajs = build_trajectories(&recs, DEFAULT_SPLIT_GAP_SECONDS);
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[1].day, NaiveDate::from_ymd_opt(2013, 7, 9).unwrap());
    }

    #[test]
    fn same_poi_has_zero_travel() {
        let t = Trajectory {
            user_id: "u".into(),
            day: NaiveDate::from_ymd_opt(2013, 7, 8).unwrap(),
            records: vec![
                rec("u", "a", 40.0, -74.0, "2013-07-08T08:00:00Z"),
                rec("u", "a", 40.0, -74.0, "2013-07-08T09:00:00Z"),
            ],
        };
        let s = estimate_stays(
            &t,
            &StraightLineProvider::default(),
            1800.0,
            DayType::Weekday,
        );
        assert_eq!(s.visits[0].stay_seconds, 3600.0);
        assert_eq!(s.visits[1].stay_seconds, 1800.0);
    }

    #[test]
    fn one_kilometre_at_default_speed() {
        // 1 km due north: dlat = 1000 / R radians, checked by the spherical
        // law of cosines rather than the haversine form.
        let r = 6_371_008.8_f64;
        let dlat = (1000.0 / r).to_degrees();
        let (lat1, lat2) = (40.0_f64, 40.0 + dlat);
        let cos_d = lat1.to_radians().sin() * lat2.to_radians().sin()
            + lat1.to_radians().cos() * lat2.to_radians().cos();
        let oracle_m = r * cos_d.min(1.0).acos();
        assert!((oracle_m - 1000.0).abs() < 0.01);

        let t = Trajectory {
            user_id: "u".into(),
            day: NaiveDate::from_ymd_opt(2013, 7, 8).unwrap(),
            records: vec![
                rec("u", "a", lat1, -74.0, "2013-07-08T08:00:00Z"),
                rec("u", "b", lat2, -74.0, "2013-07-08T08:30:00Z"),
            ],
        };
        let s = estimate_stays(
            &t,
            &StraightLineProvider::default(),
            1800.0,
            DayType::Weekday,
        );
        assert!((s.visits[0].stay_seconds - 1656.0).abs() < 1e-3);
    }

    #[test]
    fn stay_floors_at_zero() {
        let t = Trajectory {
            user_id: "u".into(),
            day: NaiveDate::from_ymd_opt(2013, 7, 8).unwrap(),
            records: vec![
                rec("u", "a", 40.0, -74.0, "2013-07-08T08:00:00Z"),
                rec("u", "b", 40.1, -74.0, "2013-07-08T08:01:00Z"),
            ],
        };
        let s = estimate_stays(
            &t,
            &StraightLineProvider::default(),
            1800.0,
            DayType::Weekday,
        );
        assert_eq!(s.visits[0].stay_seconds, 0.0);
    }

    struct Broken;
    impl TravelTimeProvider for Broken {
        fn travel_time(
            &self,
            _: &MovementRecord,
            _: &MovementRecord,
        ) -> Result<f64, ProviderError> {
            Err(ProviderError("offline".into()))
        }
    }

    #[test]
    fn provider_failure_falls_back_and_flags() {
        let t = Trajectory {
            user_id: "u".into(),
            day: NaiveDate::from_ymd_opt(2013, 7, 8).unwrap(),
            records: vec![
                rec("u", "a", 40.0, -74.0, "2013-07-08T08:00:00Z"),
                rec("u", "b", 40.0, -74.0, "2013-07-08T09:00:00Z"),
            ],
        };
        let s = estimate_stays(&t, &Broken, 1800.0, DayType::Weekday);
        assert!(s.visits[0].fallback_travel);
        assert_eq!(s.visits[0].stay_seconds, 3600.0);
    }

    #[test]
    fn day_classification() {
        let cal = HolidayCalendar::parse("# US\n2013-07-04\n\n".as_bytes()).unwrap();
        let d = |m, d| NaiveDate::from_ymd_opt(2013, m, d).unwrap();
        assert_eq!(classify_day(d(7, 4), &cal), DayType::Holiday);
        assert_eq!(classify_day(d(7, 6), &cal), DayType::Weekend);
        assert_eq!(classify_day(d(7, 8), &cal), DayType::Weekday);
        assert!(HolidayCalendar::parse("07/04/2013".as_bytes()).is_err());
    }
}
