//! Embedded flag store: runs, flags, dismissals, an append-only event log
//! and the plot data served to the dashboard.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, SecondsFormat, SubsecRound, Utc};
use gaswatch_core::flag::{Flag, FlagMethod};
use gaswatch_core::ingestion::AccountMeta;
use rusqlite::{params, Connection, OptionalExtension, TransactionBehavior};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage failure: {0}")]
    Storage(#[from] rusqlite::Error),
    #[error("corrupt record: {0}")]
    Corrupt(String),
    #[error("unknown flag {0}")]
    UnknownFlag(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("flag {flag_id} was already dismissed by {dismissed_by} at {dismissed_at}")]
    AlreadyDismissed {
        flag_id: String,
        dismissed_by: String,
        dismissed_at: DateTime<Utc>,
    },
    #[error("run {0} is still in progress")]
    RunLocked(String),
    #[error("run {0} is not running")]
    RunNotRunning(String),
    #[error("{0}")]
    Validation(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagStatus {
    Open,
    Dismissed,
}

impl FlagStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FlagStatus::Open => "open",
            FlagStatus::Dismissed => "dismissed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "open" => Some(FlagStatus::Open),
            "dismissed" => Some(FlagStatus::Dismissed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::Succeeded => "succeeded",
            RunStatus::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "running" => Some(RunStatus::Running),
            "succeeded" => Some(RunStatus::Succeeded),
            "failed" => Some(RunStatus::Failed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub flag_id: String,
    pub run_id: String,
    #[serde(flatten)]
    pub flag: Flag,
    pub status: FlagStatus,
    pub dismissed_by: Option<String>,
    pub dismissed_at: Option<DateTime<Utc>>,
    pub dismissal_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub config_hash: String,
    /// Input file name to content hash.
    pub fingerprints: BTreeMap<String, String>,
    pub seed: u64,
    pub status: RunStatus,
    /// Stored flags by method.
    pub flag_counts: BTreeMap<String, u64>,
    pub message: Option<String>,
}

/// What a new run is started with.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunRequest {
    pub command: String,
    pub config_hash: String,
    pub fingerprints: BTreeMap<String, String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FlagFilter {
    pub status: Option<FlagStatus>,
    pub method: Option<FlagMethod>,
    pub group: Option<String>,
    pub fiscal_year: Option<i32>,
    pub account: Option<String>,
    pub run: Option<String>,
}

/// One entry of the append-only event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    RunStarted { run: RunRecord },
    FlagStored { record: FlagRecord },
    FlagDismissed {
        flag_id: String,
        dismissed_by: String,
        dismissed_at: DateTime<Utc>,
        note: Option<String>,
    },
    RunFinished {
        run_id: String,
        status: RunStatus,
        finished_at: DateTime<Utc>,
        flag_counts: BTreeMap<String, u64>,
        message: Option<String>,
    },
}

/// Runs and flags keyed by id; the state the event log must reproduce.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StoreState {
    pub runs: BTreeMap<String, RunRecord>,
    pub flags: BTreeMap<String, FlagRecord>,
}

impl StoreState {
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::RunStarted { run } => {
                self.runs.insert(run.run_id.clone(), run.clone());
            }
            Event::FlagStored { record } => {
                self.flags.insert(record.flag_id.clone(), record.clone());
            }
            Event::FlagDismissed {
                flag_id,
                dismissed_by,
                dismissed_at,
                note,
            } => {
                let f = self
                    .flags
                    .get_mut(flag_id)
                    .ok_or_else(|| StoreError::Corrupt(format!("dismissal of unknown flag {flag_id}")))?;
                f.status = FlagStatus::Dismissed;
                f.dismissed_by = Some(dismissed_by.clone());
                f.dismissed_at = Some(*dismissed_at);
                f.dismissal_note = note.clone();
            }
            Event::RunFinished {
                run_id,
                status,
                finished_at,
                flag_counts,
                message,
            } => {
                let r = self
                    .runs
                    .get_mut(run_id)
                    .ok_or_else(|| StoreError::Corrupt(format!("finish of unknown run {run_id}")))?;
                r.status = *status;
                r.finished_at = Some(*finished_at);
                r.flag_counts = flag_counts.clone();
                r.message = message.clone();
            }
        }
        Ok(())
    }
}

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

const MIGRATIONS: &[&str] = &[
    "CREATE TABLE runs (
        run_id TEXT PRIMARY KEY,
        command TEXT NOT NULL,
        started_at TEXT NOT NULL,
        finished_at TEXT,
        config_hash TEXT NOT NULL,
        fingerprints TEXT NOT NULL,
        seed TEXT NOT NULL,
        status TEXT NOT NULL CHECK (status IN ('running', 'succeeded', 'failed')),
        flag_counts TEXT NOT NULL DEFAULT '{}',
        message TEXT
    );
    CREATE TABLE flags (
        flag_id TEXT PRIMARY KEY,
        run_id TEXT NOT NULL REFERENCES runs(run_id),
        account_id TEXT NOT NULL,
        group_id TEXT NOT NULL,
        fiscal_year INTEGER NOT NULL,
        month INTEGER NOT NULL,
        method TEXT NOT NULL,
        statistic REAL,
        created_at TEXT NOT NULL,
        status TEXT NOT NULL CHECK (status IN ('open', 'dismissed')),
        dismissed_by TEXT,
        dismissed_at TEXT,
        dismissal_note TEXT,
        UNIQUE (run_id, account_id, fiscal_year, month, method),
        CHECK ((status = 'dismissed') = (dismissed_by IS NOT NULL AND dismissed_at IS NOT NULL))
    );
    CREATE INDEX flags_by_status ON flags(status);
    CREATE TABLE events (
        seq INTEGER PRIMARY KEY AUTOINCREMENT,
        at TEXT NOT NULL,
        payload TEXT NOT NULL
    );
    CREATE TRIGGER events_no_update BEFORE UPDATE ON events BEGIN SELECT RAISE(ABORT, 'events are append-only'); END;
    CREATE TRIGGER events_no_delete BEFORE DELETE ON events BEGIN SELECT RAISE(ABORT, 'events are append-only'); END;
    CREATE TRIGGER flags_no_delete BEFORE DELETE ON flags BEGIN SELECT RAISE(ABORT, 'flags are never deleted'); END;
    CREATE TABLE accounts (
        account_id TEXT PRIMARY KEY,
        building_id TEXT NOT NULL,
        service_type TEXT NOT NULL,
        service_group TEXT NOT NULL,
        building_sqft REAL NOT NULL,
        accounts_in_building INTEGER NOT NULL
    );
    CREATE TABLE plot_data (
        run_id TEXT NOT NULL REFERENCES runs(run_id),
        kind TEXT NOT NULL,
        key TEXT NOT NULL,
        payload TEXT NOT NULL,
        PRIMARY KEY (run_id, kind, key)
    );",
];

pub const SCHEMA_VERSION: i64 = MIGRATIONS.len() as i64;

fn ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

fn parse_ts(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| StoreError::Corrupt(format!("timestamp {s:?}: {e}")))
}

fn to_json(v: &impl Serialize) -> Result<String> {
    serde_json::to_string(v).map_err(|e| StoreError::Corrupt(e.to_string()))
}

fn from_json<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| StoreError::Corrupt(e.to_string()))
}

pub struct Store {
    conn: Mutex<Connection>,
    clock: Clock,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").finish_non_exhaustive()
    }
}

const FLAG_COLUMNS: &str = "flag_id, run_id, account_id, group_id, fiscal_year, month, method, statistic, \
                            created_at, status, dismissed_by, dismissed_at, dismissal_note";
const RUN_COLUMNS: &str =
    "run_id, command, started_at, finished_at, config_hash, fingerprints, seed, status, flag_counts, message";

struct RawFlag {
    flag_id: String,
    run_id: String,
    account_id: String,
    group_id: String,
    fiscal_year: i32,
    month: i64,
    method: String,
    statistic: Option<f64>,
    created_at: String,
    status: String,
    dismissed_by: Option<String>,
    dismissed_at: Option<String>,
    dismissal_note: Option<String>,
}

impl RawFlag {
    fn from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<Self> {
        Ok(Self {
            flag_id: r.get(0)?,
            run_id: r.get(1)?,
            account_id: r.get(2)?,
            group_id: r.get(3)?,
            fiscal_year: r.get(4)?,
            month: r.get(5)?,
            method: r.get(6)?,
            statistic: r.get(7)?,
            created_at: r.get(8)?,
            status: r.get(9)?,
            dismissed_by: r.get(10)?,
            dismissed_at: r.get(11)?,
            dismissal_note: r.get(12)?,
        })
    }

    fn into_record(self) -> Result<FlagRecord> {
        Ok(FlagRecord {
            flag: Flag {
                account_id: self.account_id,
                group_id: self.group_id,
                fiscal_year: self.fiscal_year,
                month: (self.month > 0).then_some(self.month as u8),
                method: self.method.parse().map_err(StoreError::Corrupt)?,
                statistic: self.statistic.unwrap_or(f64::NAN),
                created: Some(parse_ts(&self.created_at)?),
            },
            flag_id: self.flag_id,
            run_id: self.run_id,
            status: FlagStatus::parse(&self.status)
                .ok_or_else(|| StoreError::Corrupt(format!("flag status {:?}", self.status)))?,
            dismissed_by: self.dismissed_by,
            dismissed_at: self.dismissed_at.as_deref().map(parse_ts).transpose()?,
            dismissal_note: self.dismissal_note,
        })
    }
}

struct RawRun {
    run_id: String,
    command: String,
    started_at: String,
    finished_at: Option<String>,
    config_hash: String,
    fingerprints: String,
    seed: String,
    status: String,
    flag_counts: String,
    message: Option<String>,
}

impl RawRun {
    fn from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<Self> {
        Ok(Self {
            run_id: r.get(0)?,
            command: r.get(1)?,
            started_at: r.get(2)?,
            finished_at: r.get(3)?,
            config_hash: r.get(4)?,
            fingerprints: r.get(5)?,
            seed: r.get(6)?,
            status: r.get(7)?,
            flag_counts: r.get(8)?,
            message: r.get(9)?,
        })
    }

    fn into_record(self) -> Result<RunRecord> {
        Ok(RunRecord {
            started_at: parse_ts(&self.started_at)?,
            finished_at: self.finished_at.as_deref().map(parse_ts).transpose()?,
            fingerprints: from_json(&self.fingerprints)?,
            seed: self.seed.parse().map_err(|_| StoreError::Corrupt(format!("seed {:?}", self.seed)))?,
            status: RunStatus::parse(&self.status)
                .ok_or_else(|| StoreError::Corrupt(format!("run status {:?}", self.status)))?,
            flag_counts: from_json(&self.flag_counts)?,
            run_id: self.run_id,
            command: self.command,
            config_hash: self.config_hash,
            message: self.message,
        })
    }
}

fn append_event(tx: &rusqlite::Transaction<'_>, at: DateTime<Utc>, event: &Event) -> Result<()> {
    tx.execute("INSERT INTO events (at, payload) VALUES (?1, ?2)", params![ts(at), to_json(event)?])?;
    Ok(())
}

impl Store {
    pub fn open(path: &Path) -> Result<Self> {
        Self::from_connection(Connection::open(path)?)
    }

    pub fn open_in_memory() -> Result<Self> {
        Self::from_connection(Connection::open_in_memory()?)
    }

    fn from_connection(mut conn: Connection) -> Result<Self> {
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.pragma_update(None, "foreign_keys", true)?;
        let _ = conn.pragma_update(None, "journal_mode", "WAL");
        migrate(&mut conn)?;
        let store = Self {
            conn: Mutex::new(conn),
            clock: Box::new(Utc::now),
        };
        store.check_integrity()?;
        Ok(store)
    }

    /// Replaces the wall clock, for reproducible timestamps in tests.
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    /// Current time at the microsecond precision the columns store.
    fn now(&self) -> DateTime<Utc> {
        (self.clock)().trunc_subsecs(6)
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn schema_version(&self) -> Result<i64> {
        Ok(self.conn().pragma_query_value(None, "user_version", |r| r.get(0))?)
    }

    /// Physical integrity, referential integrity and per-run flag counts.
    pub fn check_integrity(&self) -> Result<()> {
        let conn = self.conn();
        let status: String = conn.query_row("PRAGMA integrity_check", [], |r| r.get(0))?;
        if status != "ok" {
            return Err(StoreError::Integrity(status));
        }
        let dangling: i64 = conn.query_row(
            "SELECT COUNT(*) FROM flags f LEFT JOIN runs r ON f.run_id = r.run_id WHERE r.run_id IS NULL",
            [],
            |r| r.get(0),
        )?;
        if dangling > 0 {
            return Err(StoreError::Integrity(format!("{dangling} flag(s) reference missing runs")));
        }
        let mut stmt = conn.prepare(
            "SELECT run_id, flag_counts FROM runs WHERE status = 'succeeded'",
        )?;
        let runs: Vec<(String, String)> =
            stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?.collect::<rusqlite::Result<_>>()?;
        for (run_id, counts) in runs {
            let recorded: BTreeMap<String, u64> = from_json(&counts)?;
            let actual = count_flags(&conn, &run_id)?;
            if recorded != actual {
                return Err(StoreError::Integrity(format!(
                    "run {run_id} records {recorded:?} flags but {actual:?} are stored"
                )));
            }
        }
        Ok(())
    }

    /// Creates a running run. Fails with `RunLocked` while another run is active.
    pub fn record_run(&self, request: &RunRequest) -> Result<String> {
        let now = self.now();
        let run = RunRecord {
            run_id: uuid::Uuid::new_v4().to_string(),
            command: request.command.clone(),
            started_at: now,
            finished_at: None,
            config_hash: request.config_hash.clone(),
            fingerprints: request.fingerprints.clone(),
            seed: request.seed,
            status: RunStatus::Running,
            flag_counts: BTreeMap::new(),
            message: None,
        };
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let active: Option<String> = tx
            .query_row("SELECT run_id FROM runs WHERE status = 'running' LIMIT 1", [], |r| r.get(0))
            .optional()?;
        if let Some(active) = active {
            return Err(StoreError::RunLocked(active));
        }
        tx.execute(
            &format!("INSERT INTO runs ({RUN_COLUMNS}) VALUES (?1, ?2, ?3, NULL, ?4, ?5, ?6, 'running', '{{}}', NULL)"),
            params![
                run.run_id,
                run.command,
                ts(now),
                run.config_hash,
                to_json(&run.fingerprints)?,
                run.seed.to_string()
            ],
        )?;
        append_event(&tx, now, &Event::RunStarted { run: run.clone() })?;
        tx.commit()?;
        Ok(run.run_id)
    }

    /// Marks a running run finished and records its per-method flag counts.
    pub fn finish_run(&self, run_id: &str, status: RunStatus, message: Option<&str>) -> Result<RunRecord> {
        if status == RunStatus::Running {
            return Err(StoreError::Validation("a run cannot finish as running".into()));
        }
        let now = self.now();
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let current: Option<String> = tx
            .query_row("SELECT status FROM runs WHERE run_id = ?1", [run_id], |r| r.get(0))
            .optional()?;
        match current.as_deref() {
            None => return Err(StoreError::UnknownRun(run_id.into())),
            Some("running") => {}
            Some(_) => return Err(StoreError::RunNotRunning(run_id.into())),
        }
        let counts = count_flags(&tx, run_id)?;
        tx.execute(
            "UPDATE runs SET status = ?2, finished_at = ?3, flag_counts = ?4, message = ?5 WHERE run_id = ?1",
            params![run_id, status.as_str(), ts(now), to_json(&counts)?, message],
        )?;
        append_event(
            &tx,
            now,
            &Event::RunFinished {
                run_id: run_id.into(),
                status,
                finished_at: now,
                flag_counts: counts,
                message: message.map(str::to_string),
            },
        )?;
        tx.commit()?;
        drop(conn);
        self.get_run(run_id)
    }

    pub fn get_run(&self, run_id: &str) -> Result<RunRecord> {
        let conn = self.conn();
        conn.query_row(&format!("SELECT {RUN_COLUMNS} FROM runs WHERE run_id = ?1"), [run_id], RawRun::from_row)
            .optional()?
            .ok_or_else(|| StoreError::UnknownRun(run_id.into()))?
            .into_record()
    }

    /// Most recent first.
    pub fn list_runs(&self) -> Result<Vec<RunRecord>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(&format!("SELECT {RUN_COLUMNS} FROM runs ORDER BY started_at DESC, rowid DESC"))?;
        let raw: Vec<RawRun> = stmt.query_map([], RawRun::from_row)?.collect::<rusqlite::Result<_>>()?;
        raw.into_iter().map(RawRun::into_record).collect()
    }

    /// Stores the run's flags; a repeated `(account, fiscal year, month,
    /// method)` within the run is stored once. Returns the stored records.
    pub fn store_flags(&self, run_id: &str, flags: &[Flag]) -> Result<Vec<FlagRecord>> {
        let now = self.now();
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let status: Option<String> = tx
            .query_row("SELECT status FROM runs WHERE run_id = ?1", [run_id], |r| r.get(0))
            .optional()?;
        match status.as_deref() {
            None => return Err(StoreError::UnknownRun(run_id.into())),
            Some("running") => {}
            Some(_) => return Err(StoreError::RunNotRunning(run_id.into())),
        }
        let mut stored = Vec::new();
        for f in flags {
            let record = FlagRecord {
                flag_id: uuid::Uuid::new_v4().to_string(),
                run_id: run_id.into(),
                flag: Flag {
                    created: Some(now),
                    ..f.clone()
                },
                status: FlagStatus::Open,
                dismissed_by: None,
                dismissed_at: None,
                dismissal_note: None,
            };
            let inserted = tx.execute(
                &format!(
                    "INSERT OR IGNORE INTO flags ({FLAG_COLUMNS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, 'open', NULL, NULL, NULL)"
                ),
                params![
                    record.flag_id,
                    run_id,
                    f.account_id,
                    f.group_id,
                    f.fiscal_year,
                    f.month.map_or(0, i64::from),
                    f.method.as_str(),
                    f.statistic.is_finite().then_some(f.statistic),
                    ts(now),
                ],
            )?;
            if inserted == 1 {
                append_event(&tx, now, &Event::FlagStored { record: record.clone() })?;
                stored.push(record);
            }
        }
        tx.commit()?;
        Ok(stored)
    }

    pub fn get_flag(&self, flag_id: &str) -> Result<FlagRecord> {
        let conn = self.conn();
        conn.query_row(&format!("SELECT {FLAG_COLUMNS} FROM flags WHERE flag_id = ?1"), [flag_id], RawFlag::from_row)
            .optional()?
            .ok_or_else(|| StoreError::UnknownFlag(flag_id.into()))?
            .into_record()
    }

    pub fn list_flags(&self, filter: &FlagFilter) -> Result<Vec<FlagRecord>> {
        let mut sql = format!("SELECT {FLAG_COLUMNS} FROM flags WHERE 1 = 1");
        let mut args: Vec<Box<dyn rusqlite::ToSql>> = Vec::new();
        let mut add = |clause: &str, v: Box<dyn rusqlite::ToSql>| {
            args.push(v);
            sql.push_str(&format!(" AND {clause} = ?{}", args.len()));
        };
        if let Some(s) = filter.status {
            add("status", Box::new(s.as_str()));
        }
        if let Some(m) = filter.method {
            add("method", Box::new(m.as_str()));
        }
        if let Some(g) = &filter.group {
            add("group_id", Box::new(g.clone()));
        }
        if let Some(fy) = filter.fiscal_year {
            add("fiscal_year", Box::new(fy));
        }
        if let Some(a) = &filter.account {
            add("account_id", Box::new(a.clone()));
        }
        if let Some(r) = &filter.run {
            add("run_id", Box::new(r.clone()));
        }
        sql.push_str(" ORDER BY created_at, group_id, fiscal_year, account_id, month, method, flag_id");
        let conn = self.conn();
        let mut stmt = conn.prepare(&sql)?;
        let raw: Vec<RawFlag> = stmt
            .query_map(rusqlite::params_from_iter(args.iter().map(|b| b.as_ref())), RawFlag::from_row)?
            .collect::<rusqlite::Result<_>>()?;
        raw.into_iter().map(RawFlag::into_record).collect()
    }

    /// Moves an open flag to dismissed with the operator and note recorded.
    /// The status check and update run in one write transaction, so of two
    /// concurrent dismissals exactly one succeeds.
    pub fn dismiss_flag(&self, flag_id: &str, operator: &str, note: Option<&str>) -> Result<FlagRecord> {
        let operator = operator.trim();
        if operator.is_empty() {
            return Err(StoreError::Validation("operator must not be empty".into()));
        }
        let now = self.now();
        let mut conn = self.conn();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let current: Option<(String, Option<String>, Option<String>)> = tx
            .query_row(
                "SELECT status, dismissed_by, dismissed_at FROM flags WHERE flag_id = ?1",
                [flag_id],
                |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)),
            )
            .optional()?;
        match current {
            None => return Err(StoreError::UnknownFlag(flag_id.into())),
            Some((status, by, at)) if status == "dismissed" => {
                return Err(StoreError::AlreadyDismissed {
                    flag_id: flag_id.into(),
                    dismissed_by: by.unwrap_or_default(),
                    dismissed_at: parse_ts(at.as_deref().unwrap_or_default())?,
                })
            }
            Some(_) => {}
        }
        let changed = tx.execute(
            "UPDATE flags SET status = 'dismissed', dismissed_by = ?2, dismissed_at = ?3, dismissal_note = ?4
             WHERE flag_id = ?1 AND status = 'open'",
            params![flag_id, operator, ts(now), note],
        )?;
        if changed != 1 {
            return Err(StoreError::Corrupt(format!("flag {flag_id} changed during dismissal")));
        }
        append_event(
            &tx,
            now,
            &Event::FlagDismissed {
                flag_id: flag_id.into(),
                dismissed_by: operator.into(),
                dismissed_at: now,
                note: note.map(str::to_string),
            },
        )?;
        tx.commit()?;
        drop(conn);
        self.get_flag(flag_id)
    }

    pub fn events(&self) -> Result<Vec<Event>> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT payload FROM events ORDER BY seq")?;
        let raw: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        raw.iter().map(|s| from_json(s)).collect()
    }

    /// Rebuilds runs and flags from the event log alone.
    pub fn replay(&self) -> Result<StoreState> {
        let mut state = StoreState::default();
        for e in self.events()? {
            state.apply(&e)?;
        }
        Ok(state)
    }

    /// Current runs and flags as stored in the tables.
    pub fn snapshot(&self) -> Result<StoreState> {
        let runs = self.list_runs()?.into_iter().map(|r| (r.run_id.clone(), r)).collect();
        let flags = self
            .list_flags(&FlagFilter::default())?
            .into_iter()
            .map(|f| (f.flag_id.clone(), f))
            .collect();
        Ok(StoreState { runs, flags })
    }

    pub fn upsert_accounts(&self, accounts: &[AccountMeta]) -> Result<()> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        for a in accounts {
            tx.execute(
                "INSERT INTO accounts (account_id, building_id, service_type, service_group, building_sqft, accounts_in_building)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)
                 ON CONFLICT(account_id) DO UPDATE SET building_id = excluded.building_id,
                   service_type = excluded.service_type, service_group = excluded.service_group,
                   building_sqft = excluded.building_sqft, accounts_in_building = excluded.accounts_in_building",
                params![
                    a.account_id,
                    a.building_id,
                    a.service_type.as_str(),
                    a.service_group().as_str(),
                    a.building_sqft,
                    a.accounts_in_building
                ],
            )?;
        }
        tx.commit()?;
        Ok(())
    }

    pub fn list_accounts(&self) -> Result<Vec<AccountMeta>> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT account_id, building_id, service_type, building_sqft, accounts_in_building FROM accounts ORDER BY account_id",
        )?;
        let rows: Vec<(String, String, String, f64, u32)> = stmt
            .query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?)))?
            .collect::<rusqlite::Result<_>>()?;
        rows.into_iter()
            .map(|(account_id, building_id, service_type, building_sqft, accounts_in_building)| {
                Ok(AccountMeta {
                    account_id,
                    building_id,
                    service_type: service_type.parse().map_err(StoreError::Corrupt)?,
                    building_sqft,
                    accounts_in_building,
                })
            })
            .collect()
    }

    pub fn get_account(&self, account_id: &str) -> Result<Option<AccountMeta>> {
        Ok(self.list_accounts()?.into_iter().find(|a| a.account_id == account_id))
    }

    pub fn put_plot_data(&self, run_id: &str, kind: &str, key: &str, payload: &serde_json::Value) -> Result<()> {
        self.conn().execute(
            "INSERT OR REPLACE INTO plot_data (run_id, kind, key, payload) VALUES (?1, ?2, ?3, ?4)",
            params![run_id, kind, key, to_json(payload)?],
        )?;
        Ok(())
    }

    /// Plot data from `run_id`, or from the latest succeeded run that has it.
    pub fn plot_data(&self, run_id: Option<&str>, kind: &str, key: &str) -> Result<Option<(String, serde_json::Value)>> {
        let conn = self.conn();
        let row: Option<(String, String)> = match run_id {
            Some(run) => conn
                .query_row(
                    "SELECT run_id, payload FROM plot_data WHERE run_id = ?1 AND kind = ?2 AND key = ?3",
                    params![run, kind, key],
                    |r| Ok((r.get(0)?, r.get(1)?)),
                )
                .optional()?,
            None => conn
                .query_row(
                    "SELECT p.run_id, p.payload FROM plot_data p JOIN runs r ON r.run_id = p.run_id
                     WHERE r.status = 'succeeded' AND p.kind = ?1 AND p.key = ?2
                     ORDER BY r.started_at DESC, r.rowid DESC LIMIT 1",
                    params![kind, key],
                    |r| Ok((r.get(0)?, r.get(1)?)),
                )
                .optional()?,
        };
        row.map(|(run, payload)| Ok((run, from_json(&payload)?))).transpose()
    }

    /// Keys of one kind of plot data in the given or latest succeeded run.
    pub fn plot_keys(&self, run_id: Option<&str>, kind: &str) -> Result<Option<(String, Vec<String>)>> {
        let conn = self.conn();
        let run: Option<String> = match run_id {
            Some(r) => Some(r.to_string()),
            None => conn
                .query_row(
                    "SELECT r.run_id FROM runs r WHERE r.status = 'succeeded'
                     AND EXISTS (SELECT 1 FROM plot_data p WHERE p.run_id = r.run_id AND p.kind = ?1)
                     ORDER BY r.started_at DESC, r.rowid DESC LIMIT 1",
                    [kind],
                    |r| r.get(0),
                )
                .optional()?,
        };
        let Some(run) = run else { return Ok(None) };
        let mut stmt = conn.prepare("SELECT key FROM plot_data WHERE run_id = ?1 AND kind = ?2 ORDER BY key")?;
        let keys: Vec<String> = stmt.query_map(params![run, kind], |r| r.get(0))?.collect::<rusqlite::Result<_>>()?;
        Ok(Some((run, keys)))
    }
}

fn count_flags(conn: &Connection, run_id: &str) -> Result<BTreeMap<String, u64>> {
    let mut stmt = conn.prepare("SELECT method, COUNT(*) FROM flags WHERE run_id = ?1 GROUP BY method ORDER BY method")?;
    let rows = stmt
        .query_map([run_id], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)? as u64)))?
        .collect::<rusqlite::Result<_>>()?;
    Ok(rows)
}

fn migrate(conn: &mut Connection) -> Result<()> {
    let version: i64 = conn.pragma_query_value(None, "user_version", |r| r.get(0))?;
    if version > SCHEMA_VERSION {
        return Err(StoreError::Integrity(format!(
            "store schema version {version} is newer than this build ({SCHEMA_VERSION})"
        )));
    }
    for (i, sql) in MIGRATIONS.iter().enumerate().skip(version as usize) {
        let tx = conn.transaction()?;
        tx.execute_batch(sql)?;
        tx.pragma_update(None, "user_version", i as i64 + 1)?;
        tx.commit()?;
    }
    Ok(())
}
