//! Pseudonym rotation, local contact logs and the two infection reporting
//! models, driven over an in-process, ordered, loss-free channel.
//!
//! Devices generate their own temporary ids from a per-device secret. In
//! centralized mode the server keeps an epoch registry mapping temporary ids
//! back to permanent ids and receives the contact log of a device that
//! reports positive. In decentralized mode it only publishes the reporter's
//! own temporary ids; matching happens on the devices.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{register_contact, ContactLog, ContactLogEntry, FusionError};
use crate::model::{ContactDecision, DeviceId, Interval, PermanentId, TempId};

pub const DEFAULT_ROTATION_PERIOD_S: f64 = 900.0;
pub const DEFAULT_LOOKBACK_S: f64 = 14.0 * 24.0 * 3600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("rotation not due until t={due}")]
    NotDue { due: f64 },
    #[error("operation requires {expected:?} mode, server is {actual:?}")]
    Mode { expected: ReportingMode, actual: ReportingMode },
    #[error("decision is not a contact")]
    NoContact,
    #[error("unknown device {0}")]
    UnknownDevice(PermanentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportingMode {
    Centralized,
    Decentralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub rotation_period_s: f64,
    pub lookback_s: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            rotation_period_s: DEFAULT_ROTATION_PERIOD_S,
            lookback_s: DEFAULT_LOOKBACK_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PublishedId {
    pub temp_id: TempId,
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureStatus {
    None,
    Notified,
}

/// A temporary id the device has used, with the span it was current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnId {
    pub temp_id: TempId,
    pub epoch: u64,
    pub from: f64,
    pub until: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceState {
    pub identity: DeviceId,
    pub contact_log: ContactLog,
    pub exposure_status: ExposureStatus,
    history: Vec<OwnId>,
    secret: u64,
}

impl DeviceState {
    pub fn temp_id(&self) -> &TempId {
        &self.identity.temp_id
    }

    /// Every temporary id this device has held, oldest first.
    pub fn history(&self) -> &[OwnId] {
        &self.history
    }

    pub fn next_rotation(&self, cfg: &ProtocolConfig) -> f64 {
        self.history.last().map_or(0.0, |h| h.from) + cfg.rotation_period_s
    }
}

/// Derives the temporary id for `epoch` from a device secret.
pub fn derive_temp_id(secret: u64, epoch: u64) -> TempId {
    let mut rng = ChaCha8Rng::seed_from_u64(secret);
    rng.set_stream(epoch);
    TempId(format!("{:016x}{:016x}", rng.next_u64(), rng.next_u64()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub mode: ReportingMode,
    pub config: ProtocolConfig,
    pub registered: BTreeSet<PermanentId>,
    /// Centralized only: temporary id to owner.
    pub epoch_registry: BTreeMap<TempId, PermanentId>,
    /// Centralized only: contact lists released by devices that reported.
    pub uploaded_logs: BTreeMap<PermanentId, Vec<ContactLogEntry>>,
    /// Centralized only: notified device to the contact windows behind it.
    pub notifications_sent: BTreeMap<PermanentId, Vec<Interval>>,
    /// Decentralized only: append-only public list.
    pub published_positive_ids: Vec<PublishedId>,
}

impl ServerState {
    pub fn new(mode: ReportingMode, config: ProtocolConfig) -> Self {
        ServerState {
            mode,
            config,
            registered: BTreeSet::new(),
            epoch_registry: BTreeMap::new(),
            uploaded_logs: BTreeMap::new(),
            notifications_sent: BTreeMap::new(),
            published_positive_ids: Vec::new(),
        }
    }

    /// Number of contact-log entries held by the server.
    pub fn contact_entry_count(&self) -> usize {
        self.uploaded_logs.values().map(Vec::len).sum()
    }

    pub fn is_notified(&self, id: &PermanentId) -> bool {
        self.notifications_sent.contains_key(id)
    }

    fn require(&self, expected: ReportingMode) -> Result<(), ProtocolError> {
        if self.mode == expected {
            Ok(())
        } else {
            Err(ProtocolError::Mode { expected, actual: self.mode })
        }
    }

    fn record_id(&mut self, owner: &PermanentId, temp: &TempId) {
        if self.mode == ReportingMode::Centralized {
            self.epoch_registry.insert(temp.clone(), owner.clone());
        }
    }
}

/// Registers a device and returns it at epoch 0. Registering the same id
/// again leaves the server unchanged and returns the same state.
pub fn register_device(server: &mut ServerState, permanent_id: PermanentId, secret: u64) -> DeviceState {
    let temp_id = derive_temp_id(secret, 0);
    server.registered.insert(permanent_id.clone());
    server.record_id(&permanent_id, &temp_id);
    DeviceState {
        identity: DeviceId { permanent_id, temp_id: temp_id.clone(), epoch: 0 },
        contact_log: ContactLog::default(),
        exposure_status: ExposureStatus::None,
        history: vec![OwnId { temp_id, epoch: 0, from: 0.0, until: None }],
        secret,
    }
}

pub fn rotate_id(device: &mut DeviceState, server: &mut ServerState, now: f64) -> Result<TempId, ProtocolError> {
    let due = device.next_rotation(&server.config);
    if now < due {
        return Err(ProtocolError::NotDue { due });
    }
    let epoch = device.identity.epoch + 1;
    let temp_id = derive_temp_id(device.secret, epoch);
    if let Some(last) = device.history.last_mut() {
        last.until = Some(now);
    }
    device.history.push(OwnId { temp_id: temp_id.clone(), epoch, from: now, until: None });
    device.identity.epoch = epoch;
    device.identity.temp_id = temp_id.clone();
    server.record_id(&device.identity.permanent_id, &temp_id);
    Ok(temp_id)
}

/// Both devices log each other's current temporary id. A non-contact
/// decision leaves both logs untouched.
pub fn exchange_ids(
    a: &mut DeviceState,
    b: &mut DeviceState,
    decision: &ContactDecision,
    window: Interval,
) -> Result<(), ProtocolError> {
    if !decision.contact {
        return Err(ProtocolError::NoContact);
    }
    let (ta, tb) = (a.temp_id().clone(), b.temp_id().clone());
    let log = |dev: &mut DeviceState, peer: &TempId| {
        register_contact(&mut dev.contact_log, decision, peer, window).map_err(|e| match e {
            FusionError::NoContact => ProtocolError::NoContact,
            other => unreachable!("register_contact: {other}"),
        })
    };
    log(a, &tb)?;
    log(b, &ta)?;
    Ok(())
}

fn within_lookback(cfg: &ProtocolConfig, end: f64, now: f64) -> bool {
    end >= now - cfg.lookback_s
}

/// Uploads the reporter's contact log and notifies every resolvable peer
/// once. Returns the devices notified by this report. Peers are not told who
/// reported.
pub fn report_positive_centralized(
    device: &DeviceState,
    server: &mut ServerState,
    now: f64,
) -> Result<BTreeSet<PermanentId>, ProtocolError> {
    server.require(ReportingMode::Centralized)?;
    let recent: Vec<ContactLogEntry> = device
        .contact_log
        .entries
        .iter()
        .filter(|e| within_lookback(&server.config, e.window.end, now))
        .cloned()
        .collect();
    let mut windows: BTreeMap<PermanentId, Vec<Interval>> = BTreeMap::new();
    for entry in &recent {
        if let Some(owner) = server.epoch_registry.get(&entry.peer) {
            windows.entry(owner.clone()).or_default().push(entry.window);
        }
    }
    server
        .uploaded_logs
        .entry(device.identity.permanent_id.clone())
        .or_default()
        .extend(recent);
    let notified = windows.keys().cloned().collect();
    for (owner, w) in windows {
        server.notifications_sent.entry(owner).or_default().extend(w);
    }
    Ok(notified)
}

/// Centralized delivery: marks the device notified if the server has a
/// notification for it.
pub fn receive_notification(device: &mut DeviceState, server: &ServerState) -> bool {
    let hit = server.is_notified(&device.identity.permanent_id);
    if hit {
        device.exposure_status = ExposureStatus::Notified;
    }
    hit
}

/// Publishes the reporter's temporary ids that were current within the
/// lookback and have not been published yet. Returns the appended ids.
pub fn report_positive_decentralized(
    device: &DeviceState,
    server: &mut ServerState,
    now: f64,
) -> Result<Vec<PublishedId>, ProtocolError> {
    server.require(ReportingMode::Decentralized)?;
    let known: BTreeSet<&TempId> = server.published_positive_ids.iter().map(|p| &p.temp_id).collect();
    let delta: Vec<PublishedId> = device
        .history
        .iter()
        .filter(|h| within_lookback(&server.config, h.until.unwrap_or(now), now))
        .filter(|h| !known.contains(&h.temp_id))
        .map(|h| PublishedId { temp_id: h.temp_id.clone(), epoch: h.epoch })
        .collect();
    server.published_positive_ids.extend(delta.iter().cloned());
    Ok(delta)
}

/// True iff any published id appears in the device's contact log.
pub fn check_exposure(device: &mut DeviceState, published: &[PublishedId]) -> bool {
    let ids: BTreeSet<&TempId> = published.iter().map(|p| &p.temp_id).collect();
    let hit = device.contact_log.entries.iter().any(|e| ids.contains(&e.peer));
    if hit {
        device.exposure_status = ExposureStatus::Notified;
    }
    hit
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum ProtocolEvent {
    Register { t: f64, device: PermanentId },
    Rotate { t: f64, device: PermanentId, epoch: u64 },
    Exchange { t: f64, a: PermanentId, b: PermanentId, window: Interval },
    Report { t: f64, device: PermanentId, mode: ReportingMode, released: usize },
    Notify { t: f64, device: PermanentId },
}

/// A server plus its devices, with every interaction appended to an event
/// log in call order.
#[derive(Debug, Clone)]
pub struct Network {
    pub server: ServerState,
    pub devices: BTreeMap<PermanentId, DeviceState>,
    pub events: Vec<ProtocolEvent>,
}

impl Network {
    pub fn new(mode: ReportingMode, config: ProtocolConfig) -> Self {
        Network { server: ServerState::new(mode, config), devices: BTreeMap::new(), events: Vec::new() }
    }

    pub fn register(&mut self, id: PermanentId, secret: u64, t: f64) -> &DeviceState {
        if !self.devices.contains_key(&id) {
            let dev = register_device(&mut self.server, id.clone(), secret);
            self.events.push(ProtocolEvent::Register { t, device: id.clone() });
            self.devices.insert(id.clone(), dev);
        }
        &self.devices[&id]
    }

    fn device_mut(&mut self, id: &PermanentId) -> Result<&mut DeviceState, ProtocolError> {
        self.devices.get_mut(id).ok_or_else(|| ProtocolError::UnknownDevice(id.clone()))
    }

    pub fn rotate(&mut self, id: &PermanentId, now: f64) -> Result<TempId, ProtocolError> {
        let dev = self.devices.get_mut(id).ok_or_else(|| ProtocolError::UnknownDevice(id.clone()))?;
        let temp = rotate_id(dev, &mut self.server, now)?;
        let epoch = dev.identity.epoch;
        self.events.push(ProtocolEvent::Rotate { t: now, device: id.clone(), epoch });
        Ok(temp)
    }

    /// Rotates every device whose rotation is due at `now`.
    pub fn rotate_due(&mut self, now: f64) {
        let cfg = self.server.config;
        let due: Vec<PermanentId> = self
            .devices
            .iter()
            .filter(|(_, d)| d.next_rotation(&cfg) <= now)
            .map(|(k, _)| k.clone())
            .collect();
        for id in due {
            self.rotate(&id, now).expect("rotation checked as due");
        }
    }

    pub fn exchange(
        &mut self,
        a: &PermanentId,
        b: &PermanentId,
        decision: &ContactDecision,
        window: Interval,
    ) -> Result<(), ProtocolError> {
        let mut da = self.device_mut(a)?.clone();
        let mut db = self.device_mut(b)?.clone();
        exchange_ids(&mut da, &mut db, decision, window)?;
        self.devices.insert(a.clone(), da);
        self.devices.insert(b.clone(), db);
        self.events.push(ProtocolEvent::Exchange { t: window.end, a: a.clone(), b: b.clone(), window });
        Ok(())
    }

    /// Reports `id` positive in the server's mode and delivers the result to
    /// every device. Returns the devices whose status became notified.
    pub fn report_positive(&mut self, id: &PermanentId, now: f64) -> Result<BTreeSet<PermanentId>, ProtocolError> {
        let reporter = self.device_mut(id)?.clone();
        let released = match self.server.mode {
            ReportingMode::Centralized => {
                let before = self.server.contact_entry_count();
                report_positive_centralized(&reporter, &mut self.server, now)?;
                self.server.contact_entry_count() - before
            }
            ReportingMode::Decentralized => report_positive_decentralized(&reporter, &mut self.server, now)?.len(),
        };
        self.events.push(ProtocolEvent::Report { t: now, device: id.clone(), mode: self.server.mode, released });
        let mut newly = BTreeSet::new();
        for (key, dev) in self.devices.iter_mut() {
            let was = dev.exposure_status;
            let hit = match self.server.mode {
                ReportingMode::Centralized => receive_notification(dev, &self.server),
                ReportingMode::Decentralized => check_exposure(dev, &self.server.published_positive_ids),
            };
            if hit && was == ExposureStatus::None {
                newly.insert(key.clone());
                self.events.push(ProtocolEvent::Notify { t: now, device: key.clone() });
            }
        }
        Ok(newly)
    }
}
