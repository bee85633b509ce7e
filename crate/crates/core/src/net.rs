//! Two-computer demo: Alice and Bob run as separate processes sharing only
//! a pre-distributed seed, stream locally computed outcomes to a referee,
//! and never communicate with each other. The referee joins the streams on
//! trial index and evaluates the inequalities exactly as the harness does.
//!
//! Wire protocol (version 1): length-prefixed binary frames over TCP.
//! Frame = u32 LE payload length, then payload. Payload = 1-byte message
//! tag followed by the fields in fixed order, integers little-endian,
//! f64 as IEEE 754 LE bits, outcome as a 2-bit code (0 none, 1 plus,
//! 2 minus).

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counts::{CountsTable, PairIndex};
use crate::geom::UnitVector3;
use crate::harness::{
    ExperimentConfig, ExperimentReport, HarnessError, Schedule, EXPERIMENT_CONTEXT,
};
use crate::inequalities::SettingQuadruple;
use crate::model::{side_outcome_from_draws, ModelVariant, Outcome, Side};
use crate::rng::{setting_draw, trial_draws, StreamDomain};

pub const PROTOCOL_VERSION: u16 = 1;

/// Upper bound on a frame payload; every real message is far smaller.
const MAX_FRAME: u32 = 4096;

const IO_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum NetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol version mismatch: peer {got}, expected {want}")]
    VersionMismatch { got: u16, want: u16 },
    #[error("duplicate role: {0:?} connected twice")]
    DuplicateRole(Side),
    #[error("unexpected message: {0}")]
    UnexpectedMessage(String),
    #[error("malformed frame: {0}")]
    Decode(String),
    #[error("{side:?}: record {got} arrived, expected trial index {expected}")]
    OutOfOrderRecord { side: Side, expected: u64, got: u64 },
    #[error("{side:?}: session ended with {got} records, expected {expected}")]
    MissingTrials { side: Side, expected: u64, got: u64 },
    #[error("{side:?}: stream checksum mismatch (claimed {claimed:#x}, computed {computed:#x})")]
    ChecksumMismatch { side: Side, claimed: u64, computed: u64 },
    #[error("{side:?}: setting index {got} inconsistent with the session schedule at trial {trial}")]
    ScheduleViolation { side: Side, trial: u64, got: u8 },
    #[error("connection lost mid-session; last sent trial index {last_sent:?}")]
    PartialSession { last_sent: Option<u64> },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("session thread panicked")]
    WorkerPanic,
}

/// How nodes pick their per-trial setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettingMode {
    /// Deterministic cycle derived from the trial index; reproduces a
    /// harness cycle-quadruple run exactly.
    RefereeScheduled = 0,
    /// Each node draws its setting from its private substream; the partner
    /// never sees the choice. This is the mode under which the
    /// no-signaling check is meaningful.
    NodeRandom = 1,
}

/// Everything a node needs to produce its stream: distributed by the
/// referee in the Start message. Both nodes derive identical hidden
/// variables from the seed; setting choices come from per-side substreams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: u64,
    pub seed: u64,
    pub variant: ModelVariant,
    pub setting_mode: SettingMode,
    /// Trials per setting pair; the session runs 4x this many trials.
    pub n_trials: u64,
    pub quad: SettingQuadruple,
}

impl SessionConfig {
    pub fn total_trials(&self) -> u64 {
        4 * self.n_trials
    }

    /// The equivalent single-process harness config.
    pub fn to_experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            variant: self.variant,
            quad: self.quad,
            n_trials: self.n_trials,
            seed: self.seed,
            schedule: match self.setting_mode {
                SettingMode::RefereeScheduled => Schedule::CycleQuadruple,
                SettingMode::NodeRandom => Schedule::RandomQuadruple,
            },
        }
    }

    /// Setting index (0 unprimed, 1 primed) for one side at one trial.
    pub fn setting_index(&self, side: Side, trial: u64) -> u8 {
        match self.setting_mode {
            SettingMode::RefereeScheduled => {
                let pair = PairIndex::ALL[(trial % 4) as usize];
                match side {
                    Side::Alice => pair.alice_primed() as u8,
                    Side::Bob => pair.bob_primed() as u8,
                }
            }
            SettingMode::NodeRandom => {
                let domain = match side {
                    Side::Alice => StreamDomain::AliceSettings,
                    Side::Bob => StreamDomain::BobSettings,
                };
                setting_draw(self.seed, domain, EXPERIMENT_CONTEXT, trial)
            }
        }
    }

    pub fn setting_vector(&self, side: Side, index: u8) -> UnitVector3 {
        match (side, index) {
            (Side::Alice, 0) => self.quad.a,
            (Side::Alice, _) => self.quad.a_prime,
            (Side::Bob, 0) => self.quad.b,
            (Side::Bob, _) => self.quad.b_prime,
        }
    }
}

/// One streamed outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub trial_index: u64,
    pub setting_index: u8,
    pub outcome: Outcome,
}

/// End-of-stream summary returned by a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DoneSummary {
    pub record_count: u64,
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Hello { role: Side, version: u16 },
    Start(SessionConfig),
    Record(Record),
    Done(DoneSummary),
}

fn outcome_code(o: Outcome) -> u8 {
    match o {
        Outcome::NoDetection => 0,
        Outcome::Plus => 1,
        Outcome::Minus => 2,
    }
}

fn outcome_from_code(c: u8) -> Result<Outcome, NetError> {
    match c {
        0 => Ok(Outcome::NoDetection),
        1 => Ok(Outcome::Plus),
        2 => Ok(Outcome::Minus),
        _ => Err(NetError::Decode(format!("bad outcome code {c}"))),
    }
}

fn variant_code(v: ModelVariant) -> u8 {
    match v {
        ModelVariant::NoLoophole => 0,
        ModelVariant::Asymmetric => 1,
        ModelVariant::Symmetric => 2,
        ModelVariant::IndependentDetectors => 3,
        ModelVariant::PlanarSteiner => 4,
    }
}

fn variant_from_code(c: u8) -> Result<ModelVariant, NetError> {
    match c {
        0 => Ok(ModelVariant::NoLoophole),
        1 => Ok(ModelVariant::Asymmetric),
        2 => Ok(ModelVariant::Symmetric),
        3 => Ok(ModelVariant::IndependentDetectors),
        4 => Ok(ModelVariant::PlanarSteiner),
        _ => Err(NetError::Decode(format!("bad variant code {c}"))),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.pos + n > self.buf.len() {
            return Err(NetError::Decode("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), NetError> {
        if self.pos != self.buf.len() {
            return Err(NetError::Decode("trailing bytes".into()));
        }
        Ok(())
    }
}

fn push_vec(out: &mut Vec<u8>, v: &UnitVector3) {
    out.extend_from_slice(&v.x.to_le_bytes());
    out.extend_from_slice(&v.y.to_le_bytes());
    out.extend_from_slice(&v.z.to_le_bytes());
}

fn read_vec(c: &mut Cursor) -> Result<UnitVector3, NetError> {
    let (x, y, z) = (c.f64()?, c.f64()?, c.f64()?);
    UnitVector3::new(x, y, z).map_err(|e| NetError::Decode(e.to_string()))
}

impl WireMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        match self {
            WireMessage::Hello { role, version } => {
                out.push(0);
                out.push(matches!(role, Side::Bob) as u8);
                out.extend_from_slice(&version.to_le_bytes());
            }
            WireMessage::Start(cfg) => {
                out.push(1);
                out.extend_from_slice(&cfg.session_id.to_le_bytes());
                out.extend_from_slice(&cfg.seed.to_le_bytes());
                out.push(variant_code(cfg.variant));
                out.push(cfg.setting_mode as u8);
                out.extend_from_slice(&cfg.n_trials.to_le_bytes());
                push_vec(&mut out, &cfg.quad.a);
                push_vec(&mut out, &cfg.quad.a_prime);
                push_vec(&mut out, &cfg.quad.b);
                push_vec(&mut out, &cfg.quad.b_prime);
            }
            WireMessage::Record(r) => {
                out.push(2);
                out.extend_from_slice(&r.trial_index.to_le_bytes());
                out.push(r.setting_index);
                out.push(outcome_code(r.outcome));
            }
            WireMessage::Done(d) => {
                out.push(3);
                out.extend_from_slice(&d.record_count.to_le_bytes());
                out.extend_from_slice(&d.checksum.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, NetError> {
        let mut c = Cursor::new(payload);
        let tag = c.u8()?;
        let msg = match tag {
            0 => {
                let role = if c.u8()? == 0 { Side::Alice } else { Side::Bob };
                let version = c.u16()?;
                WireMessage::Hello { role, version }
            }
            1 => {
                let session_id = c.u64()?;
                let seed = c.u64()?;
                let variant = variant_from_code(c.u8()?)?;
                let setting_mode = match c.u8()? {
                    0 => SettingMode::RefereeScheduled,
                    1 => SettingMode::NodeRandom,
                    m => return Err(NetError::Decode(format!("bad setting mode {m}"))),
                };
                let n_trials = c.u64()?;
                let quad = SettingQuadruple::new(
                    read_vec(&mut c)?,
                    read_vec(&mut c)?,
                    read_vec(&mut c)?,
                    read_vec(&mut c)?,
                );
                WireMessage::Start(SessionConfig {
                    session_id,
                    seed,
                    variant,
                    setting_mode,
                    n_trials,
                    quad,
                })
            }
            2 => WireMessage::Record(Record {
                trial_index: c.u64()?,
                setting_index: c.u8()?,
                outcome: outcome_from_code(c.u8()?)?,
            }),
            3 => WireMessage::Done(DoneSummary {
                record_count: c.u64()?,
                checksum: c.u64()?,
            }),
            _ => return Err(NetError::Decode(format!("unknown tag {tag}"))),
        };
        c.finish()?;
        Ok(msg)
    }
}

pub fn write_message(w: &mut impl Write, msg: &WireMessage) -> Result<(), NetError> {
    let payload = msg.encode();
    w.write_all(&(payload.len() as u32).to_le_bytes())?;
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_message(r: &mut impl Read) -> Result<WireMessage, NetError> {
    let mut len_buf = [0u8; 4];
    r.read_exact(&mut len_buf)?;
    let len = u32::from_le_bytes(len_buf);
    if len > MAX_FRAME {
        return Err(NetError::Decode(format!("frame too large: {len}")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    WireMessage::decode(&payload)
}

/// FNV-1a over the encoded record payloads, in stream order.
#[derive(Debug, Clone, Copy)]
pub struct StreamChecksum(u64);

impl StreamChecksum {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, record: &Record) {
        let bytes = WireMessage::Record(*record).encode();
        for b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn value(&self) -> u64 {
        self.0
    }
}

impl Default for StreamChecksum {
    fn default() -> Self {
        Self::new()
    }
}

/// Computes one node's record for one trial: a pure function of the
/// seed-derived hidden variables and the node's own setting.
pub fn node_record(cfg: &SessionConfig, side: Side, trial: u64) -> Result<Record, NetError> {
    let setting_index = cfg.setting_index(side, trial);
    let setting = cfg.setting_vector(side, setting_index);
    let draws = trial_draws(cfg.seed, EXPERIMENT_CONTEXT, trial);
    let outcome = side_outcome_from_draws(cfg.variant, side, &setting, &draws)
        .map_err(HarnessError::Model)?;
    Ok(Record {
        trial_index: trial,
        setting_index,
        outcome,
    })
}

/// Runs one node: connect, handshake, receive Start, stream all records,
/// send Done. Opens no connection to the partner node.
pub fn node_run(role: Side, referee_addr: impl ToSocketAddrs) -> Result<DoneSummary, NetError> {
    let stream = TcpStream::connect(referee_addr)?;
    node_run_on(role, stream)
}

pub fn node_run_on(role: Side, mut stream: TcpStream) -> Result<DoneSummary, NetError> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_nodelay(true)?;
    write_message(
        &mut stream,
        &WireMessage::Hello {
            role,
            version: PROTOCOL_VERSION,
        },
    )?;
    let cfg = match read_message(&mut stream)? {
        WireMessage::Start(cfg) => cfg,
        other => return Err(NetError::UnexpectedMessage(format!("{other:?}"))),
    };

    let mut checksum = StreamChecksum::new();
    let mut writer = std::io::BufWriter::new(&stream);
    let mut last_sent: Option<u64> = None;
    for trial in 0..cfg.total_trials() {
        let record = node_record(&cfg, role, trial)?;
        checksum.update(&record);
        if let Err(NetError::Io(e)) = write_message(&mut writer, &WireMessage::Record(record)) {
            let _ = e;
            return Err(NetError::PartialSession { last_sent });
        }
        last_sent = Some(trial);
    }
    let done = DoneSummary {
        record_count: cfg.total_trials(),
        checksum: checksum.value(),
    };
    write_message(&mut writer, &WireMessage::Done(done))?;
    writer.flush().map_err(|_| NetError::PartialSession { last_sent })?;
    Ok(done)
}

/// Collects one node's full stream, enforcing strict trial-index order,
/// schedule consistency, and the stream checksum.
fn collect_stream(
    stream: TcpStream,
    cfg: SessionConfig,
    side: Side,
) -> Result<Vec<Record>, NetError> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    let total = cfg.total_trials();
    let mut records = Vec::with_capacity(total as usize);
    let mut checksum = StreamChecksum::new();
    let mut reader = std::io::BufReader::new(stream);
    loop {
        match read_message(&mut reader)? {
            WireMessage::Record(r) => {
                let expected = records.len() as u64;
                if r.trial_index != expected {
                    return Err(NetError::OutOfOrderRecord {
                        side,
                        expected,
                        got: r.trial_index,
                    });
                }
                if r.setting_index != cfg.setting_index(side, r.trial_index) {
                    return Err(NetError::ScheduleViolation {
                        side,
                        trial: r.trial_index,
                        got: r.setting_index,
                    });
                }
                checksum.update(&r);
                records.push(r);
            }
            WireMessage::Done(done) => {
                if records.len() as u64 != total || done.record_count != total {
                    return Err(NetError::MissingTrials {
                        side,
                        expected: total,
                        got: records.len() as u64,
                    });
                }
                if done.checksum != checksum.value() {
                    return Err(NetError::ChecksumMismatch {
                        side,
                        claimed: done.checksum,
                        computed: checksum.value(),
                    });
                }
                return Ok(records);
            }
            other => return Err(NetError::UnexpectedMessage(format!("{other:?}"))),
        }
    }
}

/// Joins the two record streams on trial index into a counts table.
pub fn merge_records(alice: &[Record], bob: &[Record]) -> CountsTable<u64> {
    let mut table = CountsTable::<u64>::default();
    for (ra, rb) in alice.iter().zip(bob.iter()) {
        let pair = PairIndex::from_sides(ra.setting_index == 1, rb.setting_index == 1);
        table.record(pair, ra.outcome, rb.outcome);
    }
    table
}

/// Serves one session: accepts exactly one Alice and one Bob, distributes
/// the Start message, collects both streams concurrently, and evaluates the
/// report exactly as the in-process harness does.
pub fn referee_serve(
    bind_addr: impl ToSocketAddrs,
    cfg: &SessionConfig,
) -> Result<ExperimentReport, NetError> {
    let listener = TcpListener::bind(bind_addr)?;
    referee_serve_on(listener, cfg)
}

pub fn referee_serve_on(
    listener: TcpListener,
    cfg: &SessionConfig,
) -> Result<ExperimentReport, NetError> {
    let mut alice_stream: Option<TcpStream> = None;
    let mut bob_stream: Option<TcpStream> = None;

    while alice_stream.is_none() || bob_stream.is_none() {
        let (mut stream, _) = listener.accept()?;
        stream.set_read_timeout(Some(IO_TIMEOUT))?;
        stream.set_nodelay(true)?;
        let (role, version) = match read_message(&mut stream)? {
            WireMessage::Hello { role, version } => (role, version),
            other => return Err(NetError::UnexpectedMessage(format!("{other:?}"))),
        };
        if version != PROTOCOL_VERSION {
            return Err(NetError::VersionMismatch {
                got: version,
                want: PROTOCOL_VERSION,
            });
        }
        let slot = match role {
            Side::Alice => &mut alice_stream,
            Side::Bob => &mut bob_stream,
        };
        if slot.is_some() {
            return Err(NetError::DuplicateRole(role));
        }
        *slot = Some(stream);
    }

    let mut alice_stream = alice_stream.expect("filled above");
    let mut bob_stream = bob_stream.expect("filled above");
    write_message(&mut alice_stream, &WireMessage::Start(*cfg))?;
    write_message(&mut bob_stream, &WireMessage::Start(*cfg))?;

    let cfg_a = *cfg;
    let alice_thread =
        std::thread::spawn(move || collect_stream(alice_stream, cfg_a, Side::Alice));
    let cfg_b = *cfg;
    let bob_thread = std::thread::spawn(move || collect_stream(bob_stream, cfg_b, Side::Bob));

    let alice_records = alice_thread.join().map_err(|_| NetError::WorkerPanic)??;
    let bob_records = bob_thread.join().map_err(|_| NetError::WorkerPanic)??;

    let counts = merge_records(&alice_records, &bob_records);
    Ok(ExperimentReport::from_counts(
        cfg.to_experiment_config(),
        counts,
    )?)
}

/// Residuals of the no-signaling check: for each side and own-setting
/// choice, how much the outcome distribution shifts with the partner's
/// setting choice, in units of the pooled binomial sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoSignalingReport {
    pub max_residual: f64,
    pub max_residual_sigmas: f64,
    /// Set when any conditional cell holds fewer than 100 trials.
    pub insufficient_statistics: bool,
}

/// Minimum trials per conditional cell before residuals are trusted.
pub const MIN_CELL_TRIALS: f64 = 100.0;

/// Checks that each side's outcome distribution, conditioned on its own
/// setting, is independent of the partner's setting choice.
pub fn verify_no_signaling(counts: &CountsTable<u64>) -> NoSignalingReport {
    let mut max_residual = 0.0_f64;
    let mut max_sigmas = 0.0_f64;
    let mut insufficient = false;

    // For (side, own setting): the two conditional cells differ only in the
    // partner's setting. Pair layout: index = 2 * alice_primed + bob_primed.
    let cells: [[usize; 2]; 4] = [
        [0, 1], // Alice unprimed: partner b vs b'
        [2, 3], // Alice primed
        [0, 2], // Bob unprimed: partner a vs a'
        [1, 3], // Bob primed
    ];
    for (k, [i0, i1]) in cells.into_iter().enumerate() {
        let alice_side = k < 2;
        let p0 = &counts.pairs[i0];
        let p1 = &counts.pairs[i1];
        let (m0, m1) = if alice_side {
            (p0.alice_marginal(), p1.alice_marginal())
        } else {
            (p0.bob_marginal(), p1.bob_marginal())
        };
        let (n0, n1) = (p0.n_trials as f64, p1.n_trials as f64);
        if n0 < MIN_CELL_TRIALS || n1 < MIN_CELL_TRIALS {
            insufficient = true;
            continue;
        }
        for o in 0..3 {
            let (f0, f1) = (m0[o] / n0, m1[o] / n1);
            let residual = (f0 - f1).abs();
            let pooled = (m0[o] + m1[o]) / (n0 + n1);
            let var = pooled * (1.0 - pooled) * (1.0 / n0 + 1.0 / n1);
            let sigmas = if var > 0.0 {
                residual / var.sqrt()
            } else {
                0.0
            };
            max_residual = max_residual.max(residual);
            max_sigmas = max_sigmas.max(sigmas);
        }
    }

    NoSignalingReport {
        max_residual,
        max_residual_sigmas: max_sigmas,
        insufficient_statistics: insufficient,
    }
}

/// Test fixture: a deliberately nonlocal "Alice" that reports every
/// detected outcome as Plus whenever Bob's setting is primed. This skews
/// her conditional marginal, which a faithful local node can never do.
/// Used to validate that the no-signaling check has the power to detect
/// signaling. (A plain +/- flip would be invisible here: the model's
/// one-sided marginals are symmetric, as no-signaling demands.)
pub fn signaling_fixture_counts(cfg: &SessionConfig) -> Result<CountsTable<u64>, NetError> {
    let mut table = CountsTable::<u64>::default();
    for trial in 0..cfg.total_trials() {
        let ra = node_record(cfg, Side::Alice, trial)?;
        let rb = node_record(cfg, Side::Bob, trial)?;
        let alice = if rb.setting_index == 1 {
            // peeks at the partner's setting
            match ra.outcome {
                Outcome::Plus | Outcome::Minus => Outcome::Plus,
                Outcome::NoDetection => Outcome::NoDetection,
            }
        } else {
            ra.outcome
        };
        let pair = PairIndex::from_sides(ra.setting_index == 1, rb.setting_index == 1);
        table.record(pair, alice, rb.outcome);
    }
    Ok(table)
}
