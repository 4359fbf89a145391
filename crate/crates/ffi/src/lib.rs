//! C ABI over the meshsync node state machine, frame codec and simulator.
//!
//! Every function returns an [`MsStatus`]. Handles are opaque and must be
//! released with their `_free` function. After a failure,
//! [`ms_last_error`] describes it for the calling thread.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::{ptr, slice};

use meshsync::commands::simulate;
use meshsync::frame::{decode, encode, Frame};
use meshsync::protocol::{Action, NodeId, NodeMachine, Role, TimingConfig};
use meshsync::scenario::preset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    BufferTooSmall = 4,
    Decode = 5,
    Empty = 6,
    Scenario = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsRole {
    Processing = 0,
    ResponderBefore = 1,
    Initiator = 2,
    ResponderAfter = 3,
}

impl From<Role> for MsRole {
    fn from(r: Role) -> Self {
        match r {
            Role::P => MsRole::Processing,
            Role::R1 => MsRole::ResponderBefore,
            Role::I => MsRole::Initiator,
            Role::R2 => MsRole::ResponderAfter,
        }
    }
}

/// Protocol timing. Durations in microseconds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsTiming {
    pub t_proc_us: u64,
    pub t_slot_us: u64,
    pub t_beacon_us: u64,
    pub n_slot: u8,
    pub p_grant: f64,
    pub n_max: u32,
    pub h_na: u8,
}

impl From<&TimingConfig> for MsTiming {
    fn from(c: &TimingConfig) -> Self {
        Self {
            t_proc_us: c.t_proc,
            t_slot_us: c.t_slot,
            t_beacon_us: c.t_beacon,
            n_slot: c.n_slot,
            p_grant: c.p_grant,
            n_max: c.n_max,
            h_na: c.h_na,
        }
    }
}

impl From<&MsTiming> for TimingConfig {
    fn from(t: &MsTiming) -> Self {
        TimingConfig {
            t_proc: t.t_proc_us,
            t_slot: t.t_slot_us,
            n_slot: t.n_slot,
            t_beacon: t.t_beacon_us,
            p_grant: t.p_grant,
            n_max: t.n_max,
            h_na: t.h_na,
        }
    }
}

/// Header fields of an encoded frame.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MsFrameInfo {
    pub is_data: bool,
    pub sender: u8,
    pub sender_slot: u8,
    pub sender_hop: u8,
    pub neighbor_count: u32,
    /// Data frames only; 0 otherwise.
    pub origin: u8,
    pub sequence: u16,
    /// 0 for broadcast or beacon.
    pub next_hop: u8,
    pub payload_len: u32,
}

/// Outcome of one simulated realization. Times in microseconds; a negative
/// consensus time means the run never settled.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MsRunSummary {
    pub consensus_time_us: i64,
    pub final_victims: u32,
    pub max_victims_last_40s: u32,
    pub nodes_on: u32,
    pub hop_accuracy: f64,
    pub slot_conflicts: u32,
    pub transmissions: u64,
    pub receptions: u64,
    pub deliveries: u32,
}

/// Opaque node handle.
pub struct MsNode {
    machine: NodeMachine,
    rng: ChaCha8Rng,
    outbox: VecDeque<Vec<u8>>,
    deliveries: VecDeque<(u8, u16, Vec<u8>)>,
}

impl MsNode {
    fn absorb(&mut self, actions: Vec<Action>) -> Result<(), MsStatus> {
        for a in actions {
            match a {
                Action::StartTransmit { frame, .. } => {
                    let bytes = encode(&frame).map_err(|e| fail(MsStatus::Decode, e))?;
                    self.outbox.push_back(bytes);
                }
                Action::Deliver { origin, sequence, payload } => self.deliveries.push_back((origin.get(), sequence, payload)),
                Action::EnterRole(_) | Action::SetTimer(_) => {}
            }
        }
        Ok(())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: MsStatus, message: impl std::fmt::Display) -> MsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = message.to_string());
    status
}

fn guard(f: impl FnOnce() -> Result<(), MsStatus>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(MsStatus::Panic, "internal panic"),
    }
}

unsafe fn node_mut<'a>(node: *mut MsNode) -> Result<&'a mut MsNode, MsStatus> {
    node.as_mut().ok_or_else(|| fail(MsStatus::NullPointer, "null node handle"))
}

unsafe fn node_ref<'a>(node: *const MsNode) -> Result<&'a MsNode, MsStatus> {
    node.as_ref().ok_or_else(|| fail(MsStatus::NullPointer, "null node handle"))
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], MsStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(fail(MsStatus::NullPointer, "null buffer"));
    }
    Ok(slice::from_raw_parts(data, len))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, MsStatus> {
    p.as_mut().ok_or_else(|| fail(MsStatus::NullPointer, "null output pointer"))
}

/// Copies `src` into a caller buffer; `*written` always receives the full size.
unsafe fn copy_out(src: &[u8], buf: *mut u8, cap: usize, written: *mut usize) -> Result<(), MsStatus> {
    *out(written)? = src.len();
    if src.len() > cap {
        return Err(fail(MsStatus::BufferTooSmall, format!("need {} bytes, have {cap}", src.len())));
    }
    if !src.is_empty() {
        if buf.is_null() {
            return Err(fail(MsStatus::NullPointer, "null buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    }
    Ok(())
}

/// Copies the last error message of this thread, NUL-terminated and
/// truncated to `cap`. Returns the untruncated length.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn ms_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if cap > 0 && !buf.is_null() {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Published timing with the given slot count and grant probability.
///
/// # Safety
/// `timing` must point to writable memory for one `MsTiming`.
#[no_mangle]
pub unsafe extern "C" fn ms_timing_default(n_slot: u8, p_grant: f64, timing: *mut MsTiming) -> MsStatus {
    guard(|| {
        let cfg = TimingConfig::standard(n_slot, p_grant);
        cfg.validate().map_err(|e| fail(MsStatus::InvalidConfig, e))?;
        *out(timing)? = MsTiming::from(&cfg);
        Ok(())
    })
}

/// Creates a node in the processing state. Randomness comes from `seed`.
///
/// # Safety
/// `timing` must be readable; `node` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_node_new(
    timing: *const MsTiming,
    id: u8,
    is_reference: bool,
    initial_slot: u8,
    seed: u64,
    node: *mut *mut MsNode,
) -> MsStatus {
    guard(|| {
        let dest = out(node)?;
        *dest = ptr::null_mut();
        let timing = timing.as_ref().ok_or_else(|| fail(MsStatus::NullPointer, "null timing"))?;
        let id = NodeId::new(id).ok_or_else(|| fail(MsStatus::InvalidArgument, "node id must be >= 1"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let machine = NodeMachine::new(TimingConfig::from(timing), id, is_reference, initial_slot, &mut rng)
            .map_err(|e| fail(MsStatus::InvalidConfig, e))?;
        let handle = MsNode { machine, rng, outbox: VecDeque::new(), deliveries: VecDeque::new() };
        *dest = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Releases a node. Null is ignored.
///
/// # Safety
/// `node` must come from `ms_node_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_node_free(node: *mut MsNode) {
    if !node.is_null() {
        drop(Box::from_raw(node));
    }
}

/// # Safety
/// `node` must be a live handle; `role` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_node_role(node: *const MsNode, role: *mut MsRole) -> MsStatus {
    guard(|| {
        *out(role)? = node_ref(node)?.machine.role().into();
        Ok(())
    })
}

/// # Safety
/// `node` must be a live handle; `slot` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_node_slot(node: *const MsNode, slot: *mut u8) -> MsStatus {
    guard(|| {
        *out(slot)? = node_ref(node)?.machine.slot();
        Ok(())
    })
}

/// # Safety
/// `node` must be a live handle; `hop` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_node_hop(node: *const MsNode, hop: *mut u8) -> MsStatus {
    guard(|| {
        *out(hop)? = node_ref(node)?.machine.hop();
        Ok(())
    })
}

/// Microseconds until the node's timer fires.
///
/// # Safety
/// `node` must be a live handle; `remaining_us` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_node_timer(node: *const MsNode, remaining_us: *mut u64) -> MsStatus {
    guard(|| {
        *out(remaining_us)? = node_ref(node)?.machine.timer_remaining();
        Ok(())
    })
}

/// Fires the timer at absolute time `now_us`. If the node starts
/// transmitting, the frame is queued for [`ms_node_take_frame`].
///
/// # Safety
/// `node` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_node_timer_expired(node: *mut MsNode, now_us: u64) -> MsStatus {
    guard(|| {
        let n = node_mut(node)?;
        let actions = n.machine.on_timer_expired(now_us, &mut n.rng);
        n.absorb(actions)
    })
}

/// Hands a received frame to the node. `rssi_dbm` is ignored when NaN.
///
/// # Safety
/// `node` must be a live handle and `data` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ms_node_receive(
    node: *mut MsNode,
    data: *const u8,
    len: usize,
    now_us: u64,
    rssi_dbm: f64,
) -> MsStatus {
    guard(|| {
        let n = node_mut(node)?;
        let frame = decode(bytes(data, len)?).map_err(|e| fail(MsStatus::Decode, e))?;
        let rssi = (!rssi_dbm.is_nan()).then_some(rssi_dbm);
        let actions = n.machine.on_frame_received(&frame, now_us, rssi, &mut n.rng);
        n.absorb(actions)
    })
}

/// Pops the oldest frame the node wants on air. Returns `Empty` when none is
/// queued and `BufferTooSmall` (frame kept) when `cap` is short; `written`
/// receives the frame size in both the success and short-buffer cases.
///
/// # Safety
/// `node` must be a live handle, `buf` valid for `cap` bytes, `written` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_node_take_frame(node: *mut MsNode, buf: *mut u8, cap: usize, written: *mut usize) -> MsStatus {
    guard(|| {
        let n = node_mut(node)?;
        let front = n.outbox.front().ok_or(MsStatus::Empty)?;
        copy_out(front, buf, cap, written)?;
        n.outbox.pop_front();
        Ok(())
    })
}

/// Queues an application payload originated at this node.
///
/// # Safety
/// `node` must be a live handle, `payload` valid for `len` bytes, `sequence` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_node_inject(
    node: *mut MsNode,
    payload: *const u8,
    len: usize,
    sequence: *mut u16,
) -> MsStatus {
    guard(|| {
        let n = node_mut(node)?;
        let seq = n.machine.inject(bytes(payload, len)?.to_vec()).map_err(|e| fail(MsStatus::InvalidArgument, e))?;
        *out(sequence)? = seq;
        Ok(())
    })
}

/// Pops the oldest message delivered to this (reference) node.
///
/// # Safety
/// `node` must be a live handle; every pointer must be writable, `buf` for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn ms_node_take_delivery(
    node: *mut MsNode,
    origin: *mut u8,
    sequence: *mut u16,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> MsStatus {
    guard(|| {
        let n = node_mut(node)?;
        let (o, s, payload) = n.deliveries.front().ok_or(MsStatus::Empty)?;
        copy_out(payload, buf, cap, written)?;
        *out(origin)? = *o;
        *out(sequence)? = *s;
        n.deliveries.pop_front();
        Ok(())
    })
}

/// Decodes a frame and reports its header.
///
/// # Safety
/// `data` must be valid for `len` bytes; `info` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_frame_inspect(data: *const u8, len: usize, info: *mut MsFrameInfo) -> MsStatus {
    guard(|| {
        let dest = out(info)?;
        let frame = decode(bytes(data, len)?).map_err(|e| fail(MsStatus::Decode, e))?;
        let b = frame.beacon();
        let mut i = MsFrameInfo {
            sender: b.sender.get(),
            sender_slot: b.sender_slot,
            sender_hop: b.sender_hop,
            neighbor_count: b.neighbors.len() as u32,
            ..MsFrameInfo::default()
        };
        if let Frame::Data(d) = &frame {
            i.is_data = true;
            i.origin = d.origin.get();
            i.sequence = d.sequence;
            i.next_hop = d.next_hop.map_or(0, NodeId::get);
            i.payload_len = d.payload.len() as u32;
        }
        *dest = i;
        Ok(())
    })
}

/// Codec error number of a buffer: 0 when it decodes, otherwise the codec's
/// error code (1 truncated, 2 version, 3 frame type, 4 length, 5 field).
///
/// # Safety
/// `data` must be valid for `len` bytes; `code` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_frame_check(data: *const u8, len: usize, code: *mut i32) -> MsStatus {
    guard(|| {
        *out(code)? = decode(bytes(data, len)?).map_or_else(|e| e.code(), |_| 0);
        Ok(())
    })
}

/// Runs one realization of a built-in preset.
///
/// # Safety
/// `name` must be a NUL-terminated string; `summary` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_run_preset(name: *const c_char, seed: u64, summary: *mut MsRunSummary) -> MsStatus {
    guard(|| {
        let dest = out(summary)?;
        if name.is_null() {
            return Err(fail(MsStatus::NullPointer, "null preset name"));
        }
        let name = CStr::from_ptr(name).to_str().map_err(|_| fail(MsStatus::InvalidArgument, "name is not UTF-8"))?;
        let scenario = preset(name).map_err(|e| fail(MsStatus::Scenario, e))?;
        let r = simulate(&scenario, seed).map_err(|e| fail(MsStatus::Scenario, e))?;
        let s = &r.summary;
        *dest = MsRunSummary {
            consensus_time_us: s.consensus_time_s.map_or(-1, |t| (t * 1e6).round() as i64),
            final_victims: s.final_victims,
            max_victims_last_40s: s.max_victims_last_40s,
            nodes_on: s.nodes_on as u32,
            hop_accuracy: s.hop_accuracy,
            slot_conflicts: s.slot_conflicts as u32,
            transmissions: s.transmissions,
            receptions: s.receptions,
            deliveries: s.deliveries as u32,
        };
        Ok(())
    })
}
