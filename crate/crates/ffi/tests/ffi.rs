use std::ffi::CString;
use std::process::Command;
use std::ptr;

use meshsync_ffi::*;

fn timing(n_slot: u8, p: f64) -> MsTiming {
    let mut t = MsTiming { t_proc_us: 0, t_slot_us: 0, t_beacon_us: 0, n_slot: 0, p_grant: 0.0, n_max: 0, h_na: 0 };
    assert_eq!(unsafe { ms_timing_default(n_slot, p, &mut t) }, MsStatus::Ok);
    t
}

fn node(t: &MsTiming, id: u8, reference: bool, slot: u8, seed: u64) -> *mut MsNode {
    let mut n = ptr::null_mut();
    assert_eq!(unsafe { ms_node_new(t, id, reference, slot, seed, &mut n) }, MsStatus::Ok);
    n
}

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    let n = unsafe { ms_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

/// Host event loop for nodes that all hear each other. Frames are handed to
/// the others when the transmitter's airtime ends.
fn drive(nodes: &[*mut MsNode], t: &MsTiming, until: u64) {
    let mut now = 0u64;
    let mut next: Vec<u64> = nodes
        .iter()
        .map(|&n| {
            let mut r = 0;
            unsafe { ms_node_timer(n, &mut r) };
            r
        })
        .collect();
    let mut in_flight: Vec<(u64, usize, Vec<u8>)> = Vec::new();
    while now < until {
        let t_timer = *next.iter().min().unwrap();
        let t_rx = in_flight.iter().map(|f| f.0).min().unwrap_or(u64::MAX);
        now = t_timer.min(t_rx);
        if t_rx <= t_timer {
            let k = in_flight.iter().position(|f| f.0 == t_rx).unwrap();
            let (_, from, frame) = in_flight.remove(k);
            for (j, &n) in nodes.iter().enumerate() {
                if j == from {
                    continue;
                }
                let mut role = MsRole::Processing;
                unsafe { ms_node_role(n, &mut role) };
                if role == MsRole::ResponderBefore || role == MsRole::ResponderAfter {
                    assert_eq!(unsafe { ms_node_receive(n, frame.as_ptr(), frame.len(), now, f64::NAN) }, MsStatus::Ok);
                    let mut r = 0;
                    unsafe { ms_node_timer(n, &mut r) };
                    next[j] = now + r;
                }
            }
            continue;
        }
        let i = next.iter().position(|&x| x == now).unwrap();
        assert_eq!(unsafe { ms_node_timer_expired(nodes[i], now) }, MsStatus::Ok);
        let mut buf = [0u8; 512];
        let mut len = 0;
        while unsafe { ms_node_take_frame(nodes[i], buf.as_mut_ptr(), buf.len(), &mut len) } == MsStatus::Ok {
            in_flight.push((now + t.t_beacon_us, i, buf[..len].to_vec()));
        }
        let mut r = 0;
        unsafe { ms_node_timer(nodes[i], &mut r) };
        next[i] = now + r;
    }
}

#[test]
fn two_nodes_separate_slots_and_route() {
    let t = timing(4, 0.5);
    let a = node(&t, 1, true, 1, 1);
    let b = node(&t, 2, false, 1, 2);
    drive(&[a, b], &t, 5_000_000);
    let (mut sa, mut sb, mut hb) = (0, 0, 0);
    unsafe {
        ms_node_slot(a, &mut sa);
        ms_node_slot(b, &mut sb);
        ms_node_hop(b, &mut hb);
    }
    assert_ne!(sa, sb);
    assert_eq!(hb, 1);

    let payload = b"ping";
    let mut seq = 99;
    assert_eq!(unsafe { ms_node_inject(b, payload.as_ptr(), payload.len(), &mut seq) }, MsStatus::Ok);
    assert_eq!(seq, 0);
    drive(&[a, b], &t, 5_000_000);
    let (mut origin, mut s, mut len) = (0, 0, 0);
    let mut buf = [0u8; 64];
    assert_eq!(
        unsafe { ms_node_take_delivery(a, &mut origin, &mut s, buf.as_mut_ptr(), buf.len(), &mut len) },
        MsStatus::Ok
    );
    assert_eq!((origin, s, &buf[..len]), (2, 0, &payload[..]));
    assert_eq!(
        unsafe { ms_node_take_delivery(a, &mut origin, &mut s, buf.as_mut_ptr(), buf.len(), &mut len) },
        MsStatus::Empty
    );
    unsafe {
        ms_node_free(a);
        ms_node_free(b);
    }
}

#[test]
fn frames_can_be_inspected() {
    let t = timing(4, 1.0);
    let n = node(&t, 7, false, 1, 3);
    let mut now = 0;
    let mut buf = [0u8; 8];
    let mut len = 0;
    // slot 1 with a certain grant: P then straight to I
    while unsafe { ms_node_take_frame(n, buf.as_mut_ptr(), 0, &mut len) } == MsStatus::Empty {
        let mut r = 0;
        unsafe { ms_node_timer(n, &mut r) };
        now += r;
        assert_eq!(unsafe { ms_node_timer_expired(n, now) }, MsStatus::Ok);
    }
    // the short buffer reported the size and kept the frame
    assert_eq!(len, 6);
    assert_eq!(unsafe { ms_node_take_frame(n, buf.as_mut_ptr(), buf.len(), &mut len) }, MsStatus::Ok);
    let mut info = MsFrameInfo::default();
    assert_eq!(unsafe { ms_frame_inspect(buf.as_ptr(), len, &mut info) }, MsStatus::Ok);
    assert_eq!((info.is_data, info.sender, info.sender_slot, info.sender_hop), (false, 7, 1, 30));
    let mut code = -1;
    assert_eq!(unsafe { ms_frame_check(buf.as_ptr(), len, &mut code) }, MsStatus::Ok);
    assert_eq!(code, 0);
    assert_eq!(unsafe { ms_frame_check(buf.as_ptr(), 3, &mut code) }, MsStatus::Ok);
    assert_eq!(code, 1);
    unsafe { ms_node_free(n) };
}

#[test]
fn errors_are_reported() {
    let t = timing(4, 0.5);
    let mut n = ptr::null_mut();
    unsafe {
        assert_eq!(ms_node_new(&t, 0, false, 1, 0, &mut n), MsStatus::InvalidArgument);
        assert!(n.is_null());
        assert_eq!(ms_node_new(&t, 1, false, 9, 0, &mut n), MsStatus::InvalidConfig);
        assert!(last_error().contains("slot 9"), "{}", last_error());
        assert_eq!(ms_node_new(ptr::null(), 1, false, 1, 0, &mut n), MsStatus::NullPointer);
        let mut slot = 0;
        assert_eq!(ms_node_slot(ptr::null(), &mut slot), MsStatus::NullPointer);
        let mut bad = t;
        bad.n_slot = 0;
        assert_eq!(ms_node_new(&bad, 1, false, 1, 0, &mut n), MsStatus::InvalidConfig);

        let r = node(&t, 1, true, 1, 0);
        let mut seq = 0;
        assert_eq!(ms_node_inject(r, b"x".as_ptr(), 1, &mut seq), MsStatus::InvalidArgument);
        let junk = [1u8, 9, 1, 1, 0, 0];
        assert_eq!(ms_node_receive(r, junk.as_ptr(), junk.len(), 0, f64::NAN), MsStatus::Decode);
        assert!(last_error().contains("frame type"), "{}", last_error());
        assert_eq!(ms_node_receive(r, ptr::null(), 4, 0, f64::NAN), MsStatus::NullPointer);
        ms_node_free(r);
        ms_node_free(ptr::null_mut());

        let mut m = MsTiming { ..t };
        assert_eq!(ms_timing_default(0, 0.5, &mut m), MsStatus::InvalidConfig);
    }
}

#[test]
fn preset_runs() {
    let mut s = MsRunSummary::default();
    let name = CString::new("demo-5node").unwrap();
    assert_eq!(unsafe { ms_run_preset(name.as_ptr(), 7, &mut s) }, MsStatus::Ok);
    assert_eq!((s.deliveries, s.nodes_on), (1, 5));
    assert!(s.consensus_time_us >= 0);
    let name = CString::new("nope").unwrap();
    assert_eq!(unsafe { ms_run_preset(name.as_ptr(), 7, &mut s) }, MsStatus::Scenario);
    assert!(last_error().contains("nope"));
}

/// The generated header is valid C, when a compiler is around.
#[test]
fn header_compiles() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/meshsync.h");
    let dir = tempfile_dir();
    let src = dir.join("check.c");
    std::fs::write(&src, format!("#include \"{header}\"\nint main(void) {{ MsTiming t; return ms_timing_default(12, 0.5, &t); }}\n")).unwrap();
    let Ok(out) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output() else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("meshsync-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
