use std::ffi::{CStr, CString};
use std::ptr;

use vep_core::codec;
use vep_core::ledger::Localchain;
use vep_core::{InfoFlag, ItsMessage, MsgType, SpId, StationId, VeeExtension};
use vep_ffi::*;

fn last_error() -> String {
    let p = vep_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn dist(text: &str) -> *mut VepDistribution {
    let c = CString::new(text).unwrap();
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { vep_dist_parse(c.as_ptr(), &mut d) }, VepStatus::Ok);
    d
}

const TWO_POINT: &str =
    "[[support]]\nperiod_ms = 100\nprobability = 0.5\n[[support]]\nperiod_ms = 300\nprobability = 0.5\n";

#[test]
fn waiting_time_of_two_point_periods() {
    let d = dist(TWO_POINT);
    let mut mean = 0.0;
    unsafe {
        assert_eq!(vep_dist_mean(d, &mut mean), VepStatus::Ok);
        assert_eq!(mean, 200.0);
        assert_eq!(vep_waiting_mean(d, &mut mean), VepStatus::Ok);
        // E(T^2) / 2E(T) = (0.5*1e4 + 0.5*9e4) / 400
        assert!((mean - 125.0).abs() < 1e-9);
        let mut p = 0.0;
        assert_eq!(vep_waiting_cdf(d, 100.0, &mut p), VepStatus::Ok);
        // half the time is spent in short gaps and a third of each long one
        // lies within 100 ms of its end: 0.25 + 0.75/3
        assert!((p - 0.5).abs() < 1e-9, "{p}");
        vep_dist_free(d);
    }
}

#[test]
fn json_and_points_constructors_agree() {
    let j = dist(r#"{"support":[{"period_ms":100,"probability":0.5},{"period_ms":300,"probability":0.5}]}"#);
    let mut p = ptr::null_mut();
    let t = [100u64, 300];
    let w = [0.5f64, 0.5];
    unsafe {
        assert_eq!(vep_dist_from_points(t.as_ptr(), w.as_ptr(), 2, &mut p), VepStatus::Ok);
        let (mut a, mut b) = (0.0, 0.0);
        vep_queued_delay(j, 2, &mut a);
        vep_queued_delay(p, 2, &mut b);
        assert_eq!(a, b);
        assert!((a - (125.0 + 400.0)).abs() < 1e-9);
        vep_dist_free(j);
        vep_dist_free(p);
    }
}

#[test]
fn consensus_prediction_for_constant_periods() {
    let d = dist("[[support]]\nperiod_ms = 100\nprobability = 1.0\n");
    let mut v = 0.0;
    unsafe {
        assert_eq!(vep_pbft_delay(d, 4, VepViewpoint::Primary, &mut v), VepStatus::Ok);
        assert!((v - 200.0).abs() < 1.0, "{v}");
        assert_eq!(vep_order_stat_mean(d, 3, 3, &mut v), VepStatus::Ok);
        // the largest of three uniform waits on [0, 100]
        assert!((v - 75.0).abs() < 0.5, "{v}");
        assert_eq!(vep_verification_delay(d, 1, &mut v), VepStatus::Ok);
        assert!((v - 50.0).abs() < 0.5, "{v}");
        assert_eq!(vep_pbft_delay(d, 3, VepViewpoint::AllNodes, &mut v), VepStatus::Domain);
        assert!(last_error().contains("n >= 4"));
        vep_dist_free(d);
    }
}

#[test]
fn closed_forms() {
    let (mut per, mut exp) = (0.0, 0.0);
    unsafe {
        assert_eq!(vep_overhead(50.0, 400.0, 1.0, 10.0, &mut per, &mut exp), VepStatus::Ok);
        assert_eq!(per, 12.5);
        assert_eq!(exp, 1.25);
        assert_eq!(
            vep_overhead(50.0, 400.0, 1.0, 10.0, ptr::null_mut(), ptr::null_mut()),
            VepStatus::Ok
        );
        assert_eq!(
            vep_overhead(50.0, 0.0, 1.0, 10.0, &mut per, &mut exp),
            VepStatus::Domain
        );
    }
    assert!((vep_airtime_us(50, 6e6, 0.0) - 66.666).abs() < 0.01);
    assert_eq!(vep_retrans_delay(1000.0, 2, 2200.0), 5400.0);
}

#[test]
fn bad_input_reports_status_and_message() {
    let bad = CString::new("not = [valid").unwrap();
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(vep_dist_parse(bad.as_ptr(), &mut d), VepStatus::Parse);
        assert!(d.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(vep_dist_parse(ptr::null(), &mut d), VepStatus::NullPointer);
        assert!(last_error().contains("text"));
        let mut m = 0.0;
        assert_eq!(vep_dist_mean(ptr::null(), &mut m), VepStatus::NullPointer);
        assert_eq!(
            vep_dist_from_points(ptr::null(), ptr::null(), 0, &mut d),
            VepStatus::InvalidArgument
        );
    }
    // a successful call clears the message
    let d = dist(TWO_POINT);
    assert!(vep_last_error().is_null());
    unsafe { vep_dist_free(d) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(vep_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn frame(sender: u32, seq: u64, ext: Option<VeeExtension>) -> Vec<u8> {
    let mut m = ItsMessage::new(MsgType::Cam, StationId(sender), 1000 + seq, seq, vec![7; 20]);
    m.extension = ext;
    codec::encode(&m).unwrap()
}

#[test]
fn decodes_extended_frame() {
    let chain = Localchain::new(9);
    let ext = VeeExtension::new(42, SpId::MANEUVER).with_ledger(chain.make_container(InfoFlag::Success));
    let bytes = frame(5, 3, Some(ext));
    let mut f = ptr::null_mut();
    let mut info = VepFrameInfo::default();
    unsafe {
        assert_eq!(vep_frame_decode(bytes.as_ptr(), bytes.len(), &mut f), VepStatus::Ok);
        assert_eq!(vep_frame_info(f, &mut info), VepStatus::Ok);
        assert_eq!(info.sender, 5);
        assert_eq!(info.seq, 3);
        assert_eq!(info.frame_len, bytes.len());
        assert!(info.base_len < info.frame_len);
        assert!(info.extension_present && info.extension_valid);
        assert_eq!((info.sp_id, info.event_id), (1, 42));
        assert!(info.has_ledger && !info.has_consensus && !info.has_token);

        let mut js = ptr::null_mut();
        assert_eq!(vep_frame_json(f, &mut js), VepStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(js).to_str().unwrap()).unwrap();
        assert_eq!(v["extension"]["ledger"]["localchain_id"], 9);
        vep_string_free(js);
        vep_frame_free(f);
    }
}

#[test]
fn damaged_extension_keeps_base_message() {
    let ext = VeeExtension::new(1, SpId::VIEW);
    let mut bytes = frame(2, 1, Some(ext));
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    let mut f = ptr::null_mut();
    let mut info = VepFrameInfo::default();
    unsafe {
        assert_eq!(vep_frame_decode(bytes.as_ptr(), bytes.len(), &mut f), VepStatus::Ok);
        vep_frame_info(f, &mut info);
        assert!(info.extension_present);
        assert!(!info.extension_valid);
        assert_eq!(info.sender, 2);
        vep_frame_free(f);
        assert_eq!(vep_frame_decode(bytes.as_ptr(), 3, &mut f), VepStatus::Decode);
    }
}

#[test]
fn forged_blocks_extend_the_chain() {
    let a = frame(1, 1, None);
    let b = frame(2, 1, None);
    let frames = [a.as_ptr(), b.as_ptr()];
    let lens = [a.len(), b.len()];
    let mut c = ptr::null_mut();
    let mut genesis = [0u8; 32];
    let (mut h1, mut h2) = ([0u8; 32], [0u8; 32]);
    let (mut len, mut tips) = (0usize, 0usize);
    unsafe {
        assert_eq!(vep_localchain_new(3, &mut c), VepStatus::Ok);
        vep_localchain_genesis_hash(c, genesis.as_mut_ptr());
        assert_eq!(
            vep_localchain_forge(
                c,
                genesis.as_ptr(),
                frames.as_ptr(),
                lens.as_ptr(),
                2,
                1,
                h1.as_mut_ptr()
            ),
            VepStatus::Ok
        );
        assert_eq!(
            vep_localchain_forge(c, h1.as_ptr(), frames.as_ptr(), lens.as_ptr(), 1, 1, h2.as_mut_ptr()),
            VepStatus::Ok
        );
        assert_ne!(h1, h2);
        vep_localchain_len(c, &mut len);
        vep_localchain_tip_count(c, &mut tips);
        assert_eq!((len, tips), (3, 1));

        // same content on another copy gives the same hash
        let mut other = ptr::null_mut();
        let mut h1b = [0u8; 32];
        vep_localchain_new(3, &mut other);
        vep_localchain_forge(
            other,
            genesis.as_ptr(),
            frames.as_ptr(),
            lens.as_ptr(),
            2,
            1,
            h1b.as_mut_ptr(),
        );
        assert_eq!(h1, h1b);

        assert_eq!(
            vep_localchain_forge(
                c,
                genesis.as_ptr(),
                frames.as_ptr(),
                lens.as_ptr(),
                0,
                1,
                h2.as_mut_ptr()
            ),
            VepStatus::Ledger
        );
        assert_eq!(
            vep_localchain_forge(
                c,
                genesis.as_ptr(),
                frames.as_ptr(),
                lens.as_ptr(),
                1,
                7,
                h2.as_mut_ptr()
            ),
            VepStatus::InvalidArgument
        );
        vep_localchain_free(other);
        vep_localchain_free(c);
    }
}

#[test]
fn runs_a_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/const100.toml");
    let path = dir.path().join("s.toml");
    std::fs::write(
        &path,
        format!(
            "name = \"ffi\"\nduration_s = 20\nseed = 3\n[distributions]\nd = {{ file = {fixtures:?} }}\n\
             [paths]\np = [[0.0, 0.0], [500.0, 0.0]]\n[[group]]\ncount = 4\ndistribution = \"d\"\npath = \"p\"\n\
             [view]\ntrigger_period_ms = 5000\n"
        ),
    )
    .unwrap();
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    let mut js = ptr::null_mut();
    unsafe {
        assert_eq!(
            vep_run_scenario(p.as_ptr(), out.as_ptr(), &mut js),
            VepStatus::Ok,
            "{}",
            last_error()
        );
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(js).to_str().unwrap()).unwrap();
        vep_string_free(js);
        assert_eq!(v["scenario"], "ffi");
        assert!(v["metrics"]["packets"].as_u64().unwrap() > 700);
        assert!(dir.path().join("out/metrics.json").exists());

        let missing = CString::new("/nonexistent/x.toml").unwrap();
        assert_eq!(
            vep_run_scenario(missing.as_ptr(), ptr::null(), ptr::null_mut()),
            VepStatus::Parse
        );
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/vep.h");
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

/// Compiles a small C program against the header and the static library
/// and runs it. Needs a C compiler on PATH.
#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let exe = std::env::current_exe().unwrap();
    // target/<profile>/deps/<test> -> target/<profile>
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libvep_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "125.000");
}
