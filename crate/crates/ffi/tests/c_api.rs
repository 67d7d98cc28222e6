use std::ffi::{c_char, CString};
use std::ptr;

use neurofuse_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { nf_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn phantom(seed: u64, duration_s: f64) -> *mut NfPhantom {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { nf_phantom_new(seed, duration_s, &mut p) }, NfStatus::Ok);
    assert!(!p.is_null());
    p
}

#[test]
fn phantom_emit_and_shape() {
    let p = phantom(3, 60.0);
    let mut rec = ptr::null_mut();
    unsafe {
        assert_eq!(nf_phantom_emit(p, NfCondition::ScannerOn, &mut rec), NfStatus::Ok);
        let (mut c, mut s, mut r) = (0, 0, 0.0);
        nf_recording_shape(rec, &mut c, &mut s, &mut r);
        assert_eq!((c, s, r), (33, 30_000, 500.0));
        let label = CString::new("Oz").unwrap();
        let mut idx = usize::MAX;
        assert_eq!(nf_recording_channel_index(rec, label.as_ptr(), &mut idx), NfStatus::Ok);
        assert!(idx < c);
        nf_recording_free(rec);
        nf_phantom_free(p);
    }
}

#[test]
fn buffer_too_small_reports_required_length() {
    let p = phantom(4, 60.0);
    unsafe {
        let mut len = 0;
        let st = nf_phantom_r_peaks(p, ptr::null_mut(), 0, &mut len);
        assert_eq!(st, NfStatus::BufferTooSmall);
        assert!(len > 50);
        assert!(last_error().contains("need"));
        let mut buf = vec![0usize; len];
        assert_eq!(nf_phantom_r_peaks(p, buf.as_mut_ptr(), buf.len(), &mut len), NfStatus::Ok);
        assert!(buf.windows(2).all(|w| w[0] < w[1]));
        nf_phantom_free(p);
    }
}

#[test]
fn cleaning_chain_through_the_c_api() {
    let p = phantom(5, 60.0);
    unsafe {
        let mut on = ptr::null_mut();
        assert_eq!(nf_phantom_emit(p, NfCondition::ScannerOn, &mut on), NfStatus::Ok);
        let mut aas = ptr::null_mut();
        assert_eq!(nf_aas_correct(on, NfAlign::Slice, 15, &mut aas), NfStatus::Ok);

        let ecg = CString::new("ECG").unwrap();
        let mut n = 0;
        assert_eq!(nf_detect_r_peaks(aas, ecg.as_ptr(), ptr::null_mut(), 0, &mut n), NfStatus::BufferTooSmall);
        let mut peaks = vec![0usize; n];
        assert_eq!(nf_detect_r_peaks(aas, ecg.as_ptr(), peaks.as_mut_ptr(), n, &mut n), NfStatus::Ok);

        let mut truth_n = 0;
        nf_phantom_r_peaks(p, ptr::null_mut(), 0, &mut truth_n);
        assert!(n.abs_diff(truth_n) <= 2, "{n} vs {truth_n}");

        let mut bcg = ptr::null_mut();
        assert_eq!(nf_bcg_correct(aas, peaks.as_ptr(), n, 0.21, 30, ecg.as_ptr(), &mut bcg), NfStatus::Ok);

        let (mut c, mut s, mut r) = (0, 0, 0.0);
        nf_recording_shape(bcg, &mut c, &mut s, &mut r);
        let mut before = vec![0.0; s];
        let mut after = vec![0.0; s];
        let mut len = 0;
        assert_eq!(nf_recording_channel(on, 0, before.as_mut_ptr(), s, &mut len), NfStatus::Ok);
        assert_eq!(nf_recording_channel(bcg, 0, after.as_mut_ptr(), s, &mut len), NfStatus::Ok);
        let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!(rms(&after) < rms(&before) / 20.0);

        for h in [on, aas, bcg] {
            nf_recording_free(h);
        }
        nf_phantom_free(p);
    }
}

#[test]
fn predictor_and_pearson_map() {
    let p = phantom(6, 120.0);
    unsafe {
        let mut off = ptr::null_mut();
        nf_phantom_emit(p, NfCondition::ScannerOff, &mut off);
        let mut f = ptr::null_mut();
        assert_eq!(nf_phantom_fmri(p, &mut f), NfStatus::Ok);
        let (mut nv, mut nt, mut tr) = (0, 0, 0.0);
        nf_fmri_shape(f, &mut nv, &mut nt, &mut tr);
        assert_eq!((nv, nt, tr), (20 * 24 * 16, 40, 3.0));

        let oz = CString::new("Oz").unwrap();
        let mut pred = vec![0.0; nt];
        let mut len = 0;
        assert_eq!(nf_eeg_predictor(off, oz.as_ptr(), 11.0, 13.0, tr, nt, pred.as_mut_ptr(), nt, &mut len), NfStatus::Ok);
        assert_eq!(len, nt);

        let mut r = 0.0;
        assert_eq!(nf_pearson(pred.as_ptr(), pred.as_ptr(), nt, &mut r), NfStatus::Ok);
        assert!((r - 1.0).abs() < 1e-12);

        let mut map = vec![0.0; nv];
        assert_eq!(nf_pearson_map(f, pred.as_ptr(), nt, map.as_mut_ptr(), nv, &mut len), NfStatus::Ok);
        assert!(map.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-12));

        assert_eq!(nf_pearson_map(f, pred.as_ptr(), nt - 1, map.as_mut_ptr(), nv, &mut len), NfStatus::Data);
        nf_fmri_free(f);
        nf_recording_free(off);
        nf_phantom_free(p);
    }
}

#[test]
fn brainvision_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = phantom(7, 30.0);
    unsafe {
        let mut rec = ptr::null_mut();
        nf_phantom_emit(p, NfCondition::Outside, &mut rec);
        let stem = CString::new(dir.path().join("rt").to_str().unwrap()).unwrap();
        assert_eq!(nf_recording_save(rec, stem.as_ptr(), true), NfStatus::Ok);
        let vhdr = CString::new(dir.path().join("rt.vhdr").to_str().unwrap()).unwrap();
        let mut back = ptr::null_mut();
        assert_eq!(nf_recording_load(vhdr.as_ptr(), &mut back), NfStatus::Ok);
        let (mut c, mut s, mut r) = (0, 0, 0.0);
        nf_recording_shape(back, &mut c, &mut s, &mut r);
        assert_eq!((c, s), (33, 15_000));
        let mut a = vec![0.0; s];
        let mut b = vec![0.0; s];
        let mut len = 0;
        nf_recording_channel(rec, 2, a.as_mut_ptr(), s, &mut len);
        nf_recording_channel(back, 2, b.as_mut_ptr(), s, &mut len);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-4 * x.abs().max(1.0)));
        nf_recording_free(rec);
        nf_recording_free(back);
        nf_phantom_free(p);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let missing = CString::new("/nonexistent/x.vhdr").unwrap();
        let mut rec = ptr::null_mut();
        assert_eq!(nf_recording_load(missing.as_ptr(), &mut rec), NfStatus::Io);
        assert!(rec.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(nf_recording_load(ptr::null(), &mut rec), NfStatus::NullArgument);
        let mut f = ptr::null_mut();
        assert_eq!(nf_fmri_load(missing.as_ptr(), &mut f), NfStatus::Io);

        let bad = CString::new("duration_s = -1.0").unwrap();
        let mut p = ptr::null_mut();
        assert_ne!(nf_phantom_from_toml(bad.as_ptr(), &mut p), NfStatus::Ok);
        let unknown = CString::new("nonsense = 1").unwrap();
        assert_eq!(nf_phantom_from_toml(unknown.as_ptr(), &mut p), NfStatus::Config);

        let p = phantom(8, 30.0);
        let mut off = ptr::null_mut();
        nf_phantom_emit(p, NfCondition::ScannerOff, &mut off);
        let mut out = ptr::null_mut();
        assert_eq!(nf_aas_correct(off, NfAlign::Volume, 15, &mut out), NfStatus::Markers);
        let nope = CString::new("Fp9").unwrap();
        let mut idx = 0;
        assert_eq!(nf_recording_channel_index(off, nope.as_ptr(), &mut idx), NfStatus::Data);

        nf_recording_free(off);
        nf_phantom_free(p);
        nf_recording_free(ptr::null_mut());
        nf_phantom_free(ptr::null_mut());
        nf_fmri_free(ptr::null_mut());
    }
}

#[test]
fn last_error_truncates_and_terminates() {
    unsafe {
        let mut rec = ptr::null_mut();
        nf_recording_load(ptr::null(), &mut rec);
        let mut small = [1 as c_char; 4];
        let full = nf_last_error(small.as_mut_ptr(), small.len());
        assert!(full > 3);
        assert_eq!(small[3], 0);
        assert_eq!(nf_last_error(ptr::null_mut(), 0), full);
    }
}
