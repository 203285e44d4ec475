use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use pwm_core::mdn::{LstmModel, MdnConfig};
use pwm_core::numerics::write_checkpoint;
use pwm_core::vae::{VaeConfig, VaeModel};
use pwm_ffi::*;
use rand::rngs::mock::StepRng;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { pwm_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, pwm_last_error_length().min(511));
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn world_lifecycle() {
    let mut world = ptr::null_mut();
    let st = unsafe { pwm_world_new(ptr::null(), 9, 12, 20, &mut world) };
    assert_eq!(st, PwmStatus::Ok);
    assert_eq!(pwm_last_error_length(), 0);
    let (mut peds, mut cars) = (0usize, 0usize);
    assert_eq!(unsafe { pwm_world_agent_counts(world, &mut peds, &mut cars) }, PwmStatus::Ok);
    assert!(peds > 0 && cars > 0);
    for _ in 0..5 {
        assert_eq!(unsafe { pwm_world_step(world) }, PwmStatus::Ok);
    }
    let mut steps = 0u64;
    assert_eq!(unsafe { pwm_world_step_count(world, &mut steps) }, PwmStatus::Ok);
    assert_eq!(steps, 5);
    let mut state = 99u32;
    assert_eq!(unsafe { pwm_world_ego_state(world, &mut state) }, PwmStatus::Ok);
    assert!(state < 8);
    let mut labels = vec![255u8; 12 * 20];
    assert_eq!(unsafe { pwm_world_render(world, labels.as_mut_ptr(), labels.len()) }, PwmStatus::Ok);
    assert!(labels.iter().all(|&l| l < 8));
    assert_eq!(unsafe { pwm_world_render(world, labels.as_mut_ptr(), 7) }, PwmStatus::InvalidArgument);
    assert!(last_error().contains("label buffer"));
    unsafe { pwm_world_free(world) };
    unsafe { pwm_world_free(ptr::null_mut()) };
}

#[test]
fn error_codes() {
    assert_eq!(unsafe { pwm_world_step(ptr::null_mut()) }, PwmStatus::NullPointer);
    assert!(last_error().contains("world is null"));
    let mut world = ptr::null_mut();
    let bad = CString::new("{\"no_such_key\": 1}").unwrap();
    assert_eq!(unsafe { pwm_world_new(bad.as_ptr(), 1, 4, 4, &mut world) }, PwmStatus::InvalidArgument);
    assert!(world.is_null());
    assert_eq!(unsafe { pwm_world_new(ptr::null(), 1, 0, 4, &mut world) }, PwmStatus::InvalidArgument);
    let missing = CString::new("/nonexistent/vae.wts").unwrap();
    let mut vae = ptr::null_mut();
    assert_eq!(unsafe { pwm_vae_load(missing.as_ptr(), &mut vae) }, PwmStatus::NotFound);
    assert!(last_error().contains("/nonexistent/vae.wts"));
    let v = unsafe { CStr::from_ptr(pwm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn models_encode_decode_and_dream() {
    let dir = tempfile::tempdir().unwrap();
    let vcfg = VaeConfig { height: 8, width: 12, channels: 4, latent: 3, conv_channels: vec![4, 8], ..VaeConfig::default() };
    let vae_model = VaeModel::new(vcfg, &mut StepRng::new(1, 0x9E37_79B9_7F4A_7C15)).unwrap();
    let lstm_model = LstmModel::new(MdnConfig { latent: 3, hidden: 6, components: 2 }, &mut StepRng::new(3, 0x2545_F491_4F6C_DD1D)).unwrap();
    let vp = dir.path().join("vae.wts");
    let lp = dir.path().join("lstm.wts");
    write_checkpoint(&vae_model.to_checkpoint(), &vp).unwrap();
    write_checkpoint(&lstm_model.to_checkpoint(), &lp).unwrap();

    let (mut vae, mut lstm) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { pwm_vae_load(cpath(&vp).as_ptr(), &mut vae) }, PwmStatus::Ok);
    assert_eq!(unsafe { pwm_lstm_load(cpath(&lp).as_ptr(), &mut lstm) }, PwmStatus::Ok);
    let (mut h, mut w, mut c, mut l) = (0, 0, 0, 0);
    assert_eq!(unsafe { pwm_vae_shape(vae, &mut h, &mut w, &mut c, &mut l) }, PwmStatus::Ok);
    assert_eq!((h, w, c, l), (8, 12, 4, 3));

    let labels: Vec<u8> = (0..h * w).map(|i| (i % 4) as u8).collect();
    let (mut mu, mut lv) = (vec![0f32; l], vec![0f32; l]);
    assert_eq!(unsafe { pwm_vae_encode(vae, labels.as_ptr(), labels.len(), mu.as_mut_ptr(), lv.as_mut_ptr(), l) }, PwmStatus::Ok);
    let frame = pwm_core::render::Frame { height: h, width: w, labels: labels.clone() };
    assert_eq!(mu, vae_model.encode(&frame).unwrap().mu);

    let mut probs = vec![0f32; h * w * c];
    assert_eq!(unsafe { pwm_vae_decode(vae, mu.as_ptr(), l, probs.as_mut_ptr(), probs.len()) }, PwmStatus::Ok);
    assert_eq!(probs, vae_model.decode(&mu).unwrap().values);
    assert_eq!(unsafe { pwm_vae_decode(vae, mu.as_ptr(), l, probs.as_mut_ptr(), 3) }, PwmStatus::InvalidArgument);

    let actions = [1.0f32, 0.1, 0.0, 0.0, -0.1, 0.2];
    let mut a = vec![0f32; 10 * l];
    let mut b = vec![0f32; 10 * l];
    assert_eq!(unsafe { pwm_dream(vae, lstm, labels.as_ptr(), labels.len(), actions.as_ptr(), 2, 0.0, 10, 1, a.as_mut_ptr(), a.len()) }, PwmStatus::Ok);
    assert_eq!(unsafe { pwm_dream(vae, lstm, labels.as_ptr(), labels.len(), actions.as_ptr(), 2, 0.0, 10, 2, b.as_mut_ptr(), b.len()) }, PwmStatus::Ok);
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite()));
    assert_eq!(unsafe { pwm_dream(vae, lstm, labels.as_ptr(), labels.len(), actions.as_ptr(), 2, 1.5, 10, 2, b.as_mut_ptr(), b.len()) }, PwmStatus::InvalidArgument);

    unsafe {
        pwm_vae_free(vae);
        pwm_lstm_free(lstm);
    }
}

/// The generated header must parse as C and as C++.
#[test]
fn header_compiles() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = include.join("pwm.h");
    assert!(header.is_file(), "build script did not write {}", header.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"pwm.h\"\nint main(void) {\n  PwmWorld *w = 0;\n  PwmStatus s = pwm_world_new(0, 1, 8, 8, &w);\n  pwm_world_free(w);\n  return s == PWM_STATUS_OK ? 0 : 1;\n}\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = match std::process::Command::new(compiler).args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"]).arg(&include).arg(&src).status() {
            Ok(s) => s,
            Err(e) => {
                println!("skipping {compiler}: {e}");
                continue;
            }
        };
        assert!(status.success(), "{compiler} rejected the header");
    }
}
