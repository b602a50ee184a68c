use std::path::Path;
use std::process::{Command, Output};

fn pnc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnc")).args(args).output().expect("pnc runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn digest_of(o: &Output) -> String {
    let err = stderr(o);
    let line = err.lines().find(|l| l.starts_with("digest=")).expect("summary line");
    line.split_whitespace().next().unwrap().to_string()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn partition_write_then_read_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tt.nc");
    let w = pnc(&["bench", "partition", "--shape", "8x8x8", "--type", "double", "--pattern", "ZY", "--n", "4", "--out", path_str(&out)]);
    assert!(w.status.success(), "{}", stderr(&w));
    let csv = stdout(&w);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("pattern,n,bytes,phase,seconds,ops"));
    let write = csv.lines().find(|l| l.contains(",write,")).unwrap();
    assert!(write.starts_with("ZY,4,4096,write,"));

    let r = pnc(&["bench", "partition", "--shape", "8x8x8", "--type", "double", "--pattern", "X", "--n", "2", "--mode", "read", "--out", path_str(&out)]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert!(stderr(&r).contains("mismatches=0"));
}

#[test]
fn partition_digest_independent_of_participants() {
    let dir = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for n in ["1", "3", "8"] {
        let out = dir.path().join(format!("tt{n}.nc"));
        let o = pnc(&["bench", "partition", "--shape", "4x6x8", "--type", "short", "--pattern", "ZYX", "--n", n, "--out", path_str(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        digests.push(digest_of(&o));
    }
    assert!(digests.windows(2).all(|w| w[0] == w[1]), "{digests:?}");
}

#[test]
fn read_mode_detects_wrong_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tt.nc");
    let w = pnc(&["bench", "partition", "--shape", "2x2x2", "--type", "int", "--pattern", "Z", "--n", "1", "--out", path_str(&out)]);
    assert!(w.status.success());
    let mut bytes = std::fs::read(&out).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&out, bytes).unwrap();
    let r = pnc(&["bench", "partition", "--shape", "2x2x2", "--type", "int", "--pattern", "Z", "--n", "2", "--mode", "read", "--out", path_str(&out)]);
    assert!(!r.status.success());
    assert!(stderr(&r).contains("verification failed: 1 elements"), "{}", stderr(&r));
}

#[test]
fn flash_minimal_case_dumps_generator_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("flash.nc");
    let o = pnc(&[
        "bench", "flash", "--nxb", "2", "--nyb", "2", "--nzb", "2", "--nblocks", "1", "--nvar", "1", "--n", "1", "--out",
        path_str(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("data_bytes=64"));
    let d = pnc(&["dump", path_str(&out), "--var", "var00"]);
    assert!(d.status.success());
    assert!(stdout(&d).contains(" var00 =\n  0, 1,\n  2, 3,\n  4, 5,\n  6, 7 ;\n"), "{}", stdout(&d));
}

#[test]
fn dump_header_only_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.nc");
    pnc(&["bench", "partition", "--shape", "1x1x3", "--type", "float", "--pattern", "X", "--n", "1", "--out", path_str(&out)]);
    let d = pnc(&["dump", "--header-only", path_str(&out)]);
    assert_eq!(
        stdout(&d),
        "netcdf h {\ndimensions:\n\tz = 1 ;\n\ty = 1 ;\n\tx = 3 ;\nvariables:\n\tfloat tt(z, y, x) ;\n}\n"
    );

    let bytes = std::fs::read(&out).unwrap();
    let cut = dir.path().join("cut.nc");
    std::fs::write(&cut, &bytes[..30]).unwrap();
    let e = pnc(&["dump", path_str(&cut)]);
    assert!(!e.status.success());
    assert!(stderr(&e).contains("truncated header at byte offset"), "{}", stderr(&e));

    let bad = pnc(&["bench", "partition", "--shape", "8x8", "--pattern", "Z", "--n", "1", "--out", path_str(&cut)]);
    assert!(!bad.status.success());
    let bad = pnc(&["bench", "partition", "--shape", "2x2x2", "--pattern", "Q", "--n", "1", "--out", path_str(&cut)]);
    assert!(!bad.status.success());
}
