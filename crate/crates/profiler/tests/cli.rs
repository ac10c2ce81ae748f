use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Command, Stdio};

use cp_profiler::{Codec, DataFormat, HandlerSpec, Profiler, ProfilerConfig};

#[test]
fn decode_dumps_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = Profiler::new(ProfilerConfig {
        out_dir: dir.path().to_path_buf(),
        block_capacity: 3,
        ..ProfilerConfig::default()
    });
    let ch = p
        .open_channel("c", DataFormat::RawTicks, HandlerSpec::BufferedId(Codec::Zstd))
        .unwrap();
    for i in 0..10 {
        ch.log_ts(i).unwrap();
    }
    ch.close();
    let out = Command::new(env!("CARGO_BIN_EXE_cp-decode"))
        .arg(ch.sink_path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "timestamp,tuple_id");
    assert_eq!(lines.len(), 11);
    assert!(lines[10].ends_with(",9"));
}

#[test]
fn config_server_binary_answers() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("map.txt");
    std::fs::write(&map, "b XOY 2 1024\n").unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_cp-config-server"))
        .args(["--bind", &addr, "--map"])
        .arg(&map)
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let mut s = TcpStream::connect(&addr).unwrap();
    s.write_all(b"GET b\nGET zz\nBAD\n").unwrap();
    let mut r = BufReader::new(s);
    let mut replies = Vec::new();
    for _ in 0..3 {
        let mut l = String::new();
        r.read_line(&mut l).unwrap();
        replies.push(l);
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(replies[0], "XOY 2 1024\n");
    assert_eq!(replies[1], "NULL\n");
    assert!(replies[2].starts_with("ERR"));
}
