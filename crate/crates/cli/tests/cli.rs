use std::fs;
use std::io::{BufRead, BufReader};
use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use mvx::eventlog::EventLog;
use mvx::harness::{NetClient, Peer};
use mvx::pages::demo;
use mvx::protocol::Role;
use mvx::simclient::ClientConfig;
use mvx::workload::Step;

fn mvx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvx")).args(args).env_remove("MVX_PORT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn fixture(name: &str) -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)).unwrap()
}

#[test]
fn inject_matches_the_reference_rewrite() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("page.html");
    fs::write(&input, fixture("before.html")).unwrap();
    let out = mvx(&["inject", input.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), fixture("after.html"));
}

#[test]
fn inject_twice_equals_inject_once() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.html"), dir.path().join("b.html"), dir.path().join("c.html"));
    fs::write(&a, fixture("before.html")).unwrap();
    assert!(mvx(&["inject", a.to_str().unwrap(), b.to_str().unwrap()]).status.success());
    let again = mvx(&["inject", b.to_str().unwrap(), c.to_str().unwrap()]);
    assert!(again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("already injected"));
    assert_eq!(fs::read(&b).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn inject_without_onload_adds_a_null_initializer() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("page.html");
    fs::write(&input, "<html><head><title>t</title></head><body class=\"x\"><p>hi</p></body></html>").unwrap();
    let out = stdout(&mvx(&["inject", input.to_str().unwrap()]));
    assert!(out.contains(r#"<body class="x" onload="initSocket(null)">"#), "{out}");
    assert!(out.ends_with("<p>hi</p></body></html>"));
    assert!(out.starts_with("<html><head>\n    <script src=\"mvx/socket.io.js\""));
}

#[test]
fn inject_rejects_pages_without_body() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("page.html");
    fs::write(&input, "<p>fragment</p>").unwrap();
    assert_eq!(mvx(&["inject", input.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn generated_workload_simulates_with_equal_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    assert!(mvx(&["generate", "--seed", "3", "--steps", "400", "-o", w.to_str().unwrap()]).status.success());
    let out = mvx(&["simulate", w.to_str().unwrap(), "--scenario", "update", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let hash = |label: &str| text.lines().find(|l| l.starts_with(label)).unwrap().split_whitespace().last().unwrap().to_owned();
    assert_eq!(hash("leader hash"), hash("follower hash"));
    assert!(text.contains("catch-up"));
}

#[test]
fn record_only_on_empty_workload_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("empty.txt");
    fs::write(&w, "# nothing\n").unwrap();
    let out = mvx(&["simulate", w.to_str().unwrap(), "--scenario", "record-only", "--json"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["eventCount"], 0);
    assert_eq!(report["logBytes"], 0);
}

#[test]
fn mvx_rtt_json_has_a_sample_per_event() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    assert!(mvx(&["generate", "--steps", "150", "-o", w.to_str().unwrap()]).status.success());
    let out = mvx(&["simulate", w.to_str().unwrap(), "--scenario", "mvx-rtt", "--json"]);
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["rttSamples"], report["eventCount"]);
    assert!(report["rttMeanMs"].as_f64().unwrap().is_finite());
}

#[test]
fn usage_errors_exit_with_4() {
    assert_eq!(mvx(&["simulate"]).status.code(), Some(4));
    assert_eq!(mvx(&["simulate", "/no/such/workload"]).status.code(), Some(4));
    assert_eq!(mvx(&["simulate", "-", "--scenario", "sideways"]).status.code(), Some(4));
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("bad.txt");
    fs::write(&w, "event inc click\nfly away\n").unwrap();
    let out = mvx(&["simulate", w.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(mvx(&["--help"]).status.code(), Some(0));
}

#[test]
fn simulate_persists_and_log_commands_read_it() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    let logs = dir.path().join("logs");
    fs::create_dir(&logs).unwrap();
    assert!(mvx(&["generate", "--steps", "100", "-o", w.to_str().unwrap()]).status.success());
    let out = mvx(&["simulate", w.to_str().unwrap(), "--scenario", "record-only", "--log-dir", logs.to_str().unwrap()]);
    assert!(out.status.success());
    let file = fs::read_dir(&logs).unwrap().next().unwrap().unwrap().path();
    let log = EventLog::load(&file).unwrap();

    let dump = mvx(&["log", "dump", file.to_str().unwrap()]);
    assert_eq!(stdout(&dump), fs::read_to_string(&file).unwrap());
    let stats = mvx(&["log", "stats", file.to_str().unwrap(), "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&stats)).unwrap();
    assert_eq!(v["eventCount"], log.len());
    assert_eq!(v["bytes"], log.byte_size());
}

struct Served {
    child: Child,
    addr: SocketAddr,
}

impl Served {
    fn start(extra: &[&str]) -> Served {
        let mut child = Command::new(env!("CARGO_BIN_EXE_mvx"))
            .args(["serve", "--port", "0"])
            .args(extra)
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
        let line = lines.next().unwrap().unwrap();
        let addr = line.split_whitespace().find_map(|w| w.parse().ok()).expect("address in banner");
        std::thread::spawn(move || lines.for_each(drop));
        Served { child, addr }
    }

    fn terminate(mut self) -> std::process::ExitStatus {
        Command::new("kill").args(["-TERM", &self.child.id().to_string()]).status().unwrap();
        self.child.wait().unwrap()
    }
}

fn client(addr: SocketAddr, seed: u64) -> NetClient {
    NetClient::connect(addr, Peer::new(demo::page(), ClientConfig { seed, ..Default::default() }, false)).unwrap()
}

#[test]
fn serve_assigns_roles_in_connect_order_and_persists_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let served = Served::start(&["--log-dir", dir.path().to_str().unwrap()]);
    let wait = Duration::from_secs(10);
    let a = client(served.addr, 1);
    assert!(a.wait_for(wait, |p| p.role() == Some(Role::Leader)));
    let click = Step::Event { element_id: demo::INC.into(), event_type: "click".into(), payload: Default::default() };
    a.step(&click).unwrap();
    let b = client(served.addr, 2);
    assert!(b.wait_for(wait, |p| p.role() == Some(Role::Follower) && p.is_synced()));
    let last = a.with(|p| p.client().unwrap().last_seq()).unwrap();
    assert!(b.wait_for(wait, move |p| p.client().unwrap().last_seq() == last));

    let status = served.terminate();
    assert!(status.success());
    let file = fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    assert_eq!(EventLog::load(&file).unwrap().len(), last);
}

#[test]
fn serve_on_a_taken_port_fails() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = mvx(&["serve", "--port", &port]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot bind"));
}

#[test]
fn mvx_port_overrides_the_flag() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let free = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port().to_string();
    let out = Command::new(env!("CARGO_BIN_EXE_mvx")).args(["serve", "--port", &free]).env("MVX_PORT", &port).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&port));
    let bad = Command::new(env!("CARGO_BIN_EXE_mvx")).args(["serve"]).env("MVX_PORT", "seventy").output().unwrap();
    assert_eq!(bad.status.code(), Some(4));
}

#[test]
fn guide_inject_example_is_real_output() {
    let chapter = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../book/src/inject.md")).unwrap();
    let blocks: Vec<&str> =
        chapter.split("```html\n").skip(1).map(|b| b.split("```").next().unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("page.html");
    fs::write(&input, blocks[0]).unwrap();
    assert_eq!(stdout(&mvx(&["inject", input.to_str().unwrap()])), blocks[1]);
}
