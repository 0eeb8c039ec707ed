//! Drives the engine one step at a time and watches a victim's history being
//! unwound. V writes three locations before it needs `w`, which W holds; W in
//! turn waits for V's first write lock, so V is rolled back completely.

use taserial::config::RunConfig;
use taserial::engine::Engine;
use taserial::trace::ControllerEvent;
use taserial::txctl::VictimPolicy;
use taserial::value::Location;

const PROGRAM: &str = "
machine V shared x/0, y/0, w/0 init x := 10 init y := 20 init w := 30 init v_pc := 0
  terminated: v_pc = 4
  rule: if v_pc = 0 then par { x := 1; v_pc := 1 }
        else if v_pc = 1 then par { y := x + 1; v_pc := 2 }
        else if v_pc = 2 then par { x := y + 1; v_pc := 3 }
        else if v_pc = 3 then par { w := x; v_pc := 4 }
machine W shared x/0, w/0 init w_pc := 0
  terminated: w_pc = 2
  rule: if w_pc = 0 then par { w := 3; w_pc := 1 }
        else if w_pc = 1 then par { x := w; w_pc := 2 }
";

fn main() {
    let mut config = RunConfig::from_source(PROGRAM, 4).unwrap();
    config.policies.victims = VictimPolicy::LowestId;
    let v = config.machine_id("V").unwrap();
    let mut engine = Engine::new(&config, 1).unwrap();
    let show = |e: &Engine| {
        let s = e.state();
        let get = |f: &str| s.get(&Location::nullary(f)).to_string();
        format!("x={} y={} w={}", get("x"), get("y"), get("w"))
    };
    while !engine.finished() {
        let rec = engine.step().unwrap();
        let i = rec.index;
        let events: Vec<&str> = rec.controller_events.iter().map(kind).collect();
        println!(
            "step {i:>2}  V history {}  {}  [{}]",
            engine.tcb(v).history.len(),
            show(&engine),
            events.join(" ")
        );
    }
}

fn kind(e: &ControllerEvent) -> &'static str {
    match e {
        ControllerEvent::LockGrant { .. } => "grant",
        ControllerEvent::LockRefuse { .. } => "refuse",
        ControllerEvent::Commit { .. } => "commit",
        ControllerEvent::Victimize { .. } => "victimize",
        ControllerEvent::Unvictimize { .. } => "unvictimize",
        ControllerEvent::UndoApplied { .. } => "undo",
    }
}
