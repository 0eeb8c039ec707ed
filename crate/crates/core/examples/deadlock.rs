//! Opposite lock order: A writes x then y, B writes y then x. The deadlock
//! handler picks a victim, recovery rolls it back far enough for the other
//! machine to finish, and both commit.

use taserial::config::RunConfig;
use taserial::engine::run;
use taserial::trace::ControllerEvent;
use taserial::txctl::WaitMode;

fn main() {
    let config = RunConfig::from_source(include_str!("programs/deadlock.ta"), 4)
        .unwrap()
        .with_wait_mode(WaitMode::Suspend);
    let trace = run(&config, 7).unwrap();
    let name = |m: taserial::machine::MachineId| config.machines[m.0].name.as_str();
    for (step, e) in trace.events() {
        let line = match e {
            ControllerEvent::LockGrant { machine, locks, .. } => format!(
                "grant {} {}",
                name(*machine),
                locks.all().iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
            ),
            ControllerEvent::LockRefuse { machine, reason, .. } => format!("refuse {} ({reason:?})", name(*machine)),
            ControllerEvent::Victimize { machine } => format!("victimize {}", name(*machine)),
            ControllerEvent::Unvictimize { machine } => format!("release victim {}", name(*machine)),
            ControllerEvent::UndoApplied { machine, restored, .. } => {
                format!("undo {}: restore {} locations", name(*machine), restored.len())
            }
            ControllerEvent::Commit { machine, .. } => format!("commit {}", name(*machine)),
        };
        println!("{step:>3}  {line}");
    }
    println!("outcome: {:?}", trace.footer.outcome);
}
