//! The serializability checker on a forged trace. Two increments of `x` are
//! interleaved without locks so one is lost; no serial order reproduces the
//! values the machines read.

use taserial::checker::{brute_force_serializable, check_serializable, lost_update_fixture};
use taserial::value::Location;

fn main() {
    let forged = lost_update_fixture();
    println!("final x = {}", forged.footer.final_state.get(&Location::nullary("x")));
    println!("commit order check: {}", check_serializable(&forged).unwrap().to_json());
    println!("all orders:         {}", brute_force_serializable(&forged).unwrap().to_json());

    // The same two programs under the controller.
    let honest = taserial::engine::run(forged.config(), 0).unwrap();
    println!(
        "controller run, final x = {}",
        honest.footer.final_state.get(&Location::nullary("x"))
    );
    println!("controller run check: {}", check_serializable(&honest).unwrap().to_json());
}
