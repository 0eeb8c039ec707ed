//! Parsing and pretty-printing programs, and the errors the parser reports.

use taserial::dsl::{parse_program, parse_programs, print_programs};

fn main() {
    let machines = parse_programs(include_str!("programs/deadlock.ta")).unwrap();
    let printed = print_programs(&machines);
    print!("{printed}");
    assert_eq!(parse_programs(&printed).unwrap(), machines);

    for bad in [
        "machine A rule: if then skip terminated: true",
        "machine A rule: f(1) := 2 terminated: g",
    ] {
        match parse_program(bad) {
            Ok(_) => println!("accepted: {bad}"),
            Err(e) => println!("rejected: {e}"),
        }
    }
}
