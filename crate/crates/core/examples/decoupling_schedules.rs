//! Control groups and intervention schedules: group-average residuals for
//! designed and out-of-design generators, and the control sequence of each
//! protocol including its closing correction.

use cvdecouple::fock::{self, FockSpace};
use cvdecouple::protocol::{
    group_average_residual, ControlGroup, InterventionSchedule, ProtocolKind,
};

fn main() -> cvdecouple::Result<()> {
    let space = FockSpace::new(40)?;
    for group in [
        ControlGroup::parity(),
        ControlGroup::squeeze_set(),
        ControlGroup::gaussian(),
        ControlGroup::cyclic(3)?,
    ] {
        for (name, g) in group.designed_generators(&space) {
            println!(
                "{:<16} {:<6} {:.1e}",
                group.label.to_string(),
                name,
                group_average_residual(&group, &g)?
            );
        }
    }
    let a4 = fock::annihilation_power(&space, 4);
    println!(
        "cyclic(2) against a^4: {:.3e}",
        group_average_residual(&ControlGroup::cyclic(2)?, &a4)?
    );
    let n = fock::number(&space);
    println!(
        "gaussian group against a†a: {:.3e}",
        group_average_residual(&ControlGroup::gaussian(), &n)?
    );

    for kind in [
        ProtocolKind::Parity,
        ProtocolKind::Squeezing,
        ProtocolKind::Combined,
        ProtocolKind::Cyclic(3),
    ] {
        let s = InterventionSchedule::for_protocol(&kind, 5)?;
        let ops: Vec<String> = s.ops().iter().map(|o| o.to_string()).collect();
        let closing = s
            .closing()
            .map(|c| c.to_string())
            .unwrap_or_else(|| "-".into());
        println!("{kind:<10} {}  closing {closing}", ops.join(" "));
    }
    let mut out = Vec::new();
    InterventionSchedule::squeezing(3)?.write_csv(&mut out)?;
    print!("{}", String::from_utf8_lossy(&out));
    Ok(())
}
