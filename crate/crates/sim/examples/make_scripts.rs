//! Regenerates the master scripts shipped under `scenarios/scripts`.
//!
//! cargo run -p teleop-sim --example make_scripts

use std::f64::consts::PI;
use std::path::Path;

use teleop_sim::protocol::{write_script, Inbound, MasterCmd, ScriptEntry};

fn cmd(time: f64, master: usize, clutch: bool, dt: [f64; 3]) -> ScriptEntry {
    ScriptEntry { time, message: Inbound::MasterCmd(MasterCmd::translate(master, clutch, dt)) }
}

/// Straight master move of `total` spread evenly over `[start, start + duration)`
/// with one command every `period`.
fn ramp(master: usize, start: f64, duration: f64, total: [f64; 3], period: f64) -> Vec<ScriptEntry> {
    let n = (duration / period).round() as usize;
    (0..n).map(|k| cmd(start + k as f64 * period, master, true, total.map(|v| v / n as f64))).collect()
}

fn sorted(mut entries: Vec<ScriptEntry>) -> Vec<ScriptEntry> {
    entries.sort_by(|a, b| a.time.total_cmp(&b.time));
    entries
}

fn save(dir: &Path, name: &str, entries: &[ScriptEntry]) {
    let path = dir.join(name);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
    write_script(&mut f, entries).unwrap();
    println!("{} ({} entries)", path.display(), entries.len());
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/scripts");
    std::fs::create_dir_all(&dir).unwrap();

    // left master pushes sideways across the right shaft; right master holds
    let mut push = vec![cmd(0.0, 0, true, [0.0; 3]), cmd(0.0, 1, true, [0.0; 3])];
    push.extend(ramp(0, 1.0, 2.0, [0.0, 0.12, 0.0], 1e-3));
    save(&dir, "dvrk-push.jsonl", &sorted(push));

    // left master drives its tool tip straight down into the pegboard
    let mut dive = vec![cmd(0.0, 0, true, [0.0; 3])];
    dive.extend(ramp(0, 0.5, 3.0, [0.04, 0.0, -0.3], 1e-3));
    save(&dir, "plane-dive.jsonl", &sorted(dive));

    // both masters trace circles and sweeps well beyond the entry spheres and
    // the safety box, at 100 Hz
    let period = 0.01;
    let mut wander = vec![cmd(0.0, 0, true, [0.0; 3]), cmd(0.0, 1, true, [0.0; 3])];
    let steps = (60.0 / period) as usize;
    for master in 0..2 {
        let phase = master as f64 * PI / 3.0;
        let sign = if master == 0 { 1.0 } else { -1.0 };
        let pos = |t: f64| {
            let w = 2.0 * PI / 12.0;
            [
                0.09 * (w * t + phase).sin() + 0.03 * (3.1 * w * t).sin(),
                0.09 * (w * t + phase).cos() - 0.09 * phase.cos(),
                -sign * 0.12 * (1.0 - (0.5 * w * t).cos()) + 0.05 * (2.3 * w * t).sin(),
            ]
        };
        for k in 1..steps {
            let (t0, t1) = ((k - 1) as f64 * period, k as f64 * period);
            let (a, b) = (pos(t0), pos(t1));
            wander.push(cmd(t1, master, true, [b[0] - a[0], b[1] - a[1], b[2] - a[2]]));
        }
    }
    save(&dir, "infant-wander.jsonl", &sorted(wander));
}
