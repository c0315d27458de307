use std::time::Instant;

use dualseg::toy::{run_toy, ToyConfig};

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "toy-run".into());
    let config = ToyConfig::default();
    let start = Instant::now();
    let out = run_toy(&dir, &config, |s| {
        eprintln!(
            "[{:>6.0}s] {:?} epoch {:>2}: samples {} loss {:.2} (edge {:.2}, mask {:.2})",
            start.elapsed().as_secs_f64(),
            s.phase,
            s.epoch,
            s.samples,
            s.mean_loss,
            s.mean_edge,
            s.mean_mask
        )
    })
    .unwrap();
    for r in &out.report.splits {
        eprintln!(
            "{}: iou {:.4} bp {:.4} matched {} unmatched {} proposals {} | F {:.3} P {:.3} R {:.3} @ {:.2}",
            r.split,
            r.instances.average_best_iou,
            r.instances.boundary_precision,
            r.instances.matched,
            r.instances.unmatched,
            r.instances.proposals,
            r.contours.f_score,
            r.contours.precision,
            r.contours.recall,
            r.contours.threshold
        );
    }
    eprintln!("total {:.0}s", start.elapsed().as_secs_f64());
}
