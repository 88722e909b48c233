//! Leave-one-out, time-windowed group statistics on a tiny click log.

use crossfeat::aggregate::{ga, AggSpec, GroupKey, Operator, Targets, Window};
use crossfeat::dataset::{Dataset, Indicator, Schema};

const DAY: i64 = 86_400;

pub fn run_example() -> crossfeat::Result<Vec<f64>> {
    let schema = Schema::new(vec!["user".into(), "item".into()], "click").with_timestamp("ts");
    let users = vec!["u1", "u1", "u1", "u2", "u1"];
    let items = vec!["a", "a", "b", "a", "a"];
    let clicks = vec![1, 0, 1, 1, 1];
    let ts = vec![0, DAY, DAY, 2 * DAY, 3 * DAY];
    let d = Dataset::from_strings(schema, &[users, items], clicks, Some(ts), Vec::new())?;

    // click-through rate of the same (user, item) over the previous three days
    let spec = AggSpec { operator: Operator::Mean, indicator: Indicator::Label, window: Some(Window::new(3 * DAY)) };
    let ctr = ga(&d, Targets::Reference, GroupKey::pair(0, 1)?, &spec)?;
    for (row, v) in ctr.iter().enumerate() {
        println!("row {row}: ctr(user, item, 3d) = {v}");
    }

    let count = AggSpec { operator: Operator::Count, indicator: Indicator::Unit, window: None };
    let seen = ga(&d, Targets::Reference, GroupKey::Single(0), &count)?;
    println!("other rows per user: {seen:?}");
    Ok(ctr)
}

fn main() -> crossfeat::Result<()> {
    run_example().map(|_| ())
}
