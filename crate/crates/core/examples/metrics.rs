//! Character, word and mixed error rates on code-switched strings: CJK
//! characters count as words under WER and MER.
//!
//! ```text
//! cargo run --release --example metrics
//! ```

use codeswitch::metrics::{Metric, Report};

fn main() {
    let pairs = [
        ("ref-0", "我们 go to 学校", "我们 go 学校"),
        ("ref-1", "今天 we have 会议", "今天 we hav 会意"),
        ("ref-2", "hello world", "hello world"),
    ];
    let mut report = Report::new(&Metric::ALL, false);
    for (id, reference, hyp) in pairs {
        report.add(id, reference, hyp, None);
    }
    print!("{}", report.render());
}
