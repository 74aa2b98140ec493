//! Per-episode metrics and the CSV contract. One row per training episode,
//! in episode order; the column set is fixed so downstream plotting never
//! guesses.

use std::time::Instant;

pub const CSV_HEADER: &str = "episode,return_primary,return_aux,gamma_value,phi_l2norm,wallclock_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub return_primary: f64,
    pub return_aux: f64,
    pub gamma_value: f64,
    pub phi_l2norm: f64,
    pub wallclock_ms: u64,
}

/// Time source for the wallclock column. Runs meant to be byte-identical
/// across repeats inject `fixed`; the CLI uses `wall`.
#[derive(Clone, Debug)]
pub enum Clock {
    Wall(Instant),
    Fixed(u64),
}

impl Clock {
    pub fn wall() -> Self {
        Clock::Wall(Instant::now())
    }

    pub fn fixed(ms: u64) -> Self {
        Clock::Fixed(ms)
    }

    pub fn elapsed_ms(&self) -> u64 {
        match self {
            Clock::Wall(start) => start.elapsed().as_millis() as u64,
            Clock::Fixed(ms) => *ms,
        }
    }
}

/// Renders rows as CSV with the pinned header and column order.
pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(32 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.episode, row.return_primary, row.return_aux, row.gamma_value, row.phi_l2norm, row.wallclock_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(episode: usize) -> MetricsRow {
        MetricsRow {
            episode,
            return_primary: 100.0,
            return_aux: -2.5,
            gamma_value: 0.99,
            phi_l2norm: 1.0,
            wallclock_ms: 12,
        }
    }

    #[test]
    fn header_and_row_count() {
        let csv = to_csv(&[row(0), row(1), row(2)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "0,100,-2.5,0.99,1,12");
    }

    #[test]
    fn empty_run_is_just_the_header() {
        assert_eq!(to_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn fixed_clock_is_constant() {
        let clock = Clock::fixed(0);
        let a = clock.elapsed_ms();
        std::thread::sleep(std::time::Duration::from_millis(2));
        assert_eq!(a, clock.elapsed_ms());
    }

    #[test]
    fn wall_clock_moves_forward() {
        let clock = Clock::wall();
        let a = clock.elapsed_ms();
        std::thread::sleep(std::time::Duration::from_millis(3));
        assert!(clock.elapsed_ms() >= a);
    }
}
