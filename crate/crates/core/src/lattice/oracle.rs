//! Exhaustive path enumeration. Exponential by construction; only for small
//! lattices where it serves as a reference for the dynamic programs.

use crate::error::{Error, Result};
use crate::lattice::grid::{LabelSequence, MoveKind, Path, TokenSequence, WeightGrid, BLANK};
use crate::logspace::{lse, LogWeight};

pub const DEFAULT_ORACLE_CAP: usize = 12;

pub fn enumerate_paths(frames: usize, tokens: usize) -> Result<Vec<Path>> {
    enumerate_paths_capped(frames, tokens, DEFAULT_ORACLE_CAP)
}

/// All `C(T+U, U)` staircases from `(0,0)` to `(T,U)`.
pub fn enumerate_paths_capped(frames: usize, tokens: usize, cap: usize) -> Result<Vec<Path>> {
    let size = frames + tokens;
    if size > cap {
        return Err(Error::OracleTooLarge { size, cap });
    }
    let mut out = Vec::new();
    let mut pattern = Vec::with_capacity(size);
    fn rec(blanks: usize, tokens: usize, pattern: &mut Vec<bool>, out: &mut Vec<Path>) {
        if blanks == 0 && tokens == 0 {
            out.push(Path::from_pattern(pattern));
            return;
        }
        if blanks > 0 {
            pattern.push(false);
            rec(blanks - 1, tokens, pattern, out);
            pattern.pop();
        }
        if tokens > 0 {
            pattern.push(true);
            rec(blanks, tokens - 1, pattern, out);
            pattern.pop();
        }
    }
    rec(frames, tokens, &mut pattern, &mut out);
    Ok(out)
}

pub fn path_to_labels(p: &Path, z: &TokenSequence) -> Result<LabelSequence> {
    let token_moves = p.token_moves();
    if token_moves != z.len() {
        return Err(Error::LengthMismatch {
            what: "path token moves vs sequence",
            expected: token_moves,
            actual: z.len(),
        });
    }
    Ok(LabelSequence(
        p.moves
            .iter()
            .map(|m| match m.kind {
                MoveKind::Blank => BLANK,
                MoveKind::Token => z[m.u],
            })
            .collect(),
    ))
}

/// Log-sum over every valid path of the summed edge weights.
pub fn brute_force_score(g: &WeightGrid, z: &TokenSequence) -> Result<LogWeight> {
    brute_force_score_capped(g, z, DEFAULT_ORACLE_CAP)
}

pub fn brute_force_score_capped(g: &WeightGrid, z: &TokenSequence, cap: usize) -> Result<LogWeight> {
    g.check_sequence(z)?;
    let per_path: Vec<f64> = enumerate_paths_capped(g.frames(), g.tokens(), cap)?
        .iter()
        .filter(|p| p.allowed_in(g))
        .map(|p| p.log_weight(g, z))
        .collect();
    Ok(LogWeight::new(lse(&per_path)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::forward::forward_score;

    const SYMBOLS: [&str; 4] = ["a", "b", "c", "d"];

    fn add() -> TokenSequence {
        TokenSequence::new(vec![1, 4, 4]).unwrap()
    }

    #[test]
    fn path_counts() {
        assert_eq!(enumerate_paths(0, 0).unwrap().len(), 1);
        assert!(enumerate_paths(0, 0).unwrap()[0].moves.is_empty());
        assert_eq!(enumerate_paths(1, 1).unwrap().len(), 2);
        assert_eq!(enumerate_paths(4, 3).unwrap().len(), 35);
        assert!(matches!(
            enumerate_paths(7, 6),
            Err(Error::OracleTooLarge { size: 13, cap: 12 })
        ));
    }

    #[test]
    fn every_path_is_a_valid_staircase() {
        for p in enumerate_paths(4, 3).unwrap() {
            assert_eq!(p.blanks(), 4);
            assert_eq!(p.token_moves(), 3);
            assert_eq!((p.moves[0].t, p.moves[0].u), (0, 0));
        }
    }

    #[test]
    fn highlighted_alignment_of_add() {
        // _ _ a d _ _ d over T=4, U=3.
        let pattern = [false, false, true, true, false, false, true];
        let target = Path::from_pattern(&pattern);
        let paths = enumerate_paths(4, 3).unwrap();
        assert!(paths.contains(&target));
        let labels = path_to_labels(&target, &add()).unwrap();
        assert_eq!(labels.render(&SYMBOLS), "_ _ a d _ _ d");
        assert_eq!(labels.tokens(), add());
    }

    #[test]
    fn labels_of_small_paths() {
        let all_blank = Path::from_pattern(&[false, false, false]);
        assert_eq!(
            path_to_labels(&all_blank, &TokenSequence::empty()).unwrap().render(&SYMBOLS),
            "_ _ _"
        );
        let token_first = Path::from_pattern(&[true, false]);
        let z = TokenSequence::new(vec![1]).unwrap();
        assert_eq!(path_to_labels(&token_first, &z).unwrap().render(&SYMBOLS), "a _");
        assert!(path_to_labels(&token_first, &TokenSequence::empty()).is_err());
    }

    #[test]
    fn trivial_grids() {
        let g = WeightGrid::zeros(0, 0, 2);
        assert_eq!(brute_force_score(&g, &TokenSequence::empty()).unwrap().value(), 0.0);

        let mut g = WeightGrid::zeros(2, 0, 1);
        g.set(0, 0, BLANK, 0.25);
        g.set(1, 0, BLANK, -1.0);
        let s = brute_force_score(&g, &TokenSequence::empty()).unwrap();
        assert_eq!(s.value(), -0.75);

        let g = WeightGrid::zeros(1, 1, 1);
        let z = TokenSequence::new(vec![1]).unwrap();
        let s = brute_force_score(&g, &z).unwrap();
        assert!((s.value() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((s.value() - forward_score(&g, &z).unwrap().value()).abs() < 1e-15);
    }
}
