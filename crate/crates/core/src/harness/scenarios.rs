use super::{Rule, SimConfig, DEFAULT_KEEP_PROB};
use crate::model::TeacherKind;

/// Steps of the reference experiments (t = 100 000 at N = 1000).
pub const REFERENCE_STEPS: u64 = 100_000_000;

/// A named reference configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: &'static str,
    pub config: SimConfig,
}

fn make(name: &'static str, k: usize, kind: TeacherKind, rule: Rule) -> Scenario {
    let mut config = SimConfig::new(2, k, REFERENCE_STEPS, 1, rule);
    config.teacher_kind = kind;
    Scenario { name, config }
}

/// The eight reference settings: M = 2 teacher, K in {2, 4}, orthogonal or
/// singular teacher, SGD or dropout with p = 0.5; N = 1000, eta = 0.005.
pub fn scenario_grid() -> Vec<Scenario> {
    let drop = Rule::dropout(DEFAULT_KEEP_PROB);
    vec![
        make("learnable_sgd", 2, TeacherKind::Orthogonal, Rule::Sgd),
        make("learnable_dropout", 2, TeacherKind::Orthogonal, drop),
        make("redundant_sgd", 4, TeacherKind::Orthogonal, Rule::Sgd),
        make("redundant_dropout", 4, TeacherKind::Orthogonal, drop),
        make("singular_learnable_sgd", 2, TeacherKind::Singular, Rule::Sgd),
        make("singular_learnable_dropout", 2, TeacherKind::Singular, drop),
        make("singular_redundant_sgd", 4, TeacherKind::Singular, Rule::Sgd),
        make("singular_redundant_dropout", 4, TeacherKind::Singular, drop),
    ]
}

pub fn scenario(name: &str) -> Option<Scenario> {
    scenario_grid().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Backend;

    #[test]
    fn grid_covers_reference_settings() {
        let grid = scenario_grid();
        assert_eq!(grid.len(), 8);
        for s in &grid {
            let c = &s.config;
            c.validate().unwrap();
            assert_eq!((c.n, c.m, c.eta), (1000, 2, 0.005));
            assert_eq!(c.backend, Backend::Direct);
            assert_eq!(c.steps, REFERENCE_STEPS);
        }
        for k in [2, 4] {
            for kind in [TeacherKind::Orthogonal, TeacherKind::Singular] {
                for rule in [Rule::Sgd, Rule::dropout(0.5)] {
                    let hits = grid
                        .iter()
                        .filter(|s| s.config.k == k && s.config.teacher_kind == kind && s.config.rule == rule)
                        .count();
                    assert_eq!(hits, 1);
                }
            }
        }
        assert_eq!(scenario("redundant_dropout").unwrap().config.k, 4);
        assert!(scenario("nope").is_none());
    }
}
