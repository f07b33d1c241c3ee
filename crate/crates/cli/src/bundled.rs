//! Figure recipes shipped with the binary.

pub const RECIPES: &[(&str, &str)] = &[
    ("fig1", include_str!("../recipes/fig1.toml")),
    ("fig2", include_str!("../recipes/fig2.toml")),
    ("fig3", include_str!("../recipes/fig3.toml")),
    ("fig4", include_str!("../recipes/fig4.toml")),
    ("fig5", include_str!("../recipes/fig5.toml")),
    ("fig6", include_str!("../recipes/fig6.toml")),
    ("fig7", include_str!("../recipes/fig7.toml")),
    ("fig8", include_str!("../recipes/fig8.toml")),
    ("fig9", include_str!("../recipes/fig9.toml")),
    ("fig10", include_str!("../recipes/fig10.toml")),
    ("fig11", include_str!("../recipes/fig11.toml")),
];

pub fn lookup(name: &str) -> Option<&'static str> {
    RECIPES.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> Vec<&'static str> {
    RECIPES.iter().map(|(n, _)| *n).collect()
}
