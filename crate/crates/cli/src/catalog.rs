use std::fmt::Write as _;

use ppde_core::pathspace::builtin_functionals;

use crate::config::KINDS;

const GENERATORS: &[(&str, &str, &str)] = &[
    ("heat", "{}", "1/2 gamma"),
    (
        "semilinear",
        "{y_coef?: f64, z_abs?: f64, constant?: f64}",
        "1/2 gamma + y_coef y + z_abs |z| + constant; presets: {y_coef: -1, constant: 1} (F = -y + 1), {constant: eps} (F = eps)",
    ),
    ("drift-hjb", "{bound: f64}", "1/2 gamma + L |z|, the generator of the upper expectation"),
];

const OPERATORS: &[(&str, &str, &str)] = &[
    ("heat", "{}", "equal-weight child average"),
    (
        "semilinear",
        "{y_coef?: f64, z_abs?: f64, constant?: f64}",
        "E[phi] + h F(E[phi], E[phi dB] / h)",
    ),
    ("drift-hjb", "{bound: f64}", "one step of the upper expectation; needs L sqrt(h) <= 1"),
];

/// Text listing of functionals, generators, scheme operators and experiment kinds.
pub fn list_catalogs() -> String {
    let mut out = String::new();
    let _ = writeln!(out, "functionals (\"name\" tag):");
    for e in builtin_functionals() {
        let _ = writeln!(out, "  {:<18} {:<44} {}", e.name, e.params, e.description);
    }
    let _ = writeln!(out, "\ngenerators (\"name\" tag):");
    for (n, p, d) in GENERATORS {
        let _ = writeln!(out, "  {n:<18} {p:<44} {d}");
    }
    let _ = writeln!(out, "\nscheme operators (\"name\" tag):");
    for (n, p, d) in OPERATORS {
        let _ = writeln!(out, "  {n:<18} {p:<44} {d}");
    }
    let _ = writeln!(out, "\nexperiment kinds (\"kind\" tag):");
    for (n, d) in KINDS {
        let _ = writeln!(out, "  {n:<20} {d}");
    }
    out
}
