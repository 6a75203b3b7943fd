//! Element symbols, numbers, and atomic masses.

/// Symbols for atomic numbers 1..=118, indexed by Z-1.
pub const SYMBOLS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn",
    "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

/// Standard atomic weights (u) for Z 1..=36; enough for the light elements
/// this crate works with.
const MASSES: [f64; 36] = [
    1.008, 4.0026, 6.94, 9.0122, 10.81, 12.011, 14.007, 15.999, 18.998, 20.180, 22.990, 24.305,
    26.982, 28.085, 30.974, 32.06, 35.45, 39.948, 39.098, 40.078, 44.956, 47.867, 50.942, 51.996,
    54.938, 55.845, 58.933, 58.693, 63.546, 65.38, 69.723, 72.630, 74.922, 78.971, 79.904, 83.798,
];

pub fn symbol(z: u8) -> Option<&'static str> {
    if (1..=118).contains(&z) {
        Some(SYMBOLS[z as usize - 1])
    } else {
        None
    }
}

/// Atomic number from a symbol, case-insensitively.
pub fn atomic_number(symbol: &str) -> Option<u8> {
    let normalized = normalize(symbol);
    SYMBOLS
        .iter()
        .position(|&s| s == normalized)
        .map(|i| (i + 1) as u8)
}

/// Standard atomic weight in unified mass units.
pub fn atomic_mass(z: u8) -> Option<f64> {
    if (1..=36).contains(&z) {
        Some(MASSES[z as usize - 1])
    } else {
        None
    }
}

fn normalize(symbol: &str) -> String {
    let mut out = String::with_capacity(symbol.len());
    for (i, ch) in symbol.chars().enumerate() {
        if i == 0 {
            out.extend(ch.to_uppercase());
        } else {
            out.extend(ch.to_lowercase());
        }
    }
    out
}
