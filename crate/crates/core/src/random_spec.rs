//! Random, well-formed operation descriptions for property tests.
//!
//! Dimensions are generated top-down: every free axis gets a fresh size
//! symbol (or the literal `1`), and only the operators force two axes to
//! share a symbol. Two axes therefore carry the same symbol exactly when
//! the postcondition binds them.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::expr::{Dimension, Equation, Expr, Size};
use crate::opspec::{IoRole, Kind, OperandDecl, OperationSpec, Property};

#[derive(Debug, Clone)]
pub struct RandomSpecConfig {
    pub max_depth: usize,
    /// Allows inverses of (possibly negated or transposed) leaves.
    pub allow_inverse: bool,
    /// Chance that a fresh axis is the literal `1`.
    pub unit_probability: f64,
    /// Chance that a square leaf is given a structural property.
    pub structure_probability: f64,
}

impl Default for RandomSpecConfig {
    fn default() -> Self {
        RandomSpecConfig {
            max_depth: 3,
            allow_inverse: false,
            unit_probability: 0.15,
            structure_probability: 0.5,
        }
    }
}

struct Builder<'a, R: Rng> {
    rng: &'a mut R,
    cfg: &'a RandomSpecConfig,
    operands: Vec<OperandDecl>,
    next_size: usize,
}

const INPUT_STRUCTURES: [Option<Property>; 6] = [
    None,
    Some(Property::LowerTriangular),
    Some(Property::UpperTriangular),
    Some(Property::Symmetric),
    Some(Property::Spd),
    Some(Property::Diagonal),
];

impl<R: Rng> Builder<'_, R> {
    fn fresh_size(&mut self) -> Size {
        if self.rng.gen_bool(self.cfg.unit_probability) {
            Size::one()
        } else {
            self.next_size += 1;
            Size::new(format!("n{}", self.next_size))
        }
    }

    fn kind_for(dims: &Dimension) -> Kind {
        match (dims.rows.is_one(), dims.cols.is_one()) {
            (true, true) => Kind::Scalar,
            (false, true) => Kind::Vector,
            _ => Kind::Matrix,
        }
    }

    fn new_operand(&mut self, dims: Dimension, role: IoRole) -> Expr {
        let name = if role == IoRole::Output {
            "X".to_string()
        } else {
            let letters = ["A", "B", "C", "D", "E", "F", "G", "H", "J", "K", "M", "N", "P", "Q", "R", "S"];
            let i = self.operands.iter().filter(|o| o.is_input()).count();
            if i < letters.len() {
                letters[i].to_string()
            } else {
                format!("Z{i}")
            }
        };
        let kind = Self::kind_for(&dims);
        let mut props = Vec::new();
        // A square output is always triangular: otherwise its rows and
        // columns would share a symbol without being bound together.
        let square_output = role == IoRole::Output && dims.is_square();
        if kind == Kind::Matrix
            && dims.is_square()
            && (square_output || self.rng.gen_bool(self.cfg.structure_probability))
        {
            let choice = if role == IoRole::Output {
                *[Some(Property::LowerTriangular), Some(Property::UpperTriangular)]
                    .choose(self.rng)
                    .expect("non-empty")
            } else {
                *INPUT_STRUCTURES.choose(self.rng).expect("non-empty")
            };
            props.extend(choice);
        }
        self.operands
            .push(OperandDecl::new(name.clone(), kind, dims, role, props));
        Expr::operand(name)
    }

    fn leaf(&mut self, dims: &Dimension) -> Expr {
        let reusable: Vec<String> = self
            .operands
            .iter()
            .filter(|o| o.is_input() && &o.dims == dims)
            .map(|o| o.name.clone())
            .collect();
        if !reusable.is_empty() && self.rng.gen_bool(0.3) {
            let n = reusable.choose(self.rng).expect("non-empty").clone();
            return Expr::operand(n);
        }
        self.new_operand(dims.clone(), IoRole::Input)
    }

    /// A leaf, possibly negated or transposed. Sampled leaves are
    /// diagonally dominant, so these stay well conditioned.
    fn invertible(&mut self, dims: &Dimension) -> Expr {
        match self.rng.gen_range(0..3) {
            0 => Expr::Transpose(Box::new(self.leaf(&dims.transposed()))),
            1 => Expr::Minus(Box::new(self.leaf(dims))),
            _ => self.leaf(dims),
        }
    }

    /// A known-only expression of the given dimensions.
    fn known(&mut self, dims: &Dimension, depth: usize) -> Expr {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return self.leaf(dims);
        }
        match self.rng.gen_range(0..5) {
            0 => Expr::Plus(vec![self.known(dims, depth - 1), self.known(dims, depth - 1)]),
            1 => {
                let inner = self.fresh_size();
                let left = Dimension::new(dims.rows.clone(), inner.clone());
                let right = Dimension::new(inner, dims.cols.clone());
                Expr::Times(vec![self.known(&left, depth - 1), self.known(&right, depth - 1)])
            }
            2 => Expr::Transpose(Box::new(self.known(&dims.transposed(), depth - 1))),
            3 if self.cfg.allow_inverse && dims.is_square() => Expr::Inverse(Box::new(self.invertible(dims))),
            _ => Expr::Minus(Box::new(self.known(dims, depth - 1))),
        }
    }
}

/// A valid operation with a single output `X` whose postcondition is
/// dimensionally consistent and mentions every declared operand.
pub fn random_spec<R: Rng>(rng: &mut R, cfg: &RandomSpecConfig) -> OperationSpec {
    loop {
        let spec = attempt(rng, cfg);
        // Cancellation (`A - A`) can drop operands from the postcondition,
        // leaving sizes that nothing binds.
        let used = spec.postcondition.operands();
        if spec.operands.iter().all(|o| used.contains(&o.name)) {
            return spec;
        }
    }
}

fn attempt<R: Rng>(rng: &mut R, cfg: &RandomSpecConfig) -> OperationSpec {
    let mut b = Builder {
        rng,
        cfg,
        operands: Vec::new(),
        next_size: 0,
    };
    let r = b.fresh_size();
    let c = if b.rng.gen_bool(0.4) { r.clone() } else { b.fresh_size() };
    let xdims = Dimension::new(r, c);
    let x = b.new_operand(xdims.clone(), IoRole::Output);
    let depth = cfg.max_depth;
    let (lhs, eq_dims) = match b.rng.gen_range(0..5) {
        0 => (x, xdims.clone()),
        1 => {
            let other = b.known(&xdims, depth);
            (Expr::Plus(vec![x, other]), xdims.clone())
        }
        2 => {
            let rows = b.fresh_size();
            let left = b.known(&Dimension::new(rows.clone(), xdims.rows.clone()), depth);
            (Expr::Times(vec![left, x]), Dimension::new(rows, xdims.cols.clone()))
        }
        3 => {
            let cols = b.fresh_size();
            let right = b.known(&Dimension::new(xdims.cols.clone(), cols.clone()), depth);
            (Expr::Times(vec![x, right]), Dimension::new(xdims.rows.clone(), cols))
        }
        _ => (Expr::Transpose(Box::new(x)), xdims.transposed()),
    };
    let rhs = b.known(&eq_dims, depth);
    let mut operands = b.operands;
    // Declaration order is independent of generation order.
    operands.shuffle(b.rng);
    OperationSpec::new("random", operands, Equation::new(lhs, rhs), "Phi").expect("generated spec is valid")
}

/// Number of distinct partitionable size symbols in the declarations.
pub fn distinct_split_symbols(spec: &OperationSpec) -> usize {
    let mut syms: Vec<&str> = spec
        .operands
        .iter()
        .flat_map(|o| [o.dims.rows.as_str(), o.dims.cols.as_str()])
        .filter(|s| *s != "1")
        .collect();
    syms.sort_unstable();
    syms.dedup();
    syms.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_specs_bind() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let spec = random_spec(&mut rng, &RandomSpecConfig::default());
            assert!(crate::binding::bind_dimensions(&spec).is_ok(), "{spec:?}");
        }
    }
}
