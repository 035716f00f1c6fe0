//! Random safe positive programs and a naive fixpoint evaluator that shares
//! no code with the engine.

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum T {
    Var(u8),
    Const(i64),
}

#[derive(Debug, Clone)]
pub struct Lit {
    pub pred: usize,
    pub args: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Program {
    pub arity: Vec<usize>,
    pub facts: Vec<(usize, Vec<i64>)>,
    pub rules: Vec<(Lit, Vec<Lit>)>,
}

pub type Fact = (usize, Vec<i64>);

const DOMAIN: i64 = 4;
const VARS: u8 = 4;

fn term(rng: &mut StdRng) -> T {
    if rng.gen_bool(0.75) {
        T::Var(rng.gen_range(0..VARS))
    } else {
        T::Const(rng.gen_range(0..DOMAIN))
    }
}

/// At most 4 predicates of arity at most 3, 15 base facts and 6 rules.
pub fn generate(seed: u64) -> Program {
    let mut rng = StdRng::seed_from_u64(seed);
    let npred = rng.gen_range(1..=4);
    let arity: Vec<usize> = (0..npred).map(|_| rng.gen_range(1..=3)).collect();
    let facts = (0..rng.gen_range(0..=15))
        .map(|_| {
            let p = rng.gen_range(0..npred);
            (p, (0..arity[p]).map(|_| rng.gen_range(0..DOMAIN)).collect())
        })
        .collect();
    let rules = (0..rng.gen_range(0..=6))
        .map(|_| {
            let body: Vec<Lit> = (0..rng.gen_range(1..=3))
                .map(|_| {
                    let p = rng.gen_range(0..npred);
                    Lit {
                        pred: p,
                        args: (0..arity[p]).map(|_| term(&mut rng)).collect(),
                    }
                })
                .collect();
            let bound: Vec<u8> = body
                .iter()
                .flat_map(|l| l.args.iter())
                .filter_map(|t| match t {
                    T::Var(v) => Some(*v),
                    T::Const(_) => None,
                })
                .collect();
            let h = rng.gen_range(0..npred);
            let args = (0..arity[h])
                .map(|_| {
                    if !bound.is_empty() && rng.gen_bool(0.8) {
                        T::Var(bound[rng.gen_range(0..bound.len())])
                    } else {
                        T::Const(rng.gen_range(0..DOMAIN))
                    }
                })
                .collect();
            (Lit { pred: h, args }, body)
        })
        .collect();
    Program { arity, facts, rules }
}

fn render_lit(l: &Lit) -> String {
    let args: Vec<String> = l
        .args
        .iter()
        .map(|t| match t {
            T::Var(v) => format!("V{v}"),
            T::Const(c) => c.to_string(),
        })
        .collect();
    format!("p{}({})", l.pred, args.join(", "))
}

/// Rules only; base facts are supplied separately.
pub fn rules_text(p: &Program) -> String {
    p.rules
        .iter()
        .map(|(h, b)| {
            let body: Vec<String> = b.iter().map(render_lit).collect();
            format!("{} :- {}.\n", render_lit(h), body.join(", "))
        })
        .collect()
}

fn unify(lit: &Lit, fact: &[i64], env: &[Option<i64>; VARS as usize]) -> Option<[Option<i64>; VARS as usize]> {
    let mut env = *env;
    for (t, v) in lit.args.iter().zip(fact) {
        match *t {
            T::Const(c) if c == *v => {}
            T::Const(_) => return None,
            T::Var(x) => match env[x as usize] {
                Some(b) if b == *v => {}
                Some(_) => return None,
                None => env[x as usize] = Some(*v),
            },
        }
    }
    Some(env)
}

/// Repeats full rule application over the whole fact set until nothing new
/// appears.
pub fn naive_fixpoint(p: &Program) -> BTreeSet<Fact> {
    let mut facts: BTreeSet<Fact> = p.facts.iter().cloned().collect();
    loop {
        let mut new = Vec::new();
        for (head, body) in &p.rules {
            let mut envs = vec![[None; VARS as usize]];
            for lit in body {
                envs = envs
                    .iter()
                    .flat_map(|env| {
                        facts
                            .iter()
                            .filter(|(q, _)| *q == lit.pred)
                            .filter_map(|(_, args)| unify(lit, args, env))
                            .collect::<Vec<_>>()
                    })
                    .collect();
            }
            for env in envs {
                let args = head
                    .args
                    .iter()
                    .map(|t| match *t {
                        T::Const(c) => c,
                        T::Var(x) => env[x as usize].expect("safe rule"),
                    })
                    .collect();
                new.push((head.pred, args));
            }
        }
        let before = facts.len();
        facts.extend(new);
        if facts.len() == before {
            return facts;
        }
    }
}
