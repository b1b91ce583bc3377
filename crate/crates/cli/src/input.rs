//! Chain inputs: ChainSpec files and `family <name> <params...>` descriptors.

use std::fs;

use markov_curv::builders::*;
use markov_curv::lattice::{lattice_window, nearest_neighbor_kernel};
use markov_curv::{ChainSpec, Error, MarkovChain};

use crate::commands::Failure;

/// Builder families and their parameters, for usage messages.
pub const FAMILIES: &str = "one_point | two_point A B | complete N | weighted_complete L1 L2 ... | hypercube N | \
cycle N | weighted_4cycle A+ A- B+ B- | birth_death A0,A1,.. B0,B1,.. N | poisson LAMBDA N | \
star OUT1,OUT2,.. IN1,IN2,.. | perturbed_birth_death A.. B.. N X0 Y0 EPS | lattice DIM RADIUS | graph N I-J,I-J,..";

/// Loads a chain from a path or from a descriptor that starts with `family`.
pub fn load(input: &[String]) -> Result<MarkovChain, Failure> {
    match input {
        [head, name, params @ ..] if head == "family" => build(name, params),
        [head] if head == "family" => Err(Failure::usage(format!("missing family name; expected one of: {FAMILIES}"))),
        [path] => load_file(path),
        _ => Err(Failure::usage("input is a ChainSpec path or `family <name> <params...>`")),
    }
}

/// Same as [`load`] for a single whitespace-separated descriptor string.
pub fn load_str(input: &str) -> Result<MarkovChain, Failure> {
    let parts: Vec<String> = input.split_whitespace().map(String::from).collect();
    load(&parts)
}

fn load_file(path: &str) -> Result<MarkovChain, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {path}: {e}")))?;
    let spec = ChainSpec::from_json(&text).map_err(Failure::structural)?;
    MarkovChain::from_spec(&spec).map_err(Failure::structural)
}

/// Builds a family member. Bad parameters are usage errors.
pub fn build(name: &str, params: &[String]) -> Result<MarkovChain, Failure> {
    let p = Params { name, params };
    let chain = match name {
        "one_point" => {
            p.arity(0)?;
            Ok(one_point())
        }
        "two_point" => {
            p.arity(2)?;
            two_point(p.num(0)?, p.num(1)?)
        }
        "complete" => {
            p.arity(1)?;
            complete(p.count(0)?)
        }
        "weighted_complete" => {
            let l: Vec<f64> = (0..params.len()).map(|i| p.num(i)).collect::<Result<_, _>>()?;
            weighted_complete(&l)
        }
        "hypercube" => {
            p.arity(1)?;
            hypercube(p.count(0)?)
        }
        "cycle" => {
            p.arity(1)?;
            cycle(p.count(0)?)
        }
        "weighted_4cycle" => {
            p.arity(4)?;
            weighted_4cycle(p.num(0)?, p.num(1)?, p.num(2)?, p.num(3)?)
        }
        "birth_death" => {
            p.arity(3)?;
            birth_death(&p.list(0)?, &p.list(1)?, p.count(2)?)
        }
        "poisson" => {
            p.arity(2)?;
            poisson(p.num(0)?, p.count(1)?)
        }
        "star" => {
            p.arity(2)?;
            star(&p.list(0)?, &p.list(1)?)
        }
        "perturbed_birth_death" => {
            p.arity(6)?;
            let (x0, y0, eps) = (p.count(3)?, p.count(4)?, p.num(5)?);
            birth_death(&p.list(0)?, &p.list(1)?, p.count(2)?).and_then(|base| perturbed_birth_death(&base, x0, y0, eps))
        }
        "lattice" => {
            p.arity(2)?;
            let dim = p.count(0)?;
            lattice_window(dim, &nearest_neighbor_kernel(dim), p.count(1)? as i64).map(|w| w.chain)
        }
        "graph" => {
            p.arity(2)?;
            unweighted_graph(p.count(0)?, &p.edges(1)?)
        }
        _ => return Err(Failure::usage(format!("unknown family {name:?}; expected one of: {FAMILIES}"))),
    };
    chain.map_err(|e| match e {
        Error::InvalidParameter(_) | Error::DomainError(_) => Failure::usage(format!("family {name}: {e}")),
        e => Failure::structural(e),
    })
}

struct Params<'a> {
    name: &'a str,
    params: &'a [String],
}

impl Params<'_> {
    fn arity(&self, n: usize) -> Result<(), Failure> {
        if self.params.len() == n {
            Ok(())
        } else {
            Err(Failure::usage(format!("family {} takes {n} parameters, got {}", self.name, self.params.len())))
        }
    }

    fn bad(&self, i: usize, what: &str) -> Failure {
        Failure::usage(format!("family {}: parameter {} ({:?}) is not {what}", self.name, i + 1, self.params[i]))
    }

    fn num(&self, i: usize) -> Result<f64, Failure> {
        parse_num(&self.params[i]).ok_or_else(|| self.bad(i, "a number"))
    }

    fn count(&self, i: usize) -> Result<usize, Failure> {
        self.params[i].parse().map_err(|_| self.bad(i, "a nonnegative integer"))
    }

    fn list(&self, i: usize) -> Result<Vec<f64>, Failure> {
        self.params[i].split(',').map(parse_num).collect::<Option<_>>().ok_or_else(|| self.bad(i, "a comma-separated list of numbers"))
    }

    fn edges(&self, i: usize) -> Result<Vec<(usize, usize)>, Failure> {
        self.params[i]
            .split(',')
            .map(|e| {
                let (a, b) = e.split_once('-')?;
                Some((a.parse().ok()?, b.parse().ok()?))
            })
            .collect::<Option<_>>()
            .ok_or_else(|| self.bad(i, "an edge list like 0-1,1-2"))
    }
}

fn parse_num(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}
