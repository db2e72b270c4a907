use super::params::{Bindings, ParamSet};
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::par::{self, Execution};

/// Gradient magnitudes below this are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub eps: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradcheckEntry> {
        self.entries.iter().filter(move |e| e.max_rel_error > self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares tape gradients of `f` against central differences, one scalar
/// parameter at a time.
pub fn gradcheck<F>(f: F, params: &ParamSet, eps: f64, tolerance: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var> + Sync + Send,
{
    gradcheck_with(Execution::default(), f, params, eps, tolerance)
}

pub fn gradcheck_with<F>(exec: Execution, f: F, params: &ParamSet, eps: f64, tolerance: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var> + Sync + Send,
{
    let mut tape = Tape::new();
    let bindings = params.bind(&mut tape);
    let loss = f(&mut tape, &bindings)?;
    tape.backward(loss)?;
    let analytic = params.gradients(&tape, &bindings);

    let coords: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.numel()).map(move |i| (name.to_string(), i)))
        .collect();

    let evaluate = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let out = f(&mut tape, &b)?;
        Ok(tape.value(out).item())
    };

    let numeric = par::map(exec, &coords, |(name, i)| -> Result<f64> {
        let mut p = params.clone();
        let base = p.get(name).expect("coordinate from params").data()[*i];
        p.get_mut(name).unwrap().data_mut()[*i] = base + eps;
        let plus = evaluate(&p)?;
        p.get_mut(name).unwrap().data_mut()[*i] = base - eps;
        let minus = evaluate(&p)?;
        Ok((plus - minus) / (2.0 * eps))
    });

    let mut entries: Vec<GradcheckEntry> = Vec::new();
    for ((name, i), num) in coords.iter().zip(numeric) {
        let num = num?;
        let ana = analytic.get(name).expect("same names").data()[*i];
        let err = relative_error(ana, num);
        match entries.last_mut() {
            Some(e) if &e.name == name => {
                if err > e.max_rel_error {
                    e.max_rel_error = err;
                    e.worst_index = *i;
                    e.analytic = ana;
                    e.numeric = num;
                }
            }
            _ => entries.push(GradcheckEntry {
                name: name.clone(),
                max_rel_error: err,
                worst_index: *i,
                analytic: ana,
                numeric: num,
            }),
        }
    }

    Ok(GradcheckReport {
        entries,
        eps,
        tolerance,
    })
}
