//! Exterior algebra over an adapted chart: wedge product, exterior
//! derivative, interior product and pullback along coordinate maps.
//! Forms are stored on explicit coordinate differentials with strictly
//! increasing index tuples and normalized coefficients.
//!
//! Sign convention fixed globally:
//! d^m x = dx^0 ^ ... ^ dx^{m-1} and
//! d^{m-1}x_nu = i(d/dx^nu) d^m x = (-1)^nu dx^0 ^ ... (omit nu) ... ^ dx^{m-1}.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::charts::{Chart, CoordinateMap};
use crate::expr::{Expr, Symbol};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormError {
    #[error("operands live on different charts ({0} vs {1})")]
    ChartMismatch(&'static str, &'static str),
    #[error("interior product of a degree-0 form")]
    DegreeZeroContraction,
    #[error("index tuple {0:?} is not strictly increasing of length {1}")]
    MalformedTuple(Vec<usize>, usize),
}

/// A differential form of fixed degree with Expr coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffForm {
    chart: Chart,
    degree: usize,
    /// Strictly increasing index tuples into the chart's coordinate
    /// list, mapped to nonzero normalized coefficients.
    terms: BTreeMap<Vec<usize>, Expr>,
}

/// A vector field with one component expression per chart coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldExpr {
    pub chart: Chart,
    pub components: Vec<Expr>,
}

impl VectorFieldExpr {
    pub fn new(chart: Chart, components: Vec<Expr>) -> VectorFieldExpr {
        assert_eq!(components.len(), chart.dim());
        VectorFieldExpr { chart, components }
    }

    /// The coordinate vector field d/d(coord i).
    pub fn coordinate(chart: &Chart, i: usize) -> VectorFieldExpr {
        let mut components = vec![Expr::zero(); chart.dim()];
        components[i] = Expr::one();
        VectorFieldExpr {
            chart: chart.clone(),
            components,
        }
    }
}

impl DiffForm {
    pub fn zero(chart: &Chart, degree: usize) -> DiffForm {
        DiffForm {
            chart: chart.clone(),
            degree,
            terms: BTreeMap::new(),
        }
    }

    pub fn scalar(chart: &Chart, e: &Expr) -> DiffForm {
        let mut f = DiffForm::zero(chart, 0);
        f.insert(vec![], e.normalized());
        f
    }

    /// The coordinate differential d(coord) of one chart symbol.
    pub fn differential(chart: &Chart, s: &Symbol) -> DiffForm {
        let i = chart
            .index_of(s)
            .unwrap_or_else(|| panic!("symbol {s} not on chart"));
        let mut f = DiffForm::zero(chart, 1);
        f.insert(vec![i], Expr::one());
        f
    }

    /// The base volume form d^m x (base coordinates are 0..m).
    pub fn volume(chart: &Chart) -> DiffForm {
        let m = chart.m() as usize;
        let mut f = DiffForm::zero(chart, m);
        f.insert((0..m).collect(), Expr::one());
        f
    }

    /// d^{m-1}x_nu = i(d/dx^nu) d^m x, with the (-1)^nu sign.
    pub fn base_volume_contracted(chart: &Chart, nu: u16) -> DiffForm {
        let m = chart.m() as usize;
        let nu = nu as usize;
        let mut f = DiffForm::zero(chart, m - 1);
        let tuple: Vec<usize> = (0..m).filter(|&i| i != nu).collect();
        let sign = if nu % 2 == 0 { 1 } else { -1 };
        f.insert(tuple, Expr::int(sign));
        f
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<usize>, &Expr)> {
        self.terms.iter()
    }

    fn insert(&mut self, tuple: Vec<usize>, coeff: Expr) {
        debug_assert!(tuple.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(tuple.len(), self.degree);
        if coeff.is_zero_expr() {
            return;
        }
        match self.terms.get_mut(&tuple) {
            Some(c) => {
                let s = c.add(&coeff);
                if s.is_zero_expr() {
                    self.terms.remove(&tuple);
                } else {
                    *c = s;
                }
            }
            None => {
                self.terms.insert(tuple, coeff);
            }
        }
    }

    pub fn coefficient(&self, tuple: &[usize]) -> Result<Expr, FormError> {
        if tuple.len() != self.degree
            || !tuple.windows(2).all(|w| w[0] < w[1])
            || tuple.iter().any(|&i| i >= self.chart.dim())
        {
            return Err(FormError::MalformedTuple(tuple.to_vec(), self.degree));
        }
        Ok(self
            .terms
            .get(tuple)
            .cloned()
            .unwrap_or_else(Expr::zero))
    }

    pub fn add(&self, other: &DiffForm) -> Result<DiffForm, FormError> {
        self.check_chart(other)?;
        assert_eq!(self.degree, other.degree, "degree mismatch in form sum");
        let mut out = self.clone();
        for (t, c) in &other.terms {
            out.insert(t.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &DiffForm) -> Result<DiffForm, FormError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> DiffForm {
        self.scale(&Expr::int(-1))
    }

    pub fn scale(&self, e: &Expr) -> DiffForm {
        let mut out = DiffForm::zero(&self.chart, self.degree);
        for (t, c) in &self.terms {
            out.insert(t.clone(), c.mul(e));
        }
        out
    }

    pub fn wedge(&self, other: &DiffForm) -> Result<DiffForm, FormError> {
        self.check_chart(other)?;
        let mut out = DiffForm::zero(&self.chart, self.degree + other.degree);
        for (ta, ca) in &self.terms {
            'terms: for (tb, cb) in &other.terms {
                // Merge the two increasing tuples, tracking the parity
                // of the permutation that sorts the concatenation.
                let mut merged = Vec::with_capacity(ta.len() + tb.len());
                let mut sign = 1i64;
                let (mut i, mut j) = (0, 0);
                while i < ta.len() || j < tb.len() {
                    if j == tb.len() || (i < ta.len() && ta[i] < tb[j]) {
                        merged.push(ta[i]);
                        i += 1;
                    } else if i == ta.len() || tb[j] < ta[i] {
                        // tb[j] jumps over the remaining ta entries.
                        if (ta.len() - i) % 2 == 1 {
                            sign = -sign;
                        }
                        merged.push(tb[j]);
                        j += 1;
                    } else {
                        continue 'terms; // repeated differential
                    }
                }
                out.insert(merged, ca.mul(cb).mul(&Expr::int(sign)));
            }
        }
        Ok(out)
    }

    pub fn exterior_derivative(&self) -> DiffForm {
        let mut out = DiffForm::zero(&self.chart, self.degree + 1);
        for (t, c) in &self.terms {
            for (i, s) in self.chart.symbols().iter().enumerate() {
                let dc = c.differentiate(s);
                if dc.is_zero_expr() {
                    continue;
                }
                // Insert index i into the tuple, sign (-1)^position.
                match t.binary_search(&i) {
                    Ok(_) => continue,
                    Err(pos) => {
                        let mut tuple = t.clone();
                        tuple.insert(pos, i);
                        let sign = if pos % 2 == 0 { 1 } else { -1 };
                        out.insert(tuple, dc.mul(&Expr::int(sign)));
                    }
                }
            }
        }
        out
    }

    pub fn interior_product(&self, x: &VectorFieldExpr) -> Result<DiffForm, FormError> {
        if x.chart != self.chart {
            return Err(FormError::ChartMismatch(
                x.chart.kind().name(),
                self.chart.kind().name(),
            ));
        }
        if self.degree == 0 {
            return Err(FormError::DegreeZeroContraction);
        }
        let mut out = DiffForm::zero(&self.chart, self.degree - 1);
        for (t, c) in &self.terms {
            for (pos, &i) in t.iter().enumerate() {
                let comp = &x.components[i];
                if comp.is_zero_expr() {
                    continue;
                }
                let mut tuple = t.clone();
                tuple.remove(pos);
                let sign = if pos % 2 == 0 { 1 } else { -1 };
                out.insert(tuple, c.mul(comp).mul(&Expr::int(sign)));
            }
        }
        Ok(out)
    }

    /// Pullback along F: the result lives on F's source chart; `self`
    /// must live on F's target chart.
    pub fn pullback(&self, f: &CoordinateMap) -> Result<DiffForm, FormError> {
        if f.target != self.chart {
            return Err(FormError::ChartMismatch(
                f.target.kind().name(),
                self.chart.kind().name(),
            ));
        }
        let table = f.substitution();
        // Differentials of the images, one 1-form per target coordinate,
        // computed lazily since most tuples touch few coordinates.
        let mut image_d: Vec<Option<DiffForm>> = vec![None; self.chart.dim()];
        let mut out = DiffForm::zero(&f.source, self.degree);
        for (t, c) in &self.terms {
            let mut acc = DiffForm::scalar(&f.source, &c.substitute(&table));
            for &i in t {
                if image_d[i].is_none() {
                    let img = f.image(i);
                    let mut d = DiffForm::zero(&f.source, 1);
                    for (si, s) in f.source.symbols().iter().enumerate() {
                        d.insert(vec![si], img.differentiate(s));
                    }
                    image_d[i] = Some(d);
                }
                acc = acc.wedge(image_d[i].as_ref().unwrap())?;
            }
            out = out.add(&acc)?;
        }
        Ok(out)
    }

    fn check_chart(&self, other: &DiffForm) -> Result<(), FormError> {
        if self.chart != other.chart {
            return Err(FormError::ChartMismatch(
                self.chart.kind().name(),
                other.chart.kind().name(),
            ));
        }
        Ok(())
    }
}
