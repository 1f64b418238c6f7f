//! Conditional independence backends and separating-set search.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::agg::{AggError, AggSet, DirectedView};
use crate::model::{RelationalModel, RelationalVariable};
use crate::schema::{ItemId, Schema};
use crate::skeleton::{Skeleton, SkeletonError};

#[derive(Debug, Error)]
pub enum CiError {
    #[error(transparent)]
    Agg(#[from] AggError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("only {rows} usable rows for {regressors} regressors")]
    TooFewRows { rows: usize, regressors: usize },
}

/// `x ⊥ y | cond`, all variables anchored at `perspective`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CiQuery {
    pub perspective: ItemId,
    pub x: RelationalVariable,
    pub y: RelationalVariable,
    pub cond: Vec<RelationalVariable>,
}

impl CiQuery {
    pub fn new(x: RelationalVariable, y: RelationalVariable, mut cond: Vec<RelationalVariable>) -> Result<Self, CiError> {
        let perspective = x.perspective();
        cond.sort();
        cond.dedup();
        if x == y {
            return Err(CiError::InvalidQuery("x and y are the same variable".into()));
        }
        if cond.contains(&x) || cond.contains(&y) {
            return Err(CiError::InvalidQuery("x or y is in the conditioning set".into()));
        }
        if y.perspective() != perspective || cond.iter().any(|c| c.perspective() != perspective) {
            return Err(CiError::InvalidQuery("variables have different perspectives".into()));
        }
        Ok(CiQuery {
            perspective,
            x,
            y,
            cond,
        })
    }

    pub fn display(&self, schema: &Schema) -> String {
        let cond = self.cond.iter().map(|c| c.display(schema).to_string()).join(", ");
        format!("{} _||_ {} | {{{}}}", self.x.display(schema), self.y.display(schema), cond)
    }
}

/// Answers independence queries. `Ok(true)` means independent.
pub trait CiBackend: Sync {
    fn independent(&self, query: &CiQuery) -> Result<bool, CiError>;
}

impl<B: CiBackend + ?Sized> CiBackend for &B {
    fn independent(&self, query: &CiQuery) -> Result<bool, CiError> {
        (**self).independent(query)
    }
}

impl<B: CiBackend + Send + ?Sized> CiBackend for Arc<B> {
    fn independent(&self, query: &CiQuery) -> Result<bool, CiError> {
        (**self).independent(query)
    }
}

/// d-separation in the fully directed abstract ground graphs of a known model.
#[derive(Debug, Clone)]
pub struct OracleCi {
    set: AggSet,
    views: Vec<DirectedView>,
}

impl OracleCi {
    pub fn new(model: &RelationalModel, hops: usize) -> Result<Self, CiError> {
        let set = AggSet::from_model(model, hops)?;
        let views = set
            .schema()
            .item_ids()
            .map(|p| set.directed_view(p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(OracleCi { set, views })
    }

    pub fn agg_set(&self) -> &AggSet {
        &self.set
    }
}

impl CiBackend for OracleCi {
    fn independent(&self, q: &CiQuery) -> Result<bool, CiError> {
        let p = q.perspective;
        let x = self.set.node_indices(p, std::slice::from_ref(&q.x))?;
        let y = self.set.node_indices(p, std::slice::from_ref(&q.y))?;
        let z = self.set.node_indices(p, &q.cond)?;
        Ok(self.views[p.index()].d_separated(&x, &y, &z)?)
    }
}

/// One-shot oracle query; [`OracleCi`] caches the graphs across queries.
pub fn oracle_ci(model: &RelationalModel, query: &CiQuery, hops: usize) -> Result<bool, CiError> {
    OracleCi::new(model, hops)?.independent(query)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionParams {
    pub alpha: f64,
    pub effect_threshold: f64,
}

impl Default for RegressionParams {
    fn default() -> Self {
        RegressionParams {
            alpha: 0.05,
            effect_threshold: 0.01,
        }
    }
}

/// Per-instance mean of `var` over its terminal sets; NaN where empty.
pub fn aggregate_column(skeleton: &Skeleton, var: &RelationalVariable) -> Result<Vec<f64>, CiError> {
    let schema = skeleton.schema();
    let values = skeleton
        .values(var.attr)
        .ok_or_else(|| SkeletonError::MissingValues(schema.attr_label(var.attr)))?;
    let n = skeleton.num_instances(var.perspective());
    Ok((0..n as u32)
        .map(|i| {
            let t = skeleton.terminal_set_unchecked(var.path.items(), i);
            if t.is_empty() {
                f64::NAN
            } else {
                t.iter().map(|&j| values[j as usize]).sum::<f64>() / t.len() as f64
            }
        })
        .collect())
}

/// t-test on the `x` coefficient of an OLS fit of `y` on `x`, `cond` and an
/// intercept. Rows with a missing value in any column are dropped.
/// Independent iff the coefficient is not significant at `alpha` or its
/// standardized size is below `effect_threshold`.
pub fn regression_test(x: &[f64], y: &[f64], cond: &[&[f64]], params: RegressionParams) -> Result<bool, CiError> {
    let rows: Vec<usize> = (0..x.len())
        .filter(|&i| x[i].is_finite() && y[i].is_finite() && cond.iter().all(|c| c[i].is_finite()))
        .collect();
    let n = rows.len();
    let p = 1 + cond.len();
    if n < p + 2 {
        return Err(CiError::TooFewRows { rows: n, regressors: p });
    }
    // z-score every column so the fit is scale free
    let standardize = |col: &[f64]| -> Option<Vec<f64>> {
        let m = rows.iter().map(|&i| col[i]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|&i| (col[i] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        (sd > 1e-12 * (1.0 + m.abs())).then(|| rows.iter().map(|&i| (col[i] - m) / sd).collect())
    };
    let mut cols = Vec::with_capacity(p + 1);
    for c in std::iter::once(y).chain(std::iter::once(x)).chain(cond.iter().copied()) {
        match standardize(c) {
            Some(z) => cols.push(z),
            None => {
                log::warn!("zero-variance column in regression test; reporting independence");
                return Ok(true);
            }
        }
    }
    let yv = DVector::from_vec(cols.remove(0));
    let k = p + 1;
    let design = DMatrix::from_fn(n, k, |r, c| if c == 0 { 1.0 } else { cols[c - 1][r] });
    let xtx = design.tr_mul(&design);
    let Some(chol) = xtx.cholesky() else {
        log::warn!("singular design in regression test; reporting independence");
        return Ok(true);
    };
    let inv = chol.inverse();
    let beta = &inv * design.tr_mul(&yv);
    let resid = &yv - &design * &beta;
    let df = (n - k) as f64;
    let s2 = resid.norm_squared() / df;
    let se = (s2 * inv[(1, 1)]).sqrt();
    let coef = beta[1];
    let pval = if se > 0.0 {
        let t = StudentsT::new(0.0, 1.0, df).expect("positive df");
        2.0 * (1.0 - t.cdf((coef / se).abs()))
    } else {
        0.0
    };
    Ok(pval >= params.alpha || coef.abs() < params.effect_threshold)
}

/// One-shot regression query; [`RegressionCi`] caches columns and verdicts.
pub fn regression_ci(skeleton: &Skeleton, q: &CiQuery, params: RegressionParams) -> Result<bool, CiError> {
    let x = aggregate_column(skeleton, &q.x)?;
    let y = aggregate_column(skeleton, &q.y)?;
    let cond = q.cond.iter().map(|c| aggregate_column(skeleton, c)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&[f64]> = cond.iter().map(Vec::as_slice).collect();
    regression_test(&x, &y, &refs, params)
}

/// Regression backend over a skeleton with values.
#[derive(Debug)]
pub struct RegressionCi {
    skeleton: Arc<Skeleton>,
    params: RegressionParams,
    columns: Mutex<HashMap<RelationalVariable, Arc<Vec<f64>>>>,
    verdicts: Mutex<HashMap<CiQuery, bool>>,
}

impl RegressionCi {
    pub fn new(skeleton: Arc<Skeleton>, params: RegressionParams) -> Self {
        RegressionCi {
            skeleton,
            params,
            columns: Mutex::new(HashMap::new()),
            verdicts: Mutex::new(HashMap::new()),
        }
    }

    fn column(&self, var: &RelationalVariable) -> Result<Arc<Vec<f64>>, CiError> {
        if let Some(c) = self.columns.lock().unwrap().get(var) {
            return Ok(c.clone());
        }
        let c = Arc::new(aggregate_column(&self.skeleton, var)?);
        self.columns.lock().unwrap().insert(var.clone(), c.clone());
        Ok(c)
    }
}

impl CiBackend for RegressionCi {
    fn independent(&self, q: &CiQuery) -> Result<bool, CiError> {
        if let Some(&v) = self.verdicts.lock().unwrap().get(q) {
            return Ok(v);
        }
        let x = self.column(&q.x)?;
        let y = self.column(&q.y)?;
        let cond = q.cond.iter().map(|c| self.column(c)).collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&[f64]> = cond.iter().map(|c| c.as_slice()).collect();
        let v = regression_test(&x, &y, &refs, self.params)?;
        self.verdicts.lock().unwrap().insert(q.clone(), v);
        Ok(v)
    }
}

/// Wraps a backend and keeps every query with its verdict.
#[derive(Debug)]
pub struct Recording<B> {
    inner: B,
    log: Mutex<Vec<(CiQuery, bool)>>,
}

impl<B: CiBackend> Recording<B> {
    pub fn new(inner: B) -> Self {
        Recording {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn take(&self) -> Vec<(CiQuery, bool)> {
        std::mem::take(&mut *self.log.lock().unwrap())
    }
}

impl<B: CiBackend> CiBackend for Recording<B> {
    fn independent(&self, q: &CiQuery) -> Result<bool, CiError> {
        let v = self.inner.independent(q)?;
        self.log.lock().unwrap().push((q.clone(), v));
        Ok(v)
    }
}

/// Separating sets keyed by unordered variable pair. The first set recorded
/// for a pair is kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SepsetStore {
    map: BTreeMap<(RelationalVariable, RelationalVariable), Vec<RelationalVariable>>,
}

fn pair_key(a: &RelationalVariable, b: &RelationalVariable) -> (RelationalVariable, RelationalVariable) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

impl SepsetStore {
    pub fn insert(&mut self, a: &RelationalVariable, b: &RelationalVariable, set: Vec<RelationalVariable>) {
        self.map.entry(pair_key(a, b)).or_insert(set);
    }

    pub fn get(&self, a: &RelationalVariable, b: &RelationalVariable) -> Option<&[RelationalVariable]> {
        self.map.get(&pair_key(a, b)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RelationalVariable, &RelationalVariable, &[RelationalVariable])> {
        self.map.iter().map(|((a, b), s)| (a, b, s.as_slice()))
    }
}

/// Where a CI query was issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Skeleton,
    Collider,
    Bivariate,
}

/// Backend invocation counts per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CiStats {
    pub phase1: u64,
    pub collider: u64,
    pub bivariate: u64,
}

impl CiStats {
    pub fn total(&self) -> u64 {
        self.phase1 + self.collider + self.bivariate
    }

    pub fn bump(&mut self, stage: Stage) {
        match stage {
            Stage::Skeleton => self.phase1 += 1,
            Stage::Collider => self.collider += 1,
            Stage::Bivariate => self.bivariate += 1,
        }
    }

    pub fn add(&mut self, other: &CiStats) {
        self.phase1 += other.phase1;
        self.collider += other.collider;
        self.bivariate += other.bivariate;
    }
}

/// A backend plus the sepsets and counts of one learning run.
pub struct CiSession<'a> {
    backend: &'a dyn CiBackend,
    pub store: SepsetStore,
    pub stats: CiStats,
}

impl<'a> CiSession<'a> {
    pub fn new(backend: &'a dyn CiBackend) -> Self {
        CiSession {
            backend,
            store: SepsetStore::default(),
            stats: CiStats::default(),
        }
    }

    pub fn test(&mut self, q: &CiQuery, stage: Stage) -> Result<bool, CiError> {
        self.stats.bump(stage);
        self.backend.independent(q)
    }

    /// Searches subsets of `pool` (in the given order) by increasing size up
    /// to `max_depth` and records the first separating set found.
    pub fn find_sepset(
        &mut self,
        x: &RelationalVariable,
        y: &RelationalVariable,
        pool: &[RelationalVariable],
        max_depth: usize,
        stage: Stage,
    ) -> Result<Option<Vec<RelationalVariable>>, CiError> {
        let pool: Vec<&RelationalVariable> = pool.iter().filter(|v| *v != x && *v != y).collect();
        for size in 0..=max_depth.min(pool.len()) {
            for subset in pool.iter().copied().combinations(size) {
                let cond: Vec<RelationalVariable> = subset.into_iter().cloned().collect();
                let q = CiQuery::new(x.clone(), y.clone(), cond.clone())?;
                if self.test(&q, stage)? {
                    self.store.insert(x, y, cond.clone());
                    return Ok(Some(cond));
                }
            }
        }
        Ok(None)
    }
}

/// Free-standing form of [`CiSession::find_sepset`].
pub fn find_sepset(
    backend: &dyn CiBackend,
    x: &RelationalVariable,
    y: &RelationalVariable,
    pool: &[RelationalVariable],
    max_depth: usize,
) -> Result<Option<Vec<RelationalVariable>>, CiError> {
    CiSession::new(backend).find_sepset(x, y, pool, max_depth, Stage::Skeleton)
}
