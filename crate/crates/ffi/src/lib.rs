//! C ABI for `shiftlab`.
//!
//! Every entry point returns a [`ShiftlabStatus`]. On failure a message is
//! kept per thread and can be copied out with [`shiftlab_last_error`].
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Matrices are dense, row-major
//! `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use shiftlab::covshift::kmm_weights;
use shiftlab::drift::drift_detector;
use shiftlab::jdot::{jdot_fit, JdotConfig};
use shiftlab::models::{fit_softmax, KernelSpec, RidgeModel, SoftmaxClassifier};
use shiftlab::ot::{solve_exact, solve_sinkhorn, wasserstein, CostMatrix, GroundMetric, SinkhornOptions};
use shiftlab::priorshift::{prior_shift_adapt, PriorShiftOptions};
use shiftlab::{DiscreteMeasure, Error, LabeledDataset, Labels};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Inputs are valid but the problem has no solution (e.g. marginals of
    /// different mass, a single class, an empty selection).
    Infeasible = 4,
    Numerical = 5,
    /// A caller-provided buffer is too small.
    BufferTooSmall = 6,
    /// An internal panic was caught at the boundary.
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftlabMetric {
    Euclidean = 0,
    Manhattan = 1,
    Chebyshev = 2,
}

impl From<ShiftlabMetric> for GroundMetric {
    fn from(m: ShiftlabMetric) -> Self {
        match m {
            ShiftlabMetric::Euclidean => GroundMetric::Euclidean,
            ShiftlabMetric::Manhattan => GroundMetric::Manhattan,
            ShiftlabMetric::Chebyshev => GroundMetric::Chebyshev,
        }
    }
}

/// Softmax classifier trained by [`shiftlab_softmax_fit`].
pub struct ShiftlabClassifier {
    inner: SoftmaxClassifier,
}

/// Coupling matrix returned by the transport solvers.
pub struct ShiftlabPlan {
    gamma: Array2<f64>,
    iterations: usize,
    converged: bool,
}

/// Affine regression model `w·x + b` returned by [`shiftlab_jdot_fit`].
pub struct ShiftlabLinearModel {
    inner: RidgeModel,
}

/// Outcome of [`shiftlab_prior_shift`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ShiftlabPriorShiftSummary {
    pub iterations: usize,
    pub converged: bool,
    pub test_statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(ShiftlabStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } => ShiftlabStatus::DimensionMismatch,
            Error::EmptySample
            | Error::DegenerateLabels(_)
            | Error::InfeasibleMarginals(..)
            | Error::ZeroSourcePrior(_)
            | Error::ZeroDiameter
            | Error::ZeroSourceDensity(_) => ShiftlabStatus::Infeasible,
            Error::Singular | Error::Numerical(_) | Error::VanishingPosteriorMass => ShiftlabStatus::Numerical,
            _ => ShiftlabStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ShiftlabStatus::InvalidArgument, msg.into())
}

/// Runs `body`, records any failure for [`shiftlab_last_error`] and turns
/// panics into [`ShiftlabStatus::Internal`].
fn guard(body: impl FnOnce() -> Outcome) -> ShiftlabStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => ShiftlabStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ShiftlabStatus::Internal
        }
    }
}

fn not_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(ShiftlabStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be NULL or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    not_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be NULL or point to `len` writable values.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    not_null(p, name)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must point to `rows * cols` readable values.
unsafe fn matrix<'a>(p: *const f64, rows: usize, cols: usize, name: &str) -> Result<ArrayView2<'a, f64>, Failure> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| invalid(format!("{name}: size overflow")))?;
    let data = slice(p, len, name)?;
    Ok(ArrayView2::from_shape((rows, cols), data).expect("length checked"))
}

/// # Safety
/// `out` must be NULL or point to writable storage for one value.
unsafe fn write<T>(out: *mut T, value: T, name: &str) -> Outcome {
    not_null(out, name)?;
    out.write(value);
    Ok(())
}

fn check_capacity(needed: usize, capacity: usize, name: &str) -> Outcome {
    if capacity < needed {
        return Err(Failure(
            ShiftlabStatus::BufferTooSmall,
            format!("{name}: need {needed} values, got room for {capacity}"),
        ));
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn shiftlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `capacity > 0`) and returns the full message
/// length excluding the terminator. Returns 0 when no error was recorded.
///
/// # Safety
/// `buf` must be NULL or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_last_error(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && capacity > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Fits a multinomial softmax classifier with L2 strength `reg`.
/// `labels` holds class indices in `[0, classes)`; `weights` may be NULL
/// for unit weights.
///
/// # Safety
/// `features` must hold `rows * cols` doubles, `labels` and (when not NULL)
/// `weights` must hold `rows` values, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_softmax_fit(
    features: *const f64,
    rows: usize,
    cols: usize,
    labels: *const u32,
    classes: usize,
    weights: *const f64,
    reg: f64,
    out: *mut *mut ShiftlabClassifier,
) -> ShiftlabStatus {
    guard(|| {
        not_null(out, "out")?;
        let x = matrix(features, rows, cols, "features")?;
        let y: Vec<usize> = slice(labels, rows, "labels")?.iter().map(|&l| l as usize).collect();
        let w = if weights.is_null() {
            Array1::ones(rows)
        } else {
            Array1::from(slice(weights, rows, "weights")?.to_vec())
        };
        let data = LabeledDataset::new(x.to_owned(), Labels::Classes { indices: y, classes })?;
        let inner = fit_softmax(&data, &w.view(), reg)?;
        write(out, Box::into_raw(Box::new(ShiftlabClassifier { inner })), "out")
    })
}

/// Number of classes of a fitted classifier, or 0 for NULL.
///
/// # Safety
/// `clf` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_classifier_classes(clf: *const ShiftlabClassifier) -> usize {
    clf.as_ref().map_or(0, |c| c.inner.classes())
}

/// Writes class posteriors, `rows * classes` row-major, into `out`.
///
/// # Safety
/// `clf` must be a live handle, `features` must hold `rows * cols` doubles
/// and `out` must have room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_classifier_predict_proba(
    clf: *const ShiftlabClassifier,
    features: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    capacity: usize,
) -> ShiftlabStatus {
    guard(|| {
        not_null(clf, "clf")?;
        let clf = &(*clf).inner;
        let x = matrix(features, rows, cols, "features")?;
        let proba = clf.predict_proba_batch(&x)?;
        check_capacity(proba.len(), capacity, "out")?;
        let out = slice_mut(out, proba.len(), "out")?;
        out.iter_mut().zip(proba.iter()).for_each(|(o, p)| *o = *p);
        Ok(())
    })
}

/// Releases a classifier. NULL is ignored.
///
/// # Safety
/// `clf` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_classifier_free(clf: *mut ShiftlabClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// Re-estimates target class priors by EM for a fitted classifier and tests
/// the shift at level `alpha`. `priors_out` receives one value per class.
///
/// # Safety
/// `clf` must be a live handle, `target` must hold `rows * cols` doubles,
/// `priors_out` must have room for `capacity` doubles and `summary` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_prior_shift(
    clf: *const ShiftlabClassifier,
    target: *const f64,
    rows: usize,
    cols: usize,
    tol: f64,
    max_iter: usize,
    alpha: f64,
    priors_out: *mut f64,
    capacity: usize,
    summary: *mut ShiftlabPriorShiftSummary,
) -> ShiftlabStatus {
    guard(|| {
        not_null(clf, "clf")?;
        not_null(summary, "summary")?;
        let clf = &(*clf).inner;
        let x = matrix(target, rows, cols, "target")?;
        let res = prior_shift_adapt(clf, &x, &PriorShiftOptions { tol, max_iter, alpha })?;
        let priors = res.em.final_priors.as_slice();
        check_capacity(priors.len(), capacity, "priors_out")?;
        slice_mut(priors_out, priors.len(), "priors_out")?.copy_from_slice(priors);
        write(
            summary,
            ShiftlabPriorShiftSummary {
                iterations: res.em.iterations_used,
                converged: res.em.converged,
                test_statistic: res.test_statistic,
                p_value: res.p_value,
                significant: res.significant,
            },
            "summary",
        )
    })
}

/// # Safety
/// Pointers as documented on the public solvers.
unsafe fn transport_inputs<'a>(
    a: *const f64,
    rows: usize,
    b: *const f64,
    cols: usize,
    costs: *const f64,
) -> Result<(ArrayView1<'a, f64>, ArrayView1<'a, f64>, CostMatrix), Failure> {
    let a = ArrayView1::from(slice(a, rows, "a")?);
    let b = ArrayView1::from(slice(b, cols, "b")?);
    let c = CostMatrix::new(matrix(costs, rows, cols, "costs")?.to_owned())?;
    Ok((a, b, c))
}

/// Exact optimal transport between weights `a` (length `rows`) and `b`
/// (length `cols`) under the row-major `rows * cols` cost matrix.
///
/// # Safety
/// `a`, `b` and `costs` must hold the stated number of doubles; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_ot_exact(
    a: *const f64,
    rows: usize,
    b: *const f64,
    cols: usize,
    costs: *const f64,
    out: *mut *mut ShiftlabPlan,
) -> ShiftlabStatus {
    guard(|| {
        not_null(out, "out")?;
        let (a, b, c) = transport_inputs(a, rows, b, cols, costs)?;
        let plan = solve_exact(&a, &b, &c)?;
        let handle = ShiftlabPlan {
            gamma: plan.into_gamma(),
            iterations: 0,
            converged: true,
        };
        write(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// Entropic transport by Sinkhorn iteration. `epsilon <= 0` selects the
/// default strength of 1e-3 times the mean cost.
///
/// # Safety
/// As [`shiftlab_ot_exact`].
#[no_mangle]
pub unsafe extern "C" fn shiftlab_ot_sinkhorn(
    a: *const f64,
    rows: usize,
    b: *const f64,
    cols: usize,
    costs: *const f64,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
    out: *mut *mut ShiftlabPlan,
) -> ShiftlabStatus {
    guard(|| {
        not_null(out, "out")?;
        let (a, b, c) = transport_inputs(a, rows, b, cols, costs)?;
        let opts = SinkhornOptions {
            epsilon: (epsilon > 0.0).then_some(epsilon),
            max_iter,
            tol,
        };
        let res = solve_sinkhorn(&a, &b, &c, &opts)?;
        let handle = ShiftlabPlan {
            gamma: res.gamma,
            iterations: res.iterations,
            converged: res.converged,
        };
        write(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// Plan shape, solver iterations and convergence flag. Any output pointer
/// may be NULL.
///
/// # Safety
/// `plan` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_plan_info(
    plan: *const ShiftlabPlan,
    rows: *mut usize,
    cols: *mut usize,
    iterations: *mut usize,
    converged: *mut bool,
) -> ShiftlabStatus {
    guard(|| {
        not_null(plan, "plan")?;
        let plan = &*plan;
        let (r, c) = plan.gamma.dim();
        if !rows.is_null() {
            rows.write(r);
        }
        if !cols.is_null() {
            cols.write(c);
        }
        if !iterations.is_null() {
            iterations.write(plan.iterations);
        }
        if !converged.is_null() {
            converged.write(plan.converged);
        }
        Ok(())
    })
}

/// Copies the coupling, row-major, into `out`.
///
/// # Safety
/// `plan` must be a live handle and `out` must have room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_plan_copy(
    plan: *const ShiftlabPlan,
    out: *mut f64,
    capacity: usize,
) -> ShiftlabStatus {
    guard(|| {
        not_null(plan, "plan")?;
        let gamma = &(*plan).gamma;
        check_capacity(gamma.len(), capacity, "out")?;
        let out = slice_mut(out, gamma.len(), "out")?;
        out.iter_mut().zip(gamma.iter()).for_each(|(o, g)| *o = *g);
        Ok(())
    })
}

/// Total cost `Σ γ_ij C_ij` of a plan under a cost matrix of the same shape.
///
/// # Safety
/// `plan` must be a live handle, `costs` must hold as many doubles as the
/// plan and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_plan_cost(
    plan: *const ShiftlabPlan,
    costs: *const f64,
    out: *mut f64,
) -> ShiftlabStatus {
    guard(|| {
        not_null(plan, "plan")?;
        let gamma = &(*plan).gamma;
        let (r, c) = gamma.dim();
        let costs = matrix(costs, r, c, "costs")?;
        let total: f64 = gamma.iter().zip(costs.iter()).map(|(g, c)| g * c).sum();
        write(out, total, "out")
    })
}

/// Releases a plan. NULL is ignored.
///
/// # Safety
/// `plan` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_plan_free(plan: *mut ShiftlabPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// `p`-Wasserstein distance between two weighted point clouds in `dim`
/// dimensions, solved exactly.
///
/// # Safety
/// `mu_points` must hold `mu_len * dim` doubles and `mu_weights` `mu_len`;
/// likewise for `nu`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_wasserstein(
    mu_points: *const f64,
    mu_weights: *const f64,
    mu_len: usize,
    nu_points: *const f64,
    nu_weights: *const f64,
    nu_len: usize,
    dim: usize,
    metric: ShiftlabMetric,
    p: f64,
    out: *mut f64,
) -> ShiftlabStatus {
    guard(|| {
        let measure = |pts, wts, len, name| -> Result<DiscreteMeasure, Failure> {
            let support = matrix(pts, len, dim, name)?.to_owned();
            let weights = Array1::from(slice(wts, len, name)?.to_vec());
            Ok(DiscreteMeasure::new(support, weights)?)
        };
        let mu = measure(mu_points, mu_weights, mu_len, "mu")?;
        let nu = measure(nu_points, nu_weights, nu_len, "nu")?;
        write(out, wasserstein(&mu, &nu, metric.into(), p)?, "out")
    })
}

/// Kernel mean matching weights for `source` rows against `target` rows.
/// `bandwidth <= 0` selects the median heuristic. `out` receives
/// `source_rows` weights.
///
/// # Safety
/// `source` must hold `source_rows * dim` doubles, `target` must hold
/// `target_rows * dim`, and `out` must have room for `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_kmm_weights(
    source: *const f64,
    source_rows: usize,
    target: *const f64,
    target_rows: usize,
    dim: usize,
    bandwidth: f64,
    bound: f64,
    out: *mut f64,
    capacity: usize,
) -> ShiftlabStatus {
    guard(|| {
        let s = matrix(source, source_rows, dim, "source")?;
        let t = matrix(target, target_rows, dim, "target")?;
        let kernel = if bandwidth > 0.0 {
            KernelSpec::gaussian(bandwidth)?
        } else {
            KernelSpec::median_heuristic(&s, &t)?
        };
        let sol = kmm_weights(&s, &t, &kernel, bound)?;
        check_capacity(sol.weights.0.len(), capacity, "out")?;
        slice_mut(out, source_rows, "out")?.copy_from_slice(&sol.weights.0);
        Ok(())
    })
}

/// Joint-distribution transport regression from labeled source rows to
/// unlabeled target rows. `lambda <= 0` uses the default feature weight.
///
/// # Safety
/// `source` must hold `source_rows * dim` doubles, `targets` must hold
/// `source_rows`, `target` must hold `target_rows * dim`, and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_jdot_fit(
    source: *const f64,
    targets: *const f64,
    source_rows: usize,
    target: *const f64,
    target_rows: usize,
    dim: usize,
    lambda: f64,
    ridge_reg: f64,
    max_iter: usize,
    out: *mut *mut ShiftlabLinearModel,
) -> ShiftlabStatus {
    guard(|| {
        not_null(out, "out")?;
        let s = matrix(source, source_rows, dim, "source")?;
        let y = slice(targets, source_rows, "targets")?.to_vec();
        let t = matrix(target, target_rows, dim, "target")?;
        let data = LabeledDataset::new(s.to_owned(), Labels::Targets(y))?;
        let cfg = JdotConfig {
            lambda: (lambda > 0.0).then_some(lambda),
            ridge_reg,
            bcd_max_iter: max_iter,
            ..JdotConfig::default()
        };
        let res = jdot_fit(&data, &t, &cfg)?;
        write(
            out,
            Box::into_raw(Box::new(ShiftlabLinearModel { inner: res.model })),
            "out",
        )
    })
}

/// Copies the slope vector (`capacity >= dim`) and intercept of a model.
///
/// # Safety
/// `model` must be a live handle, `slopes` must have room for `capacity`
/// doubles and `intercept` must be writable.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_linear_model_coefficients(
    model: *const ShiftlabLinearModel,
    slopes: *mut f64,
    capacity: usize,
    intercept: *mut f64,
) -> ShiftlabStatus {
    guard(|| {
        not_null(model, "model")?;
        let m = &(*model).inner;
        check_capacity(m.weights.len(), capacity, "slopes")?;
        slice_mut(slopes, m.weights.len(), "slopes")?.copy_from_slice(&m.weights);
        write(intercept, m.intercept, "intercept")
    })
}

/// Releases a linear model. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_linear_model_free(model: *mut ShiftlabLinearModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Two-window mean-shift detector on a loss stream. Writes up to
/// `capacity` event indices into `events` and the total count into `count`;
/// returns `BufferTooSmall` when the events did not fit.
///
/// # Safety
/// `losses` must hold `len` doubles, `events` must have room for `capacity`
/// values and `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn shiftlab_drift_detector(
    losses: *const f64,
    len: usize,
    window: usize,
    threshold: f64,
    events: *mut usize,
    capacity: usize,
    count: *mut usize,
) -> ShiftlabStatus {
    guard(|| {
        let stream = slice(losses, len, "losses")?;
        let found = drift_detector(stream, window, threshold)?;
        write(count, found.len(), "count")?;
        let n = found.len().min(capacity);
        slice_mut(events, n, "events")?.copy_from_slice(&found[..n]);
        check_capacity(found.len(), capacity, "events")
    })
}
