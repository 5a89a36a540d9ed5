//! Batched assembly of compressed operators.
//!
//! A master thread walks the block tree and packs blocks into byte-bounded
//! lists of panel pairs. Every block first goes through a disjoint list and
//! is integrated with the regular rule as a whole; pairs that actually
//! share vertices are then re-queued into case-homogeneous lists whose
//! results overwrite the provisional values. Workers per backend drain the
//! lists.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, Sender};

use crate::cluster::BlockKind;
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::h2::{GCAMatrix, GcaSetup};
use crate::kernels::KernelSpec;
use crate::mesh::{AffineChart, SurfaceMesh, IDENTITY_PERM};
use crate::quadrature::{
    classify_pair, integrate_pair_unchecked, shared_vertex_count, QuadRule4D, RuleCache,
    SingularityCase,
};
use crate::scalar::{czero, Complex, Real};

/// Two panel indices and an output offset.
pub const PAIR_RECORD_BYTES: usize = 24;
/// One output value.
pub const OUTPUT_BYTES: usize = 8;
pub const PAIR_BYTES: usize = PAIR_RECORD_BYTES + OUTPUT_BYTES;
pub const DEFAULT_MAXSIZE_BYTES: usize = 8 * 1024 * 1024;
pub const DEFAULT_WORKERS_PER_BACKEND: usize = 2;
pub const DEFAULT_DISJOINT_ORDER: usize = 3;
pub const DEFAULT_SINGULAR_ORDER: usize = 5;
/// The master stops feeding while this many lists per worker are queued.
pub const QUEUE_DEPTH_PER_WORKER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackendKind {
    Scalar,
    Batch,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Scalar => "scalar",
            BackendKind::Batch => "batch",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(BackendKind::Scalar),
            "batch" => Ok(BackendKind::Batch),
            _ => Err(Error::Configuration(format!("unknown backend `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerConfig {
    pub maxsize_bytes: usize,
    /// Zero runs every list inline on the master thread.
    pub workers_per_backend: usize,
    pub backends: Vec<BackendKind>,
    pub singular_affinity: BackendKind,
    pub regular_affinity: BackendKind,
    pub disjoint_order: usize,
    pub singular_order: usize,
    /// Assemble only blocks with row cluster <= column cluster and mirror
    /// the rest. Requires one shared tree and shared bases.
    pub symmetric: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            maxsize_bytes: DEFAULT_MAXSIZE_BYTES,
            workers_per_backend: DEFAULT_WORKERS_PER_BACKEND,
            backends: vec![BackendKind::Scalar, BackendKind::Batch],
            singular_affinity: BackendKind::Scalar,
            regular_affinity: BackendKind::Batch,
            disjoint_order: DEFAULT_DISJOINT_ORDER,
            singular_order: DEFAULT_SINGULAR_ORDER,
            symmetric: false,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.maxsize_bytes < PAIR_BYTES {
            return Err(Error::Configuration(format!(
                "maxsize {} B cannot hold one {PAIR_BYTES} B pair record",
                self.maxsize_bytes
            )));
        }
        if self.backends.is_empty() {
            return Err(Error::Configuration("no backend configured".into()));
        }
        for n in [self.disjoint_order, self.singular_order] {
            if n == 0 || n > crate::quadrature::MAX_RULE_ORDER {
                return Err(Error::Configuration(format!("quadrature order {n} out of range")));
            }
        }
        Ok(())
    }
}

/// Where an item's values land: entry `(a, b)` goes to
/// `payloads[payload][offset + a·stride + b]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OutputSlot {
    pub payload: usize,
    pub offset: usize,
    pub stride: usize,
}

/// A (sub-)block of panel pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkItem {
    /// Block-tree leaf number.
    pub block: usize,
    /// True for the `t̃ × s̃` coupling of an admissible leaf.
    pub coupling: bool,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub slot: OutputSlot,
    /// The block's boxes touch, so some pairs may share vertices.
    pub possibly_singular: bool,
}

impl WorkItem {
    pub fn pairs(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn bytes(&self) -> usize {
        self.pairs() * PAIR_BYTES
    }

    /// Halves the longer index dimension (rows on ties).
    pub fn split(&self) -> (WorkItem, WorkItem) {
        let mut a = self.clone();
        let mut b = self.clone();
        if self.rows.len() >= self.cols.len() {
            let h = self.rows.len() / 2;
            a.rows = self.rows[..h].to_vec();
            b.rows = self.rows[h..].to_vec();
            b.slot.offset += h * self.slot.stride;
        } else {
            let h = self.cols.len() / 2;
            a.cols = self.cols[..h].to_vec();
            b.cols = self.cols[h..].to_vec();
            b.slot.offset += h;
        }
        (a, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ListState {
    Filling,
    Ready,
    Done,
}

#[derive(Clone, Debug)]
pub struct WorkList {
    pub id: usize,
    pub case: SingularityCase,
    pub items: Vec<WorkItem>,
    pub bytes: usize,
    pub state: ListState,
    retried: bool,
}

impl WorkList {
    fn new(id: usize, case: SingularityCase) -> Self {
        Self {
            id,
            case,
            items: Vec::new(),
            bytes: 0,
            state: ListState::Filling,
            retried: false,
        }
    }

    pub fn pairs(&self) -> usize {
        self.items.iter().map(WorkItem::pairs).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Fills lists of one case up to `maxsize` bytes.
#[derive(Debug)]
pub struct ListManager {
    case: SingularityCase,
    maxsize: usize,
    current: WorkList,
    ready: Vec<WorkList>,
    ids: Arc<AtomicUsize>,
}

impl ListManager {
    pub fn new(case: SingularityCase, maxsize: usize) -> Result<Self> {
        Self::with_ids(case, maxsize, Arc::new(AtomicUsize::new(0)))
    }

    fn with_ids(case: SingularityCase, maxsize: usize, ids: Arc<AtomicUsize>) -> Result<Self> {
        if maxsize < PAIR_BYTES {
            return Err(Error::Configuration(format!(
                "maxsize {maxsize} B cannot hold one {PAIR_BYTES} B pair record"
            )));
        }
        let current = WorkList::new(ids.fetch_add(1, Ordering::Relaxed), case);
        Ok(Self {
            case,
            maxsize,
            current,
            ready: Vec::new(),
            ids,
        })
    }

    pub fn current(&self) -> &WorkList {
        &self.current
    }

    /// Appends `item`, closing the current list first if the item does
    /// not fit and splitting items that exceed `maxsize` on their own.
    pub fn add_block(&mut self, item: WorkItem) {
        if item.pairs() == 0 {
            return;
        }
        let bytes = item.bytes();
        if !self.current.is_empty() && self.current.bytes + bytes > self.maxsize {
            self.close_current();
        }
        if self.current.bytes + bytes <= self.maxsize {
            self.current.bytes += bytes;
            self.current.items.push(item);
        } else {
            let (a, b) = item.split();
            self.add_block(a);
            self.add_block(b);
        }
    }

    fn close_current(&mut self) {
        let id = self.ids.fetch_add(1, Ordering::Relaxed);
        let mut done = std::mem::replace(&mut self.current, WorkList::new(id, self.case));
        done.state = ListState::Ready;
        self.ready.push(done);
    }

    /// Closes a non-empty current list.
    pub fn flush(&mut self) {
        if !self.current.is_empty() {
            self.close_current();
        }
    }

    /// Lists marked ready since the last call.
    pub fn drain_ready(&mut self) -> Vec<WorkList> {
        std::mem::take(&mut self.ready)
    }
}

/// Panel charts of every pair in a list, in item order and row-major
/// within each item.
#[derive(Clone, Debug, Default)]
pub struct MergedBatch<T> {
    pub x: Vec<AffineChart<T>>,
    pub y: Vec<AffineChart<T>>,
}

impl<T> MergedBatch<T> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

impl<T: Real> MergedBatch<T> {
    /// Merges the parameters of all items. Singular lists align the charts
    /// of each pair for the list's case, exchanging them as
    /// [`crate::quadrature::PairClassification::swaps`]
    /// prescribes.
    pub fn from_list(mesh: &SurfaceMesh<T>, list: &WorkList, symmetric_kernel: bool) -> Result<Self> {
        let n = list.pairs();
        let mut b = Self {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
        };
        for item in &list.items {
            for &i in &item.rows {
                for &j in &item.cols {
                    if list.case == SingularityCase::Disjoint {
                        b.x.push(mesh.chart_unchecked(i, IDENTITY_PERM));
                        b.y.push(mesh.chart_unchecked(j, IDENTITY_PERM));
                        continue;
                    }
                    let c = classify_pair(mesh, i, j)?;
                    if c.case != list.case {
                        return Err(Error::InvalidArgument(format!(
                            "pair ({i}, {j}) is {} but sits in a {} list",
                            c.case, list.case
                        )));
                    }
                    let (cx, cy) = (mesh.chart_unchecked(i, c.perm_x), mesh.chart_unchecked(j, c.perm_y));
                    if c.swaps(symmetric_kernel, i, j) {
                        b.x.push(cy);
                        b.y.push(cx);
                    } else {
                        b.x.push(cx);
                        b.y.push(cy);
                    }
                }
            }
        }
        Ok(b)
    }
}

/// A compute backend for homogeneous batches.
pub trait Backend<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> BackendKind;

    /// Largest batch accepted in one call.
    fn max_batch(&self) -> usize {
        usize::MAX
    }

    /// Appends one value per pair of `batch` to `out`.
    fn integrate(
        &self,
        batch: &MergedBatch<T>,
        kernel: &KernelSpec<T>,
        rule: &QuadRule4D<T>,
        out: &mut Vec<Complex<T>>,
    ) -> Result<()>;
}

/// Reference backend: one quadrature sum per pair.
#[derive(Clone, Copy, Debug, Default)]
pub struct ScalarBackend;

impl<T: Real> Backend<T> for ScalarBackend {
    fn name(&self) -> &str {
        "scalar"
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Scalar
    }

    fn integrate(
        &self,
        batch: &MergedBatch<T>,
        kernel: &KernelSpec<T>,
        rule: &QuadRule4D<T>,
        out: &mut Vec<Complex<T>>,
    ) -> Result<()> {
        out.extend(
            batch
                .x
                .iter()
                .zip(&batch.y)
                .map(|(cx, cy)| integrate_pair_unchecked(cx, cy, kernel, rule)),
        );
        Ok(())
    }
}

/// Structure-of-arrays backend: the quadrature point loop is outermost and
/// sweeps a tile of pairs, the way a SIMD device would. Per pair it
/// performs exactly the reference backend's operations in the same order.
#[derive(Clone, Copy, Debug)]
pub struct BatchBackend {
    pub tile: usize,
}

impl Default for BatchBackend {
    fn default() -> Self {
        Self { tile: 64 }
    }
}

struct Soa<T> {
    o: [Vec<T>; 3],
    e1: [Vec<T>; 3],
    e2: [Vec<T>; 3],
}

impl<T: Real> Soa<T> {
    fn new(n: usize) -> Self {
        let v = || [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        Self {
            o: v(),
            e1: v(),
            e2: v(),
        }
    }

    fn load(&mut self, charts: &[AffineChart<T>]) {
        for k in 0..3 {
            self.o[k].clear();
            self.e1[k].clear();
            self.e2[k].clear();
            self.o[k].extend(charts.iter().map(|c| c.origin[k]));
            self.e1[k].extend(charts.iter().map(|c| c.edge1[k]));
            self.e2[k].extend(charts.iter().map(|c| c.edge2[k]));
        }
    }

    #[inline(always)]
    fn map(&self, p: usize, s: T, t: T) -> [T; 3] {
        [
            self.o[0][p] + s * self.e1[0][p] + t * self.e2[0][p],
            self.o[1][p] + s * self.e1[1][p] + t * self.e2[1][p],
            self.o[2][p] + s * self.e1[2][p] + t * self.e2[2][p],
        ]
    }
}

impl<T: Real> Backend<T> for BatchBackend {
    fn name(&self) -> &str {
        "batch"
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Batch
    }

    fn integrate(
        &self,
        batch: &MergedBatch<T>,
        kernel: &KernelSpec<T>,
        rule: &QuadRule4D<T>,
        out: &mut Vec<Complex<T>>,
    ) -> Result<()> {
        let tile = self.tile.max(1);
        let mut sx = Soa::new(tile);
        let mut sy = Soa::new(tile);
        let mut acc = vec![czero::<T>(); tile];
        for start in (0..batch.len()).step_by(tile) {
            let end = (start + tile).min(batch.len());
            let (cx, cy) = (&batch.x[start..end], &batch.y[start..end]);
            sx.load(cx);
            sy.load(cy);
            let n = end - start;
            acc[..n].iter_mut().for_each(|a| *a = czero());
            for q in 0..rule.len() {
                let [s, t] = rule.x_points[q];
                let [u, v] = rule.y_points[q];
                let w = rule.weights[q];
                for p in 0..n {
                    let g = kernel.eval_unchecked(sx.map(p, s, t), sy.map(p, u, v), cy[p].normal);
                    acc[p] = acc[p] + g * w;
                }
            }
            for p in 0..n {
                out.push(acc[p] * (cx[p].gramian * cy[p].gramian));
            }
        }
        Ok(())
    }
}

/// Runs `backend` over a merged batch, in chunks if the backend limits
/// the batch size.
pub fn batch_quadrature<T: Real>(
    backend: &dyn Backend<T>,
    batch: &MergedBatch<T>,
    kernel: &KernelSpec<T>,
    rule: &QuadRule4D<T>,
) -> Result<Vec<Complex<T>>> {
    let mut out = Vec::with_capacity(batch.len());
    let chunk = backend.max_batch().max(1);
    if batch.len() <= chunk {
        backend.integrate(batch, kernel, rule, &mut out)?;
    } else {
        for start in (0..batch.len()).step_by(chunk) {
            let end = (start + chunk).min(batch.len());
            let part = MergedBatch {
                x: batch.x[start..end].to_vec(),
                y: batch.y[start..end].to_vec(),
            };
            backend.integrate(&part, kernel, rule, &mut out)?;
        }
    }
    if out.len() != batch.len() {
        return Err(Error::Backend {
            backend: backend.name().to_string(),
            message: format!("returned {} values for {} pairs", out.len(), batch.len()),
        });
    }
    Ok(out)
}

/// One executed list.
#[derive(Clone, Debug, PartialEq)]
pub struct ListEvent {
    pub list: usize,
    pub case: SingularityCase,
    pub items: usize,
    pub pairs: usize,
    pub bytes: usize,
    pub backend: String,
    pub enqueued: Duration,
    pub dequeued: Duration,
    pub done: Duration,
    pub retried: bool,
}

impl ListEvent {
    /// `list case items pairs bytes backend enqueue_us dequeue_us done_us`.
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {} {} {} {} {}",
            self.list,
            self.case,
            self.items,
            self.pairs,
            self.bytes,
            self.backend,
            self.enqueued.as_micros(),
            self.dequeued.as_micros(),
            self.done.as_micros()
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct AssemblyStats {
    pub events: Vec<ListEvent>,
    /// Pair counts per case over all executed lists.
    pub pairs_per_case: [usize; 4],
    pub corrective_items: usize,
    /// Σ |rows|·|cols| over the blocks fed to the lists.
    pub block_pairs: usize,
    /// Pairs integrated with the disjoint rule, times its point count.
    pub disjoint_points: usize,
    pub rule_builds: usize,
    pub mirrored_leaves: usize,
}

enum Msg {
    List(WorkList, Duration),
    Stop,
}

struct Shared<'a, T: Real> {
    mesh: &'a SurfaceMesh<T>,
    kernel: KernelSpec<T>,
    config: &'a SchedulerConfig,
    rules: RuleCache<T>,
    backends: Vec<Arc<dyn Backend<T>>>,
    senders: Vec<Sender<Msg>>,
    receivers: Vec<Receiver<Msg>>,
    payloads: Vec<Mutex<Matrix<T>>>,
    singular: Mutex<Vec<ListManager>>,
    in_flight: Mutex<usize>,
    idle: Condvar,
    error: Mutex<Option<Error>>,
    events: Mutex<Vec<ListEvent>>,
    pairs: Mutex<([usize; 4], usize)>,
    start: Instant,
}

impl<'a, T: Real> Shared<'a, T> {
    fn backend_for(&self, case: SingularityCase) -> usize {
        let want = if case == SingularityCase::Disjoint {
            self.config.regular_affinity
        } else {
            self.config.singular_affinity
        };
        self.backends.iter().position(|b| b.kind() == want).unwrap_or(0)
    }

    fn submit(&self, mut list: WorkList) {
        if list.is_empty() {
            return;
        }
        list.state = ListState::Ready;
        *self.in_flight.lock().unwrap() += 1;
        let b = self.backend_for(list.case);
        let t = self.start.elapsed();
        self.dispatch(list, b, t);
    }

    fn dispatch(&self, list: WorkList, backend: usize, enqueued: Duration) {
        if self.config.workers_per_backend == 0 {
            self.process(list, backend, enqueued);
        } else {
            self.senders[backend]
                .send(Msg::List(list, enqueued))
                .expect("worker queue open while lists are in flight");
        }
    }

    fn queued(&self) -> usize {
        self.receivers.iter().map(Receiver::len).sum()
    }

    fn fail(&self, e: Error) {
        let mut slot = self.error.lock().unwrap();
        if slot.is_none() {
            *slot = Some(e);
        }
    }

    fn failed(&self) -> bool {
        self.error.lock().unwrap().is_some()
    }

    fn process(&self, mut list: WorkList, backend: usize, enqueued: Duration) {
        let dequeued = self.start.elapsed();
        match self.execute(&list, backend) {
            Ok(()) => {
                list.state = ListState::Done;
                let done = self.start.elapsed();
                let mut pairs = self.pairs.lock().unwrap();
                pairs.0[list.case as usize] += list.pairs();
                drop(pairs);
                self.events.lock().unwrap().push(ListEvent {
                    list: list.id,
                    case: list.case,
                    items: list.items.len(),
                    pairs: list.pairs(),
                    bytes: list.bytes,
                    backend: self.backends[backend].name().to_string(),
                    enqueued,
                    dequeued,
                    done,
                    retried: list.retried,
                });
            }
            Err(e) => {
                if !list.retried && self.backends.len() > 1 {
                    list.retried = true;
                    let other = (backend + 1) % self.backends.len();
                    self.dispatch(list, other, self.start.elapsed());
                    return;
                }
                self.fail(e);
            }
        }
        let mut n = self.in_flight.lock().unwrap();
        *n -= 1;
        if *n == 0 {
            self.idle.notify_all();
        }
    }

    fn execute(&self, list: &WorkList, backend: usize) -> Result<()> {
        let order = if list.case == SingularityCase::Disjoint {
            self.config.disjoint_order
        } else {
            self.config.singular_order
        };
        let rule = self.rules.get(list.case, order)?;
        let merged = MergedBatch::from_list(self.mesh, list, self.kernel.is_symmetric())?;
        let values = batch_quadrature(self.backends[backend].as_ref(), &merged, &self.kernel, &rule)?;
        store_results(&self.payloads, list, &values);
        if list.case == SingularityCase::Disjoint {
            let corrective = corrective_items(self.mesh, list);
            self.pairs.lock().unwrap().1 += corrective.iter().map(|(_, v)| v.len()).sum::<usize>();
            let mut full = Vec::new();
            {
                let mut mgrs = self.singular.lock().unwrap();
                for (case, items) in corrective {
                    let m = &mut mgrs[case as usize - 1];
                    for it in items {
                        m.add_block(it);
                    }
                    full.extend(m.drain_ready());
                }
            }
            for l in full {
                self.submit(l);
            }
        }
        Ok(())
    }

    fn wait_idle(&self) {
        let mut n = self.in_flight.lock().unwrap();
        while *n > 0 {
            n = self.idle.wait(n).unwrap();
        }
    }

    fn worker(&self, backend: usize) {
        let rx = self.receivers[backend].clone();
        while let Ok(msg) = rx.recv() {
            match msg {
                Msg::List(list, enqueued) => self.process(list, backend, enqueued),
                Msg::Stop => break,
            }
        }
    }
}

/// Copies `values` (pair order of [`MergedBatch::from_list`]) into their
/// slots.
fn store_results<T: Real>(payloads: &[Mutex<Matrix<T>>], list: &WorkList, values: &[Complex<T>]) {
    let mut k = 0;
    for item in &list.items {
        let mut p = payloads[item.slot.payload].lock().unwrap();
        let data = p.data_mut();
        for a in 0..item.rows.len() {
            let base = item.slot.offset + a * item.slot.stride;
            let n = item.cols.len();
            data[base..base + n].copy_from_slice(&values[k..k + n]);
            k += n;
        }
    }
}

/// Result distribution for a disjoint list: the values are already stored;
/// every pair of a flagged block that shares vertices becomes a single
/// pair item for its case. Returned grouped by case.
pub fn corrective_items<T: Real>(
    mesh: &SurfaceMesh<T>,
    list: &WorkList,
) -> Vec<(SingularityCase, Vec<WorkItem>)> {
    let mut out: Vec<(SingularityCase, Vec<WorkItem>)> = SingularityCase::ALL[1..]
        .iter()
        .map(|&c| (c, Vec::new()))
        .collect();
    let tris = mesh.triangles();
    for item in list.items.iter().filter(|it| it.possibly_singular) {
        for (a, &i) in item.rows.iter().enumerate() {
            for (b, &j) in item.cols.iter().enumerate() {
                let v = if i == j { 3 } else { shared_vertex_count(&tris[i], &tris[j]) };
                if v == 0 {
                    continue;
                }
                out[v - 1].1.push(WorkItem {
                    block: item.block,
                    coupling: item.coupling,
                    rows: vec![i],
                    cols: vec![j],
                    slot: OutputSlot {
                        payload: item.slot.payload,
                        offset: item.slot.offset + a * item.slot.stride + b,
                        stride: 1,
                    },
                    possibly_singular: true,
                });
            }
        }
    }
    out.retain(|(_, v)| !v.is_empty());
    out
}

/// Executes one ready list on `backend` and writes its values into
/// `payloads`. A disjoint list returns the corrective items it spawns; a
/// singular list returns none.
pub fn execute_list<T: Real>(
    mesh: &SurfaceMesh<T>,
    kernel: &KernelSpec<T>,
    rule: &QuadRule4D<T>,
    backend: &dyn Backend<T>,
    list: &mut WorkList,
    payloads: &[Mutex<Matrix<T>>],
) -> Result<Vec<(SingularityCase, Vec<WorkItem>)>> {
    if list.state != ListState::Ready {
        return Err(Error::InvalidArgument(format!("list {} is not ready", list.id)));
    }
    if rule.case != list.case {
        return Err(Error::InvalidArgument(format!(
            "{} rule supplied for a {} list",
            rule.case, list.case
        )));
    }
    let merged = MergedBatch::from_list(mesh, list, kernel.is_symmetric())?;
    let values = batch_quadrature(backend, &merged, kernel, rule)?;
    store_results(payloads, list, &values);
    list.state = ListState::Done;
    Ok(if list.case == SingularityCase::Disjoint {
        corrective_items(mesh, list)
    } else {
        Vec::new()
    })
}

/// Instantiates the configured standard backends.
pub fn standard_backends<T: Real>(kinds: &[BackendKind]) -> Vec<Arc<dyn Backend<T>>> {
    let mut out: Vec<Arc<dyn Backend<T>>> = Vec::new();
    for k in kinds {
        if out.iter().any(|b| b.kind() == *k) {
            continue;
        }
        out.push(match k {
            BackendKind::Scalar => Arc::new(ScalarBackend),
            BackendKind::Batch => Arc::new(BatchBackend::default()),
        });
    }
    out
}

/// Assembles all leaf payloads of `setup` with the configured standard
/// backends.
pub fn run_assembly<T: Real>(
    mesh: &SurfaceMesh<T>,
    setup: &GcaSetup<T>,
    kernel: &KernelSpec<T>,
    config: &SchedulerConfig,
) -> Result<(GCAMatrix<T>, AssemblyStats)> {
    config.validate()?;
    run_assembly_with_backends(mesh, setup, kernel, config, standard_backends(&config.backends))
}

/// As [`run_assembly`] with caller-supplied backends; affinities select
/// backends by [`Backend::kind`], falling back to the first one.
pub fn run_assembly_with_backends<T: Real>(
    mesh: &SurfaceMesh<T>,
    setup: &GcaSetup<T>,
    kernel: &KernelSpec<T>,
    config: &SchedulerConfig,
    backends: Vec<Arc<dyn Backend<T>>>,
) -> Result<(GCAMatrix<T>, AssemblyStats)> {
    config.validate()?;
    if backends.is_empty() {
        return Err(Error::Configuration("no backend supplied".into()));
    }
    if setup.row_tree.num_indices() != mesh.num_triangles() || setup.col_tree.num_indices() != mesh.num_triangles() {
        return Err(Error::DimensionMismatch {
            expected: mesh.num_triangles(),
            actual: setup.row_tree.num_indices(),
        });
    }
    let blocks = &setup.blocks;
    let mirror = mirror_map(setup, config)?;
    let mut payloads = Vec::with_capacity(blocks.num_leaves());
    for k in 0..blocks.num_leaves() {
        let (r, c) = setup.payload_shape(k)?;
        payloads.push(Mutex::new(Matrix::zeros(r, c)));
    }
    let ids = Arc::new(AtomicUsize::new(0));
    let singular = SingularityCase::ALL[1..]
        .iter()
        .map(|&c| ListManager::with_ids(c, config.maxsize_bytes, Arc::clone(&ids)))
        .collect::<Result<Vec<_>>>()?;
    let (senders, receivers): (Vec<_>, Vec<_>) = backends.iter().map(|_| channel::unbounded()).unzip();
    let shared = Shared {
        mesh,
        kernel: *kernel,
        config,
        rules: RuleCache::new(),
        backends,
        senders,
        receivers,
        payloads,
        singular: Mutex::new(singular),
        in_flight: Mutex::new(0),
        idle: Condvar::new(),
        error: Mutex::new(None),
        events: Mutex::new(Vec::new()),
        pairs: Mutex::new(([0; 4], 0)),
        start: Instant::now(),
    };
    let mut block_pairs = 0;
    let workers = config.workers_per_backend;
    std::thread::scope(|scope| -> Result<()> {
        for b in 0..shared.backends.len() {
            for _ in 0..workers {
                let sh = &shared;
                scope.spawn(move || sh.worker(b));
            }
        }
        let result = (|| -> Result<()> {
            let mut mgr = ListManager::with_ids(SingularityCase::Disjoint, config.maxsize_bytes, Arc::clone(&ids))?;
            let limit = QUEUE_DEPTH_PER_WORKER * workers * shared.backends.len();
            for k in 0..blocks.num_leaves() {
                if mirror.get(&k).is_some_and(|&src| src != k) {
                    continue;
                }
                let item = leaf_item(setup, k)?;
                block_pairs += item.pairs();
                mgr.add_block(item);
                for list in mgr.drain_ready() {
                    while workers > 0 && shared.queued() >= limit && !shared.failed() {
                        std::thread::sleep(Duration::from_micros(50));
                    }
                    if shared.failed() {
                        return Ok(());
                    }
                    shared.submit(list);
                }
            }
            mgr.flush();
            for list in mgr.drain_ready() {
                shared.submit(list);
            }
            shared.wait_idle();
            let rest: Vec<WorkList> = {
                let mut mgrs = shared.singular.lock().unwrap();
                mgrs.iter_mut()
                    .flat_map(|m| {
                        m.flush();
                        m.drain_ready()
                    })
                    .collect()
            };
            for list in rest {
                shared.submit(list);
            }
            shared.wait_idle();
            Ok(())
        })();
        for tx in &shared.senders {
            for _ in 0..workers {
                let _ = tx.send(Msg::Stop);
            }
        }
        result
    })?;
    if let Some(e) = shared.error.lock().unwrap().take() {
        return Err(e);
    }
    let Shared {
        payloads,
        events,
        pairs,
        rules,
        ..
    } = shared;
    let mut payloads: Vec<Matrix<T>> = payloads.into_iter().map(|m| m.into_inner().unwrap()).collect();
    let mut mirrored = 0;
    for (&dst, &src) in &mirror {
        if dst != src {
            payloads[dst] = payloads[src].transpose();
            mirrored += 1;
        }
    }
    let mut events = events.into_inner().unwrap();
    events.sort_by_key(|e| e.list);
    let (pairs_per_case, corrective_items) = pairs.into_inner().unwrap();
    let stats = AssemblyStats {
        events,
        pairs_per_case,
        corrective_items,
        block_pairs,
        disjoint_points: pairs_per_case[0] * SingularityCase::Disjoint.sub_integrals() * config.disjoint_order.pow(4),
        rule_builds: rules.builds(),
        mirrored_leaves: mirrored,
    };
    Ok((GCAMatrix::new(setup.clone(), payloads)?, stats))
}

/// For symmetric assembly: leaf → leaf whose transpose it receives (or
/// itself when it is assembled).
fn mirror_map<T: Real>(setup: &GcaSetup<T>, config: &SchedulerConfig) -> Result<HashMap<usize, usize>> {
    let mut map = HashMap::new();
    if !config.symmetric {
        return Ok(map);
    }
    if !Arc::ptr_eq(&setup.row_tree, &setup.col_tree) || !setup.shares_bases() {
        return Err(Error::Configuration(
            "symmetric assembly needs one cluster tree and shared bases".into(),
        ));
    }
    let blocks = &setup.blocks;
    let index: HashMap<(usize, usize), usize> = (0..blocks.num_leaves())
        .map(|k| ((blocks.leaf(k).row, blocks.leaf(k).col), k))
        .collect();
    for k in 0..blocks.num_leaves() {
        let leaf = blocks.leaf(k);
        if leaf.row > leaf.col {
            if let Some(&src) = index.get(&(leaf.col, leaf.row)) {
                if blocks.leaf(src).kind == leaf.kind {
                    map.insert(k, src);
                    map.insert(src, src);
                }
            }
        }
    }
    Ok(map)
}

/// Work item covering the whole payload of leaf `k`.
pub fn leaf_item<T: Real>(setup: &GcaSetup<T>, k: usize) -> Result<WorkItem> {
    let leaf = setup.blocks.leaf(k);
    let (rows, cols) = setup.payload_indices(k)?;
    let touching = setup
        .row_tree
        .node(leaf.row)
        .bbox
        .distance(&setup.col_tree.node(leaf.col).bbox)
        == T::zero();
    Ok(WorkItem {
        block: k,
        coupling: leaf.kind == BlockKind::Admissible,
        rows: rows.to_vec(),
        cols: cols.to_vec(),
        slot: OutputSlot {
            payload: k,
            offset: 0,
            stride: cols.len(),
        },
        possibly_singular: touching,
    })
}
