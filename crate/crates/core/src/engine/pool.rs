//! Fixed worker pool with one deque per worker and random-victim stealing.
//!
//! Each worker owns an [`OpContext`] kept in a thread local. Jobs borrow it
//! for their whole run; fibers borrow it briefly between suspension points.
//! Idle time is measured directly: time spent looking for work, parked, or
//! waiting on children with nothing to help with.

use std::cell::{Cell, RefCell};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_deque::{Injector, Steal, Stealer, Worker};

use crate::cache::CacheStats;
use crate::ops::OpContext;

pub(crate) type Job = Box<dyn FnOnce(&mut OpContext) + Send>;

pub(crate) enum Task {
    Job(Job),
    Fiber(async_task::Runnable),
}

static NEXT_POOL: AtomicU64 = AtomicU64::new(1);

struct WorkerTls {
    pool: u64,
    local: Worker<Task>,
    rng: Cell<u64>,
    extra_idle: Cell<Duration>,
    help_depth: Cell<u32>,
}

/// Nesting limit for [`PoolShared::help_until`]; deeper forks run inline.
const MAX_HELP_DEPTH: u32 = 12;

const WORKER_STACK: usize = 32 << 20;

thread_local! {
    static WORKER: RefCell<Option<WorkerTls>> = const { RefCell::new(None) };
    static CTX: RefCell<Option<OpContext>> = const { RefCell::new(None) };
}

/// Runs `f` on the current worker's context. Must not be nested.
pub(crate) fn with_ctx<R>(f: impl FnOnce(&mut OpContext) -> R) -> R {
    CTX.with(|c| f(c.borrow_mut().as_mut().expect("called outside a pool worker")))
}

pub(crate) struct PoolShared {
    id: u64,
    injector: Injector<Task>,
    stealers: Vec<Stealer<Task>>,
    central: bool,
    sleepers: AtomicUsize,
    lock: Mutex<()>,
    cv: Condvar,
    done: AtomicBool,
}

/// What a worker hands back when the pool shuts down.
#[derive(Debug, Default)]
pub(crate) struct WorkerReport {
    pub(crate) idle: Duration,
    pub(crate) busy_tasks: u64,
    pub(crate) stats: CacheStats,
    pub(crate) spawned: u64,
}

pub(crate) struct Pool {
    shared: Arc<PoolShared>,
    handles: Vec<JoinHandle<WorkerReport>>,
    start: Instant,
}

impl Pool {
    /// Starts one thread per context. With `central` set, work is only taken
    /// from the shared injector and never stolen from deques.
    pub(crate) fn start(ctxs: Vec<OpContext>, central: bool, pin: bool) -> Pool {
        let locals: Vec<Worker<Task>> = ctxs.iter().map(|_| Worker::new_lifo()).collect();
        let shared = Arc::new(PoolShared {
            id: NEXT_POOL.fetch_add(1, Ordering::Relaxed),
            injector: Injector::new(),
            stealers: locals.iter().map(|w| w.stealer()).collect(),
            central,
            sleepers: AtomicUsize::new(0),
            lock: Mutex::new(()),
            cv: Condvar::new(),
            done: AtomicBool::new(false),
        });
        let cores = if pin { core_affinity::get_core_ids().unwrap_or_default() } else { Vec::new() };
        let start = Instant::now();
        let handles = ctxs
            .into_iter()
            .zip(locals)
            .enumerate()
            .map(|(i, (ctx, local))| {
                let shared = Arc::clone(&shared);
                let core = (!cores.is_empty()).then(|| cores[i % cores.len()]);
                std::thread::Builder::new()
                    .name(format!("dd-worker-{i}"))
                    .stack_size(WORKER_STACK)
                    .spawn(move || {
                        if let Some(c) = core {
                            core_affinity::set_for_current(c);
                        }
                        worker_main(shared, i, ctx, local, start)
                    })
                    .expect("spawn worker thread")
            })
            .collect();
        Pool { shared, handles, start }
    }

    pub(crate) fn shared(&self) -> &Arc<PoolShared> {
        &self.shared
    }

    /// Stops the workers and returns their reports with the pool lifetime.
    pub(crate) fn finish(self) -> (Vec<WorkerReport>, Duration) {
        self.shared.done.store(true, Ordering::SeqCst);
        {
            let _l = self.shared.lock.lock().unwrap();
            self.shared.cv.notify_all();
        }
        let reports = self.handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
        (reports, self.start.elapsed())
    }
}

fn worker_main(shared: Arc<PoolShared>, index: usize, ctx: OpContext, local: Worker<Task>, start: Instant) -> WorkerReport {
    WORKER.with(|w| {
        *w.borrow_mut() = Some(WorkerTls {
            pool: shared.id,
            local,
            rng: Cell::new(0x9e37_79b9_7f4a_7c15 ^ (index as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed69)),
            extra_idle: Cell::new(Duration::ZERO),
            help_depth: Cell::new(0),
        })
    });
    CTX.with(|c| *c.borrow_mut() = Some(ctx));

    let mut report = WorkerReport::default();
    let mut idle_since = start;
    loop {
        match shared.find_task() {
            Some(task) => {
                report.idle += idle_since.elapsed();
                run_task(task);
                report.busy_tasks += 1;
                idle_since = Instant::now();
            }
            None => {
                if shared.done.load(Ordering::SeqCst) {
                    break;
                }
                shared.park();
            }
        }
    }
    report.idle += idle_since.elapsed();
    report.idle += WORKER.with(|w| w.borrow().as_ref().map(|t| t.extra_idle.get()).unwrap_or_default());
    let ctx = CTX.with(|c| c.borrow_mut().take()).expect("worker context");
    report.stats = ctx.cache().stats_snapshot();
    report.spawned = ctx.spawned;
    WORKER.with(|w| *w.borrow_mut() = None);
    report
}

fn run_task(task: Task) {
    // a collection may have run since this worker's last task
    with_ctx(|c| c.refresh());
    match task {
        Task::Job(f) => with_ctx(f),
        Task::Fiber(r) => {
            r.run();
        }
    }
}

impl PoolShared {
    /// Queues `t` on the calling worker's deque, or the injector when called
    /// from outside the pool.
    pub(crate) fn push(&self, t: Task) {
        let t = if self.central {
            Some(t)
        } else {
            WORKER.with(|w| match w.borrow().as_ref() {
                Some(tls) if tls.pool == self.id => {
                    tls.local.push(t);
                    None
                }
                _ => Some(t),
            })
        };
        if let Some(t) = t {
            self.injector.push(t);
        }
        self.notify();
    }

    pub(crate) fn push_global(&self, t: Task) {
        self.injector.push(t);
        self.notify();
    }

    fn notify(&self) {
        if self.sleepers.load(Ordering::SeqCst) > 0 {
            let _l = self.lock.lock().unwrap();
            self.cv.notify_one();
        }
    }

    fn has_work(&self) -> bool {
        !self.injector.is_empty() || (!self.central && self.stealers.iter().any(|s| !s.is_empty()))
    }

    fn park(&self) {
        let guard = self.lock.lock().unwrap();
        self.sleepers.fetch_add(1, Ordering::SeqCst);
        if !self.has_work() && !self.done.load(Ordering::SeqCst) {
            let _ = self.cv.wait_timeout(guard, Duration::from_millis(2)).unwrap();
        }
        self.sleepers.fetch_sub(1, Ordering::SeqCst);
    }

    /// Local deque first, then the injector, then a random victim.
    pub(crate) fn find_task(&self) -> Option<Task> {
        WORKER.with(|w| {
            let tls = w.borrow();
            let tls = tls.as_ref().filter(|t| t.pool == self.id);
            if self.central {
                return steal_loop(|| self.injector.steal());
            }
            if let Some(t) = tls.and_then(|t| t.local.pop()) {
                return Some(t);
            }
            let got = match tls {
                Some(t) => steal_loop(|| self.injector.steal_batch_and_pop(&t.local)),
                None => steal_loop(|| self.injector.steal()),
            };
            if got.is_some() {
                return got;
            }
            let n = self.stealers.len();
            if n == 0 {
                return None;
            }
            let start = match tls {
                Some(t) => {
                    let mut x = t.rng.get();
                    x ^= x << 13;
                    x ^= x >> 7;
                    x ^= x << 17;
                    t.rng.set(x);
                    (x % n as u64) as usize
                }
                None => 0,
            };
            (0..n).find_map(|k| steal_loop(|| self.stealers[(start + k) % n].steal()))
        })
    }

    /// Whether the calling worker may fork and help again without exceeding
    /// the nesting limit.
    pub(crate) fn may_fork(&self) -> bool {
        WORKER.with(|w| w.borrow().as_ref().is_some_and(|t| t.help_depth.get() < MAX_HELP_DEPTH))
    }

    /// Runs other tasks until `ready` returns true. Time with nothing to run
    /// counts as idle for the calling worker.
    pub(crate) fn help_until(&self, ctx: &mut OpContext, ready: impl Fn() -> bool) {
        let depth = WORKER.with(|w| {
            let w = w.borrow();
            let t = w.as_ref().expect("help_until outside a worker");
            t.help_depth.set(t.help_depth.get() + 1);
            t.help_depth.get()
        });
        debug_assert!(depth <= MAX_HELP_DEPTH);
        let mut idle_since: Option<Instant> = None;
        let mut spins = 0u32;
        while !ready() {
            match self.find_task() {
                Some(task) => {
                    if let Some(t) = idle_since.take() {
                        add_extra_idle(t.elapsed());
                    }
                    match task {
                        Task::Job(f) => f(ctx),
                        Task::Fiber(r) => {
                            r.run();
                        }
                    }
                    spins = 0;
                }
                None => {
                    idle_since.get_or_insert_with(Instant::now);
                    spins += 1;
                    if spins < 16 {
                        std::hint::spin_loop();
                    } else {
                        std::thread::yield_now();
                    }
                }
            }
        }
        if let Some(t) = idle_since {
            add_extra_idle(t.elapsed());
        }
        WORKER.with(|w| {
            if let Some(t) = w.borrow().as_ref() {
                t.help_depth.set(t.help_depth.get() - 1);
            }
        });
    }
}

fn add_extra_idle(d: Duration) {
    WORKER.with(|w| {
        if let Some(t) = w.borrow().as_ref() {
            t.extra_idle.set(t.extra_idle.get() + d);
        }
    });
}

fn steal_loop(mut f: impl FnMut() -> Steal<Task>) -> Option<Task> {
    loop {
        match f() {
            Steal::Success(t) => return Some(t),
            Steal::Empty => return None,
            Steal::Retry => std::hint::spin_loop(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::CacheConfig;
    use crate::dd::Package;

    #[test]
    fn jobs_run_once_each() {
        let pkg = Package::new();
        let ctxs = (0..3).map(|_| OpContext::new(&pkg, &CacheConfig::default())).collect();
        let pool = Pool::start(ctxs, false, false);
        let count = Arc::new(AtomicUsize::new(0));
        for _ in 0..100 {
            let c = Arc::clone(&count);
            pool.shared().push(Task::Job(Box::new(move |_| {
                c.fetch_add(1, Ordering::SeqCst);
            })));
        }
        while count.load(Ordering::SeqCst) < 100 {
            std::thread::yield_now();
        }
        let (reports, _) = pool.finish();
        assert_eq!(reports.iter().map(|r| r.busy_tasks).sum::<u64>(), 100);
    }
}
