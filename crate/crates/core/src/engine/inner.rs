//! Parallelism inside a single multiplication.
//!
//! `INNER_THREADS` forks the quadrant units of nodes near the root as plain
//! jobs on a central queue; the forking worker runs one unit itself and helps
//! with queued jobs while it waits. `INNER_FIBERS` runs the top of the
//! recursion as lightweight tasks on per-worker deques; a parent fiber
//! suspends instead of blocking, and every spawn is preceded by a cache probe
//! so already-known products never become tasks.

use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use crate::ops::{InnerFork, MulKind, OpContext, REdge, Unit};

use super::pool::{with_ctx, PoolShared, Task};

/// Fork for `INNER_THREADS`. The pool is attached after it starts.
#[derive(Default)]
pub(crate) struct ThreadsFork {
    pool: OnceLock<Arc<PoolShared>>,
}

impl ThreadsFork {
    pub(crate) fn attach(&self, pool: &Arc<PoolShared>) {
        let _ = self.pool.set(Arc::clone(pool));
    }
}

struct Joined {
    out: Mutex<[REdge; 4]>,
    remaining: AtomicUsize,
}

impl InnerFork for ThreadsFork {
    fn run_units(&self, ctx: &mut OpContext, units: &[Unit], out: &mut [REdge]) {
        let Some(pool) = self.pool.get().filter(|p| p.may_fork()) else {
            for (u, o) in units.iter().zip(out.iter_mut()) {
                *o = ctx.run_unit(u);
            }
            return;
        };
        let joined = Arc::new(Joined {
            out: Mutex::new([REdge::ZERO; 4]),
            remaining: AtomicUsize::new(units.len() - 1),
        });
        for (k, u) in units.iter().enumerate().skip(1) {
            let (u, j) = (*u, Arc::clone(&joined));
            pool.push_global(Task::Job(Box::new(move |c: &mut OpContext| {
                let r = c.run_unit(&u);
                j.out.lock().unwrap()[k] = r;
                j.remaining.fetch_sub(1, Ordering::AcqRel);
            })));
        }
        out[0] = ctx.run_unit(&units[0]);
        pool.help_until(ctx, || joined.remaining.load(Ordering::Acquire) == 0);
        let vals = joined.out.lock().unwrap();
        out[1..].copy_from_slice(&vals[1..units.len()]);
    }
}

type BoxFuture = Pin<Box<dyn Future<Output = REdge> + Send>>;

pub(crate) fn spawn_fiber<F, T>(pool: &Arc<PoolShared>, f: F) -> async_task::Task<T>
where
    F: Future<Output = T> + Send + 'static,
    T: Send + 'static,
{
    let p = Arc::clone(pool);
    let (runnable, task) = async_task::spawn(f, move |r| p.push(Task::Fiber(r)));
    runnable.schedule();
    task
}

enum Step {
    Done(REdge),
    Split {
        level: usize,
        units: [Unit; 4],
        n: usize,
    },
}

/// `a·b` as a fiber. `probed` means the caller already missed in the cache
/// for this pair of nodes.
pub(crate) fn fiber_mul(pool: Arc<PoolShared>, kind: MulKind, a: REdge, b: REdge, probed: bool) -> BoxFuture {
    Box::pin(async move {
        let w = a.w * b.w;
        let step = with_ctx(|c| {
            if let Some(r) = c.mul_shortcut(kind, a, b) {
                return Step::Done(r);
            }
            if c.package().aborted() {
                return Step::Done(REdge::ZERO);
            }
            if !probed {
                if let Some(hit) = c.mul_lookup(kind, a.node, b.node) {
                    return Step::Done(hit.scaled(w));
                }
            }
            let level = c.package().level(a.node);
            if level < c.spawn_threshold {
                return Step::Done(c.mul_nodes_missed(kind, a.node, b.node).scaled(w));
            }
            let (mut units, n) = c.mul_units(kind, a.node, b.node);
            for u in units.iter_mut().take(n) {
                for k in 0..2 {
                    u.known[k] = c.mul_probe(kind, u.a[k], u.b[k]);
                }
            }
            Step::Split { level, units, n }
        });
        let (level, units, n) = match step {
            Step::Done(r) => return r,
            Step::Split { level, units, n } => (level, units, n),
        };

        let mut out = [REdge::ZERO; 4];
        let mut pending = Vec::with_capacity(n);
        for (k, u) in units.iter().take(n).enumerate() {
            if let [Some(x), Some(y)] = u.known {
                out[k] = with_ctx(|c| c.add_r(x, y));
                continue;
            }
            let (u, p) = (*u, Arc::clone(&pool));
            let child = spawn_fiber(&pool, async move {
                let x = match u.known[0] {
                    Some(x) => x,
                    None => fiber_mul(Arc::clone(&p), kind, u.a[0], u.b[0], true).await,
                };
                let y = match u.known[1] {
                    Some(y) => y,
                    None => fiber_mul(p, kind, u.a[1], u.b[1], true).await,
                };
                with_ctx(|c| c.add_r(x, y))
            });
            pending.push((k, child));
        }
        with_ctx(|c| c.spawned += pending.len() as u64);
        for (k, child) in pending {
            out[k] = child.await;
        }
        with_ctx(|c| {
            let r = c.make_node_r(level, kind.result_kind(), &out[..n]);
            c.mul_finish(kind, a.node, b.node, r).scaled(w)
        })
    })
}
