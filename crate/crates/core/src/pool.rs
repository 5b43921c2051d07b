//! Fixed-size worker pool with two priority levels.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Priority {
    /// Work the consumer is about to block on.
    High,
    /// Prefetching.
    Low,
}

type Job = Box<dyn FnOnce() + Send>;

#[derive(Default)]
struct Queue {
    high: VecDeque<Job>,
    low: VecDeque<Job>,
    shutdown: bool,
}

struct Shared {
    queue: Mutex<Queue>,
    ready: Condvar,
}

pub struct ThreadPool {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl ThreadPool {
    pub fn new(threads: usize) -> Self {
        let shared = Arc::new(Shared {
            queue: Mutex::new(Queue::default()),
            ready: Condvar::new(),
        });
        let workers = (0..threads.max(1))
            .map(|i| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("gzpar-worker-{i}"))
                    .spawn(move || worker(&shared))
                    .expect("failed to spawn worker thread")
            })
            .collect();
        Self { shared, workers }
    }

    pub fn threads(&self) -> usize {
        self.workers.len()
    }

    pub fn submit<T, F>(&self, priority: Priority, f: F) -> TaskHandle<T>
    where
        T: Send + 'static,
        F: FnOnce() -> T + Send + 'static,
    {
        let (tx, rx) = mpsc::sync_channel(1);
        let job: Job = Box::new(move || {
            let result = catch_unwind(AssertUnwindSafe(f)).map_err(|panic| {
                panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "worker panicked".into())
            });
            let _ = tx.send(result);
        });
        let mut queue = self.shared.queue.lock().unwrap();
        match priority {
            Priority::High => queue.high.push_back(job),
            Priority::Low => queue.low.push_back(job),
        }
        drop(queue);
        self.shared.ready.notify_one();
        TaskHandle { rx, done: None }
    }
}

fn worker(shared: &Shared) {
    loop {
        let job = {
            let mut queue = shared.queue.lock().unwrap();
            loop {
                if let Some(job) = queue.high.pop_front().or_else(|| queue.low.pop_front()) {
                    break job;
                }
                if queue.shutdown {
                    return;
                }
                queue = shared.ready.wait(queue).unwrap();
            }
        };
        job();
    }
}

impl Drop for ThreadPool {
    fn drop(&mut self) {
        {
            let mut queue = self.shared.queue.lock().unwrap();
            queue.shutdown = true;
            // Queued prefetches are not worth finishing.
            queue.low.clear();
        }
        self.shared.ready.notify_all();
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

/// Result of a submitted task.
pub struct TaskHandle<T> {
    rx: Receiver<std::result::Result<T, String>>,
    done: Option<std::result::Result<T, String>>,
}

impl<T> TaskHandle<T> {
    pub fn is_finished(&mut self) -> bool {
        if self.done.is_some() {
            return true;
        }
        match self.rx.try_recv() {
            Ok(result) => {
                self.done = Some(result);
                true
            }
            Err(TryRecvError::Empty) => false,
            Err(TryRecvError::Disconnected) => {
                self.done = Some(Err("task was cancelled".into()));
                true
            }
        }
    }

    /// Blocks until the task has run. Panics become [`Error::TaskFailed`].
    pub fn wait(mut self) -> Result<T> {
        let result = match self.done.take() {
            Some(result) => result,
            None => self
                .rx
                .recv()
                .unwrap_or_else(|_| Err("task was cancelled".into())),
        };
        result.map_err(Error::TaskFailed)
    }
}
