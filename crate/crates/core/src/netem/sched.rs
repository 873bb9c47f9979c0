//! Single-server queue with deficit round robin across QoS classes.
//!
//! A server works on one job at a time. Jobs of one class leave in FIFO
//! order; across classes the byte share follows the class weights.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

pub type QosClass = u8;

pub const QUANTUM_BYTES: u64 = 1500;

#[derive(Debug)]
pub struct Job<T> {
    pub bytes: u64,
    pub service: Duration,
    pub item: T,
}

#[derive(Debug)]
pub struct Server<T> {
    queues: BTreeMap<QosClass, VecDeque<Job<T>>>,
    deficit: BTreeMap<QosClass, u64>,
    active: VecDeque<QosClass>,
    /// Whether the class at the front already received this turn's quantum.
    granted: bool,
    busy: bool,
    busy_time: Duration,
}

impl<T> Default for Server<T> {
    fn default() -> Self {
        Server {
            queues: BTreeMap::new(),
            deficit: BTreeMap::new(),
            active: VecDeque::new(),
            granted: false,
            busy: false,
            busy_time: Duration::ZERO,
        }
    }
}

impl<T> Server<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    /// Accumulated service time of all started jobs.
    pub fn busy_time(&self) -> Duration {
        self.busy_time
    }

    pub fn queued(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }

    pub fn enqueue(&mut self, class: QosClass, job: Job<T>) {
        let q = self.queues.entry(class).or_default();
        if q.is_empty() {
            self.active.push_back(class);
            self.deficit.insert(class, 0);
        }
        q.push_back(job);
    }

    /// Starts the next job if the server is idle. Returns the job, which the
    /// caller finishes by calling [`Server::complete`] after `job.service`.
    pub fn start_next(&mut self, weight: impl Fn(QosClass) -> u32) -> Option<Job<T>> {
        if self.busy {
            return None;
        }
        loop {
            let class = *self.active.front()?;
            let queue = self.queues.get_mut(&class).expect("active class has a queue");
            let deficit = self.deficit.get_mut(&class).expect("active class has a deficit");
            if !self.granted {
                *deficit += QUANTUM_BYTES * weight(class).max(1) as u64;
                self.granted = true;
            }
            let head = queue.front().expect("active class has a job").bytes;
            if *deficit < head {
                self.active.rotate_left(1);
                self.granted = false;
                continue;
            }
            let job = queue.pop_front().expect("checked non-empty");
            *deficit -= job.bytes;
            if queue.is_empty() {
                self.active.pop_front();
                self.deficit.remove(&class);
                self.granted = false;
            }
            self.busy = true;
            self.busy_time += job.service;
            return Some(job);
        }
    }

    pub fn complete(&mut self) {
        self.busy = false;
    }

    /// Drops every queued job.
    pub fn clear(&mut self) {
        self.queues.clear();
        self.deficit.clear();
        self.active.clear();
        self.granted = false;
    }
}
