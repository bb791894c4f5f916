//! Logical data-traffic accounting for the kernels.
//!
//! Two modes exist. Perfect-cache counting charges every matrix element once
//! per sweep and every vector element once per algorithmic touch, which is
//! the minimum a cache could achieve. The LLC simulation instead replays the
//! gathered input-vector accesses through a fully associative LRU of
//! configurable capacity (64-byte lines), charging a full line per miss;
//! matrix and output streams stay at their minimum. The ratio of simulated
//! to minimal bytes is the traffic inflation factor Ω ≥ 1.

use std::collections::HashMap;

use crate::perfmodel::ArithmeticSpec;

pub const CACHE_LINE_BYTES: u64 = 64;

/// Byte and flop tallies for one counted region.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrafficCounters {
    pub bytes_matrix_values: u64,
    pub bytes_matrix_indices: u64,
    pub bytes_vector_reads: u64,
    pub bytes_vector_writes: u64,
    pub flops_add: u64,
    pub flops_mul: u64,
}

impl TrafficCounters {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_matrix_values
            + self.bytes_matrix_indices
            + self.bytes_vector_reads
            + self.bytes_vector_writes
    }

    pub fn total_flops(&self) -> u64 {
        self.flops_add + self.flops_mul
    }

    pub fn merge(&mut self, other: &TrafficCounters) {
        self.bytes_matrix_values += other.bytes_matrix_values;
        self.bytes_matrix_indices += other.bytes_matrix_indices;
        self.bytes_vector_reads += other.bytes_vector_reads;
        self.bytes_vector_writes += other.bytes_vector_writes;
        self.flops_add += other.flops_add;
        self.flops_mul += other.flops_mul;
    }

    pub const CSV_HEADER: &'static str =
        "bytes_matrix_values,bytes_matrix_indices,bytes_vector_reads,bytes_vector_writes,flops_add,flops_mul";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.bytes_matrix_values,
            self.bytes_matrix_indices,
            self.bytes_vector_reads,
            self.bytes_vector_writes,
            self.flops_add,
            self.flops_mul
        )
    }

    pub fn to_json(&self) -> String {
        format!(
            "{{\"bytes_matrix_values\":{},\"bytes_matrix_indices\":{},\"bytes_vector_reads\":{},\"bytes_vector_writes\":{},\"flops_add\":{},\"flops_mul\":{}}}",
            self.bytes_matrix_values,
            self.bytes_matrix_indices,
            self.bytes_vector_reads,
            self.bytes_vector_writes,
            self.flops_add,
            self.flops_mul
        )
    }
}

/// Charging hooks the kernels call. The no-op implementation compiles away
/// in the uncounted fast path.
pub trait Meter {
    const ACTIVE: bool;

    fn arith(&self) -> ArithmeticSpec;
    /// `count` matrix entries walked (values plus column indices).
    fn matrix_entries(&mut self, count: u64);
    /// Streamed vector reads, in elements.
    fn stream_reads(&mut self, elems: u64);
    /// Streamed vector writes, in elements.
    fn stream_writes(&mut self, elems: u64);
    /// Input-vector volume under the perfect-cache assumption (each of the
    /// `elems` elements charged once per sweep).
    fn input_unique(&mut self, elems: u64);
    /// One gathered access to input-vector row `row` of a width-`width`
    /// block; feeds the cache simulation.
    fn input_gather(&mut self, row: usize, width: usize);
    fn flops(&mut self, adds: u64, muls: u64);
}

/// Zero-cost meter for plain execution.
pub struct NoMeter;

impl Meter for NoMeter {
    const ACTIVE: bool = false;

    #[inline(always)]
    fn arith(&self) -> ArithmeticSpec {
        ArithmeticSpec::double_complex()
    }
    #[inline(always)]
    fn matrix_entries(&mut self, _: u64) {}
    #[inline(always)]
    fn stream_reads(&mut self, _: u64) {}
    #[inline(always)]
    fn stream_writes(&mut self, _: u64) {}
    #[inline(always)]
    fn input_unique(&mut self, _: u64) {}
    #[inline(always)]
    fn input_gather(&mut self, _: usize, _: usize) {}
    #[inline(always)]
    fn flops(&mut self, _: u64, _: u64) {}
}

/// Fully associative LRU over cache lines, backed by an arena-allocated
/// doubly linked list.
struct LruLines {
    capacity: usize,
    map: HashMap<u64, u32>,
    keys: Vec<u64>,
    prev: Vec<u32>,
    next: Vec<u32>,
    head: u32,
    tail: u32,
}

const NIL: u32 = u32::MAX;

impl LruLines {
    fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        LruLines {
            capacity,
            map: HashMap::with_capacity(capacity * 2),
            keys: Vec::with_capacity(capacity),
            prev: Vec::with_capacity(capacity),
            next: Vec::with_capacity(capacity),
            head: NIL,
            tail: NIL,
        }
    }

    fn unlink(&mut self, node: u32) {
        let (p, n) = (self.prev[node as usize], self.next[node as usize]);
        if p == NIL {
            self.head = n;
        } else {
            self.next[p as usize] = n;
        }
        if n == NIL {
            self.tail = p;
        } else {
            self.prev[n as usize] = p;
        }
    }

    fn push_front(&mut self, node: u32) {
        self.prev[node as usize] = NIL;
        self.next[node as usize] = self.head;
        if self.head != NIL {
            self.prev[self.head as usize] = node;
        }
        self.head = node;
        if self.tail == NIL {
            self.tail = node;
        }
    }

    /// Touches `line`; returns true on hit.
    fn access(&mut self, line: u64) -> bool {
        if let Some(&node) = self.map.get(&line) {
            if self.head != node {
                self.unlink(node);
                self.push_front(node);
            }
            return true;
        }
        let node = if self.keys.len() < self.capacity {
            let node = self.keys.len() as u32;
            self.keys.push(line);
            self.prev.push(NIL);
            self.next.push(NIL);
            node
        } else {
            let victim = self.tail;
            self.unlink(victim);
            let old = self.keys[victim as usize];
            self.map.remove(&old);
            self.keys[victim as usize] = line;
            victim
        };
        self.map.insert(line, node);
        self.push_front(node);
        false
    }
}

/// Serial counting meter; constructed in perfect-cache or LLC-simulation
/// flavor.
pub struct TrafficMeter {
    arith: ArithmeticSpec,
    counters: TrafficCounters,
    lru: Option<LruLines>,
}

impl TrafficMeter {
    pub fn perfect(arith: ArithmeticSpec) -> Self {
        TrafficMeter {
            arith,
            counters: TrafficCounters::default(),
            lru: None,
        }
    }

    /// LLC simulation with the given capacity (bytes, 64-byte lines).
    pub fn llc_sim(arith: ArithmeticSpec, capacity_bytes: u64) -> Self {
        let lines = (capacity_bytes / CACHE_LINE_BYTES).max(1) as usize;
        TrafficMeter {
            arith,
            counters: TrafficCounters::default(),
            lru: Some(LruLines::new(lines)),
        }
    }

    pub fn counters(&self) -> &TrafficCounters {
        &self.counters
    }

    pub fn take(self) -> TrafficCounters {
        self.counters
    }

    pub fn reset(&mut self) {
        self.counters = TrafficCounters::default();
    }
}

impl Meter for TrafficMeter {
    const ACTIVE: bool = true;

    fn arith(&self) -> ArithmeticSpec {
        self.arith
    }

    fn matrix_entries(&mut self, count: u64) {
        self.counters.bytes_matrix_values += count * self.arith.data_bytes;
        self.counters.bytes_matrix_indices += count * self.arith.index_bytes;
    }

    fn stream_reads(&mut self, elems: u64) {
        self.counters.bytes_vector_reads += elems * self.arith.data_bytes;
    }

    fn stream_writes(&mut self, elems: u64) {
        self.counters.bytes_vector_writes += elems * self.arith.data_bytes;
    }

    fn input_unique(&mut self, elems: u64) {
        if self.lru.is_none() {
            self.counters.bytes_vector_reads += elems * self.arith.data_bytes;
        }
    }

    fn input_gather(&mut self, row: usize, width: usize) {
        if let Some(lru) = &mut self.lru {
            let start = row as u64 * width as u64 * self.arith.data_bytes;
            let end = start + width as u64 * self.arith.data_bytes - 1;
            for line in (start / CACHE_LINE_BYTES)..=(end / CACHE_LINE_BYTES) {
                if !lru.access(line) {
                    self.counters.bytes_vector_reads += CACHE_LINE_BYTES;
                }
            }
        }
    }

    fn flops(&mut self, adds: u64, muls: u64) {
        self.counters.flops_add += adds;
        self.counters.flops_mul += muls;
    }
}
