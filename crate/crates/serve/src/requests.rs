use std::collections::{HashMap, VecDeque};

use chrono::{DateTime, Utc};
use lesionpipe::Label;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoggedRequest {
    pub request_id: String,
    pub model_version: u64,
    pub label: Label,
    pub probability: f32,
    pub at: DateTime<Utc>,
}

/// Bounded log of served classifications, evicting the oldest entry when full.
#[derive(Debug)]
pub struct RequestLog {
    capacity: usize,
    order: VecDeque<String>,
    entries: HashMap<String, LoggedRequest>,
}

impl RequestLog {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), order: VecDeque::new(), entries: HashMap::new() }
    }

    pub fn insert(&mut self, entry: LoggedRequest) {
        if self.order.len() == self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.entries.remove(&old);
            }
        }
        self.order.push_back(entry.request_id.clone());
        self.entries.insert(entry.request_id.clone(), entry);
    }

    pub fn get(&self, request_id: &str) -> Option<&LoggedRequest> {
        self.entries.get(request_id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

pub fn new_request_id() -> String {
    hex::encode(rand::random::<[u8; 16]>())
}
