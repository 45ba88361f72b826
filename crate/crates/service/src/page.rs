use serde::{Deserialize, Serialize};

use crate::ApiError;

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 1000;

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PageQuery {
    pub cursor: Option<String>,
    pub limit: Option<usize>,
}

/// One page of a stably ordered list. `next_cursor` is absent on the last
/// page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub total: usize,
    pub next_cursor: Option<String>,
}

impl<T> Page<T> {
    pub fn of(items: Vec<T>, q: &PageQuery) -> Result<Self, ApiError> {
        let limit = q.limit.unwrap_or(DEFAULT_PAGE_SIZE);
        if limit == 0 || limit > MAX_PAGE_SIZE {
            return Err(ApiError::BadRequest(format!("limit must be in 1..={MAX_PAGE_SIZE}")));
        }
        let total = items.len();
        let start = match &q.cursor {
            None => 0,
            Some(c) => c
                .parse::<usize>()
                .ok()
                .filter(|&s| s <= total)
                .ok_or_else(|| ApiError::BadRequest(format!("invalid cursor {c:?}")))?,
        };
        let end = (start + limit).min(total);
        let items: Vec<T> = items.into_iter().skip(start).take(end - start).collect();
        Ok(Self { items, total, next_cursor: (end < total).then(|| end.to_string()) })
    }
}
